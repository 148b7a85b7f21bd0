use ndarray::Array2;
use terrain_embed::geo::GeoCoordinate;
use terrain_embed::models::ModelBundle;
use terrain_embed::nn::optim::OptimizerKind;
use terrain_embed::nn::{Layer, Tensor};
use terrain_embed::patch::{extract_patch, extract_target, ScaleSpec};
use terrain_embed::raster::ElevationRaster;
use terrain_embed::synth::{raster_from_heights, synth_fractal_raster};
use terrain_embed::training::{
    build_pair_batch, discriminator_adv_loss, discriminator_gradients, generator_gradients, resize_batch, train,
    TrainConfig, Trainer,
};
use terrain_embed::Error;

fn raster() -> ElevationRaster {
    synth_fractal_raster(11, 257, 0.5, 10.0).unwrap()
}

fn grid_coords(raster: &ElevationRaster, n: usize) -> Vec<GeoCoordinate> {
    (0..n).map(|i| raster.pixel_center(70 + 13 * (i / 8), 70 + 11 * (i % 8))).collect()
}

fn flat_state(net: &terrain_embed::nn::Sequential) -> Vec<f64> {
    net.state().into_iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).collect()
}

fn small_config(raster: &ElevationRaster, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        locations: grid_coords(raster, 12),
        scales: vec![5.0, 10.0],
        batch_size: 4,
        max_steps: 6,
        seed: 3,
        ..base
    }
}

#[test]
fn reconstruction_only_leaves_discriminator_untouched() {
    let raster = raster();
    let config = small_config(&raster, TrainConfig::reconstruction(4));
    let before = ModelBundle::init(config.seed, 4).unwrap();
    let (after, report) = train(&config, &raster).unwrap();
    assert_eq!(report.records.len(), 6);
    assert_eq!(flat_state(&before.discriminator), flat_state(&after.discriminator));
    assert_ne!(flat_state(&before.encoder), flat_state(&after.encoder));
    assert!(report.records.iter().all(|r| r.l_g_adv.is_none() && r.l_d_adv.is_none()));
    assert!(report.records.iter().all(|r| r.l_p.is_finite()));
    // Scales alternate within each location batch.
    let scales: Vec<f64> = report.records.iter().map(|r| r.scale).collect();
    assert_eq!(scales, vec![5.0, 10.0, 5.0, 10.0, 5.0, 10.0]);
    assert_eq!(report.records[1].target_resolution, 2.5);
}

#[test]
fn adversarial_run_records_all_losses_and_moves_discriminator() {
    let raster = raster();
    let config = TrainConfig { max_steps: 3, ..small_config(&raster, TrainConfig::adversarial(4)) };
    let before = ModelBundle::init(config.seed, 4).unwrap();
    let (after, report) = train(&config, &raster).unwrap();
    assert_eq!(report.records.len(), 3);
    for r in &report.records {
        assert!(r.l_p.is_finite());
        assert!(r.l_g_adv.unwrap().is_finite());
        assert!(r.l_d_adv.unwrap().is_finite());
    }
    assert_ne!(flat_state(&before.discriminator), flat_state(&after.discriminator));
}

#[test]
fn training_is_deterministic() {
    let raster = raster();
    let config = TrainConfig { max_steps: 4, ..small_config(&raster, TrainConfig::reconstruction(1)) };
    let (a, ra) = train(&config, &raster).unwrap();
    let (b, rb) = train(&config, &raster).unwrap();
    assert_eq!(ra.records, rb.records);
    assert_eq!(flat_state(&a.encoder), flat_state(&b.encoder));
}

#[test]
fn invalid_runs_are_rejected() {
    let raster = raster();
    let empty = TrainConfig { locations: vec![], ..TrainConfig::reconstruction(1) };
    assert!(matches!(train(&empty, &raster), Err(Error::Domain(_))));
    let adv_k1 = small_config(&raster, TrainConfig::adversarial(1));
    assert!(matches!(train(&adv_k1, &raster), Err(Error::Contract(_))));
    let outside = TrainConfig {
        locations: vec![raster.pixel_center(0, 0), raster.pixel_center(1, 1)],
        ..small_config(&raster, TrainConfig::reconstruction(1))
    };
    assert!(matches!(train(&outside, &raster), Err(Error::Capacity { .. })));
}

#[test]
fn non_finite_loss_aborts_with_step_and_scale() {
    let raster = raster();
    let batch = build_pair_batch(&raster, &grid_coords(&raster, 4), 10.0, 1).unwrap();
    let mut bundle = ModelBundle::init(1, 1).unwrap();
    if let Layer::Conv2d(conv) = &mut bundle.encoder.layers[0] {
        conv.weight[[0, 0, 1, 1]] = f64::NAN;
    }
    let mut trainer = Trainer::new(bundle, &TrainConfig::reconstruction(1)).unwrap();
    match trainer.step(&batch.x, &batch.y, 10.0) {
        Err(Error::NonFiniteLoss { step, scale, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(scale, 10.0);
        }
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|r| r.l_p)),
    }
}

#[test]
fn generator_gradient_is_linear_in_loss_weights() {
    let raster = raster();
    let batch = build_pair_batch(&raster, &grid_coords(&raster, 3), 10.0, 4).unwrap();
    let bundle = ModelBundle::init(7, 4).unwrap();
    let xr = resize_batch(&batch.x, 64);
    let grads = |l1: f64, l2: f64| {
        let g = generator_gradients(&bundle, &batch.x, &batch.y, Some(&xr), l1, l2, 1.0).unwrap();
        g.encoder_grads.into_iter().chain(g.decoder_grads).collect::<Vec<Tensor>>()
    };
    let (l1, l2) = (100.0, 1.0);
    let total = grads(l1, l2);
    let rec = grads(1.0, 0.0);
    let adv = grads(0.0, 1.0);
    let mut worst: f64 = 0.0;
    // Analytically-zero gradients (biases feeding BatchNorm) carry pure
    // rounding noise; measure those against the overall gradient scale.
    let floor = 1e-9 * total.iter().flat_map(|t| t.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    for ((t, r), a) in total.iter().zip(&rec).zip(&adv) {
        for ((&t, &r), &a) in t.iter().zip(r.iter()).zip(a.iter()) {
            let combined = l1 * r + l2 * a;
            // Scale of the summands, so cancellation does not inflate the ratio.
            let denom = (l1 * r).abs() + (l2 * a).abs() + floor + 1e-300;
            worst = worst.max((t - combined).abs() / denom);
        }
    }
    assert!(worst <= 1e-5, "worst relative deviation {worst}");
}

#[test]
fn one_discriminator_step_lowers_its_loss() {
    let raster = raster();
    let batch = build_pair_batch(&raster, &grid_coords(&raster, 4), 10.0, 4).unwrap();
    let mut bundle = ModelBundle::init(5, 4).unwrap();
    let xr = resize_batch(&batch.x, 64);
    let y_hat = bundle.decoder.infer(&bundle.encoder.infer(&batch.x));
    let before = discriminator_adv_loss(&bundle.discriminator, &xr, &batch.y, &y_hat).unwrap();
    let dg = discriminator_gradients(&bundle.discriminator, &xr, &batch.y, &y_hat).unwrap();
    let mut opt = terrain_embed::nn::optim::Optimizer::new(OptimizerKind::Sgd, 1e-3);
    opt.step(bundle.discriminator.params_mut(), &dg.grads);
    let after = discriminator_adv_loss(&bundle.discriminator, &xr, &batch.y, &y_hat).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn inputs_and_targets_share_a_ground_footprint() {
    // Planar ramp rising 1 m per meter eastwards: every sample's elevation
    // is its east offset, so window extremes reveal the footprint.
    let side = 129;
    let res = 10.0;
    let heights = Array2::from_shape_fn((side, side), |(_, c)| (c as f64 - 64.0) * res);
    let center = GeoCoordinate::new(11.0, 47.0).unwrap();
    let raster = raster_from_heights(&heights, 1000.0, center, res).unwrap();
    let c = raster.pixel_center(64, 64);
    let scale = ScaleSpec::at_resolution(10.0).unwrap();
    let x = extract_patch(&raster, &c, &scale).unwrap().values;
    let y = extract_target(&raster, &c, &scale, 64).unwrap();
    let r = scale.radius_m();
    let tol = 1e-2;
    assert!((x[[8, 0]] - (1000.0 - r)).abs() < tol);
    assert!((x[[8, 16]] - (1000.0 + r)).abs() < tol);
    let half_pixel = r / 64.0;
    assert!((y[[32, 0]] - (1000.0 - r + half_pixel)).abs() < tol);
    assert!((y[[32, 63]] - (1000.0 + r - half_pixel)).abs() < tol);
}

#[test]
fn report_exports_csv() {
    let raster = raster();
    let config = TrainConfig { max_steps: 2, ..small_config(&raster, TrainConfig::reconstruction(1)) };
    let (_, report) = train(&config, &raster).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,scale,target_resolution,l_p,l_g_adv,l_d_adv");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,5,5,") && lines[1].ends_with(",,"));
}
