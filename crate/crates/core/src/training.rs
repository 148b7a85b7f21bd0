//! Reconstruction pretraining with an optional conditional adversarial term.
//!
//! Each step takes one batch of locations at one scale `s`: inputs `X` are
//! 17x17 patches at `s` m/px, targets `Y` cover the same ground square with
//! `16k x 16k` pixels (`k` times finer than the 16x16 grid). The generator
//! (encoder + decoder) descends `lambda_rec * L_p + lambda_adv * L_G`, then
//! the discriminator descends `L_D` on the same batch, judging
//! (input, output) pairs where the input is resized to the output grid.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoCoordinate;
use crate::models::{check_fractal_factor, ModelBundle, DISCRIMINATOR_SIDE};
use crate::nn::loss::{bce_with_logits, lp_loss};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::{stack_images, Mode, Sequential, Tape, Tensor};
use crate::patch::{extract_patch, extract_target, normalize_values, resize_bilinear, ScaleSpec};
use crate::raster::ElevationRaster;
use crate::rng;

pub const DEFAULT_SCALES: [f64; 3] = [10.0, 30.0, 60.0];
pub const CONVERGENCE_WINDOW: usize = 100;
pub const CONVERGENCE_REL_TOL: f64 = 1e-4;
pub const CONVERGENCE_PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub locations: Vec<GeoCoordinate>,
    /// Input resolutions in meters/pixel.
    pub scales: Vec<f64>,
    pub k: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub p: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            locations: Vec::new(),
            scales: DEFAULT_SCALES.to_vec(),
            k: 4,
            lr_generator: 0.0002,
            lr_discriminator: 0.0016,
            lambda_rec: 1.0,
            lambda_adv: 0.0,
            p: 1.0,
            batch_size: 32,
            max_steps: 2000,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    /// Reconstruction only, discriminator untouched.
    pub fn reconstruction(k: usize) -> Self {
        Self { k, lambda_rec: 1.0, lambda_adv: 0.0, ..Self::default() }
    }

    /// Reconstruction plus the adversarial term at the standard 100:1 weighting.
    pub fn adversarial(k: usize) -> Self {
        Self { k, lambda_rec: 100.0, lambda_adv: 1.0, ..Self::default() }
    }

    pub fn is_adversarial(&self) -> bool {
        self.lambda_adv > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        check_fractal_factor(self.k)?;
        for (name, v) in [("lambda_rec", self.lambda_rec), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.lambda_rec == 0.0 && self.lambda_adv == 0.0 {
            return Err(Error::domain("lambda_rec and lambda_adv cannot both be zero"));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::domain(format!("norm order p = {} must be >= 1", self.p)));
        }
        for (name, v) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} = {v} must be positive")));
            }
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain("scales must be a non-empty list of positive resolutions"));
        }
        if self.batch_size < 2 {
            return Err(Error::domain("batch_size must be at least 2 (batch statistics)"));
        }
        if self.max_steps == 0 {
            return Err(Error::domain("max_steps must be positive"));
        }
        if self.is_adversarial() && 16 * self.k != DISCRIMINATOR_SIDE {
            return Err(Error::contract(format!(
                "the adversarial term needs {DISCRIMINATOR_SIDE}x{DISCRIMINATOR_SIDE} outputs (k = 4), got k = {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub scale: f64,
    pub target_resolution: f64,
    pub l_p: f64,
    pub l_g_adv: Option<f64>,
    pub l_d_adv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Converged,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub wall_clock_s: f64,
    pub stop_reason: StopReason,
    /// Coordinates dropped because either window left the raster or hit nodata.
    pub rejected: usize,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,scale,target_resolution,l_p,l_g_adv,l_d_adv")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.scale,
                r.target_resolution,
                r.l_p,
                opt(r.l_g_adv),
                opt(r.l_d_adv)
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Paired input/target images for a batch of locations at one scale.
#[derive(Debug, Clone)]
pub struct PairBatch {
    /// `(n, 1, 17, 17)`.
    pub x: Tensor,
    /// `(n, 1, 16k, 16k)`.
    pub y: Tensor,
    pub kept: Vec<GeoCoordinate>,
    pub rejected: usize,
}

/// Build normalized `(X, Y)` pairs. A coordinate is kept only if both its
/// input patch and its target can be sampled, so the two stay index-aligned.
pub fn build_pair_batch(
    raster: &ElevationRaster,
    coords: &[GeoCoordinate],
    resolution: f64,
    k: usize,
) -> Result<PairBatch> {
    let scale = ScaleSpec::at_resolution(resolution)?;
    let side = 16 * k;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut kept = Vec::new();
    for c in coords {
        let pair = extract_patch(raster, c, &scale)
            .and_then(|p| Ok((p, extract_target(raster, c, &scale, side)?)));
        match pair {
            Ok((p, t)) => {
                xs.push(normalize_values(p.values.view()));
                ys.push(normalize_values(t.view()));
                kept.push(*c);
            }
            Err(Error::Boundary(_) | Error::DataQuality(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let rejected = coords.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Capacity {
            what: format!("training pairs at {resolution} m/px"),
            needed: 1,
            available: 0,
        });
    }
    Ok(PairBatch {
        x: stack_images(xs.iter().map(|a| a.view())),
        y: stack_images(ys.iter().map(|a| a.view())),
        kept,
        rejected,
    })
}

/// Resize every image of an `(n, 1, h, w)` batch to `side x side`.
pub fn resize_batch(x: &Tensor, side: usize) -> Tensor {
    let images: Vec<Array2<f64>> = x
        .axis_iter(Axis(0))
        .map(|img| {
            let img: ArrayView2<f64> = img
                .index_axis_move(Axis(0), 0)
                .into_dimensionality()
                .expect("single-channel images");
            resize_bilinear(img, side, side)
        })
        .collect();
    stack_images(images.iter().map(|a| a.view()))
}

/// Channel-concatenate `(n,1,64,64)` inputs and outputs into `(n,2,64,64)` pairs.
pub fn pair_tensor(x_resized: &Tensor, y: &Tensor) -> Result<Tensor> {
    let expected = [x_resized.shape().first().copied().unwrap_or(0), 1, DISCRIMINATOR_SIDE, DISCRIMINATOR_SIDE];
    if x_resized.shape() != expected || y.shape() != expected {
        return Err(Error::contract(format!(
            "discriminator pairs need two {expected:?} halves, got {:?} and {:?}",
            x_resized.shape(),
            y.shape()
        )));
    }
    Ok(concatenate(Axis(1), &[x_resized.view(), y.view()]).expect("shapes checked"))
}

/// `BCE(d([X, Y_hat]), 1)`, with the discriminator evaluated as during
/// training (batch statistics).
pub fn generator_adv_loss(d: &Sequential, x_resized: &Tensor, y_hat: &Tensor) -> Result<f64> {
    let pair = pair_tensor(x_resized, y_hat)?;
    let (logits, _) = d.forward(&pair, Mode::Train);
    Ok(bce_with_logits(&logits, 1.0).0)
}

/// `BCE(d([X, Y]), 1) + BCE(d([X, Y_hat]), 0)`, real and fake pairs in
/// separate passes.
pub fn discriminator_adv_loss(d: &Sequential, x_resized: &Tensor, y_real: &Tensor, y_hat: &Tensor) -> Result<f64> {
    Ok(discriminator_gradients(d, x_resized, y_real, y_hat)?.loss)
}

pub struct DiscriminatorGradients {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    tapes: [Tape; 2],
}

pub fn discriminator_gradients(
    d: &Sequential,
    x_resized: &Tensor,
    y_real: &Tensor,
    y_hat: &Tensor,
) -> Result<DiscriminatorGradients> {
    let real = pair_tensor(x_resized, y_real)?;
    let fake = pair_tensor(x_resized, y_hat)?;
    let (lr, tr) = d.forward(&real, Mode::Train);
    let (l1, g1) = bce_with_logits(&lr, 1.0);
    let (_, mut grads) = d.backward(&tr, g1);
    let (lf, tf) = d.forward(&fake, Mode::Train);
    let (l0, g0) = bce_with_logits(&lf, 0.0);
    let (_, grads_fake) = d.backward(&tf, g0);
    for (a, b) in grads.iter_mut().zip(&grads_fake) {
        *a += b;
    }
    Ok(DiscriminatorGradients { loss: l1 + l0, grads, tapes: [tr, tf] })
}

pub struct GeneratorGradients {
    pub l_p: f64,
    pub l_g_adv: Option<f64>,
    pub y_hat: Tensor,
    pub encoder_grads: Vec<Tensor>,
    pub decoder_grads: Vec<Tensor>,
    encoder_tape: Tape,
    decoder_tape: Tape,
}

/// Gradients of `lambda_rec * L_p + lambda_adv * L_G` w.r.t. encoder and
/// decoder parameters. `x_resized` is required when `lambda_adv > 0`.
pub fn generator_gradients(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &Tensor,
    x_resized: Option<&Tensor>,
    lambda_rec: f64,
    lambda_adv: f64,
    p: f64,
) -> Result<GeneratorGradients> {
    let (z, encoder_tape) = bundle.encoder.forward(x, Mode::Train);
    let (y_hat, decoder_tape) = bundle.decoder.forward(&z, Mode::Train);
    let (l_p, grad_lp) = lp_loss(&y_hat, y, p)?;
    let mut grad = grad_lp * lambda_rec;
    let mut l_g_adv = None;
    if lambda_adv > 0.0 {
        let xr = x_resized.ok_or_else(|| Error::contract("adversarial term needs resized inputs"))?;
        let pair = pair_tensor(xr, &y_hat)?;
        let (logits, tape) = bundle.discriminator.forward(&pair, Mode::Train);
        let (l_g, grad_logits) = bce_with_logits(&logits, 1.0);
        let (grad_pair, _) = bundle.discriminator.backward(&tape, grad_logits);
        grad.scaled_add(lambda_adv, &grad_pair.slice(s![.., 1..2, .., ..]));
        l_g_adv = Some(l_g);
    }
    let (grad_z, decoder_grads) = bundle.decoder.backward(&decoder_tape, grad);
    let (_, encoder_grads) = bundle.encoder.backward(&encoder_tape, grad_z);
    Ok(GeneratorGradients { l_p, l_g_adv, y_hat, encoder_grads, decoder_grads, encoder_tape, decoder_tape })
}

/// Owns the networks and optimizer state of one training run.
pub struct Trainer {
    bundle: ModelBundle,
    config: TrainConfig,
    opt_generator: Optimizer,
    opt_discriminator: Optimizer,
    step: usize,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if bundle.k() != config.k {
            return Err(Error::contract(format!(
                "model built for k = {}, config asks for k = {}",
                bundle.k(),
                config.k
            )));
        }
        Ok(Self {
            bundle,
            opt_generator: Optimizer::new(config.optimizer, config.lr_generator),
            opt_discriminator: Optimizer::new(config.optimizer, config.lr_discriminator),
            config: config.clone(),
            step: 0,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    /// One alternating update on a prepared batch. `scale` is the input
    /// resolution, recorded in the report.
    pub fn step(&mut self, x: &Tensor, y: &Tensor, scale: f64) -> Result<StepRecord> {
        let c = &self.config;
        let adversarial = c.is_adversarial();
        let x_resized = adversarial.then(|| resize_batch(x, DISCRIMINATOR_SIDE));
        let gen = generator_gradients(&self.bundle, x, y, x_resized.as_ref(), c.lambda_rec, c.lambda_adv, c.p)?;
        let step = self.step;
        let non_finite = |what: &str, v: f64| Error::NonFiniteLoss {
            step,
            scale,
            detail: format!("{what} = {v} on a batch of {} pairs", x.shape()[0]),
        };
        if !gen.l_p.is_finite() {
            return Err(non_finite("L_p", gen.l_p));
        }
        if let Some(v) = gen.l_g_adv.filter(|v| !v.is_finite()) {
            return Err(non_finite("L_G", v));
        }

        let grads: Vec<Tensor> = gen.encoder_grads.into_iter().chain(gen.decoder_grads).collect();
        let params: Vec<&mut Tensor> = self
            .bundle
            .encoder
            .params_mut()
            .into_iter()
            .chain(self.bundle.decoder.params_mut())
            .collect();
        self.opt_generator.step(params, &grads);
        self.bundle.encoder.commit_running_stats(&gen.encoder_tape);
        self.bundle.decoder.commit_running_stats(&gen.decoder_tape);

        let mut l_d_adv = None;
        if let Some(xr) = &x_resized {
            let dg = discriminator_gradients(&self.bundle.discriminator, xr, y, &gen.y_hat)?;
            if !dg.loss.is_finite() {
                return Err(non_finite("L_D", dg.loss));
            }
            self.opt_discriminator.step(self.bundle.discriminator.params_mut(), &dg.grads);
            for tape in &dg.tapes {
                self.bundle.discriminator.commit_running_stats(tape);
            }
            l_d_adv = Some(dg.loss);
        }

        self.step += 1;
        self.bundle.meta.training_step = self.step;
        Ok(StepRecord {
            step,
            scale,
            target_resolution: scale / c.k as f64,
            l_p: gen.l_p,
            l_g_adv: gen.l_g_adv,
            l_d_adv,
        })
    }

    fn total_loss(&self, r: &StepRecord) -> f64 {
        self.config.lambda_rec * r.l_p + self.config.lambda_adv * r.l_g_adv.unwrap_or(0.0)
    }
}

/// Detects a plateau of the total generator loss over consecutive windows.
#[derive(Debug, Default)]
struct ConvergenceMonitor {
    window_sum: f64,
    window_len: usize,
    previous_mean: Option<f64>,
    flat_windows: usize,
}

impl ConvergenceMonitor {
    fn push(&mut self, loss: f64) -> bool {
        self.window_sum += loss;
        self.window_len += 1;
        if self.window_len < CONVERGENCE_WINDOW {
            return false;
        }
        let mean = self.window_sum / self.window_len as f64;
        self.window_sum = 0.0;
        self.window_len = 0;
        if let Some(prev) = self.previous_mean {
            let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < CONVERGENCE_REL_TOL {
                self.flat_windows += 1;
            } else {
                self.flat_windows = 0;
            }
        }
        self.previous_mean = Some(mean);
        self.flat_windows >= CONVERGENCE_PATIENCE
    }
}

/// Run the full schedule: shuffled location batches, every scale per batch,
/// until `max_steps` or a loss plateau.
pub fn train(config: &TrainConfig, raster: &ElevationRaster) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    if config.locations.is_empty() {
        return Err(Error::domain("training needs at least one location"));
    }
    let started = Instant::now();
    let mut bundle = ModelBundle::init(config.seed, config.k)?;
    bundle.meta.scales = config.scales.clone();
    let mut trainer = Trainer::new(bundle, config)?;
    let mut order_rng = rng::substream(config.seed, "training/batch-order");
    let mut locations = config.locations.clone();
    let mut records = Vec::new();
    let mut rejected = 0;
    let mut monitor = ConvergenceMonitor::default();
    let mut stop_reason = StopReason::MaxSteps;
    let mut useful_epoch = false;

    'outer: loop {
        locations.shuffle(&mut order_rng);
        for chunk in locations.chunks(config.batch_size) {
            for &scale in &config.scales {
                if records.len() >= config.max_steps {
                    break 'outer;
                }
                let batch = match build_pair_batch(raster, chunk, scale, config.k) {
                    Ok(b) => b,
                    Err(Error::Capacity { .. }) => {
                        rejected += chunk.len();
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                rejected += batch.rejected;
                if batch.kept.len() < 2 {
                    continue;
                }
                useful_epoch = true;
                let record = trainer.step(&batch.x, &batch.y, scale)?;
                let converged = monitor.push(trainer.total_loss(&record));
                records.push(record);
                if converged {
                    stop_reason = StopReason::Converged;
                    break 'outer;
                }
            }
        }
        if !useful_epoch {
            return Err(Error::Capacity {
                what: "locations whose windows fit inside the raster".into(),
                needed: 2,
                available: 0,
            });
        }
    }

    let report = TrainReport {
        records,
        wall_clock_s: started.elapsed().as_secs_f64(),
        stop_reason,
        rejected,
    };
    Ok((trainer.into_bundle(), report))
}
