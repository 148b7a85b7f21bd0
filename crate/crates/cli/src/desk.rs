//! Desk-scale reproduction: every experiment on planted synthetic terrain,
//! chained through the same commands a user would run by hand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::seq::SliceRandom;
use serde::Serialize;
use terrain_embed::benchmark::{plant_terrain, PlantConfig, PlantedTerrain};
use terrain_embed::evaluation::{probe_markdown_table, radius_ladder, ProbeResult};
use terrain_embed::geo::{sample_coords_in_polygon, GeoCoordinate};
use terrain_embed::labels::write_coord_csv;
use terrain_embed::rng;

use crate::commands::{
    eval_cmd, index_cmd, retrieve_cmd, scan_cmd, train_cmd, EvalArgs, IndexArgs, RetrieveArgs, ScanArgs, Seeds,
    TrainArgs,
};
use crate::manifest::{inside, RunManifest};

const CLASSES: [&str; 4] = ["peak", "pit", "ridge", "saddle"];
const TRAIN_SCALES: [f64; 2] = [20.0, 40.0];
const PROBE_RESOLUTION: f64 = 40.0;
const RETRIEVAL_RESOLUTION: f64 = 20.0;
/// Neighbors within this many pixels of a planted crest count as ridges.
const RIDGE_TOLERANCE_PX: f64 = 2.0;

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeskArgs {
    /// Output directory for every artifact and `report.md`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1500)]
    pub steps: usize,
    #[arg(long, default_value_t = 4000)]
    pub locations: usize,
    #[arg(long, default_value_t = 0.002)]
    pub lr_g: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Seed count for the scan and the probes.
    #[arg(long, default_value = "10")]
    pub seeds: Seeds,
    #[arg(long, default_value_t = 1000)]
    pub scan_n: usize,
    #[arg(long, default_value_t = 20)]
    pub scan_epochs: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Ridge query pairs for the retrieval experiment.
    #[arg(long, default_value_t = 10)]
    pub queries: usize,
}

fn write_terrain(terrain: &PlantedTerrain, dir: &Path, prefix: &str, classes: &[&str]) -> anyhow::Result<PathBuf> {
    let dtm = dir.join(format!("{prefix}dtm.tif"));
    terrain.raster.write_geotiff(&dtm)?;
    for class in classes {
        write_coord_csv(&dir.join(format!("{prefix}{class}.csv")), terrain.class_labels(class).into_iter().map(|c| (c, None)))?;
    }
    std::fs::write(dir.join(format!("{prefix}region.wkt")), terrain.region.to_wkt())?;
    Ok(dtm)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn repro_desk(args: &DeskArgs) -> anyhow::Result<String> {
    let dir = &args.out;
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("repro-desk", args, Some(args.seed))?;
    let mut report = String::from("# Desk-scale reproduction\n\n");

    eprintln!("[1/6] planting synthetic terrain");
    let terrain = plant_terrain(&PlantConfig::landforms(), args.seed)?;
    let dtm = write_terrain(&terrain, dir, "", &CLASSES)?;
    let scan_config = PlantConfig::scale_scan();
    let scan_terrain = plant_terrain(&scan_config, args.seed)?;
    let scan_dtm = write_terrain(&scan_terrain, dir, "scan-", &["peak"])?;
    let region = terrain.region.to_wkt();

    eprintln!("[2/6] training autoencoders with k = 1 and k = 4");
    let mut models = Vec::new();
    for k in [1, 4] {
        let out = dir.join(format!("autoencoder-{k}.ckpt"));
        let train = TrainArgs {
            dtm: dtm.clone(),
            train_polygon: Some(region.clone()),
            locations: args.locations,
            scales: TRAIN_SCALES.to_vec(),
            k,
            adv: false,
            lambda_rec: None,
            lambda_adv: None,
            lr_g: Some(args.lr_g),
            lr_d: None,
            batch_size: Some(args.batch_size),
            steps: Some(args.steps),
            seed: rng::subseed(args.seed, "desk/train"),
            out: out.clone(),
        };
        let log = train_cmd(&train)?;
        let last = log.records.last().map(|r| r.l_p).unwrap_or(f64::NAN);
        let _ = writeln!(report, "- autoencoder-{k}: {} steps, final reconstruction loss {last:.4}", log.records.len());
        models.push(path_str(&out));
    }

    eprintln!("[3/6] scale scan on planted peaks");
    let scan = scan_cmd(&ScanArgs {
        class_csv: dir.join("scan-peak.csv"),
        dtm: scan_dtm,
        radii: Some(radius_ladder(scan_config.resolution, 5)?),
        ladder_steps: 5,
        n: args.scan_n,
        seeds: args.seeds.clone(),
        class: Some("peak".into()),
        region: Some(scan_terrain.region.to_wkt()),
        epochs: args.scan_epochs,
        out: dir.join("scale-scan.csv"),
    })?;
    let _ = write!(report, "\n## Scale scan (planted peaks)\n\n{}\n", scan.markdown_table());
    let _ = writeln!(report, "Best resolution {} m/px; per-seed best {:?}.", scan.best_resolution, scan.per_seed_best());

    eprintln!("[4/6] linear probes");
    let mut results: Vec<ProbeResult> = Vec::new();
    for model in ["id".to_string(), models[0].clone(), models[1].clone()] {
        for class in CLASSES {
            let stem = Path::new(&model).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            results.push(eval_cmd(&EvalArgs {
                model: model.clone(),
                class_csv: dir.join(format!("{class}.csv")),
                dtm: dtm.clone(),
                scale: PROBE_RESOLUTION,
                n_train: args.n_train,
                n_test: args.n_test,
                seeds: args.seeds.clone(),
                dataset_size: None,
                dataset_seed: rng::subseed(args.seed, "desk/probe-dataset"),
                class: Some(class.into()),
                region: Some(region.clone()),
                shuffle_labels: false,
                out: dir.join(format!("probe-{stem}-{class}.csv")),
            })?);
        }
    }
    let _ = write!(report, "\n## Linear probes at {PROBE_RESOLUTION} m/px (class vs background)\n\n{}", probe_markdown_table(&results));

    eprintln!("[5/6] building the retrieval index");
    let mut draw = rng::substream(args.seed, "desk/retrieval");
    let mut ridges = terrain.class_labels("ridge");
    ridges.shuffle(&mut draw);
    let n_queries = args.queries.min(ridges.len() / 4);
    let (queries, rest) = ridges.split_at(2 * n_queries);
    let mut coords: Vec<GeoCoordinate> = rest.iter().take(100).copied().collect();
    coords.extend_from_slice(queries);
    for class in ["peak", "pit", "saddle"] {
        let mut pool = terrain.class_labels(class);
        pool.shuffle(&mut draw);
        coords.extend(pool.into_iter().take(34));
    }
    coords.extend(sample_coords_in_polygon(&terrain.region, 100, rng::subseed(args.seed, "desk/background"))?);
    let coords_csv = dir.join("index-coords.csv");
    write_coord_csv(&coords_csv, coords.iter().map(|c| (*c, None)))?;
    let index_dir = dir.join("index");
    let index = index_cmd(&IndexArgs {
        model: models[1].clone(),
        coords_csv,
        dtm: dtm.clone(),
        scale: RETRIEVAL_RESOLUTION,
        out: index_dir.clone(),
    })?;

    eprintln!("[6/6] ridge retrieval");
    let mut precisions = Vec::new();
    for pair in queries.chunks(2) {
        let points = pair.iter().map(|c| format!("{},{}", c.lon, c.lat)).collect::<Vec<_>>().join(";");
        let found = retrieve_cmd(&RetrieveArgs { index: index_dir.clone(), points, k: 12.min(index.len()), model: None, dtm: None })?;
        let hits = found
            .iter()
            .filter(|n| !pair.iter().any(|q| q.lon == n.lon && q.lat == n.lat))
            .take(10)
            .filter(|n| terrain.on_ridge(&GeoCoordinate { lon: n.lon, lat: n.lat }, RIDGE_TOLERANCE_PX))
            .count();
        precisions.push(hits as f64 / 10.0);
    }
    let mean = precisions.iter().sum::<f64>() / precisions.len().max(1) as f64;
    let _ = write!(
        report,
        "\n## Retrieval at {RETRIEVAL_RESOLUTION} m/px\n\n{} indexed locations; ridge precision@10 {mean:.2} over {} query pairs {precisions:?}.\n",
        index.len(),
        precisions.len()
    );

    let report_path = dir.join("report.md");
    terrain_embed::checkpoint::write_atomic(&report_path, report.as_bytes())?;
    manifest.input(&dtm)?;
    manifest.output(&report_path);
    manifest.write(&inside(dir))?;
    Ok(report)
}
