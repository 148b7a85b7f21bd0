use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use terrain_embed::baselines::EmbeddingModel;
use terrain_embed::evaluation::{
    fit_class_probe, grid_classify, probe_classification, probe_markdown_table, radius_ladder, scale_scan, write_probe_csv,
    GridOptions, LabelMode, ProbeResult, ProbeSet, ScaleScanResult, ScanOptions, DEFAULT_DETECTION_THRESHOLD,
};
use terrain_embed::geo::{sample_coords_in_polygon, AoiPolygon, BoundingBox, GeoCoordinate};
use terrain_embed::index::{build_embedding_index, knn_retrieve, EmbeddingIndex, Neighbor};
use terrain_embed::labels::{build_class_dataset, load_class_coords, read_coord_csv, ClassTag, CoordSource, LabeledCoordSet};
use terrain_embed::patch::ScaleSpec;
use terrain_embed::raster::ElevationRaster;
use terrain_embed::svm::SvmOptions;
use terrain_embed::synth::{check_side, synth_fractal_raster};
use terrain_embed::training::{train, TrainConfig, TrainReport};
use terrain_embed::{rng, Error};

use crate::manifest::{beside, inside, RunManifest};

/// A usage or contract problem found by the CLI itself.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(message.into()))
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_model(spec: &str) -> anyhow::Result<()> {
    if spec == "id" {
        Ok(())
    } else {
        require_file(Path::new(spec), "model checkpoint")
    }
}

fn open_raster(path: &Path, m: &mut RunManifest) -> anyhow::Result<ElevationRaster> {
    require_file(path, "elevation raster")?;
    m.input(path)?;
    Ok(ElevationRaster::read_geotiff(path)?)
}

/// `N` means seeds `0..N`; a comma-separated list is taken as given.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let seeds: Vec<u64> = if s.contains(',') {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse().map_err(|e| format!("seed `{t}`: {e}")))
                .collect::<Result<_, _>>()?
        } else {
            let n: u64 = s.trim().parse().map_err(|e| format!("seed count `{s}`: {e}"))?;
            (0..n).collect()
        };
        if seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        Ok(Seeds(seeds))
    }
}

/// WKT text, or a path to a file holding it.
fn polygon_arg(arg: &str) -> anyhow::Result<AoiPolygon> {
    let path = Path::new(arg);
    let text = if !arg.trim_start().to_ascii_uppercase().starts_with("POLYGON") && path.is_file() {
        std::fs::read_to_string(path)?
    } else {
        arg.to_string()
    };
    Ok(AoiPolygon::from_wkt(text.trim())?)
}

fn region_or_raster(arg: &Option<String>, raster: &ElevationRaster) -> anyhow::Result<AoiPolygon> {
    match arg {
        Some(a) => polygon_arg(a),
        None => Ok(raster.center_bounds().to_polygon()),
    }
}

fn class_tag(name: &str) -> anyhow::Result<ClassTag> {
    match ClassTag::builtin(name) {
        Some(t) => Ok(t),
        None => Ok(ClassTag::new(name, format!("class={name}"))?),
    }
}

fn class_name(explicit: &Option<String>, csv: &Path) -> String {
    explicit
        .clone()
        .unwrap_or_else(|| csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "class".into()))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Raster side in pixels, of the form 2^m + 1.
    #[arg(long, default_value_t = 1025)]
    pub side: usize,
    #[arg(long, default_value_t = 0.5)]
    pub roughness: f64,
    /// Meters per pixel.
    #[arg(long, default_value_t = 10.0)]
    pub resolution: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    check_side(args.side)?;
    let mut m = RunManifest::new("synth", args, Some(args.seed))?;
    let raster = synth_fractal_raster(args.seed, args.side, args.roughness, args.resolution)?;
    raster.write_geotiff(&args.out)?;
    m.output(&args.out);
    m.write(&beside(&args.out))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dtm: PathBuf,
    /// WKT polygon (or a file holding one) to sample training locations
    /// from; the whole raster when absent.
    #[arg(long)]
    pub train_polygon: Option<String>,
    /// Number of training locations sampled inside the polygon.
    #[arg(long, default_value_t = 10_000)]
    pub locations: usize,
    /// Input resolutions, meters/pixel.
    #[arg(long, value_delimiter = ',', default_value = "10,30,60")]
    pub scales: Vec<f64>,
    /// Fractal factor: output resolution is k times finer than the input.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Add the adversarial term (needs k = 4).
    #[arg(long)]
    pub adv: bool,
    /// Defaults to 100 with --adv, else 1.
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    /// Defaults to 1 with --adv, else 0.
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the manifest, loss log and run record go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    /// Fill every optional hyperparameter from the defaults for the chosen
    /// objective.
    pub fn resolve(&mut self) -> TrainConfig {
        let base = if self.adv { TrainConfig::adversarial(self.k) } else { TrainConfig::reconstruction(self.k) };
        let config = TrainConfig {
            scales: self.scales.clone(),
            lambda_rec: self.lambda_rec.unwrap_or(base.lambda_rec),
            lambda_adv: self.lambda_adv.unwrap_or(base.lambda_adv),
            lr_generator: self.lr_g.unwrap_or(base.lr_generator),
            lr_discriminator: self.lr_d.unwrap_or(base.lr_discriminator),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_steps: self.steps.unwrap_or(base.max_steps),
            seed: self.seed,
            ..base
        };
        self.lambda_rec = Some(config.lambda_rec);
        self.lambda_adv = Some(config.lambda_adv);
        self.lr_g = Some(config.lr_generator);
        self.lr_d = Some(config.lr_discriminator);
        self.batch_size = Some(config.batch_size);
        self.steps = Some(config.max_steps);
        config
    }
}

pub fn train_report_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".train.csv");
    PathBuf::from(s)
}

pub fn train_cmd(args: &TrainArgs) -> anyhow::Result<TrainReport> {
    let mut args = args.clone();
    let mut config = args.resolve();
    config.validate()?;
    if args.adv && config.lambda_adv == 0.0 {
        return Err(usage("--adv with --lambda-adv 0 disables the adversarial term"));
    }
    let mut m = RunManifest::new("train", &args, Some(args.seed))?;
    let raster = open_raster(&args.dtm, &mut m)?;
    let polygon = region_or_raster(&args.train_polygon, &raster)?;
    config.locations = sample_coords_in_polygon(&polygon, args.locations, rng::subseed(args.seed, "cli/train-locations"))?;
    let (bundle, report) = train(&config, &raster)?;
    bundle.save(&args.out)?;
    let log = train_report_path(&args.out);
    report.write_csv(&log)?;
    m.output(&args.out);
    m.output(&terrain_embed::checkpoint::manifest_path(&args.out));
    m.output(&log);
    m.write(&beside(&args.out))?;
    Ok(report)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanArgs {
    /// Positive coordinates, `lon,lat[,label]`; rows labeled 0 are ignored.
    #[arg(long)]
    pub class_csv: PathBuf,
    #[arg(long)]
    pub dtm: PathBuf,
    /// Patch radii in meters; a doubling ladder from the raster resolution
    /// when absent.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Rungs of the default ladder.
    #[arg(long, default_value_t = 5)]
    pub ladder_steps: usize,
    /// Balanced dataset size per seed.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long, default_value = "10")]
    pub seeds: Seeds,
    /// Class name; the CSV file stem when absent.
    #[arg(long)]
    pub class: Option<String>,
    /// WKT region for positives and negatives; the raster extent when absent.
    #[arg(long)]
    pub region: Option<String>,
    /// Probe CNN training epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn scan_cmd(args: &ScanArgs) -> anyhow::Result<ScaleScanResult> {
    require_file(&args.class_csv, "class CSV")?;
    let mut args = args.clone();
    let mut m = RunManifest::new("scale-scan", &args, None)?;
    let raster = open_raster(&args.dtm, &mut m)?;
    m.input(&args.class_csv)?;
    let radii = match &args.radii {
        Some(r) => r.clone(),
        None => radius_ladder(raster.source_resolution(), args.ladder_steps)?,
    };
    args.radii = Some(radii.clone());
    m.config = serde_json::to_value(&args)?;
    let region = region_or_raster(&args.region, &raster)?;
    let tag = class_tag(&class_name(&args.class, &args.class_csv))?;
    let positives = load_class_coords(&CoordSource::Csv(args.class_csv.clone()), &tag, &region)?;
    let mut opts = ScanOptions::default();
    opts.cnn.epochs = args.epochs;
    let result = scale_scan(&positives, &region, &tag, &radii, &raster, args.n, &args.seeds.0, &opts)?;
    result.write_csv(&args.out)?;
    m.output(&args.out);
    m.write(&beside(&args.out))?;
    Ok(result)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint path, or `id` for raw normalized pixels.
    #[arg(long)]
    pub model: String,
    /// `lon,lat` positives, or `lon,lat,label` with both labels present.
    #[arg(long)]
    pub class_csv: PathBuf,
    #[arg(long)]
    pub dtm: PathBuf,
    /// Patch resolution, meters/pixel.
    #[arg(long)]
    pub scale: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long, default_value = "10")]
    pub seeds: Seeds,
    /// Size of the balanced pool the seeds resample from; 20% above
    /// n-train + n-test when absent.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    /// Seed for drawing the pool and its negatives.
    #[arg(long, default_value_t = 0)]
    pub dataset_seed: u64,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub region: Option<String>,
    /// Permute labels before resampling (chance-level control).
    #[arg(long)]
    pub shuffle_labels: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn labeled_or_built(
    csv: &Path,
    tag: &ClassTag,
    region: &AoiPolygon,
    size: usize,
    seed: u64,
) -> anyhow::Result<LabeledCoordSet> {
    let rows = read_coord_csv(csv)?;
    let labeled = rows.iter().any(|(_, y)| *y == Some(0)) && rows.iter().any(|(_, y)| *y == Some(1));
    if labeled {
        let entries = rows.into_iter().map(|(c, y)| (c, y.unwrap_or(1))).collect();
        return Ok(LabeledCoordSet { entries, class_tag: tag.clone(), region: region.clone(), seed });
    }
    let positives = load_class_coords(&CoordSource::Csv(csv.to_path_buf()), tag, region)?;
    Ok(build_class_dataset(&positives, region, size, seed, tag)?)
}

pub fn eval_cmd(args: &EvalArgs) -> anyhow::Result<ProbeResult> {
    require_file(&args.class_csv, "class CSV")?;
    require_model(&args.model)?;
    let mut args = args.clone();
    let needed = args.n_train + args.n_test;
    let size = args.dataset_size.unwrap_or_else(|| (needed * 6 / 5).div_ceil(2) * 2);
    args.dataset_size = Some(size);
    let mut m = RunManifest::new("eval", &args, Some(args.dataset_seed))?;
    let raster = open_raster(&args.dtm, &mut m)?;
    m.input(&args.class_csv)?;
    m.model_input(&args.model)?;
    let model = EmbeddingModel::open(&args.model)?;
    let region = region_or_raster(&args.region, &raster)?;
    let tag = class_tag(&class_name(&args.class, &args.class_csv))?;
    let dataset = labeled_or_built(&args.class_csv, &tag, &region, size, args.dataset_seed)?;
    let scale = ScaleSpec::at_resolution(args.scale)?;
    let mode = if args.shuffle_labels { LabelMode::Shuffled } else { LabelMode::Actual };
    let result = probe_classification(
        &model,
        &dataset,
        &raster,
        &scale,
        args.n_train,
        args.n_test,
        &args.seeds.0,
        &SvmOptions::default(),
        mode,
    )?;
    write_probe_csv(&args.out, std::slice::from_ref(&result))?;
    m.output(&args.out);
    m.write(&beside(&args.out))?;
    Ok(result)
}

pub fn eval_markdown(result: &ProbeResult) -> String {
    probe_markdown_table(std::slice::from_ref(result))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitProbesArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub dtm: PathBuf,
    /// `NAME=PATH` or `PATH` (named by its file stem); repeatable.
    #[arg(long = "class-csv", required = true)]
    pub class_csv: Vec<String>,
    /// Patch resolution, meters/pixel.
    #[arg(long)]
    pub scale: f64,
    /// Balanced dataset size per class.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fit_probes_cmd(args: &FitProbesArgs) -> anyhow::Result<ProbeSet> {
    require_model(&args.model)?;
    let mut m = RunManifest::new("fit-probes", args, Some(args.seed))?;
    let raster = open_raster(&args.dtm, &mut m)?;
    let checkpoint_sha256 = m.model_input(&args.model)?;
    let model = EmbeddingModel::open(&args.model)?;
    let region = region_or_raster(&args.region, &raster)?;
    let scale = ScaleSpec::at_resolution(args.scale)?;
    let mut probes = Vec::new();
    for spec in &args.class_csv {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (class_name(&None, Path::new(spec)), PathBuf::from(spec)),
        };
        require_file(&path, "class CSV")?;
        m.input(&path)?;
        let tag = class_tag(&name)?;
        let dataset = labeled_or_built(&path, &tag, &region, args.n, rng::subseed(args.seed, &format!("cli/probe/{name}")))?;
        probes.push(fit_class_probe(&model, &dataset, &raster, &scale, &SvmOptions::default())?);
    }
    let set = ProbeSet { checkpoint_sha256, probes };
    set.save(&args.out)?;
    m.output(&args.out);
    m.write(&beside(&args.out))?;
    Ok(set)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub coords_csv: PathBuf,
    #[arg(long)]
    pub dtm: PathBuf,
    /// Patch resolution, meters/pixel.
    #[arg(long)]
    pub scale: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn index_cmd(args: &IndexArgs) -> anyhow::Result<EmbeddingIndex> {
    require_model(&args.model)?;
    require_file(&args.coords_csv, "coordinate CSV")?;
    let mut m = RunManifest::new("index", args, None)?;
    let raster = open_raster(&args.dtm, &mut m)?;
    m.input(&args.coords_csv)?;
    let hash = m.model_input(&args.model)?;
    let model = EmbeddingModel::open(&args.model)?;
    let coords: Vec<GeoCoordinate> = read_coord_csv(&args.coords_csv)?.into_iter().map(|(c, _)| c).collect();
    let index = build_embedding_index(&coords, &model, &raster, &ScaleSpec::at_resolution(args.scale)?, hash)?;
    std::fs::create_dir_all(&args.out)?;
    index.save(&args.out)?;
    m.output(&args.out);
    m.write(&inside(&args.out))?;
    Ok(index)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrieveArgs {
    /// Directory written by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// `lon,lat[;lon,lat...]`, or a CSV file of query points.
    #[arg(long)]
    pub points: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Model and raster default to those the index was built with.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dtm: Option<PathBuf>,
}

fn parse_points(arg: &str) -> anyhow::Result<Vec<GeoCoordinate>> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(read_coord_csv(path)?.into_iter().map(|(c, _)| c).collect());
    }
    arg.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (lon, lat) = p.split_once(',').ok_or_else(|| usage(format!("point `{p}` is not lon,lat")))?;
            let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| usage(format!("point `{p}`: {e}")));
            Ok(GeoCoordinate::new(parse(lon)?, parse(lat)?)?)
        })
        .collect()
}

pub fn retrieve_cmd(args: &RetrieveArgs) -> anyhow::Result<Vec<Neighbor>> {
    let index_manifest = args.index.join("manifest.json");
    require_file(&index_manifest, "index manifest")?;
    let index = EmbeddingIndex::load(&args.index)?;
    if args.k > index.len() {
        return Err(usage(format!("k = {} exceeds the {} indexed entries", args.k, index.len())));
    }
    let queries = parse_points(&args.points)?;
    if queries.is_empty() {
        return Err(usage("at least one query point is required"));
    }
    if args.k == 0 {
        return Ok(Vec::new());
    }
    let built = inside(&args.index);
    let recorded = || -> anyhow::Result<serde_json::Value> {
        Ok(RunManifest::read(&built).with_context(|| format!("{} names no model or raster; pass --model and --dtm", built.display()))?.config)
    };
    let model = match &args.model {
        Some(m) => m.clone(),
        None => recorded()?["model"].as_str().ok_or_else(|| usage("index run record lacks a model"))?.to_string(),
    };
    let dtm = match &args.dtm {
        Some(d) => d.clone(),
        None => PathBuf::from(recorded()?["dtm"].as_str().ok_or_else(|| usage("index run record lacks a raster"))?),
    };
    require_model(&model)?;
    let raster = ElevationRaster::read_geotiff(&dtm)?;
    let model = EmbeddingModel::open(&model)?;
    if model.label() != index.model {
        return Err(usage(format!("model {} does not match the index model {}", model.label(), index.model)));
    }
    Ok(knn_retrieve(&index, &model, &raster, &queries, args.k)?)
}

pub fn neighbors_csv(neighbors: &[Neighbor]) -> String {
    if neighbors.is_empty() {
        return String::new();
    }
    let mut out = String::from("lon,lat,distance\n");
    for n in neighbors {
        out.push_str(&format!("{},{},{}\n", n.lon, n.lat, n.distance));
    }
    out
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    pub model: String,
    /// Probe set written by `fit-probes`.
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub dtm: PathBuf,
    /// `min_lon,min_lat,max_lon,max_lat`.
    #[arg(long, allow_hyphen_values = true)]
    pub bbox: String,
    /// Resolutions in meters/pixel, one map layer each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scales: Vec<f64>,
    /// Lattice spacing in meters; one patch radius per scale when absent.
    #[arg(long)]
    pub stride: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DETECTION_THRESHOLD)]
    pub threshold: f64,
    /// Restrict to these classes; every probe when absent.
    #[arg(long, value_delimiter = ',')]
    pub class: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn grid_cmd(args: &GridArgs) -> anyhow::Result<()> {
    require_model(&args.model)?;
    require_file(&args.probes, "probe set")?;
    let bbox = BoundingBox::from_str(&args.bbox).map_err(|e| usage(format!("--bbox: {e}")))?;
    let mut m = RunManifest::new("grid-classify", args, None)?;
    let raster = open_raster(&args.dtm, &mut m)?;
    m.input(&args.probes)?;
    m.model_input(&args.model)?;
    let model = EmbeddingModel::open(&args.model)?;
    let set = ProbeSet::load(&args.probes)?;
    let probes: Vec<_> = if args.class.is_empty() {
        set.probes.clone()
    } else {
        args.class
            .iter()
            .map(|c| set.get(c).cloned().ok_or_else(|| usage(format!("no probe for class `{c}`"))))
            .collect::<anyhow::Result<_>>()?
    };
    if let Some(p) = probes.iter().find(|p| p.model != model.label()) {
        return Err(usage(format!("probe `{}` was fitted on {}, not {}", p.class_name, p.model, model.label())));
    }
    let opts = GridOptions { stride_m: args.stride, threshold: args.threshold };
    let maps = grid_classify(&bbox.to_polygon(), &args.scales, &model, &probes, &opts, &raster)?;
    terrain_embed::checkpoint::write_atomic(&args.out, maps.to_geojson_string().as_bytes())?;
    m.output(&args.out);
    m.write(&beside(&args.out))
}

/// Exit status for a failed command: 2 for usage and contract errors, 3 for
/// data shortfalls, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<clap::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<terrain_embed_service::ServiceError>() {
            return match e {
                terrain_embed_service::ServiceError::Config(_) => 2,
                terrain_embed_service::ServiceError::Artifact(inner) => core_code(inner),
                terrain_embed_service::ServiceError::Io(_) => 1,
            };
        }
    }
    1
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) | Error::Contract(_) => 2,
        Error::Boundary(_)
        | Error::DataQuality(_)
        | Error::Capacity { .. }
        | Error::EmptyClass(_)
        | Error::Degenerate(_) => 3,
        _ => 1,
    }
}
