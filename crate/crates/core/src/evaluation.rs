//! Seeded evaluation procedures: SVM probes on frozen embeddings, scale scans
//! with a probe CNN, and multi-scale grid classification.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{CnnModel, CnnTrainOptions, EmbeddingModel, HeadSample};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::geo::{meters_per_degree_lon, AoiPolygon, GeoCoordinate, METERS_PER_DEGREE};
use crate::labels::{build_class_dataset, to_image_dataset, ClassTag, LabeledCoordSet};
use crate::patch::{extract_patch, normalize_values, ScaleSpec, PATCH_HALF_EXTENT};
use crate::raster::ElevationRaster;
use crate::rng;
use crate::svm::{mean_std, LinearSvm, SvmOptions};

/// Probability at or above which a grid point counts as a detection.
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.5;

/// Patches whose raw relief is below this many meters are featureless.
pub const FLAT_RELIEF_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Actual,
    /// Labels permuted per seed before resampling: a chance-level control.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub class_name: String,
    pub model: String,
    pub label_mode: LabelMode,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_seeds: usize,
    /// Test accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
}

fn embed_items(model: &EmbeddingModel, patches: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    model.embed(patches)
}

fn take_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn check_even(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::domain(format!("{what} = {n} must be positive and even for balanced sets")));
    }
    Ok(())
}

/// Linear-SVM probe accuracy on frozen embeddings. Each seed draws balanced,
/// disjoint train and test sets from the usable coordinates of `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn probe_classification(
    model: &EmbeddingModel,
    dataset: &LabeledCoordSet,
    raster: &ElevationRaster,
    scale: &ScaleSpec,
    n_train: usize,
    n_test: usize,
    seeds: &[u64],
    svm: &SvmOptions,
    label_mode: LabelMode,
) -> Result<ProbeResult> {
    check_even(n_train, "n_train")?;
    check_even(n_test, "n_test")?;
    if seeds.is_empty() {
        return Err(Error::domain("at least one seed is required"));
    }
    let images = to_image_dataset(&dataset.entries, scale, raster)?;
    let patches: Vec<_> = images.items.iter().map(|(p, _)| p.values.view()).collect();
    let features = embed_items(model, &patches)?;
    let base_labels: Vec<u8> = images.items.iter().map(|(_, y)| *y).collect();
    let per_class = (n_train + n_test) / 2;
    let accuracies: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| -> Result<f64> {
        let mut labels = base_labels.clone();
        if label_mode == LabelMode::Shuffled {
            labels.shuffle(&mut rng::substream(seed, "probe/shuffle-labels"));
        }
        let mut draw = rng::substream(seed, "probe/resample");
        let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &y) in labels.iter().enumerate() {
            pools[y as usize].push(i);
        }
        for (y, pool) in pools.iter_mut().enumerate() {
            if pool.len() < per_class {
                return Err(Error::Capacity {
                    what: format!(
                        "usable {} examples of class `{}`",
                        if y == 1 { "positive" } else { "negative" },
                        dataset.class_tag.name
                    ),
                    needed: per_class,
                    available: pool.len(),
                });
            }
            pool.shuffle(&mut draw);
        }
        let (htr, hte) = (n_train / 2, n_test / 2);
        let train: Vec<usize> = pools.iter().flat_map(|p| p[..htr].iter().copied()).collect();
        let test: Vec<usize> = pools.iter().flat_map(|p| p[htr..htr + hte].iter().copied()).collect();
        let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        let opts = SvmOptions { seed: rng::subseed(seed, "probe/svm"), ..*svm };
        let fitted = LinearSvm::fit(take_rows(&features, &train).view(), &ytr, &opts)?;
        Ok(fitted.accuracy(take_rows(&features, &test).view(), &yte))
        })
        .collect::<Result<_>>()?;
    let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
    Ok(ProbeResult {
        class_name: dataset.class_tag.name.clone(),
        model: model.label(),
        label_mode,
        mean_accuracy,
        std_accuracy,
        n_train,
        n_test,
        n_seeds: seeds.len(),
        accuracies,
    })
}

pub fn write_probe_csv(path: &Path, results: &[ProbeResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "model", "labels", "mean_accuracy", "std_accuracy", "n_train", "n_test", "n_seeds"])?;
    for r in results {
        w.write_record([
            r.class_name.clone(),
            r.model.clone(),
            serde_json::to_value(r.label_mode)?.as_str().unwrap_or_default().to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.n_seeds.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Models as rows, classes as columns, cells `mean ± std` in percent.
pub fn probe_markdown_table(results: &[ProbeResult]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut classes: Vec<&str> = Vec::new();
    for r in results {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !classes.contains(&r.class_name.as_str()) {
            classes.push(&r.class_name);
        }
    }
    let mut out = String::from("| model |");
    for c in &classes {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(classes.len()));
    out.push('\n');
    for m in &models {
        let _ = write!(out, "| {m} |");
        for c in &classes {
            match results.iter().find(|r| r.model == *m && r.class_name == *c) {
                Some(r) => {
                    let _ = write!(out, " {:.1} ± {:.1} |", 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Radii `8 * s0 * 2^i` for `i` in `0..steps`: patches at resolutions
/// `s0, 2 s0, 4 s0, ...`.
pub fn radius_ladder(native_resolution: f64, steps: usize) -> Result<Vec<f64>> {
    if !(native_resolution > 0.0) || !native_resolution.is_finite() {
        return Err(Error::domain(format!("native resolution {native_resolution} must be positive")));
    }
    Ok((0..steps)
        .map(|i| PATCH_HALF_EXTENT as f64 * native_resolution * f64::powi(2.0, i as i32))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub cnn: CnnTrainOptions,
    pub validation_fraction: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { cnn: CnnTrainOptions::default(), validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRecord {
    pub radius_m: f64,
    pub resolution: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Validation accuracy per seed, aligned with [`ScaleScanResult::seeds`].
    pub accuracies: Vec<f64>,
    /// Coordinates dropped over all seeds because their window left the raster.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleScanResult {
    pub class_name: String,
    pub seeds: Vec<u64>,
    /// Ascending by radius.
    pub records: Vec<RadiusRecord>,
    pub best_resolution: f64,
}

/// Index of the largest value; the earliest wins ties.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl ScaleScanResult {
    /// Best resolution of every seed taken alone.
    pub fn per_seed_best(&self) -> Vec<f64> {
        (0..self.seeds.len())
            .map(|s| self.records[argmax(self.records.iter().map(|r| r.accuracies[s]))].resolution)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "radius_m", "resolution", "mean_accuracy", "std_accuracy", "n_seeds", "rejected", "best"])?;
        for r in &self.records {
            w.write_record([
                self.class_name.clone(),
                r.radius_m.to_string(),
                r.resolution.to_string(),
                r.mean_accuracy.to_string(),
                r.std_accuracy.to_string(),
                self.seeds.len().to_string(),
                r.rejected.to_string(),
                u8::from(r.resolution == self.best_resolution).to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }

    pub fn markdown_table(&self) -> String {
        let mut out = String::from("| resolution (m/px) | radius (m) | accuracy |\n|---|---|---|\n");
        for r in &self.records {
            let mark = if r.resolution == self.best_resolution { " **best**" } else { "" };
            let _ = writeln!(
                out,
                "| {} | {} | {:.1} ± {:.1}{mark} |",
                r.resolution,
                r.radius_m,
                100.0 * r.mean_accuracy,
                100.0 * r.std_accuracy
            );
        }
        out
    }
}

/// For every seed, draw a balanced class dataset of size `n`, then for each
/// radius train a probe CNN on `1 - validation_fraction` of it and record
/// validation accuracy. The best resolution maximizes mean accuracy.
#[allow(clippy::too_many_arguments)]
pub fn scale_scan(
    positives: &[GeoCoordinate],
    region: &AoiPolygon,
    tag: &ClassTag,
    radii: &[f64],
    raster: &ElevationRaster,
    n: usize,
    seeds: &[u64],
    opts: &ScanOptions,
) -> Result<ScaleScanResult> {
    if radii.is_empty() || seeds.is_empty() {
        return Err(Error::domain("scale scan needs at least one radius and one seed"));
    }
    if !(opts.validation_fraction > 0.0 && opts.validation_fraction < 1.0) {
        return Err(Error::domain("validation fraction must lie in (0, 1)"));
    }
    let mut radii = radii.to_vec();
    if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::domain("radii must be positive"));
    }
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let scales: Vec<ScaleSpec> = radii.iter().map(|&r| ScaleSpec::new(r, PATCH_HALF_EXTENT)).collect::<Result<_>>()?;
    // Per seed, one (accuracy, rejected) pair per radius. Seeds own their
    // substreams, so the thread count cannot change the result.
    let per_seed: Vec<Vec<(f64, usize)>> = seeds
        .par_iter()
        .map(|&seed| {
            let dataset = build_class_dataset(positives, region, n, seed, tag)?;
            scales
                .iter()
                .map(|scale| scan_one(&dataset.entries, scale, raster, seed, tag, opts))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut accuracies = vec![Vec::with_capacity(seeds.len()); scales.len()];
    let mut rejected = vec![0; scales.len()];
    for row in &per_seed {
        for (ri, &(acc, rej)) in row.iter().enumerate() {
            accuracies[ri].push(acc);
            rejected[ri] += rej;
        }
    }
    let records: Vec<RadiusRecord> = scales
        .iter()
        .zip(accuracies)
        .zip(rejected)
        .map(|((s, acc), rejected)| {
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            RadiusRecord {
                radius_m: s.radius_m(),
                resolution: s.resolution(),
                mean_accuracy,
                std_accuracy,
                accuracies: acc,
                rejected,
            }
        })
        .collect();
    let best_resolution = records[argmax(records.iter().map(|r| r.mean_accuracy))].resolution;
    Ok(ScaleScanResult { class_name: tag.name.clone(), seeds: seeds.to_vec(), records, best_resolution })
}

fn scan_one(
    entries: &[(GeoCoordinate, u8)],
    scale: &ScaleSpec,
    raster: &ElevationRaster,
    seed: u64,
    tag: &ClassTag,
    opts: &ScanOptions,
) -> Result<(f64, usize)> {
    let images = to_image_dataset(entries, scale, raster)?;
    let m = images.items.len();
    let n_val = ((m as f64) * opts.validation_fraction).round() as usize;
    if n_val == 0 || n_val >= m {
        return Err(Error::Capacity {
            what: format!("usable examples at radius {} m", scale.radius_m()),
            needed: 2,
            available: m,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::substream(seed, "scan/split"));
    let (val, train) = order.split_at(n_val);
    let samples: Vec<HeadSample> =
        train.iter().map(|&i| (images.items[i].0.values.view(), 0, images.items[i].1)).collect();
    let probe = CnnModel::init(vec![tag.name.clone()], rng::subseed(seed, "scan/probe"), scale.resolution())?
        .fit(&samples, &opts.cnn)?
        .model;
    let views: Vec<_> = val.iter().map(|&i| images.items[i].0.values.view()).collect();
    let probs = probe.head_probabilities(&views);
    let correct = val
        .iter()
        .enumerate()
        .filter(|(r, &i)| u8::from(probs[[*r, 0]] > 0.5) == images.items[i].1)
        .count();
    Ok((correct as f64 / n_val as f64, images.rejected))
}

/// A calibrated per-class SVM over a specific embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbe {
    pub class_name: String,
    pub model: String,
    /// Resolution (m/px) of the training patches.
    pub resolution: f64,
    pub svm: LinearSvm,
}

/// Fit a calibrated probe on every usable coordinate of `dataset`.
pub fn fit_class_probe(
    model: &EmbeddingModel,
    dataset: &LabeledCoordSet,
    raster: &ElevationRaster,
    scale: &ScaleSpec,
    svm: &SvmOptions,
) -> Result<ClassProbe> {
    let images = to_image_dataset(&dataset.entries, scale, raster)?;
    let patches: Vec<_> = images.items.iter().map(|(p, _)| p.values.view()).collect();
    let labels: Vec<u8> = images.items.iter().map(|(_, y)| *y).collect();
    let features = embed_items(model, &patches)?;
    Ok(ClassProbe {
        class_name: dataset.class_tag.name.clone(),
        model: model.label(),
        resolution: scale.resolution(),
        svm: LinearSvm::fit_calibrated(features.view(), &labels, svm)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    /// SHA-256 of the checkpoint blob the probes were fitted on, if any.
    pub checkpoint_sha256: Option<String>,
    pub probes: Vec<ClassProbe>,
}

impl ProbeSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn get(&self, class: &str) -> Option<&ClassProbe> {
        self.probes.iter().find(|p| p.class_name == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Lattice spacing; defaults to one patch radius at each resolution.
    pub stride_m: Option<f64>,
    pub threshold: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { stride_m: None, threshold: DEFAULT_DETECTION_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub coord: GeoCoordinate,
    pub class_name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayer {
    pub resolution: f64,
    pub stride_m: f64,
    /// Lattice points inside the region.
    pub points: usize,
    /// Lattice points whose window left the raster or held nodata.
    pub skipped: usize,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMaps {
    pub layers: Vec<GridLayer>,
}

impl GridMaps {
    /// Point FeatureCollection with `class`, `scale`, `score` properties, plus
    /// a `layers` summary member listing every requested scale.
    pub fn to_geojson(&self) -> serde_json::Value {
        let features: Vec<serde_json::Value> = self
            .layers
            .iter()
            .flat_map(|layer| {
                layer.detections.iter().map(move |d| {
                    serde_json::json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": [d.coord.lon, d.coord.lat]},
                        "properties": {"class": d.class_name, "scale": layer.resolution, "score": d.score},
                    })
                })
            })
            .collect();
        let layers: Vec<serde_json::Value> = self
            .layers
            .iter()
            .map(|l| {
                serde_json::json!({
                    "scale": l.resolution,
                    "stride_m": l.stride_m,
                    "points": l.points,
                    "skipped": l.skipped,
                    "detections": l.detections.len(),
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features, "layers": layers})
    }

    pub fn to_geojson_string(&self) -> String {
        self.to_geojson().to_string()
    }
}

/// Lattice points of spacing `stride_m` inside `region`, south to north then
/// west to east.
pub fn region_lattice(region: &AoiPolygon, stride_m: f64) -> Result<Vec<GeoCoordinate>> {
    if !(stride_m > 0.0) || !stride_m.is_finite() {
        return Err(Error::domain(format!("stride {stride_m} m must be positive")));
    }
    let bbox = region.bbox();
    let dlat = stride_m / METERS_PER_DEGREE;
    let dlon = stride_m / meters_per_degree_lon(bbox.center().lat);
    let rows = ((bbox.max_lat - bbox.min_lat) / dlat).floor() as usize + 1;
    let cols = ((bbox.max_lon - bbox.min_lon) / dlon).floor() as usize + 1;
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let c = GeoCoordinate { lon: bbox.min_lon + j as f64 * dlon, lat: bbox.min_lat + i as f64 * dlat };
            if region.contains(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Apply every probe at every resolution on a lattice over `region`.
/// Featureless (flat) patches never produce detections.
pub fn grid_classify(
    region: &AoiPolygon,
    resolutions: &[f64],
    model: &EmbeddingModel,
    probes: &[ClassProbe],
    opts: &GridOptions,
    raster: &ElevationRaster,
) -> Result<GridMaps> {
    let rb = raster.center_bounds();
    let bbox = region.bbox();
    if bbox.min_lon < rb.min_lon || bbox.max_lon > rb.max_lon || bbox.min_lat < rb.min_lat || bbox.max_lat > rb.max_lat {
        return Err(Error::Boundary(format!("region {bbox:?} is not inside the raster extent {rb:?}")));
    }
    if resolutions.is_empty() {
        return Err(Error::domain("at least one scale is required"));
    }
    let mut layers = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let scale = ScaleSpec::at_resolution(res)?;
        let stride_m = opts.stride_m.unwrap_or(scale.radius_m());
        let lattice = region_lattice(region, stride_m)?;
        let mut coords = Vec::new();
        let mut patches = Vec::new();
        let mut skipped = 0;
        for c in &lattice {
            match extract_patch(raster, c, &scale) {
                Ok(p) => {
                    let (lo, hi) = p.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                    if hi - lo > FLAT_RELIEF_M {
                        coords.push(*c);
                        patches.push(normalize_values(p.values.view()));
                    }
                }
                Err(Error::Boundary(_) | Error::DataQuality(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let views: Vec<_> = patches.iter().map(|p| p.view()).collect();
        let features = embed_items(model, &views)?;
        let scores: Vec<Vec<f64>> = probes.iter().map(|p| p.svm.probability(features.view())).collect();
        let mut detections = Vec::new();
        for (i, c) in coords.iter().enumerate() {
            for (probe, s) in probes.iter().zip(&scores) {
                if s[i] >= opts.threshold {
                    detections.push(Detection { coord: *c, class_name: probe.class_name.clone(), score: s[i] });
                }
            }
        }
        layers.push(GridLayer { resolution: res, stride_m, points: lattice.len(), skipped, detections });
    }
    Ok(GridMaps { layers })
}

/// Number of `coords` inside `polygon`; zero means the split is clean.
pub fn count_inside(coords: &[GeoCoordinate], polygon: &AoiPolygon) -> usize {
    coords.iter().filter(|c| polygon.contains(c)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_doubles_from_native() {
        assert_eq!(radius_ladder(7.5, 4).unwrap(), vec![60.0, 120.0, 240.0, 480.0]);
        assert!(radius_ladder(0.0, 3).is_err());
    }

    #[test]
    fn argmax_prefers_earliest_tie() {
        assert_eq!(argmax([0.5, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax([f64::NAN, 0.2]), 1);
    }

    #[test]
    fn markdown_table_lays_out_models_by_class() {
        let r = |model: &str, class: &str, m: f64| ProbeResult {
            class_name: class.into(),
            model: model.into(),
            label_mode: LabelMode::Actual,
            mean_accuracy: m,
            std_accuracy: 0.01,
            n_train: 10,
            n_test: 4,
            n_seeds: 2,
            accuracies: vec![m, m],
        };
        let t = probe_markdown_table(&[r("id", "peak", 0.8), r("id", "saddle", 0.7), r("cnn", "peak", 0.9)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| model | peak | saddle |");
        assert_eq!(lines[2], "| id | 80.0 ± 1.0 | 70.0 ± 1.0 |");
        assert_eq!(lines[3], "| cnn | 90.0 ± 1.0 | - |");
    }

    #[test]
    fn lattice_spacing_and_containment() {
        let region = AoiPolygon::from_wkt("POLYGON ((11 47, 11.01 47, 11.01 47.01, 11 47.01, 11 47))").unwrap();
        let pts = region_lattice(&region, 100.0).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| region.contains(p)));
        let dlat = 100.0 / METERS_PER_DEGREE;
        let column: Vec<f64> = pts.iter().filter(|p| p.lon == pts[0].lon).map(|p| p.lat).collect();
        assert!(column.len() >= 11);
        assert!(column.windows(2).all(|w| (w[1] - w[0] - dlat).abs() < 1e-12));
        assert!(region_lattice(&region, 0.0).is_err());
    }
}
