//! Labeled coordinate datasets for terrain classes.
//!
//! Positives come from point features of a class (offline CSV or a live
//! Overpass query); negatives are uniform random points of the same region,
//! not checked for absence of the class.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{sample_coords_in_polygon, sort_dedup, AoiPolygon, GeoCoordinate};
use crate::overpass::OverpassClient;
use crate::patch::{extract_patch, normalize_patch, ElevationPatch, ScaleSpec};
use crate::raster::ElevationRaster;
use crate::rng;

/// Rejection rate above which [`ImageDataset::warning`] is set.
pub const REJECTION_WARNING_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTag {
    pub name: String,
    /// `key=value` tag filter.
    pub osm_selector: String,
}

const BUILTIN_TAGS: [(&str, &str); 8] = [
    ("peak", "natural=peak"),
    ("river", "waterway=river"),
    ("cliff", "natural=cliff"),
    ("saddle", "natural=saddle"),
    ("aerialway_station", "aerialway=station"),
    ("alpine_hut", "tourism=alpine_hut"),
    ("waterfall", "waterway=waterfall"),
    ("sinkhole", "natural=sinkhole"),
];

fn is_tag_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | ':' | '-' | '.'))
}

impl ClassTag {
    pub fn new(name: impl Into<String>, osm_selector: impl Into<String>) -> Result<Self> {
        let (name, osm_selector) = (name.into(), osm_selector.into());
        if name.trim().is_empty() {
            return Err(Error::domain("class name must be non-empty"));
        }
        match osm_selector.split_once('=') {
            Some((k, v)) if is_tag_token(k) && is_tag_token(v) => Ok(Self { name, osm_selector }),
            _ => Err(Error::domain(format!("selector `{osm_selector}` is not of the form key=value"))),
        }
    }

    /// One of the predefined classes (`peak`, `river`, `cliff`, `saddle`,
    /// `aerialway_station`, `alpine_hut`, `waterfall`, `sinkhole`).
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN_TAGS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, s)| Self { name: n.to_string(), osm_selector: s.to_string() })
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_TAGS.iter().map(|(n, _)| *n)
    }

    /// Overpass QL tag filter, e.g. `["natural"="peak"]`.
    pub fn overpass_filter(&self) -> String {
        let (k, v) = self.osm_selector.split_once('=').expect("validated selector");
        format!("[\"{k}\"=\"{v}\"]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCoordSet {
    pub entries: Vec<(GeoCoordinate, u8)>,
    pub class_tag: ClassTag,
    pub region: AoiPolygon,
    pub seed: u64,
}

impl LabeledCoordSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &GeoCoordinate> {
        self.entries.iter().filter(|(_, y)| *y == 1).map(|(c, _)| c)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &GeoCoordinate> {
        self.entries.iter().filter(|(_, y)| *y == 0).map(|(c, _)| c)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_coord_csv(path, self.entries.iter().map(|(c, y)| (*c, Some(*y))))
    }
}

#[derive(Debug, Deserialize)]
struct CoordRow {
    lon: f64,
    lat: f64,
    label: Option<u8>,
}

/// Read a `lon,lat[,label]` CSV. Labels, when present, must be 0 or 1.
pub fn read_coord_csv(path: &Path) -> Result<Vec<(GeoCoordinate, Option<u8>)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if !(headers.iter().any(|h| h == "lon") && headers.iter().any(|h| h == "lat")) {
        return Err(Error::DataQuality(format!("{}: header must contain lon,lat", path.display())));
    }
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: CoordRow = row?;
        if let Some(l) = row.label.filter(|l| *l > 1) {
            return Err(Error::DataQuality(format!("{}: label {l} is not 0 or 1", path.display())));
        }
        out.push((GeoCoordinate::new(row.lon, row.lat)?, row.label));
    }
    Ok(out)
}

pub fn write_coord_csv(path: &Path, rows: impl IntoIterator<Item = (GeoCoordinate, Option<u8>)>) -> Result<()> {
    let rows: Vec<_> = rows.into_iter().collect();
    let labeled = rows.iter().any(|(_, y)| y.is_some());
    let mut w = csv::Writer::from_path(path)?;
    if labeled {
        w.write_record(["lon", "lat", "label"])?;
    } else {
        w.write_record(["lon", "lat"])?;
    }
    for (c, y) in rows {
        let mut rec = vec![c.lon.to_string(), c.lat.to_string()];
        if labeled {
            rec.push(y.map(|y| y.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Where class coordinates come from.
pub enum CoordSource<'a> {
    Csv(PathBuf),
    Overpass(&'a OverpassClient),
}

/// Class coordinates inside `region`, sorted by (lon, lat) with
/// near-duplicates removed.
pub fn load_class_coords(source: &CoordSource, tag: &ClassTag, region: &AoiPolygon) -> Result<Vec<GeoCoordinate>> {
    let mut coords = match source {
        CoordSource::Csv(path) => read_coord_csv(path)?
            .into_iter()
            .filter(|(_, y)| y.unwrap_or(1) == 1)
            .map(|(c, _)| c)
            .collect(),
        CoordSource::Overpass(client) => client.fetch(tag, &region.bbox())?,
    };
    coords.retain(|c| region.contains(c));
    sort_dedup(&mut coords);
    if coords.is_empty() {
        return Err(Error::EmptyClass(tag.name.clone()));
    }
    Ok(coords)
}

/// `total_n / 2` positives drawn without replacement plus as many uniform
/// in-region negatives, shuffled. Deterministic in `seed`.
pub fn build_class_dataset(
    positives: &[GeoCoordinate],
    region: &AoiPolygon,
    total_n: usize,
    seed: u64,
    tag: &ClassTag,
) -> Result<LabeledCoordSet> {
    if !total_n.is_multiple_of(2) {
        return Err(Error::domain(format!("dataset size {total_n} must be even")));
    }
    let half = total_n / 2;
    let mut pool: Vec<GeoCoordinate> = positives.iter().copied().filter(|c| region.contains(c)).collect();
    sort_dedup(&mut pool);
    if pool.len() < half {
        return Err(Error::Capacity {
            what: format!("positives of class `{}`", tag.name),
            needed: half,
            available: pool.len(),
        });
    }
    let mut pos_rng = rng::substream(seed, "dataset/positives");
    let chosen: Vec<GeoCoordinate> = pool.choose_multiple(&mut pos_rng, half).copied().collect();
    let negatives = sample_coords_in_polygon(region, half, rng::subseed(seed, "dataset/negatives"))?;
    let mut entries: Vec<(GeoCoordinate, u8)> =
        chosen.into_iter().map(|c| (c, 1)).chain(negatives.into_iter().map(|c| (c, 0))).collect();
    entries.shuffle(&mut rng::substream(seed, "dataset/shuffle"));
    Ok(LabeledCoordSet { entries, class_tag: tag.clone(), region: region.clone(), seed })
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    /// Normalized patches of surviving coordinates, in input order.
    pub items: Vec<(ElevationPatch, u8)>,
    /// Input indices of the surviving coordinates.
    pub kept: Vec<usize>,
    pub rejected: usize,
    /// Set when more than 20% of the coordinates were rejected.
    pub warning: Option<String>,
}

impl ImageDataset {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.items.len() + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

/// One normalized patch per coordinate whose window fits the raster and holds
/// no nodata; other coordinates are dropped and counted.
pub fn to_image_dataset(entries: &[(GeoCoordinate, u8)], scale: &ScaleSpec, raster: &ElevationRaster) -> Result<ImageDataset> {
    let mut items = Vec::with_capacity(entries.len());
    let mut kept = Vec::with_capacity(entries.len());
    for (i, (c, y)) in entries.iter().enumerate() {
        match extract_patch(raster, c, scale) {
            Ok(p) => {
                items.push((normalize_patch(&p), *y));
                kept.push(i);
            }
            Err(Error::Boundary(_) | Error::DataQuality(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let rejected = entries.len() - items.len();
    let mut ds = ImageDataset { items, kept, rejected, warning: None };
    if ds.rejection_rate() > REJECTION_WARNING_RATE {
        ds.warning = Some(format!(
            "{rejected} of {} coordinates ({:.0}%) rejected at radius {} m",
            entries.len(),
            100.0 * ds.rejection_rate(),
            scale.radius_m()
        ));
    }
    Ok(ds)
}

/// Unlabeled variant of [`to_image_dataset`].
pub fn coords_to_patches(coords: &[GeoCoordinate], scale: &ScaleSpec, raster: &ElevationRaster) -> Result<ImageDataset> {
    let entries: Vec<(GeoCoordinate, u8)> = coords.iter().map(|c| (*c, 0)).collect();
    to_image_dataset(&entries, scale, raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_fractal_raster;

    fn region() -> AoiPolygon {
        AoiPolygon::from_wkt("POLYGON ((10 45, 11 45, 11 46, 10 46, 10 45))").unwrap()
    }

    fn peak() -> ClassTag {
        ClassTag::builtin("peak").unwrap()
    }

    #[test]
    fn tags_validate_selectors() {
        assert_eq!(peak().overpass_filter(), "[\"natural\"=\"peak\"]");
        assert!(ClassTag::new("", "natural=peak").is_err());
        assert!(ClassTag::new("x", "natural").is_err());
        assert!(ClassTag::new("x", "natural=\"peak\"").is_err());
        assert!(ClassTag::new("volcano", "natural=volcano").is_ok());
        assert_eq!(ClassTag::builtin_names().count(), 8);
    }

    #[test]
    fn csv_source_filters_to_region() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("peaks.csv");
        std::fs::write(&path, "lon,lat\n10.5,45.5\n10.2,45.1\n10.9,45.9\n12.0,45.5\n9.0,44.0\n").unwrap();
        let coords = load_class_coords(&CoordSource::Csv(path), &peak(), &region()).unwrap();
        assert_eq!(coords.len(), 3);
        assert!(coords.windows(2).all(|w| w[0].cmp_lon_lat(&w[1]).is_lt()));
    }

    #[test]
    fn empty_csv_is_an_empty_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("none.csv");
        std::fs::write(&path, "lon,lat\n").unwrap();
        let err = load_class_coords(&CoordSource::Csv(path), &peak(), &region());
        assert!(matches!(err, Err(Error::EmptyClass(name)) if name == "peak"));
    }

    fn positives(n: usize) -> Vec<GeoCoordinate> {
        (0..n)
            .map(|i| GeoCoordinate::new(10.0 + (i % 40) as f64 * 0.024 + 0.01, 45.0 + (i / 40) as f64 * 0.05 + 0.01).unwrap())
            .collect()
    }

    #[test]
    fn balanced_dataset_from_enough_positives() {
        let ds = build_class_dataset(&positives(600), &region(), 1000, 4, &peak()).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.positives().count(), 500);
        assert_eq!(ds.negatives().count(), 500);
        assert!(ds.entries.iter().all(|(c, _)| region().contains(c)));
        let mut all: Vec<GeoCoordinate> = ds.entries.iter().map(|(c, _)| *c).collect();
        sort_dedup(&mut all);
        assert_eq!(all.len(), 1000);
        let again = build_class_dataset(&positives(600), &region(), 1000, 4, &peak()).unwrap();
        assert_eq!(ds, again);
        let empty = build_class_dataset(&positives(600), &region(), 0, 4, &peak()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn too_few_positives_names_the_shortfall() {
        let err = build_class_dataset(&positives(100), &region(), 1000, 4, &peak()).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 500, available: 100, .. }));
        assert!(err.to_string().contains("short by 400"));
    }

    #[test]
    fn labeled_csv_round_trip() {
        let ds = build_class_dataset(&positives(50), &region(), 20, 1, &peak()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        ds.write_csv(&path).unwrap();
        let back = read_coord_csv(&path).unwrap();
        let expected: Vec<_> = ds.entries.iter().map(|(c, y)| (*c, Some(*y))).collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn image_dataset_drops_and_counts_edge_coords() {
        let raster = synth_fractal_raster(2, 129, 0.5, 10.0).unwrap();
        let scale = ScaleSpec::at_resolution(10.0).unwrap();
        let mut entries: Vec<(GeoCoordinate, u8)> =
            (0..10).map(|i| (raster.pixel_center(40 + 5 * i, 64), (i % 2) as u8)).collect();
        let ds = to_image_dataset(&entries, &scale, &raster).unwrap();
        assert_eq!(ds.items.len(), 10);
        assert!(ds.items.iter().all(|(p, _)| p.values.dim() == (17, 17)));
        assert!(ds.warning.is_none());
        entries.push((raster.pixel_center(2, 2), 1));
        entries.push((raster.pixel_center(126, 64), 0));
        entries.push((raster.pixel_center(64, 3), 0));
        let ds = to_image_dataset(&entries, &scale, &raster).unwrap();
        assert_eq!(ds.items.len(), 10);
        assert_eq!(ds.rejected, 3);
        assert_eq!(ds.kept, (0..10).collect::<Vec<_>>());
        assert!(ds.warning.is_some());
    }
}
