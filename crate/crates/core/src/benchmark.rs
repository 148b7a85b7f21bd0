//! Planted synthetic benchmarks: fractal background terrain with landforms of
//! known class, position and footprint stamped on a jittered lattice.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{AoiPolygon, GeoCoordinate};
use crate::labels::{build_class_dataset, ClassTag, LabeledCoordSet};
use crate::raster::ElevationRaster;
use crate::rng;
use crate::synth::{diamond_square, raster_from_heights, Landform};

pub const BENCHMARK_CENTER: GeoCoordinate = GeoCoordinate { lon: 11.0, lat: 47.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub class_name: String,
    /// True landform center.
    pub center: GeoCoordinate,
    /// Coordinate reported as the label; may be offset from the center.
    pub label: GeoCoordinate,
    pub row: f64,
    pub col: f64,
    pub landform: Landform,
}

#[derive(Debug, Clone)]
pub struct PlantedTerrain {
    pub raster: ElevationRaster,
    /// Area whose points keep every benchmark window inside the raster.
    pub region: AoiPolygon,
    pub instances: Vec<PlantedInstance>,
}

/// How one class's landforms are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPlan {
    pub name: &'static str,
    pub kind: LandformKind,
    /// Gaussian width range in raster pixels.
    pub sigma_px: (f64, f64),
    /// Height (or depth) range in meters.
    pub height_m: (f64, f64),
    /// Orientation range (radians from the column axis) of ridges and saddles.
    pub angle_rad: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandformKind {
    Peak,
    Pit,
    Ridge,
    Saddle,
}

impl ClassPlan {
    fn draw(&self, r: &mut rng::Rng) -> Landform {
        let sigma_px = r.gen_range(self.sigma_px.0..=self.sigma_px.1);
        let height_m = r.gen_range(self.height_m.0..=self.height_m.1);
        let angle_rad = r.gen_range(self.angle_rad.0..=self.angle_rad.1);
        match self.kind {
            LandformKind::Peak => Landform::Peak { sigma_px, height_m },
            LandformKind::Pit => Landform::Pit { sigma_px, depth_m: height_m },
            LandformKind::Ridge => Landform::Ridge { sigma_px, half_length_px: 2.5 * sigma_px, angle_rad, height_m },
            LandformKind::Saddle => Landform::Saddle { sigma_px, angle_rad, height_m },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub side_px: usize,
    pub resolution: f64,
    pub roughness: f64,
    /// First-octave displacement of the background, meters.
    pub background_amplitude_m: f64,
    /// Pixels kept free of instances (and excluded from the region) at each edge.
    pub margin_px: usize,
    pub cell_px: usize,
    /// Maximum offset of a landform from its cell center, pixels.
    pub position_jitter_px: f64,
    /// Maximum offset of a label from its landform center, pixels.
    pub label_jitter_px: f64,
    /// Classes assigned to cells in equal proportions.
    pub classes: Vec<ClassPlan>,
}

impl PlantConfig {
    /// Four small-footprint classes at 10 m/px: peaks, pits, ridges, saddles
    /// 40 to 80 m wide. Ridges trend north-south within 15 degrees, like the
    /// crests of one range; saddles take any orientation.
    pub fn landforms() -> Self {
        let any = (0.0, std::f64::consts::PI);
        let plan = |name, kind, angle_rad| ClassPlan { name, kind, sigma_px: (4.0, 8.0), height_m: (25.0, 50.0), angle_rad };
        let trend = std::f64::consts::FRAC_PI_2;
        let spread = 15f64.to_radians();
        Self {
            side_px: 2049,
            resolution: 10.0,
            roughness: 0.5,
            background_amplitude_m: 320.0,
            margin_px: 72,
            cell_px: 38,
            position_jitter_px: 4.0,
            label_jitter_px: 0.0,
            classes: vec![
                plan("peak", LandformKind::Peak, any),
                plan("pit", LandformKind::Pit, any),
                plan("ridge", LandformKind::Ridge, (trend - spread, trend + spread)),
                plan("saddle", LandformKind::Saddle, any),
            ],
        }
    }

    /// The same four classes 15 to 30 m wide: below the pixel size of 40 m/px
    /// patches, so only fine-scale detail separates them.
    pub fn fine_landforms() -> Self {
        let mut c = Self::landforms();
        for plan in &mut c.classes {
            plan.sigma_px = (1.5, 3.0);
            plan.height_m = (15.0, 30.0);
        }
        c
    }

    /// Peaks with a 60 m Gaussian width, 390 m apart, on rough 7.5 m/px
    /// terrain, labeled with up to 90 m of positional error per axis. Finer
    /// windows often miss the summit and coarser ones take in neighboring
    /// peaks, so the class is best resolved near 30 m/px.
    pub fn scale_scan() -> Self {
        Self {
            side_px: 2049,
            resolution: 7.5,
            roughness: 0.7,
            background_amplitude_m: 240.0,
            margin_px: 130,
            cell_px: 52,
            position_jitter_px: 6.0,
            label_jitter_px: 12.0,
            classes: vec![ClassPlan { name: "peak", kind: LandformKind::Peak, sigma_px: (7.0, 9.0), height_m: (40.0, 60.0), angle_rad: (0.0, 0.0) }],
        }
    }
}

/// Build the terrain; deterministic in `seed`.
pub fn plant_terrain(config: &PlantConfig, seed: u64) -> Result<PlantedTerrain> {
    if config.classes.is_empty() || config.cell_px == 0 || 2 * config.margin_px >= config.side_px {
        return Err(Error::domain("benchmark needs classes, a positive cell size and room inside the margins"));
    }
    let surface = diamond_square(
        rng::subseed(seed, "bench/background"),
        config.side_px,
        config.roughness,
        config.background_amplitude_m,
        0.0,
    )?;
    let mut heights: Array2<f64> = surface.heights;
    let inner = config.side_px - 2 * config.margin_px;
    let cells = inner / config.cell_px;
    let offset = config.margin_px as f64 + (inner - cells * config.cell_px) as f64 / 2.0;
    let mut assignment: Vec<usize> = (0..cells * cells).map(|i| i % config.classes.len()).collect();
    assignment.shuffle(&mut rng::substream(seed, "bench/assignment"));
    let mut draw = rng::substream(seed, "bench/landforms");
    let mut cell_rows = Vec::with_capacity(assignment.len());
    for (i, &class) in assignment.iter().enumerate() {
        let (ci, cj) = (i / cells, i % cells);
        let j = config.position_jitter_px;
        let row = offset + (ci as f64 + 0.5) * config.cell_px as f64 + draw.gen_range(-j..=j);
        let col = offset + (cj as f64 + 0.5) * config.cell_px as f64 + draw.gen_range(-j..=j);
        let landform = config.classes[class].draw(&mut draw);
        let lj = config.label_jitter_px;
        let label_offset = if lj > 0.0 { (draw.gen_range(-lj..=lj), draw.gen_range(-lj..=lj)) } else { (0.0, 0.0) };
        landform.stamp(&mut heights, row, col);
        cell_rows.push((class, row, col, landform, label_offset));
    }
    let raster = raster_from_heights(&heights, 1000.0, BENCHMARK_CENTER, config.resolution)?;
    let at = |row: f64, col: f64| raster.transform().pixel_to_geo(col + 0.5, row + 0.5);
    let instances = cell_rows
        .into_iter()
        .map(|(class, row, col, landform, (dr, dc))| PlantedInstance {
            class_name: config.classes[class].name.to_string(),
            center: at(row, col),
            label: at(row + dr, col + dc),
            row,
            col,
            landform,
        })
        .collect();
    let m = config.margin_px as f64;
    let far = (config.side_px - 1) as f64 - m;
    let corners = [at(m, m), at(m, far), at(far, far), at(far, m)];
    let region = AoiPolygon::new(corners.to_vec())?;
    Ok(PlantedTerrain { raster, region, instances })
}

/// Tag for a synthetic class; selectors are only used for bookkeeping.
pub fn synthetic_tag(name: &str) -> ClassTag {
    ClassTag::builtin(name).unwrap_or_else(|| ClassTag::new(name, format!("synthetic={name}")).expect("valid token"))
}

impl PlantedTerrain {
    pub fn class_labels(&self, class: &str) -> Vec<GeoCoordinate> {
        self.instances.iter().filter(|i| i.class_name == class).map(|i| i.label).collect()
    }

    /// Class labels against uniform random in-region negatives.
    pub fn class_vs_background(&self, class: &str, n: usize, seed: u64) -> Result<LabeledCoordSet> {
        build_class_dataset(&self.class_labels(class), &self.region, n, seed, &synthetic_tag(class))
    }

    /// `n / 2` labels of `positive` (label 1) against `n / 2` of `negative`
    /// (label 0), shuffled.
    pub fn class_vs_class(&self, positive: &str, negative: &str, n: usize, seed: u64) -> Result<LabeledCoordSet> {
        let half = n / 2;
        let mut entries = Vec::with_capacity(2 * half);
        let mut r = rng::substream(seed, "bench/pairwise");
        for (class, y) in [(positive, 1u8), (negative, 0u8)] {
            let pool = self.class_labels(class);
            if pool.len() < half {
                return Err(Error::Capacity { what: format!("planted `{class}` instances"), needed: half, available: pool.len() });
            }
            entries.extend(pool.choose_multiple(&mut r, half).map(|c| (*c, y)));
        }
        entries.shuffle(&mut r);
        Ok(LabeledCoordSet { entries, class_tag: synthetic_tag(positive), region: self.region.clone(), seed })
    }

    /// Whether `coord` lies within `tolerance_px` of the crest line of a
    /// planted ridge.
    pub fn on_ridge(&self, coord: &GeoCoordinate, tolerance_px: f64) -> bool {
        let (row, col) = self.raster.pixel_index(coord);
        self.instances.iter().any(|inst| match inst.landform {
            Landform::Ridge { half_length_px, angle_rad, .. } => {
                let (s, c) = angle_rad.sin_cos();
                let (dr, dc) = (row - inst.row, col - inst.col);
                let along = dc * c + dr * s;
                let across = -dc * s + dr * c;
                let beyond = (along.abs() - half_length_px).max(0.0);
                (across * across + beyond * beyond).sqrt() <= tolerance_px
            }
            _ => false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PlantConfig {
        PlantConfig { side_px: 257, margin_px: 20, cell_px: 36, background_amplitude_m: 40.0, ..PlantConfig::landforms() }
    }

    #[test]
    fn instances_are_balanced_inside_region_and_deterministic() {
        let t = plant_terrain(&small(), 4).unwrap();
        // (257 - 40) / 36 = 6 cells per axis.
        assert_eq!(t.instances.len(), 36);
        for class in ["peak", "pit", "ridge", "saddle"] {
            assert_eq!(t.class_labels(class).len(), 9);
        }
        assert!(t.instances.iter().all(|i| t.region.contains(&i.center)));
        let again = plant_terrain(&small(), 4).unwrap();
        assert_eq!(t.raster, again.raster);
    }

    #[test]
    fn planted_peaks_stand_above_their_surroundings() {
        let t = plant_terrain(&small(), 5).unwrap();
        for inst in t.instances.iter().filter(|i| i.class_name == "peak") {
            let top = t.raster.value_at(&inst.center).unwrap();
            let (dr, dc) = (inst.row, inst.col + 12.0);
            let side = t.raster.value_at(&t.raster.transform().pixel_to_geo(dc + 0.5, dr + 0.5)).unwrap();
            // Background slope over 12 px is far below the 25 m minimum height.
            assert!(top > side, "{top} <= {side}");
        }
    }

    #[test]
    fn ridge_mask_matches_crest() {
        let t = plant_terrain(&small(), 6).unwrap();
        let ridge = t.instances.iter().find(|i| i.class_name == "ridge").unwrap();
        assert!(t.on_ridge(&ridge.center, 0.5));
        let peak = t.instances.iter().find(|i| i.class_name == "peak").unwrap();
        assert!(!t.on_ridge(&peak.center, 2.0));
    }

    #[test]
    fn pairwise_sets_are_balanced() {
        let t = plant_terrain(&small(), 7).unwrap();
        let ds = t.class_vs_class("peak", "pit", 10, 1).unwrap();
        assert_eq!(ds.positives().count(), 5);
        assert_eq!(ds.negatives().count(), 5);
        assert!(t.class_vs_class("peak", "pit", 40, 1).is_err());
    }
}
