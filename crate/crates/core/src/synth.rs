//! Synthetic fractal terrain.
//!
//! Diamond-square midpoint displacement produces self-affine surfaces whose
//! displacement amplitude shrinks by `roughness` per octave, so terrain looks
//! statistically alike across observation scales. Planted landforms
//! (peaks, pits, ridges, saddles) can be stamped on top with known footprints.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{meters_per_degree_lon, GeoCoordinate, METERS_PER_DEGREE};
use crate::raster::{ElevationRaster, GeoTransform};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Geographic position of the middle pixel.
    pub center: GeoCoordinate,
    pub base_elevation_m: f64,
    /// First-octave displacement amplitude, as a fraction of the raster extent.
    pub relief_fraction: f64,
    /// Amplitude of the random corner seeds, same units as `relief_fraction`.
    pub corner_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            center: GeoCoordinate { lon: 11.0, lat: 47.0 },
            base_elevation_m: 1000.0,
            relief_fraction: 0.1,
            corner_fraction: 0.1,
        }
    }
}

/// Surface heights plus the largest displacement applied at each octave.
#[derive(Debug, Clone)]
pub struct FractalSurface {
    pub heights: Array2<f64>,
    pub octave_max_displacement: Vec<f64>,
}

pub fn check_side(side_px: usize) -> Result<u32> {
    let m = (side_px.wrapping_sub(1)).trailing_zeros();
    if side_px < 5 || !(side_px - 1).is_power_of_two() {
        return Err(Error::domain(format!(
            "side {side_px} is not 2^m + 1 with m >= 2"
        )));
    }
    Ok(m)
}

/// Diamond-square on a `side x side` grid; displacements at octave `o` are
/// uniform in `±amplitude * roughness^o`.
pub fn diamond_square(
    seed: u64,
    side_px: usize,
    roughness: f64,
    amplitude: f64,
    corner_amplitude: f64,
) -> Result<FractalSurface> {
    check_side(side_px)?;
    if !(roughness > 0.0 && roughness <= 1.0) {
        return Err(Error::domain(format!("roughness {roughness} outside (0, 1]")));
    }
    let mut rng = rng::substream(seed, "diamond-square");
    let mut h = Array2::<f64>::zeros((side_px, side_px));
    let last = side_px - 1;
    for (r, c) in [(0, 0), (0, last), (last, 0), (last, last)] {
        h[[r, c]] = if corner_amplitude > 0.0 {
            rng.gen_range(-corner_amplitude..=corner_amplitude)
        } else {
            0.0
        };
    }

    let mut octave_max = Vec::new();
    let mut step = last;
    let mut amp = amplitude;
    while step > 1 {
        let half = step / 2;
        let mut max_disp = 0.0f64;
        let mut displace = |rng: &mut rng::Rng| {
            let d = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            max_disp = max_disp.max(d.abs());
            d
        };
        // Diamond step: centers of squares.
        for r in (half..last).step_by(step) {
            for c in (half..last).step_by(step) {
                let mean = 0.25
                    * (h[[r - half, c - half]]
                        + h[[r - half, c + half]]
                        + h[[r + half, c - half]]
                        + h[[r + half, c + half]]);
                h[[r, c]] = mean + displace(&mut rng);
            }
        }
        // Square step: edge midpoints, averaging the 3 or 4 in-grid neighbors.
        for r in (0..=last).step_by(half) {
            let offset = if (r / half).is_multiple_of(2) { half } else { 0 };
            for c in (offset..=last).step_by(step) {
                let mut sum = 0.0;
                let mut n = 0.0;
                if r >= half {
                    sum += h[[r - half, c]];
                    n += 1.0;
                }
                if r + half <= last {
                    sum += h[[r + half, c]];
                    n += 1.0;
                }
                if c >= half {
                    sum += h[[r, c - half]];
                    n += 1.0;
                }
                if c + half <= last {
                    sum += h[[r, c + half]];
                    n += 1.0;
                }
                h[[r, c]] = sum / n + displace(&mut rng);
            }
        }
        octave_max.push(max_disp);
        step = half;
        amp *= roughness;
    }
    Ok(FractalSurface { heights: h, octave_max_displacement: octave_max })
}

/// North-up transform placing the middle pixel of a `side` grid at `center`
/// with square `resolution`-meter pixels.
pub fn centered_transform(center: GeoCoordinate, side_px: usize, resolution: f64) -> GeoTransform {
    let dlat = resolution / METERS_PER_DEGREE;
    let dlon = resolution / meters_per_degree_lon(center.lat);
    let half = side_px as f64 / 2.0;
    GeoTransform::north_up(center.lon - half * dlon, center.lat + half * dlat, dlon, dlat)
}

pub fn synth_fractal_raster(
    seed: u64,
    side_px: usize,
    roughness: f64,
    base_resolution: f64,
) -> Result<ElevationRaster> {
    synth_fractal_raster_with(seed, side_px, roughness, base_resolution, &SynthOptions::default())
}

pub fn synth_fractal_raster_with(
    seed: u64,
    side_px: usize,
    roughness: f64,
    base_resolution: f64,
    opts: &SynthOptions,
) -> Result<ElevationRaster> {
    if !(base_resolution > 0.0) {
        return Err(Error::domain("base resolution must be positive"));
    }
    let extent = side_px as f64 * base_resolution;
    let surface = diamond_square(
        seed,
        side_px,
        roughness,
        opts.relief_fraction * extent,
        opts.corner_fraction * extent,
    )?;
    raster_from_heights(&surface.heights, opts.base_elevation_m, opts.center, base_resolution)
}

pub fn raster_from_heights(
    heights: &Array2<f64>,
    base_elevation_m: f64,
    center: GeoCoordinate,
    resolution: f64,
) -> Result<ElevationRaster> {
    let values = heights.mapv(|v| (v + base_elevation_m) as f32);
    ElevationRaster::new(values, centered_transform(center, heights.nrows(), resolution), None)
}

/// A landform stamped onto a height grid, in pixel units of that grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Landform {
    /// Gaussian bump.
    Peak { sigma_px: f64, height_m: f64 },
    /// Gaussian depression.
    Pit { sigma_px: f64, depth_m: f64 },
    /// Gaussian cross-section extruded along a segment of half-length
    /// `half_length_px` at angle `angle_rad` (from the column axis).
    Ridge { sigma_px: f64, half_length_px: f64, angle_rad: f64, height_m: f64 },
    /// Two bumps `1.2 * sigma` either side of the center along `angle_rad`.
    Saddle { sigma_px: f64, angle_rad: f64, height_m: f64 },
}

impl Landform {
    /// Height contribution at a pixel offset (dr, dc) from the landform center.
    pub fn height_at(&self, dr: f64, dc: f64) -> f64 {
        let gauss = |d2: f64, s: f64| (-d2 / (2.0 * s * s)).exp();
        match *self {
            Landform::Peak { sigma_px, height_m } => height_m * gauss(dr * dr + dc * dc, sigma_px),
            Landform::Pit { sigma_px, depth_m } => -depth_m * gauss(dr * dr + dc * dc, sigma_px),
            Landform::Ridge { sigma_px, half_length_px, angle_rad, height_m } => {
                let (along, across) = rotate(dr, dc, angle_rad);
                let beyond = (along.abs() - half_length_px).max(0.0);
                height_m * gauss(across * across + beyond * beyond, sigma_px)
            }
            Landform::Saddle { sigma_px, angle_rad, height_m } => {
                let (along, across) = rotate(dr, dc, angle_rad);
                let d = 1.2 * sigma_px;
                height_m
                    * (gauss((along - d).powi(2) + across * across, sigma_px)
                        + gauss((along + d).powi(2) + across * across, sigma_px))
            }
        }
    }

    /// Radius (px) beyond which the contribution is negligible.
    pub fn support_px(&self) -> f64 {
        match *self {
            Landform::Peak { sigma_px, .. } | Landform::Pit { sigma_px, .. } => 4.0 * sigma_px,
            Landform::Ridge { sigma_px, half_length_px, .. } => half_length_px + 4.0 * sigma_px,
            Landform::Saddle { sigma_px, .. } => 5.5 * sigma_px,
        }
    }

    /// Add this landform to `heights` centered at pixel (row, col).
    pub fn stamp(&self, heights: &mut Array2<f64>, row: f64, col: f64) {
        let reach = self.support_px().ceil();
        let r_lo = (row - reach).floor().max(0.0) as usize;
        let c_lo = (col - reach).floor().max(0.0) as usize;
        let r_hi = ((row + reach).ceil() as usize).min(heights.nrows().saturating_sub(1));
        let c_hi = ((col + reach).ceil() as usize).min(heights.ncols().saturating_sub(1));
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                heights[[r, c]] += self.height_at(r as f64 - row, c as f64 - col);
            }
        }
    }
}

/// Components of (dr, dc) along and across the direction `angle` measured
/// from the column axis.
fn rotate(dr: f64, dc: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (dc * c + dr * s, -dc * s + dr * c)
}
