//! Scale semantics and patch extraction.
//!
//! A patch of half-extent `N` pixels around a coordinate covers a radius of
//! `r` meters, so its ground resolution is `s = r / N` meters per pixel. The
//! patch has side `2N + 1` so that its center pixel sits on the coordinate.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoCoordinate;
use crate::raster::ElevationRaster;

/// Half-extent of the 17x17 patches the encoder consumes.
pub const PATCH_HALF_EXTENT: usize = 8;
pub const PATCH_SIDE: usize = 2 * PATCH_HALF_EXTENT + 1;

/// Fractional pixel positions this close to an integer are treated as exact
/// grid hits, so aligned windows copy raster values without interpolation.
const SNAP_TOLERANCE_PX: f64 = 1e-6;

pub fn resolution_of(radius_m: f64, half_extent_px: usize) -> Result<f64> {
    if !(radius_m > 0.0) || !radius_m.is_finite() || half_extent_px == 0 {
        return Err(Error::domain(format!(
            "radius ({radius_m} m) and half-extent ({half_extent_px} px) must be positive"
        )));
    }
    Ok(radius_m / half_extent_px as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    radius_m: f64,
    half_extent_px: usize,
    resolution: f64,
}

impl ScaleSpec {
    pub fn new(radius_m: f64, half_extent_px: usize) -> Result<Self> {
        let resolution = resolution_of(radius_m, half_extent_px)?;
        Ok(Self { radius_m, half_extent_px, resolution })
    }

    /// Scale of a standard 17x17 patch at `resolution` meters/pixel.
    pub fn at_resolution(resolution: f64) -> Result<Self> {
        Self::from_resolution(resolution, PATCH_HALF_EXTENT)
    }

    pub fn from_resolution(resolution: f64, half_extent_px: usize) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::domain(format!("resolution {resolution} must be positive")));
        }
        Self::new(resolution * half_extent_px as f64, half_extent_px)
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn half_extent_px(&self) -> usize {
        self.half_extent_px
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn side(&self) -> usize {
        2 * self.half_extent_px + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationPatch {
    pub values: Array2<f64>,
    pub center: GeoCoordinate,
    pub scale: ScaleSpec,
}

/// Resample the raster on a `(2N+1)^2` lattice around `center`: pixel (i, j)
/// is the bilinear elevation `(j-N)*s` meters east and `(N-i)*s` meters north
/// of the center.
pub fn extract_patch(
    raster: &ElevationRaster,
    center: &GeoCoordinate,
    scale: &ScaleSpec,
) -> Result<ElevationPatch> {
    let n = scale.half_extent_px() as f64;
    let s = scale.resolution();
    let values = sample_square(raster, center, scale.side(), s, -n * s)?;
    Ok(ElevationPatch { values, center: *center, scale: *scale })
}

/// Reconstruction target covering the same ground square as a patch at
/// `scale`, but with `side` pixels per axis. Pixel centers are placed on the
/// cell centers of a regular `side x side` partition of the square
/// `[-r, r]^2`, so the ground footprint matches the input patch exactly.
pub fn extract_target(
    raster: &ElevationRaster,
    center: &GeoCoordinate,
    scale: &ScaleSpec,
    side: usize,
) -> Result<Array2<f64>> {
    if side == 0 {
        return Err(Error::domain("target side must be positive"));
    }
    let r = scale.radius_m();
    let pixel = 2.0 * r / side as f64;
    sample_square(raster, center, side, pixel, -r + 0.5 * pixel)
}

/// Bilinear samples on a square lattice. Lattice point (i, j) lies
/// `first + j*pixel` meters east and `-(first + i*pixel)` meters north of
/// `center` (row 0 is the northern edge).
fn sample_square(
    raster: &ElevationRaster,
    center: &GeoCoordinate,
    side: usize,
    pixel_m: f64,
    first_m: f64,
) -> Result<Array2<f64>> {
    let rows = raster.rows() as f64;
    let cols = raster.cols() as f64;
    let mut out = Array2::<f64>::zeros((side, side));
    for i in 0..side {
        let north = -(first_m + i as f64 * pixel_m);
        for j in 0..side {
            let east = first_m + j as f64 * pixel_m;
            let (r, c) = raster.pixel_index(&center.offset_m(east, north));
            let (r, c) = (snap(r), snap(c));
            if !(r >= 0.0 && c >= 0.0 && r <= rows - 1.0 && c <= cols - 1.0) {
                return Err(Error::Boundary(format!(
                    "patch around ({}, {}) leaves the raster at pixel ({r:.2}, {c:.2})",
                    center.lon, center.lat
                )));
            }
            out[[i, j]] = bilinear(raster, r, c).ok_or_else(|| {
                Error::DataQuality(format!(
                    "nodata inside patch around ({}, {})",
                    center.lon, center.lat
                ))
            })?;
        }
    }
    Ok(out)
}

fn snap(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() < SNAP_TOLERANCE_PX {
        nearest
    } else {
        x
    }
}

/// Bilinear interpolation at fractional (row, col); `None` if any pixel with
/// non-zero weight is invalid. Exact integer positions read a single pixel.
fn bilinear(raster: &ElevationRaster, r: f64, c: f64) -> Option<f64> {
    let values = raster.values();
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as usize, c0 as usize);
    let mut acc = 0.0;
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        if wr == 0.0 {
            continue;
        }
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            if wc == 0.0 {
                continue;
            }
            let v = values[[r0 + dr, c0 + dc]];
            if !raster.is_valid(v) {
                return None;
            }
            acc += wr * wc * f64::from(v);
        }
    }
    Some(acc)
}

/// Per-patch min-max scaling to `[0, 1]`; constant patches map to zeros.
pub fn normalize_patch(patch: &ElevationPatch) -> ElevationPatch {
    ElevationPatch {
        values: normalize_values(patch.values.view()),
        center: patch.center,
        scale: patch.scale,
    }
}

pub fn normalize_values(values: ArrayView2<f64>) -> Array2<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if range > 0.0 {
        values.mapv(|v| (v - min) / range)
    } else {
        Array2::zeros(values.raw_dim())
    }
}

/// Source taps for resizing an axis of length `input` to `output` samples
/// with half-pixel centers: `(lower index, upper index, upper weight)`.
pub fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let w = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

/// Bilinear resize of a single-channel image (half-pixel-center convention).
pub fn resize_bilinear(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let rows = linear_taps(src.nrows(), out_h);
    let cols = linear_taps(src.ncols(), out_w);
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (r0, r1, wr) = rows[i];
        let (c0, c1, wc) = cols[j];
        let top = src[[r0, c0]] * (1.0 - wc) + src[[r0, c1]] * wc;
        let bottom = src[[r1, c0]] * (1.0 - wc) + src[[r1, c1]] * wc;
        top * (1.0 - wr) + bottom * wr
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{meters_per_degree_lon, METERS_PER_DEGREE};
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    /// 10 m/px raster centered on (11, 47) whose lattice aligns with
    /// eastward/northward meter offsets from its middle pixel.
    fn raster_from(f: impl Fn(usize, usize) -> f32, side: usize) -> ElevationRaster {
        let res = 10.0;
        let dlat = res / METERS_PER_DEGREE;
        let dlon = res / meters_per_degree_lon(47.0);
        let half = side as f64 / 2.0;
        let t = GeoTransform::north_up(11.0 - half * dlon, 47.0 + half * dlat, dlon, dlat);
        ElevationRaster::new(Array2::from_shape_fn((side, side), |(r, c)| f(r, c)), t, Some(-9999.0))
            .unwrap()
    }

    #[test]
    fn resolution_examples() {
        assert_eq!(resolution_of(240.0, 8).unwrap(), 30.0);
        assert_eq!(resolution_of(240.0, 24).unwrap(), 10.0);
        assert_eq!(resolution_of(8.0, 8).unwrap(), 1.0);
        assert!(resolution_of(0.0, 8).is_err());
        assert!(resolution_of(-5.0, 8).is_err());
        assert!(resolution_of(10.0, 0).is_err());
    }

    #[test]
    fn constant_raster_gives_constant_patch() {
        let raster = raster_from(|_, _| 500.0, 201);
        let center = GeoCoordinate { lon: 11.0003, lat: 46.9996 };
        let p = extract_patch(&raster, &center, &ScaleSpec::at_resolution(7.3).unwrap()).unwrap();
        assert_eq!(p.values.dim(), (17, 17));
        assert!(p.values.iter().all(|&v| (v - 500.0).abs() < 1e-9));
    }

    #[test]
    fn planar_ramp_matches_closed_form() {
        // Elevation a*x with x the eastward distance in meters from the
        // raster's western pixel center: a * col * 10.
        let a = 0.25;
        let raster = raster_from(|_, c| (a * 10.0 * c as f64) as f32, 201);
        let center = raster.pixel_center(100, 100);
        let x0 = 100.0 * 10.0;
        let p = extract_patch(&raster, &center, &ScaleSpec::at_resolution(30.0).unwrap()).unwrap();
        for i in 0..17 {
            for j in 0..17 {
                let expected = a * (x0 + (j as f64 - 8.0) * 30.0);
                assert!((p.values[[i, j]] - expected).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn aligned_window_is_a_bit_exact_copy() {
        let raster = raster_from(|r, c| ((r * 7919 + c * 104729) % 1000) as f32 * 0.37, 101);
        let center = raster.pixel_center(50, 50);
        let s = raster.source_resolution();
        let p = extract_patch(&raster, &center, &ScaleSpec::at_resolution(s).unwrap()).unwrap();
        let window = raster.values().slice(ndarray::s![42..59, 42..59]).mapv(f64::from);
        assert_eq!(p.values, window);
    }

    #[test]
    fn windows_leaving_the_raster_are_rejected() {
        let raster = raster_from(|_, _| 1.0, 51);
        let edge = raster.pixel_center(2, 2);
        let err = extract_patch(&raster, &edge, &ScaleSpec::at_resolution(10.0).unwrap());
        assert!(matches!(err, Err(Error::Boundary(_))));
    }

    #[test]
    fn nodata_contamination_is_reported() {
        let raster = raster_from(|r, c| if (r, c) == (25, 27) { -9999.0 } else { 1.0 }, 51);
        let center = raster.pixel_center(25, 25);
        let err = extract_patch(&raster, &center, &ScaleSpec::at_resolution(10.0).unwrap());
        assert!(matches!(err, Err(Error::DataQuality(_))));
    }

    #[test]
    fn normalization_examples() {
        let center = GeoCoordinate { lon: 0.0, lat: 0.0 };
        let scale = ScaleSpec::at_resolution(30.0).unwrap();
        let mut values = Array2::from_elem((17, 17), 150.0);
        values[[0, 0]] = 100.0;
        values[[1, 1]] = 300.0;
        values[[2, 2]] = 200.0;
        let p = ElevationPatch { values, center, scale };
        let n = normalize_patch(&p);
        assert_eq!(n.values[[2, 2]], 0.5);
        assert_eq!(n.values[[0, 0]], 0.0);
        assert_eq!(n.values[[1, 1]], 1.0);

        let flat = ElevationPatch { values: Array2::from_elem((17, 17), 812.0), center, scale };
        assert!(normalize_patch(&flat).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_preserves_constants_and_corners_mean() {
        let src = Array2::from_elem((17, 17), 0.3);
        let out = resize_bilinear(src.view(), 64, 64);
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        // Doubling: taps follow the half-pixel convention.
        assert_eq!(linear_taps(2, 4), vec![(0, 1, 0.0), (0, 1, 0.25), (0, 1, 0.75), (1, 1, 0.0)]);
    }

    proptest! {
        #[test]
        fn scale_product_is_exact_for_power_of_two_extent(
            radius in 0.001f64..1e6, log_n in 0u32..8
        ) {
            let n = 1usize << log_n;
            let s = ScaleSpec::new(radius, n).unwrap();
            prop_assert_eq!(s.resolution() * n as f64, s.radius_m());
            prop_assert_eq!(s.side() % 2, 1);
        }

        #[test]
        fn normalization_is_shift_invariant_and_idempotent(
            vals in proptest::collection::vec(-5000.0f64..5000.0, 289),
            shift in -3000.0f64..3000.0,
        ) {
            let a = Array2::from_shape_vec((17, 17), vals).unwrap();
            let b = a.mapv(|v| v + shift);
            let na = normalize_values(a.view());
            let nb = normalize_values(b.view());
            for (x, y) in na.iter().zip(nb.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let twice = normalize_values(na.view());
            prop_assert_eq!(&twice, &na);
            let (lo, hi) = na.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
            prop_assert!(lo == 0.0 && hi == 1.0);
        }

        #[test]
        fn center_pixel_error_below_half_resolution(
            dr in 0.0f64..1.0, dc in 0.0f64..1.0, res in 3.0f64..40.0
        ) {
            let raster = raster_from(|r, c| (r * 3 + c) as f32, 301);
            let base = raster.pixel_center(150, 150);
            let center = base.offset_m(dc * 10.0, -dr * 10.0);
            let p = extract_patch(&raster, &center, &ScaleSpec::at_resolution(res).unwrap()).unwrap();
            // The plane's value at the center equals the center pixel exactly,
            // so any geolocation error shows up directly.
            let (r, c) = raster.pixel_index(&center);
            let expected = r * 3.0 + c;
            prop_assert!((p.values[[8, 8]] - expected).abs() < 1e-3);
        }
    }
}
