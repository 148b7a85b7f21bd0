//! Geographic primitives: WGS84 coordinates, area-of-interest polygons and
//! uniform sampling inside them.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Meters per degree of latitude (and of longitude at the equator) on the
/// spherical earth.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Two coordinates closer than this (in degrees, on both axes) are the same point.
pub const DUPLICATE_TOLERANCE_DEG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lon: f64,
    pub lat: f64,
}

impl GeoCoordinate {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::domain(format!(
                "coordinate ({lon}, {lat}) outside WGS84 range"
            )));
        }
        Ok(Self { lon, lat })
    }

    /// Move by `east_m` / `north_m` meters under a local equirectangular
    /// approximation (longitude degrees shrink with cos(lat)).
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> GeoCoordinate {
        GeoCoordinate {
            lon: self.lon + east_m / meters_per_degree_lon(self.lat),
            lat: self.lat + north_m / METERS_PER_DEGREE,
        }
    }

    pub fn is_duplicate_of(&self, other: &GeoCoordinate) -> bool {
        (self.lon - other.lon).abs() < DUPLICATE_TOLERANCE_DEG
            && (self.lat - other.lat).abs() < DUPLICATE_TOLERANCE_DEG
    }

    /// Total order by (lon, lat), used for deterministic sorting and tie-breaks.
    pub fn cmp_lon_lat(&self, other: &GeoCoordinate) -> std::cmp::Ordering {
        self.lon
            .total_cmp(&other.lon)
            .then(self.lat.total_cmp(&other.lat))
    }
}

pub fn meters_per_degree_lon(lat: f64) -> f64 {
    METERS_PER_DEGREE * lat.to_radians().cos()
}

/// Sort by (lon, lat) and drop near-duplicates, keeping the first of each run.
pub fn sort_dedup(coords: &mut Vec<GeoCoordinate>) {
    coords.sort_by(|a, b| a.cmp_lon_lat(b));
    let mut kept: Vec<GeoCoordinate> = Vec::with_capacity(coords.len());
    for c in coords.drain(..) {
        // Sorted by lon, so any duplicate of `c` sits in the trailing window of
        // kept points whose lon is within tolerance.
        let dup = kept
            .iter()
            .rev()
            .take_while(|k| c.lon - k.lon < DUPLICATE_TOLERANCE_DEG)
            .any(|k| k.is_duplicate_of(&c));
        if !dup {
            kept.push(c);
        }
    }
    *coords = kept;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        GeoCoordinate::new(min_lon, min_lat)?;
        GeoCoordinate::new(max_lon, max_lat)?;
        if !(min_lon < max_lon && min_lat < max_lat) {
            return Err(Error::domain(format!(
                "empty bounding box ({min_lon}, {min_lat}, {max_lon}, {max_lat})"
            )));
        }
        Ok(Self {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        })
    }

    pub fn area_deg2(&self) -> f64 {
        (self.max_lon - self.min_lon) * (self.max_lat - self.min_lat)
    }

    pub fn center(&self) -> GeoCoordinate {
        GeoCoordinate {
            lon: 0.5 * (self.min_lon + self.max_lon),
            lat: 0.5 * (self.min_lat + self.max_lat),
        }
    }

    pub fn contains(&self, c: &GeoCoordinate) -> bool {
        c.lon >= self.min_lon && c.lon <= self.max_lon && c.lat >= self.min_lat && c.lat <= self.max_lat
    }

    pub fn to_polygon(&self) -> AoiPolygon {
        AoiPolygon {
            vertices: vec![
                GeoCoordinate { lon: self.min_lon, lat: self.min_lat },
                GeoCoordinate { lon: self.max_lon, lat: self.min_lat },
                GeoCoordinate { lon: self.max_lon, lat: self.max_lat },
                GeoCoordinate { lon: self.min_lon, lat: self.max_lat },
            ],
        }
    }
}

impl FromStr for BoundingBox {
    type Err = Error;

    /// `min_lon,min_lat,max_lon,max_lat`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::domain(format!("bad bbox `{s}`: {e}")))?;
        match parts.as_slice() {
            [a, b, c, d] => BoundingBox::new(*a, *b, *c, *d),
            _ => Err(Error::domain(format!("bbox `{s}` needs 4 numbers"))),
        }
    }
}

/// Area-of-interest ring. Vertices are stored open (the closing vertex is
/// implied) and re-closed on serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiPolygon {
    vertices: Vec<GeoCoordinate>,
}

impl AoiPolygon {
    pub fn new(mut vertices: Vec<GeoCoordinate>) -> Result<Self> {
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::domain("polygon needs at least 3 distinct vertices"));
        }
        let polygon = Self { vertices };
        if polygon.signed_area().abs() <= f64::EPSILON {
            return Err(Error::domain("degenerate polygon with zero area"));
        }
        Ok(polygon)
    }

    /// Parse `POLYGON ((x y, x y, ...))`. Only the outer ring is read.
    pub fn from_wkt(wkt: &str) -> Result<Self> {
        let bad = |why: &str| Error::domain(format!("bad WKT polygon ({why}): `{wkt}`"));
        let trimmed = wkt.trim();
        let rest = trimmed
            .get(..7)
            .filter(|head| head.eq_ignore_ascii_case("POLYGON"))
            .map(|_| trimmed[7..].trim())
            .ok_or_else(|| bad("missing POLYGON keyword"))?;
        let inner = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .map(str::trim)
            .ok_or_else(|| bad("unbalanced parentheses"))?;
        let ring = inner
            .strip_prefix('(')
            .and_then(|r| r.split(')').next())
            .ok_or_else(|| bad("missing ring"))?;
        let vertices = ring
            .split(',')
            .map(|pair| {
                let nums: Vec<f64> = pair
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("non-numeric coordinate"))?;
                match nums.as_slice() {
                    [lon, lat] => GeoCoordinate::new(*lon, *lat),
                    _ => Err(bad("expected `lon lat` pairs")),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vertices)
    }

    pub fn to_wkt(&self) -> String {
        let ring: Vec<String> = self
            .vertices
            .iter()
            .chain(std::iter::once(&self.vertices[0]))
            .map(|v| format!("{} {}", v.lon, v.lat))
            .collect();
        format!("POLYGON (({}))", ring.join(", "))
    }

    pub fn vertices(&self) -> &[GeoCoordinate] {
        &self.vertices
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.lon * b.lat - b.lon * a.lat
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn area_deg2(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bbox(&self) -> BoundingBox {
        let (mut min_lon, mut min_lat) = (f64::INFINITY, f64::INFINITY);
        let (mut max_lon, mut max_lat) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            min_lon = min_lon.min(v.lon);
            min_lat = min_lat.min(v.lat);
            max_lon = max_lon.max(v.lon);
            max_lat = max_lat.max(v.lat);
        }
        BoundingBox { min_lon, min_lat, max_lon, max_lat }
    }

    /// Crossing-number containment. Points on an edge belong to the polygon
    /// on whose interior side of a rightward ray they fall, so two polygons
    /// sharing an edge never both contain a point of it.
    pub fn contains(&self, p: &GeoCoordinate) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x_cross = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
                if p.lon < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

impl fmt::Display for AoiPolygon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wkt())
    }
}

impl FromStr for AoiPolygon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_wkt(s)
    }
}

/// `n` points uniformly distributed (in lon/lat) inside `polygon`, by
/// rejection from the bounding box. Deterministic in `seed`.
pub fn sample_coords_in_polygon(
    polygon: &AoiPolygon,
    n: usize,
    seed: u64,
) -> Result<Vec<GeoCoordinate>> {
    let bbox = polygon.bbox();
    let fill = polygon.area_deg2() / bbox.area_deg2();
    if !(fill > 0.0) {
        return Err(Error::domain("degenerate polygon"));
    }
    let mut rng = rng::substream(seed, "polygon-sampling");
    let mut out = Vec::with_capacity(n);
    // Generous bound on rejections so a pathological polygon fails loudly.
    let max_draws = ((n as f64 / fill) * 20.0) as usize + 1000;
    let mut draws = 0;
    while out.len() < n {
        if draws >= max_draws {
            return Err(Error::domain("polygon too thin to sample from"));
        }
        draws += 1;
        let p = GeoCoordinate {
            lon: rng.gen_range(bbox.min_lon..bbox.max_lon),
            lat: rng.gen_range(bbox.min_lat..bbox.max_lat),
        };
        if polygon.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}
