//! Georeferenced single-band elevation rasters and their GeoTIFF encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoCoordinate, METERS_PER_DEGREE};

/// Affine pixel-to-geographic mapping, GDAL coefficient order:
/// `lon = c[0] + col*c[1] + row*c[2]`, `lat = c[3] + col*c[4] + row*c[5]`,
/// where (col, row) are continuous pixel-edge coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub fn north_up(origin_lon: f64, origin_lat: f64, pixel_lon: f64, pixel_lat: f64) -> Self {
        GeoTransform([origin_lon, pixel_lon, 0.0, origin_lat, 0.0, -pixel_lat])
    }

    fn det(&self) -> f64 {
        let c = &self.0;
        c[1] * c[5] - c[2] * c[4]
    }

    pub fn is_invertible(&self) -> bool {
        let d = self.det();
        d.is_finite() && d != 0.0
    }

    pub fn is_north_up(&self) -> bool {
        self.0[2] == 0.0 && self.0[4] == 0.0
    }

    pub fn pixel_to_geo(&self, col: f64, row: f64) -> GeoCoordinate {
        let c = &self.0;
        GeoCoordinate {
            lon: c[0] + col * c[1] + row * c[2],
            lat: c[3] + col * c[4] + row * c[5],
        }
    }

    /// Continuous pixel-edge coordinates (col, row) of a geographic point.
    pub fn geo_to_pixel(&self, p: &GeoCoordinate) -> (f64, f64) {
        let c = &self.0;
        let (dx, dy) = (p.lon - c[0], p.lat - c[3]);
        if self.is_north_up() {
            return (dx / c[1], dy / c[5]);
        }
        let det = self.det();
        ((dx * c[5] - dy * c[2]) / det, (dy * c[1] - dx * c[4]) / det)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationRaster {
    values: Array2<f32>,
    transform: GeoTransform,
    nodata: Option<f64>,
}

impl ElevationRaster {
    pub fn new(values: Array2<f32>, transform: GeoTransform, nodata: Option<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("raster grid is empty"));
        }
        if !transform.is_invertible() {
            return Err(Error::domain("raster geo-transform is not invertible"));
        }
        let raster = Self { values, transform, nodata };
        if !(raster.source_resolution() > 0.0) {
            return Err(Error::domain("raster resolution must be positive"));
        }
        Ok(raster)
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Native ground resolution in meters/pixel along the north-south axis.
    pub fn source_resolution(&self) -> f64 {
        let c = &self.transform.0;
        (c[4] * c[4] + c[5] * c[5]).sqrt() * METERS_PER_DEGREE
    }

    pub fn is_valid(&self, v: f32) -> bool {
        v.is_finite() && self.nodata.is_none_or(|nd| f64::from(v) != nd)
    }

    /// Fractional (row, col) index of a coordinate, with pixel centers on
    /// integers.
    pub fn pixel_index(&self, p: &GeoCoordinate) -> (f64, f64) {
        let (col, row) = self.transform.geo_to_pixel(p);
        (row - 0.5, col - 0.5)
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> GeoCoordinate {
        self.transform.pixel_to_geo(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Extent spanned by the pixel centers.
    pub fn center_bounds(&self) -> BoundingBox {
        let corners = [
            self.pixel_center(0, 0),
            self.pixel_center(self.rows() - 1, 0),
            self.pixel_center(0, self.cols() - 1),
            self.pixel_center(self.rows() - 1, self.cols() - 1),
        ];
        let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&GeoCoordinate) -> f64| {
            corners.iter().map(get).fold(init, f)
        };
        BoundingBox {
            min_lon: fold(f64::min, f64::INFINITY, |c| c.lon),
            min_lat: fold(f64::min, f64::INFINITY, |c| c.lat),
            max_lon: fold(f64::max, f64::NEG_INFINITY, |c| c.lon),
            max_lat: fold(f64::max, f64::NEG_INFINITY, |c| c.lat),
        }
    }

    /// Elevation at the pixel containing `p`, if it is inside and valid.
    pub fn value_at(&self, p: &GeoCoordinate) -> Option<f32> {
        let (row, col) = self.pixel_index(p);
        let (r, c) = (row.round(), col.round());
        if r < 0.0 || c < 0.0 || r >= self.rows() as f64 || c >= self.cols() as f64 {
            return None;
        }
        let v = self.values[[r as usize, c as usize]];
        self.is_valid(v).then_some(v)
    }

    pub fn read_geotiff(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut decoder = Decoder::new(BufReader::new(File::open(path)?))?;
        let (width, height) = decoder.dimensions()?;
        let transform = read_transform(&mut decoder)?;
        check_geographic_crs(&mut decoder)?;
        let nodata = match decoder.find_tag(Tag::GdalNodata)? {
            Some(v) => {
                let s = v.into_string()?;
                let s = s.trim_matches(|c: char| c == '\0' || c.is_whitespace());
                Some(s.parse::<f64>().map_err(|_| {
                    Error::DataQuality(format!("unparseable GDAL_NODATA `{s}`"))
                })?)
            }
            None => None,
        };
        let data: Vec<f32> = match decoder.read_image()? {
            DecodingResult::F32(v) => v,
            DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
            _ => {
                return Err(Error::DataQuality(format!(
                    "{}: unsupported sample format",
                    path.display()
                )))
            }
        };
        let values = Array2::from_shape_vec((height as usize, width as usize), data)
            .map_err(|_| Error::DataQuality("expected a single-band raster".into()))?;
        Self::new(values, transform, nodata)
    }

    /// Write as a single-band float32 GeoTIFF in EPSG:4326.
    pub fn write_geotiff(&self, path: impl AsRef<Path>) -> Result<()> {
        if !self.transform.is_north_up() {
            return Err(Error::contract("only north-up rasters can be written"));
        }
        let mut out = BufWriter::new(File::create(path)?);
        self.encode_geotiff(&mut out)?;
        out.flush()?;
        Ok(())
    }

    fn encode_geotiff<W: Write + Seek>(&self, w: &mut W) -> Result<()> {
        let c = &self.transform.0;
        let mut encoder = TiffEncoder::new(w)?;
        let mut image =
            encoder.new_image::<colortype::Gray32Float>(self.cols() as u32, self.rows() as u32)?;
        let dir = image.encoder();
        dir.write_tag(Tag::ModelPixelScaleTag, &[c[1], -c[5], 0.0][..])?;
        dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, c[0], c[3], 0.0][..])?;
        // Version 1.1.0, 3 keys: geographic model, pixel-is-area, WGS84.
        let geokeys: [u16; 16] = [1, 1, 0, 3, 1024, 0, 1, 2, 1025, 0, 1, 1, 2048, 0, 1, 4326];
        dir.write_tag(Tag::GeoKeyDirectoryTag, &geokeys[..])?;
        if let Some(nd) = self.nodata {
            dir.write_tag(Tag::GdalNodata, format!("{nd}").as_str())?;
        }
        let data: Vec<f32> = self.values.iter().copied().collect();
        image.write_data(&data)?;
        Ok(())
    }
}

fn read_transform<R: std::io::Read + Seek>(decoder: &mut Decoder<R>) -> Result<GeoTransform> {
    if let Some(m) = decoder.find_tag(Tag::Unknown(34264))? {
        let m = m.into_f64_vec()?;
        if m.len() >= 8 {
            return Ok(GeoTransform([m[3], m[0], m[1], m[7], m[4], m[5]]));
        }
    }
    let scale = decoder
        .find_tag(Tag::ModelPixelScaleTag)?
        .ok_or_else(|| Error::DataQuality("GeoTIFF lacks ModelPixelScale".into()))?
        .into_f64_vec()?;
    let tie = decoder
        .find_tag(Tag::ModelTiepointTag)?
        .ok_or_else(|| Error::DataQuality("GeoTIFF lacks ModelTiepoint".into()))?
        .into_f64_vec()?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(Error::DataQuality("malformed georeferencing tags".into()));
    }
    let (i, j, x, y) = (tie[0], tie[1], tie[3], tie[4]);
    Ok(GeoTransform([
        x - i * scale[0],
        scale[0],
        0.0,
        y + j * scale[1],
        0.0,
        -scale[1],
    ]))
}

fn check_geographic_crs<R: std::io::Read + Seek>(decoder: &mut Decoder<R>) -> Result<()> {
    let Some(keys) = decoder.find_tag(Tag::GeoKeyDirectoryTag)? else {
        return Ok(());
    };
    let keys = keys.into_u16_vec()?;
    for entry in keys.chunks_exact(4).skip(1) {
        let (key, location, value) = (entry[0], entry[1], entry[3]);
        match key {
            // ProjectedCSTypeGeoKey: we do not reproject.
            3072 => {
                return Err(Error::DataQuality(format!(
                    "projected CRS (EPSG:{value}) is not supported; expected EPSG:4326"
                )))
            }
            2048 if location == 0 && value != 4326 => {
                return Err(Error::DataQuality(format!(
                    "geographic CRS EPSG:{value} is not supported; expected EPSG:4326"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ElevationRaster {
        let values = Array2::from_shape_fn((5, 7), |(r, c)| (r * 10 + c) as f32);
        ElevationRaster::new(
            values,
            GeoTransform::north_up(11.0, 47.0, 0.001, 0.0005),
            Some(-9999.0),
        )
        .unwrap()
    }

    #[test]
    fn pixel_index_round_trips_through_centers() {
        let r = small();
        let p = r.pixel_center(3, 5);
        let (row, col) = r.pixel_index(&p);
        assert!((row - 3.0).abs() < 1e-9 && (col - 5.0).abs() < 1e-9);
        assert_eq!(r.value_at(&p), Some(35.0));
    }

    #[test]
    fn geotiff_round_trip_preserves_everything() {
        let r = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tif");
        r.write_geotiff(&path).unwrap();
        let back = ElevationRaster::read_geotiff(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_degenerate_rasters() {
        let t = GeoTransform::north_up(0.0, 0.0, 0.0, 0.0);
        assert!(ElevationRaster::new(Array2::zeros((2, 2)), t, None).is_err());
        let t = GeoTransform::north_up(0.0, 0.0, 1.0, 1.0);
        assert!(ElevationRaster::new(Array2::zeros((0, 2)), t, None).is_err());
    }

    #[test]
    fn nodata_is_invalid() {
        let r = small();
        assert!(!r.is_valid(-9999.0));
        assert!(!r.is_valid(f32::NAN));
        assert!(r.is_valid(12.5));
    }
}
