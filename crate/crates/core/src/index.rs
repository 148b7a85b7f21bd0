//! Exact nearest-neighbor search over stored embeddings.
//!
//! On disk an index is a directory holding `vectors.f64` (little-endian,
//! row-major, one row per entry), `coords.csv` (aligned `lon,lat` rows) and
//! `manifest.json`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::EmbeddingModel;
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::geo::GeoCoordinate;
use crate::labels::{coords_to_patches, read_coord_csv, write_coord_csv};
use crate::patch::{extract_patch, normalize_patch, ScaleSpec};
use crate::raster::ElevationRaster;

pub const INDEX_FORMAT: &str = "terrain-embed-index/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub rows: usize,
    pub dim: usize,
    pub resolution: f64,
    pub model: String,
    pub checkpoint_sha256: Option<String>,
    pub vectors_sha256: String,
    /// Coordinates dropped at build time because their window was unusable.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub coords: Vec<GeoCoordinate>,
    /// One row per coordinate.
    pub vectors: Array2<f64>,
    pub resolution: f64,
    pub model: String,
    pub checkpoint_sha256: Option<String>,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub lon: f64,
    pub lat: f64,
    pub distance: f64,
}

/// Embed every usable coordinate at `scale`; unusable ones are skipped and
/// counted.
pub fn build_embedding_index(
    coords: &[GeoCoordinate],
    model: &EmbeddingModel,
    raster: &ElevationRaster,
    scale: &ScaleSpec,
    checkpoint_sha256: Option<String>,
) -> Result<EmbeddingIndex> {
    if coords.is_empty() {
        return Err(Error::domain("an index needs at least one coordinate"));
    }
    let images = coords_to_patches(coords, scale, raster)?;
    if images.items.is_empty() {
        return Err(Error::Capacity { what: "embeddable index coordinates".into(), needed: 1, available: 0 });
    }
    let patches: Vec<_> = images.items.iter().map(|(p, _)| p.values.view()).collect();
    Ok(EmbeddingIndex {
        coords: images.kept.iter().map(|&i| coords[i]).collect(),
        vectors: model.embed(&patches)?,
        resolution: scale.resolution(),
        model: model.label(),
        checkpoint_sha256,
        rejected: images.rejected,
    })
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// The `k` entries nearest to `query`, ascending by Euclidean distance,
    /// ties broken by (lon, lat).
    pub fn nearest(&self, query: ArrayView1<f64>, k: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim() {
            return Err(Error::contract(format!("query has {} dims, index has {}", query.len(), self.dim())));
        }
        if k > self.len() {
            return Err(Error::Capacity { what: "index entries".into(), needed: k, available: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, usize)> = self
            .vectors
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| {
                let d2: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| self.coords[a.1].cmp_lon_lat(&self.coords[b.1])));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(distance, i)| Neighbor { lon: self.coords[i].lon, lat: self.coords[i].lat, distance })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<IndexManifest> {
        std::fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.vectors.len() * 8);
        for v in self.vectors.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let manifest = IndexManifest {
            format: INDEX_FORMAT.to_string(),
            rows: self.len(),
            dim: self.dim(),
            resolution: self.resolution,
            model: self.model.clone(),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            vectors_sha256: hex::encode(Sha256::digest(&blob)),
            rejected: self.rejected,
        };
        write_atomic(&dir.join("vectors.f64"), &blob)?;
        let tmp = dir.join("coords.csv.tmp");
        write_coord_csv(&tmp, self.coords.iter().map(|c| (*c, None)))?;
        std::fs::rename(&tmp, dir.join("coords.csv"))?;
        write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint { path: dir.to_owned(), message };
        let manifest: IndexManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != INDEX_FORMAT {
            return Err(fail(format!("unknown index format `{}`", manifest.format)));
        }
        let blob = std::fs::read(dir.join("vectors.f64"))?;
        if hex::encode(Sha256::digest(&blob)) != manifest.vectors_sha256 {
            return Err(fail("vector blob hash does not match manifest".into()));
        }
        if blob.len() != manifest.rows * manifest.dim * 8 {
            return Err(fail("vector blob size does not match manifest".into()));
        }
        let values: Vec<f64> =
            blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let coords: Vec<GeoCoordinate> = read_coord_csv(&dir.join("coords.csv"))?.into_iter().map(|(c, _)| c).collect();
        if coords.len() != manifest.rows {
            return Err(fail(format!("{} coordinates for {} vectors", coords.len(), manifest.rows)));
        }
        Ok(Self {
            coords,
            vectors: Array2::from_shape_vec((manifest.rows, manifest.dim), values).expect("size checked"),
            resolution: manifest.resolution,
            model: manifest.model,
            checkpoint_sha256: manifest.checkpoint_sha256,
            rejected: manifest.rejected,
        })
    }
}

/// Embed each query coordinate at the index's resolution and average.
pub fn mean_query_vector(
    index: &EmbeddingIndex,
    model: &EmbeddingModel,
    raster: &ElevationRaster,
    query_coords: &[GeoCoordinate],
) -> Result<Array1<f64>> {
    if query_coords.is_empty() {
        return Err(Error::domain("at least one query coordinate is required"));
    }
    if model.label() != index.model {
        return Err(Error::contract(format!("index was built with `{}`, not `{}`", index.model, model.label())));
    }
    let scale = ScaleSpec::at_resolution(index.resolution)?;
    let patches = query_coords
        .iter()
        .map(|c| Ok(normalize_patch(&extract_patch(raster, c, &scale)?).values))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = patches.iter().map(|p| p.view()).collect();
    let e = model.embed(&views)?;
    Ok(e.mean_axis(Axis(0)).expect("non-empty"))
}

pub fn knn_retrieve(
    index: &EmbeddingIndex,
    model: &EmbeddingModel,
    raster: &ElevationRaster,
    query_coords: &[GeoCoordinate],
    k: usize,
) -> Result<Vec<Neighbor>> {
    if k > index.len() {
        return Err(Error::Capacity { what: "index entries".into(), needed: k, available: index.len() });
    }
    let q = mean_query_vector(index, model, raster, query_coords)?;
    index.nearest(q.view(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_index(rows: Vec<Vec<f64>>) -> EmbeddingIndex {
        let n = rows.len();
        let d = rows[0].len();
        EmbeddingIndex {
            coords: (0..n).map(|i| GeoCoordinate::new(10.0 + (i % 3) as f64 * 0.01, 45.0 + i as f64 * 0.01).unwrap()).collect(),
            vectors: Array2::from_shape_vec((n, d), rows.concat()).unwrap(),
            resolution: 30.0,
            model: "id".into(),
            checkpoint_sha256: None,
            rejected: 0,
        }
    }

    #[test]
    fn ties_break_by_lon_then_lat() {
        let idx = toy_index(vec![vec![1.0], vec![1.0], vec![1.0], vec![-1.0]]);
        let res = idx.nearest(ArrayView1::from(&[0.0][..]), 4).unwrap();
        assert!(res.iter().all(|n| n.distance == 1.0));
        let keys: Vec<(f64, f64)> = res.iter().map(|n| (n.lon, n.lat)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        assert_eq!(keys, sorted);
    }

    #[test]
    fn capacity_and_empty_queries() {
        let idx = toy_index(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let q = ArrayView1::from(&[0.0, 0.0][..]);
        assert!(idx.nearest(q, 0).unwrap().is_empty());
        assert!(matches!(idx.nearest(q, 3), Err(Error::Capacity { .. })));
        assert!(idx.nearest(ArrayView1::from(&[0.0][..]), 1).is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let idx = toy_index(vec![vec![0.1, 1.0 / 3.0], vec![std::f64::consts::PI, -2e-300], vec![5.0, 6.0]]);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let loaded = EmbeddingIndex::load(dir.path()).unwrap();
        assert_eq!(loaded, idx);
        std::fs::write(dir.path().join("vectors.f64"), [0u8; 48]).unwrap();
        assert!(EmbeddingIndex::load(dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn ranking_is_sorted_and_translation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..12),
            q in prop::collection::vec(-10.0f64..10.0, 3),
            shift in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let idx = toy_index(rows.clone());
            let k = idx.len();
            let base = idx.nearest(ArrayView1::from(&q[..]), k).unwrap();
            prop_assert!(base.iter().all(|n| n.distance >= 0.0));
            prop_assert!(base.windows(2).all(|w| w[0].distance <= w[1].distance));
            let moved = toy_index(rows.iter().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect());
            let mq: Vec<f64> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let shifted = moved.nearest(ArrayView1::from(&mq[..]), k).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a.distance - b.distance).abs() < 1e-9);
            }
            // Same order wherever distances are separated by more than rounding.
            for (i, (a, b)) in base.iter().zip(&shifted).enumerate() {
                let separated = base.get(i + 1).is_none_or(|n| n.distance - a.distance > 1e-9)
                    && (i == 0 || a.distance - base[i - 1].distance > 1e-9);
                if separated {
                    prop_assert_eq!((a.lon, a.lat), (b.lon, b.lat));
                }
            }
        }
    }
}
