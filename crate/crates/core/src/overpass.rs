//! Overpass API client for class point features, cached on disk.
//!
//! Responses are stored as `lon,lat` CSV files named by the SHA-256 of
//! (selector, bounding box, query date), so a cached query never hits the
//! network again. Fetches are serialized process-wide: concurrent callers
//! asking for the same key wait and then read the cache.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{sort_dedup, BoundingBox, GeoCoordinate};
use crate::labels::{read_coord_csv, write_coord_csv, ClassTag};

pub const DEFAULT_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

static FETCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone)]
pub struct OverpassClient {
    pub endpoint: String,
    pub cache_dir: PathBuf,
    /// Recorded in the cache key; OSM content changes over time.
    pub query_date: String,
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

#[derive(Deserialize)]
struct Response {
    elements: Vec<Element>,
}

#[derive(Deserialize)]
struct Element {
    #[serde(rename = "type")]
    kind: String,
    lat: Option<f64>,
    lon: Option<f64>,
}

impl OverpassClient {
    pub fn new(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>, query_date: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            cache_dir: cache_dir.into(),
            query_date: query_date.into(),
            retries: 3,
            backoff: Duration::from_secs(2),
            timeout: Duration::from_secs(180),
        }
    }

    /// Overpass QL for all nodes with the tag inside `bbox`.
    pub fn query(tag: &ClassTag, bbox: &BoundingBox) -> String {
        format!(
            "[out:json][timeout:180];node{}({},{},{},{});out;",
            tag.overpass_filter(),
            bbox.min_lat,
            bbox.min_lon,
            bbox.max_lat,
            bbox.max_lon
        )
    }

    pub fn cache_path(&self, tag: &ClassTag, bbox: &BoundingBox) -> PathBuf {
        let key = format!(
            "{}|{},{},{},{}|{}",
            tag.osm_selector, bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat, self.query_date
        );
        self.cache_dir.join(format!("{}.csv", hex::encode(Sha256::digest(key.as_bytes()))))
    }

    /// Node coordinates carrying `tag` inside `bbox`, sorted by (lon, lat).
    pub fn fetch(&self, tag: &ClassTag, bbox: &BoundingBox) -> Result<Vec<GeoCoordinate>> {
        let path = self.cache_path(tag, bbox);
        let _guard = FETCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
        if path.exists() {
            return Ok(read_coord_csv(&path)?.into_iter().map(|(c, _)| c).collect());
        }
        let body = self.post_with_retries(&Self::query(tag, bbox))?;
        let mut coords = parse_response(&body)?;
        coords.retain(|c| bbox.contains(c));
        sort_dedup(&mut coords);
        std::fs::create_dir_all(&self.cache_dir)?;
        write_cache(&path, &coords)?;
        Ok(coords)
    }

    fn post_with_retries(&self, query: &str) -> Result<String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Network { retries: 0, message: e.to_string() })?;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match client.post(&self.endpoint).form(&[("data", query)]).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.text().map_err(|e| Error::Network { retries: attempt, message: e.to_string() });
                }
                Ok(resp) => last = format!("HTTP {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Network { retries: self.retries, message: last })
    }
}

pub fn parse_response(body: &str) -> Result<Vec<GeoCoordinate>> {
    let resp: Response = serde_json::from_str(body)?;
    resp.elements
        .into_iter()
        .filter(|e| e.kind == "node")
        .filter_map(|e| Some((e.lon?, e.lat?)))
        .map(|(lon, lat)| GeoCoordinate::new(lon, lat))
        .collect()
}

fn write_cache(path: &Path, coords: &[GeoCoordinate]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_coord_csv(&tmp, coords.iter().map(|c| (*c, None)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
