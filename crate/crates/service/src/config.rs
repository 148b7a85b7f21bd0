use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BATCH: usize = 64;
/// Largest grid-classify bounding box, square degrees.
pub const DEFAULT_MAX_AREA_DEG2: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Checkpoint path, or `id` for raw-pixel embeddings.
    pub checkpoint: String,
    /// Directory written by `EmbeddingIndex::save`.
    pub index: PathBuf,
    pub raster: PathBuf,
    /// Probe set for grid classification; without it every class is unknown.
    #[serde(default)]
    pub probes: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Most query points accepted by one retrieval request.
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    /// Origins allowed to call cross-origin; `*` allows any.
    #[serde(default)]
    pub cors_origins: Vec<String>,
    #[serde(default = "default_max_area")]
    pub max_area_deg2: f64,
    /// Grid lattice spacing; one patch radius when absent.
    #[serde(default)]
    pub grid_stride_m: Option<f64>,
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
}

fn default_bind() -> String {
    DEFAULT_BIND.to_string()
}

fn default_max_batch() -> usize {
    DEFAULT_MAX_BATCH
}

fn default_max_area() -> f64 {
    DEFAULT_MAX_AREA_DEG2
}

fn default_threshold() -> f64 {
    terrain_embed::evaluation::DEFAULT_DETECTION_THRESHOLD
}

impl ServiceConfig {
    /// Config with defaults for everything but the artifact paths.
    pub fn new(checkpoint: impl Into<String>, index: impl Into<PathBuf>, raster: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            index: index.into(),
            raster: raster.into(),
            probes: None,
            bind: default_bind(),
            max_batch: DEFAULT_MAX_BATCH,
            cors_origins: Vec::new(),
            max_area_deg2: DEFAULT_MAX_AREA_DEG2,
            grid_stride_m: None,
            detection_threshold: default_threshold(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Read a TOML file; relative artifact paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.index);
        resolve(&mut config.raster);
        if let Some(p) = config.probes.as_mut() {
            resolve(p);
        }
        if config.checkpoint != "id" && Path::new(&config.checkpoint).is_relative() {
            config.checkpoint = base.join(&config.checkpoint).to_string_lossy().into_owned();
        }
        Ok(config)
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ServiceError> {
        self.bind.parse().map_err(|e| ServiceError::Config(format!("bind address `{}`: {e}", self.bind)))
    }

    /// Checks that do not touch artifact contents: bind address, limits and
    /// readable paths.
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.bind_addr()?;
        if self.max_batch == 0 {
            return Err(ServiceError::Config("max_batch must be at least 1".into()));
        }
        if !(self.max_area_deg2 > 0.0) || !self.max_area_deg2.is_finite() {
            return Err(ServiceError::Config(format!("max_area_deg2 {} must be positive", self.max_area_deg2)));
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(ServiceError::Config(format!("detection_threshold {} outside [0, 1]", self.detection_threshold)));
        }
        if let Some(s) = self.grid_stride_m.filter(|s| !(*s > 0.0)) {
            return Err(ServiceError::Config(format!("grid_stride_m {s} must be positive")));
        }
        let mut files = vec![self.raster.clone(), self.index.join("manifest.json")];
        if self.checkpoint != "id" {
            files.push(PathBuf::from(&self.checkpoint));
        }
        files.extend(self.probes.iter().cloned());
        for f in files {
            std::fs::File::open(&f).map_err(|e| ServiceError::Config(format!("{}: {e}", f.display())))?;
        }
        Ok(())
    }
}
