//! Experiment configuration: a single TOML file with nested sections, every
//! key overridable from the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::regularizers::{EdgeFieldParams, EtaRule};
use crate::sim::{EnergyChannel, PhantomSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// "parallel" or "fan_beam"
    pub kind: String,
    pub num_angles: usize,
    pub num_detectors: usize,
    pub detector_spacing: f64,
    pub source_radius: Option<f64>,
    pub detector_radius: Option<f64>,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ScanGeometry<f64>> {
        let angles = ScanGeometry::uniform_angles(self.num_angles);
        match self.kind.as_str() {
            "parallel" => ScanGeometry::parallel(angles, self.num_detectors, self.detector_spacing),
            "fan_beam" => {
                let sr = self
                    .source_radius
                    .ok_or_else(|| Error::Config("fan_beam requires source_radius".into()))?;
                let dr = self
                    .detector_radius
                    .ok_or_else(|| Error::Config("fan_beam requires detector_radius".into()))?;
                ScanGeometry::fan_beam(angles, self.num_detectors, self.detector_spacing, sr, dr)
            }
            other => Err(Error::Config(format!("unknown geometry kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(flatten)]
    pub channel: EnergyChannel,
    /// Precomputed log sinogram; when absent the channel is simulated from
    /// the phantom.
    pub sinogram: Option<PathBuf>,
    /// Reference image for metrics; defaults to the rasterized phantom.
    pub reference: Option<PathBuf>,
    /// Per-channel override of the reconstruction block.
    pub recon: Option<ReconConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideInfoConfig {
    pub alpha: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_side_iters")]
    pub max_iters: usize,
    /// Precomputed side-information image; skips the fused reconstruction.
    pub path: Option<PathBuf>,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_side_iters() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeFieldConfig {
    #[serde(default = "default_eta_cap")]
    pub eta_cap: f64,
    /// Relative rule: epsilon = epsilon_scale * max ||grad v||.
    pub epsilon_scale: Option<f64>,
    /// Absolute rule: epsilon used as given. Takes precedence when set.
    pub epsilon: Option<f64>,
}

fn default_eta_cap() -> f64 {
    0.9999
}

impl Default for EdgeFieldConfig {
    fn default() -> Self {
        Self { eta_cap: default_eta_cap(), epsilon_scale: Some(0.01), epsilon: None }
    }
}

impl EdgeFieldConfig {
    pub fn params(&self) -> Result<EdgeFieldParams<f64>> {
        if self.eta_cap < 0.0 || self.eta_cap >= 1.0 {
            return Err(Error::Config("eta_cap must lie in [0, 1)".into()));
        }
        let (epsilon, rule) = match (self.epsilon, self.epsilon_scale) {
            (Some(eps), _) => (eps, EtaRule::Absolute),
            (None, Some(scale)) => (scale, EtaRule::RelativeToMaxGradient { scale }),
            (None, None) => (0.01, EtaRule::RelativeToMaxGradient { scale: 0.01 }),
        };
        if epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(EdgeFieldParams { eta_cap: self.eta_cap, epsilon, rule })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    /// "fbs" or "bregman"
    pub method: String,
    /// "tv" or "dtv"
    pub regularizer: String,
    pub alphas: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default = "default_prox_iters")]
    pub prox_max_iters: usize,
    #[serde(default = "default_prox_tol")]
    pub prox_tol: f64,
}

fn default_checkpoint() -> usize {
    0
}

fn default_prox_iters() -> usize {
    100
}

fn default_prox_tol() -> f64 {
    1e-5
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.method.as_str(), "fbs" | "bregman") {
            return Err(Error::Config(format!("unknown method '{}'", self.method)));
        }
        if !matches!(self.regularizer.as_str(), "tv" | "dtv") {
            return Err(Error::Config(format!("unknown regularizer '{}'", self.regularizer)));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("at least one alpha required".into()));
        }
        if self.alphas.iter().any(|&a| a < 0.0) {
            return Err(Error::Config("alphas must be nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub geometry: GeometryConfig,
    pub phantom: Option<PhantomSpec>,
    pub channels: Vec<ChannelConfig>,
    pub side_info: SideInfoConfig,
    #[serde(default)]
    pub edge_field: EdgeFieldConfig,
    pub reconstruction: ReconConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    /// Load and validate. Relative paths inside the config are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        for ch in &mut self.channels {
            if let Some(p) = &mut ch.sinogram {
                fix(p);
            }
            if let Some(p) = &mut ch.reference {
                fix(p);
            }
        }
        if let Some(p) = &mut self.side_info.path {
            fix(p);
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("at least one energy channel required".into()));
        }
        self.geometry.build()?;
        if self.grid.rows == 0 || self.grid.cols == 0 || self.grid.pixel_size <= 0.0 {
            return Err(Error::Config("invalid grid block".into()));
        }
        if self.side_info.alpha <= 0.0 {
            return Err(Error::Config("side_info.alpha must be positive".into()));
        }
        self.edge_field.params()?;
        self.reconstruction.validate()?;
        for ch in &self.channels {
            ch.channel.validate()?;
            if let Some(r) = &ch.recon {
                r.validate()?;
            }
            for p in [&ch.sinogram, &ch.reference].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("referenced path does not exist: {}", p.display())));
                }
            }
            if ch.sinogram.is_none() && self.phantom.is_none() {
                return Err(Error::Config(format!(
                    "channel {} has no sinogram and no phantom is configured",
                    ch.channel.label
                )));
            }
        }
        if let Some(p) = &self.side_info.path {
            if !p.exists() {
                return Err(Error::Config(format!("side_info path does not exist: {}", p.display())));
            }
        }
        if let Some(ph) = &self.phantom {
            ph.validate(self.channels.len())?;
            if ph.rows != self.grid.rows || ph.cols != self.grid.cols {
                return Err(Error::Config("phantom canvas must match the grid block".into()));
            }
        }
        Ok(())
    }

    pub fn recon_for(&self, channel_idx: usize) -> &ReconConfig {
        self.channels[channel_idx]
            .recon
            .as_ref()
            .unwrap_or(&self.reconstruction)
    }
}

/// Thread-count environment variable honored by the pipeline.
pub const THREADS_ENV: &str = "MSCT_THREADS";

pub fn configured_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer"))),
        Err(_) => Ok(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[grid]
rows = 16
cols = 16
pixel_size = 1.0

[geometry]
kind = "parallel"
num_angles = 10
num_detectors = 23
detector_spacing = 1.0

[phantom]
rows = 16
cols = 16
pixel_size = 1.0

[[phantom.materials]]
name = "quartz"
mu = [0.02, 0.015]

[[phantom.regions]]
shape = "disk"
cx = 0.0
cy = 0.0
r = 5.0
material = 0

[[channels]]
label = "E0"
energy_kev = 50.0
photon_count = 1e5

[[channels]]
label = "E1"
energy_kev = 85.0
photon_count = 1e5

[side_info]
alpha = 1e-3

[reconstruction]
method = "fbs"
regularizer = "dtv"
alphas = [1e-3]
max_iters = 2

[output]
dir = "out"
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels.len(), 2);
        assert_eq!(cfg.recon_for(0).method, "fbs");
    }

    #[test]
    fn bad_enums_are_rejected() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.reconstruction.method = "gradient_descent".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.reconstruction.regularizer = "tgv".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_paths_are_rejected() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.channels[0].sinogram = Some(PathBuf::from("/nonexistent/sino.raw"));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn edge_field_rules() {
        let cfg = EdgeFieldConfig { eta_cap: 0.5, epsilon_scale: Some(0.02), epsilon: None };
        match cfg.params().unwrap().rule {
            EtaRule::RelativeToMaxGradient { scale } => assert_eq!(scale, 0.02),
            _ => panic!("expected relative rule"),
        }
        let cfg = EdgeFieldConfig { eta_cap: 0.5, epsilon_scale: None, epsilon: Some(0.3) };
        assert!(matches!(cfg.params().unwrap().rule, EtaRule::Absolute));
    }
}
