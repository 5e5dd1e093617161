//! The run configuration: every pipeline setting in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contour::DEFAULT_RESOLUTION;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::morse::MorseConfig;
use crate::sinenet::{Activation, Architecture};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let a = Architecture::default();
        NetworkConfig {
            hidden_layers: a.hidden_layers,
            width: a.width,
            activation: a.activation,
        }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        let a = Architecture {
            input_dim,
            hidden_layers: self.hidden_layers,
            width: self.width,
            activation: self.activation,
        };
        a.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub resolution: usize,
    pub iso: f64,
    /// Map vertices back through the stored normalization.
    pub world_units: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            resolution: DEFAULT_RESOLUTION,
            iso: 0.0,
            world_units: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Seed grid nodes per axis.
    pub resolution: usize,
    /// Shell half-width.
    pub delta: f64,
    pub gradient_tolerance: f64,
    pub max_newton_steps: usize,
    pub dedup_radius: f64,
    pub degenerate_threshold: f64,
    /// Points drawn for the shell statistics.
    pub shell_samples: usize,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let m = MorseConfig::default();
        AnalyzeConfig {
            resolution: 128,
            delta: m.delta,
            gradient_tolerance: m.gradient_tolerance,
            max_newton_steps: m.max_newton_steps,
            dedup_radius: m.dedup_radius,
            degenerate_threshold: m.degenerate_threshold,
            shell_samples: 10_000,
            seed: 0,
        }
    }
}

impl AnalyzeConfig {
    pub fn morse(&self) -> MorseConfig {
        MorseConfig {
            resolution: self.resolution,
            delta: self.delta,
            gradient_tolerance: self.gradient_tolerance,
            max_newton_steps: self.max_newton_steps,
            dedup_radius: self.dedup_radius,
            degenerate_threshold: self.degenerate_threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub extract: ExtractConfig,
    pub metrics: MetricsConfig,
    pub analyze: AnalyzeConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.network.hidden_layers == 0 || self.network.width == 0 {
            return Err(Error::Config("network needs at least one hidden layer of positive width".into()));
        }
        if self.extract.resolution < 2 {
            return Err(Error::Config("extract.resolution must be at least 2".into()));
        }
        if !self.extract.iso.is_finite() {
            return Err(Error::Config("extract.iso must be finite".into()));
        }
        if self.metrics.samples == 0 || !(self.metrics.fscore_threshold > 0.0) {
            return Err(Error::Config("metrics.samples and metrics.fscore_threshold must be positive".into()));
        }
        if !(self.analyze.delta > 0.0) {
            return Err(Error::Config(format!("analyze.delta must be positive, got {}", self.analyze.delta)));
        }
        if self.analyze.resolution < 8 {
            return Err(Error::Config("analyze.resolution must be at least 8".into()));
        }
        Ok(())
    }
}
