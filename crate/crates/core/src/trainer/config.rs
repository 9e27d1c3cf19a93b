use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::losses::DEFAULT_LAMBDA_TV;
use crate::network::Architecture;

/// Training settings. Every key may appear in a TOML config file; command
/// line flags are applied on top by the caller.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Looks the dataset was simulated with. Informational only; the
    /// manifest records the value per pair.
    pub looks: f64,
    pub lambda_tv: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set: stop after this many updates.
    pub iterations: Option<usize>,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub manifest: PathBuf,
    pub validation_manifest: Option<PathBuf>,
    /// Checkpoints, final parameters and logs go here when set.
    pub output_dir: Option<PathBuf>,
    /// Center crop applied to every pair before batching.
    pub crop: Option<usize>,
    pub features: usize,
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            looks: 1.0,
            lambda_tv: DEFAULT_LAMBDA_TV,
            learning_rate: 2e-4,
            batch_size: 16,
            epochs: 50,
            iterations: None,
            seed: 0,
            checkpoint_every: 0,
            manifest: PathBuf::new(),
            validation_manifest: None,
            output_dir: None,
            crop: None,
            features: arch.features,
            depth: arch.depth,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            features: self.features,
            depth: self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.iterations == Some(0) {
            return bad("iterations must be >= 1".into());
        }
        if !(self.looks >= 1.0) {
            return bad(format!("looks must be >= 1, got {}", self.looks));
        }
        if !(self.lambda_tv >= 0.0) || !self.lambda_tv.is_finite() {
            return bad(format!("lambda_tv must be finite and >= 0, got {}", self.lambda_tv));
        }
        if let Some(c) = self.crop {
            if c < 3 {
                return bad(format!("crop must be >= 3, got {c}"));
            }
        }
        self.architecture().validate()
    }
}
