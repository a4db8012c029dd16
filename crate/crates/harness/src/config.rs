//! Experiment configuration: one JSON file drives training, adaptation,
//! ablations, and sweeps. Validation reports the field path of the first
//! offending entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ttbn_core::shiftgen::CorruptionKind;

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; every repetition, cell, and generator stream derives
    /// from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Number of independent repetitions (fresh data + fresh training).
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub task: TaskConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Method labels for the adaptation grid; empty means the default set.
    #[serde(default)]
    pub methods: Vec<String>,
}

fn default_seed() -> u64 {
    7
}

fn default_repetitions() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    /// Rotated-domain generalization: one domain per rotation, train on all
    /// but the target, adapt on the held-out one.
    Rotations {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_samples")]
        samples_per_domain: usize,
        #[serde(default = "default_rotations")]
        rotations_deg: Vec<f64>,
        #[serde(default = "default_target_domain")]
        target_domain: usize,
        #[serde(default = "default_plane_radius")]
        plane_radius: f64,
        #[serde(default = "default_rest_spread")]
        rest_spread: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// Corruption robustness: train on a clean domain, adapt on corrupted
    /// fresh draws across a kind x severity grid.
    Corruption {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_samples")]
        samples_per_domain: usize,
        #[serde(default = "default_kinds")]
        kinds: Vec<CorruptionKind>,
        #[serde(default = "default_severities")]
        severities: Vec<u8>,
        #[serde(default = "default_plane_radius")]
        plane_radius: f64,
        #[serde(default = "default_rest_spread")]
        rest_spread: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// External tabular data. Train files are pooled; each target file
    /// becomes one adaptation stream.
    Files {
        train: Vec<PathBuf>,
        target: Vec<PathBuf>,
        num_classes: usize,
        #[serde(default)]
        format: FileFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    Csv,
    Binary,
}

fn default_classes() -> usize {
    7
}
fn default_dim() -> usize {
    16
}
fn default_samples() -> usize {
    2000
}
fn default_rotations() -> Vec<f64> {
    vec![0.0, 30.0, 60.0, 90.0]
}
fn default_target_domain() -> usize {
    3
}
fn default_plane_radius() -> f64 {
    2.5
}
fn default_rest_spread() -> f64 {
    0.5
}
fn default_noise_std() -> f64 {
    1.0
}
fn default_kinds() -> Vec<CorruptionKind> {
    ttbn_core::shiftgen::ALL_CORRUPTIONS.to_vec()
}
fn default_severities() -> Vec<u8> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_lr")]
    pub lr: f64,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub frozen_bn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            epochs: default_epochs(),
            lr: default_train_lr(),
            batch_size: default_train_batch(),
            frozen_bn: false,
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_epochs() -> usize {
    40
}
fn default_train_lr() -> f64 {
    0.02
}
fn default_train_batch() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_delta")]
    pub delta: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_adapt_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ema_momentum")]
    pub ema_momentum: f64,
    #[serde(default)]
    pub episodic: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            delta: default_delta(),
            theta: default_theta(),
            base_lr: default_base_lr(),
            batch_size: default_adapt_batch(),
            ema_momentum: default_ema_momentum(),
            episodic: false,
        }
    }
}

fn default_rho() -> f64 {
    20.0
}
fn default_delta() -> usize {
    3
}
fn default_theta() -> f64 {
    0.5
}
fn default_base_lr() -> f64 {
    0.1
}
fn default_adapt_batch() -> usize {
    64
}
fn default_ema_momentum() -> f64 {
    0.1
}

/// Hyper-parameter grids for the sweep command. The defaults bracket the
/// usual entropy-minimization regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default = "default_rhos")]
    pub rhos: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thetas: default_thetas(),
            rhos: default_rhos(),
            deltas: default_deltas(),
        }
    }
}

fn default_thetas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_rhos() -> Vec<f64> {
    vec![0.2, 2.0, 20.0]
}
fn default_deltas() -> Vec<usize> {
    vec![1, 3]
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::ConfigFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(HarnessError::config("repetitions", "must be at least 1"));
        }
        match &self.task {
            TaskConfig::Rotations {
                num_classes,
                dim,
                samples_per_domain,
                rotations_deg,
                target_domain,
                noise_std,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(HarnessError::config("task.num_classes", "need at least 2"));
                }
                if *dim < 2 {
                    return Err(HarnessError::config("task.dim", "need at least 2"));
                }
                if *samples_per_domain < 8 {
                    return Err(HarnessError::config(
                        "task.samples_per_domain",
                        "need at least 8",
                    ));
                }
                if rotations_deg.len() < 2 {
                    return Err(HarnessError::config(
                        "task.rotations_deg",
                        "need at least 2 domains for leave-one-out",
                    ));
                }
                if *target_domain >= rotations_deg.len() {
                    return Err(HarnessError::config(
                        "task.target_domain",
                        format!(
                            "index {target_domain} out of range for {} domains",
                            rotations_deg.len()
                        ),
                    ));
                }
                if *noise_std <= 0.0 {
                    return Err(HarnessError::config("task.noise_std", "must be positive"));
                }
            }
            TaskConfig::Corruption {
                num_classes,
                dim,
                samples_per_domain,
                kinds,
                severities,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(HarnessError::config("task.num_classes", "need at least 2"));
                }
                if *dim < 2 {
                    return Err(HarnessError::config("task.dim", "need at least 2"));
                }
                if *samples_per_domain < 8 {
                    return Err(HarnessError::config(
                        "task.samples_per_domain",
                        "need at least 8",
                    ));
                }
                if kinds.is_empty() {
                    return Err(HarnessError::config("task.kinds", "need at least one kind"));
                }
                if severities.is_empty() || severities.iter().any(|s| !(1..=5).contains(s)) {
                    return Err(HarnessError::config(
                        "task.severities",
                        "severities must be a non-empty subset of 1..=5",
                    ));
                }
            }
            TaskConfig::Files {
                train,
                target,
                num_classes,
                ..
            } => {
                if train.is_empty() {
                    return Err(HarnessError::config("task.train", "need at least one file"));
                }
                if target.is_empty() {
                    return Err(HarnessError::config(
                        "task.target",
                        "need at least one file",
                    ));
                }
                if *num_classes < 2 {
                    return Err(HarnessError::config("task.num_classes", "need at least 2"));
                }
                for path in train.iter().chain(target) {
                    if !path.exists() {
                        return Err(HarnessError::config(
                            "task.files",
                            format!("{} does not exist", path.display()),
                        ));
                    }
                }
            }
        }
        if self.model.epochs == 0 {
            // Zero is allowed (no-op training) but hidden layers are not
            // optional.
        }
        if self.model.hidden.is_empty() {
            return Err(HarnessError::config(
                "model.hidden",
                "need at least one hidden layer",
            ));
        }
        if self.model.lr <= 0.0 || !self.model.lr.is_finite() {
            return Err(HarnessError::config("model.lr", "must be positive"));
        }
        if self.model.batch_size < 2 {
            return Err(HarnessError::config("model.batch_size", "need at least 2"));
        }
        if self.adaptation.batch_size < 2 {
            return Err(HarnessError::config(
                "adaptation.batch_size",
                "need at least 2",
            ));
        }
        if !(0.0..=1.0).contains(&self.adaptation.theta) {
            return Err(HarnessError::config(
                "adaptation.theta",
                "must lie in [0, 1]",
            ));
        }
        if self.adaptation.rho < 0.0 || !self.adaptation.rho.is_finite() {
            return Err(HarnessError::config(
                "adaptation.rho",
                "must be finite and non-negative",
            ));
        }
        if self.adaptation.delta == 0 {
            return Err(HarnessError::config("adaptation.delta", "must be at least 1"));
        }
        if self.adaptation.base_lr <= 0.0 {
            return Err(HarnessError::config(
                "adaptation.base_lr",
                "must be positive",
            ));
        }
        if !(0.0 < self.adaptation.ema_momentum && self.adaptation.ema_momentum < 1.0) {
            return Err(HarnessError::config(
                "adaptation.ema_momentum",
                "must lie in (0, 1)",
            ));
        }
        if self.sweep.thetas.is_empty() || self.sweep.rhos.is_empty() || self.sweep.deltas.is_empty()
        {
            return Err(HarnessError::config(
                "sweep",
                "grids must be non-empty when sweeping",
            ));
        }
        for label in &self.methods {
            if crate::methods::Method::from_label(label).is_none() {
                return Err(HarnessError::config(
                    "methods",
                    format!("unknown method label '{label}'"),
                ));
            }
        }
        Ok(())
    }
}
