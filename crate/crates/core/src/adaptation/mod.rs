//! Test-time adaptation: entropy minimization over the normalization affine
//! parameters only, with online statistics tracking and an optional
//! moving-average centroid classifier on the penultimate features.

mod rt3a;

pub use rt3a::CentroidClassifier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    accuracy, argmax_row, Checkpoint, ForwardMode, Network, ParamScope,
};
use crate::normalization::{
    AffineParams, BnVariant, RunningMode, RunningStats, StatsSource, DEFAULT_EMA_MOMENTUM,
};
use crate::numerics::Matrix;

// ── Configuration ──────────────────────────────────────────────────

/// Test-time optimization protocol: `rho` scales the base learning rate,
/// `delta` is the number of update steps per batch, `theta` weights the
/// mixture of testing and source running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub rho: f64,
    pub delta: usize,
    pub theta: f64,
    pub variant: BnVariant,
    pub stats_source: StatsSource,
    pub base_lr: f64,
    pub use_rt3a: bool,
    pub episodic: bool,
    /// How the testing track blends new batches in.
    pub trs_mode: RunningMode,
    /// Per-slot statistics-source overrides; length must equal the number of
    /// normalization layers when present.
    #[serde(default)]
    pub layer_sources: Option<Vec<StatsSource>>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            delta: 1,
            theta: 0.5,
            variant: BnVariant::GpreBn,
            stats_source: StatsSource::TestingRunning,
            base_lr: 1e-3,
            use_rt3a: false,
            episodic: false,
            trs_mode: RunningMode::Cma,
            layer_sources: None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("rho must be finite and non-negative, got {}", self.rho),
            });
        }
        if self.delta < 1 {
            return Err(Error::InvalidSpec {
                reason: "delta must be at least 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidSpec {
                reason: format!("theta must lie in [0, 1], got {}", self.theta),
            });
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("base_lr must be positive, got {}", self.base_lr),
            });
        }
        if let RunningMode::Ema { momentum } = self.trs_mode {
            if !(0.0..1.0).contains(&momentum) || momentum <= 0.0 {
                return Err(Error::InvalidSpec {
                    reason: format!("EMA momentum must lie in (0, 1), got {momentum}"),
                });
            }
        }
        Ok(())
    }

    /// The statistics source actually used, with `theta` folded into the
    /// mixture variant.
    pub fn resolved_source(&self) -> StatsSource {
        match self.stats_source {
            StatsSource::ThetaMixture { .. } => StatsSource::ThetaMixture { theta: self.theta },
            other => other,
        }
    }

    pub fn ema(momentum_or_default: Option<f64>) -> RunningMode {
        RunningMode::Ema {
            momentum: momentum_or_default.unwrap_or(DEFAULT_EMA_MOMENTUM),
        }
    }
}

// ── Entropy objective ──────────────────────────────────────────────

/// Mean over the batch of the Shannon entropy of each probability row,
/// natural log, with `0 ln 0 = 0`.
pub fn entropy_loss(probs: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..probs.rows() {
        let mut sum = 0.0;
        let mut row_entropy = 0.0;
        for &p in probs.row(i) {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidProbabilities {
                    row: i,
                    reason: format!("entry {p} is not a probability"),
                });
            }
            sum += p;
            if p > 0.0 {
                row_entropy -= p * p.ln();
            }
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidProbabilities {
                row: i,
                reason: format!("row sums to {sum}"),
            });
        }
        total += row_entropy;
    }
    Ok(total / probs.rows() as f64)
}

/// Gradient of [`entropy_loss`] with respect to the probabilities.
pub fn entropy_grad(probs: &Matrix) -> Matrix {
    let inv_b = 1.0 / probs.rows() as f64;
    probs.map(|p| -(p.max(1e-300).ln() + 1.0) * inv_b)
}

// ── Adaptation state ───────────────────────────────────────────────

/// A network undergoing adaptation. Only the normalization affine
/// parameters and testing tracks ever drift from the loaded checkpoint.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub net: Network,
    pub checkpoint_affines: Vec<AffineParams>,
    pub batches_seen: usize,
}

impl AdaptState {
    /// Build from a checkpoint and configure every normalization layer for
    /// the requested variant and statistics source.
    pub fn new(checkpoint: &Checkpoint, cfg: &AdaptConfig) -> Result<Self> {
        cfg.validate()?;
        let mut net = checkpoint.build_network()?;
        net.configure_bn(cfg.variant, cfg.resolved_source());
        if let Some(sources) = &cfg.layer_sources {
            if sources.len() != net.bn_states().len() {
                return Err(Error::InvalidSpec {
                    reason: format!(
                        "layer_sources has {} entries for {} normalization layers",
                        sources.len(),
                        net.bn_states().len()
                    ),
                });
            }
            for (slot, &source) in sources.iter().enumerate() {
                net.set_bn_source(slot, source);
            }
        }
        net.reset_testing_running(cfg.trs_mode);
        Ok(Self {
            checkpoint_affines: net.collect_affines(),
            net,
            batches_seen: 0,
        })
    }
}

/// What one adapted batch produced.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Head probabilities from the final forward, after the update steps.
    pub predictions: Matrix,
    /// Penultimate activations from the same forward.
    pub features: Matrix,
    /// Entropy observed at each update step, before the step applied.
    pub step_entropies: Vec<f64>,
    /// Entropy of the returned predictions.
    pub final_entropy: f64,
}

/// Adapt on one batch: feed the batch into the testing track once, run
/// `delta` gradient steps on the affine parameters at `rho * base_lr`, then
/// take predictions from a final forward. A non-finite loss rolls the state
/// back to its pre-batch snapshot.
pub fn adapt_batch(state: &mut AdaptState, batch: &Matrix, cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    if batch.rows() < 2 {
        return Err(Error::DegenerateBatch {
            op: "adapt_batch",
            rows: batch.rows(),
        });
    }
    let affine_snapshot = state.net.collect_affines();
    let testing_snapshot: Vec<RunningStats> = state
        .net
        .bn_states()
        .iter()
        .map(|l| l.testing_running.clone())
        .collect();

    match adapt_batch_inner(state, batch, cfg) {
        Ok(outcome) => {
            state.batches_seen += 1;
            Ok(outcome)
        }
        Err(err) => {
            state.net.restore_affines(&affine_snapshot);
            for (layer, saved) in state.net.bn_states_mut().iter_mut().zip(testing_snapshot) {
                layer.testing_running = saved;
            }
            Err(err)
        }
    }
}

fn adapt_batch_inner(
    state: &mut AdaptState,
    batch: &Matrix,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    if cfg.episodic {
        state.net.restore_affines(&state.checkpoint_affines);
    }
    let lr = cfg.rho * cfg.base_lr;
    let mut step_entropies = Vec::with_capacity(cfg.delta);

    for step in 0..cfg.delta {
        let pass = state
            .net
            .forward(batch, ForwardMode::Adapt { update_trs: step == 0 })?;
        let entropy = entropy_loss(&pass.probs)?;
        if !entropy.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("adaptation step {step}"),
            });
        }
        step_entropies.push(entropy);
        if lr != 0.0 {
            let upstream = entropy_grad(&pass.probs);
            let grads = state.net.backward(&pass, &upstream)?;
            state.net.apply_sgd(&grads, lr, ParamScope::BnAffineOnly);
        }
    }

    let pass = state
        .net
        .forward(batch, ForwardMode::Adapt { update_trs: false })?;
    let final_entropy = entropy_loss(&pass.probs)?;
    if !final_entropy.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "post-update forward".into(),
        });
    }
    Ok(AdaptOutcome {
        predictions: pass.probs,
        features: pass.penultimate,
        step_entropies,
        final_entropy,
    })
}

// ── Stream orchestration ───────────────────────────────────────────

/// One batch of a test stream, with labels when accuracy is wanted.
#[derive(Debug, Clone)]
pub struct StreamBatch {
    pub features: Matrix,
    pub labels: Option<Vec<u32>>,
}

impl StreamBatch {
    pub fn labeled(features: Matrix, labels: Vec<u32>) -> Self {
        Self {
            features,
            labels: Some(labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub batch_index: usize,
    pub entropy: f64,
    pub accuracy: Option<f64>,
    pub affine_norm: f64,
    pub class_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub records: Vec<PredictionRecord>,
    /// Accuracy over all labeled samples, sample-weighted.
    pub overall_accuracy: Option<f64>,
    /// Final affine parameters, gamma then beta per layer, flattened.
    pub final_affines: Vec<f64>,
}

impl PredictionLog {
    pub fn mean_entropy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.entropy).sum::<f64>() / self.records.len() as f64
    }

    /// Line-delimited records, one JSON object per batch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

fn affine_norm(net: &Network) -> f64 {
    let mut sum = 0.0;
    for layer in net.bn_states() {
        sum += layer.affine.gamma.as_slice().iter().map(|v| v * v).sum::<f64>();
        sum += layer.affine.beta.as_slice().iter().map(|v| v * v).sum::<f64>();
    }
    sum.sqrt()
}

/// Sequentially adapt over an ordered stream of batches. When the centroid
/// classifier is enabled it consumes the post-update penultimate features
/// and its probabilities are the ones logged.
pub fn run_adaptation(
    checkpoint: &Checkpoint,
    stream: &[StreamBatch],
    cfg: &AdaptConfig,
) -> Result<PredictionLog> {
    let mut state = AdaptState::new(checkpoint, cfg)?;
    let feature_dim = state
        .net
        .linears()
        .last()
        .map(|p| p.weight.rows())
        .unwrap_or(state.net.input_dim());
    let mut centroids = CentroidClassifier::new(state.net.num_classes(), feature_dim);

    let mut records = Vec::with_capacity(stream.len());
    let mut labeled = 0usize;
    let mut correct = 0.0;

    for (batch_index, item) in stream.iter().enumerate() {
        let outcome =
            adapt_batch(&mut state, &item.features, cfg).map_err(|e| e.in_batch(batch_index))?;
        let predictions = if cfg.use_rt3a {
            centroids
                .update(&outcome.features, &outcome.predictions)
                .map_err(|e| e.in_batch(batch_index))?
        } else {
            outcome.predictions
        };

        let mut class_counts = vec![0u64; state.net.num_classes()];
        for i in 0..predictions.rows() {
            class_counts[argmax_row(predictions.row(i))] += 1;
        }
        let batch_accuracy = item.labels.as_ref().map(|labels| {
            let acc = accuracy(&predictions, labels);
            labeled += labels.len();
            correct += acc * labels.len() as f64;
            acc
        });
        records.push(PredictionRecord {
            batch_index,
            entropy: entropy_loss(&predictions).map_err(|e| e.in_batch(batch_index))?,
            accuracy: batch_accuracy,
            affine_norm: affine_norm(&state.net),
            class_counts,
        });
    }

    Ok(PredictionLog {
        records,
        overall_accuracy: (labeled > 0).then(|| correct / labeled as f64),
        final_affines: state
            .net
            .bn_states()
            .iter()
            .flat_map(|l| {
                l.affine
                    .gamma
                    .as_slice()
                    .iter()
                    .chain(l.affine.beta.as_slice())
                    .copied()
            })
            .collect(),
    })
}
