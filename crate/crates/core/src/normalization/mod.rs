//! Batch-normalization variants over the batch axis of feature vectors:
//! the standard training form, the frozen inference form, a variant that
//! stops gradients through the batch statistics, and the gradient-preserving
//! form that keeps the training-time backpropagation while normalizing with
//! any statistics track.
//!
//! Backward passes are hand-derived; every one of them is checked against
//! the central-difference oracle in `numerics`.

mod stats;

pub use stats::{
    batch_mean_var, BatchStats, RunningMode, RunningStats, StatsSource, DEFAULT_EMA_MOMENTUM,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

pub const DEFAULT_EPSILON: f64 = 1e-5;

// ── Layer state ────────────────────────────────────────────────────

/// Learned per-feature scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub gamma: Vector,
    pub beta: Vector,
}

impl AffineParams {
    /// Identity transform: gamma 1, beta 0.
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Vector::filled(dim, 1.0),
            beta: Vector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// The affine transform the layer is equivalent to when written over the
/// batch-standardized values: `y = x_hat * gamma' + beta'`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveAffine {
    pub gamma_prime: Vector,
    pub beta_prime: Vector,
}

/// Which forward/backward pair the layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnVariant {
    /// Normalize by current-batch statistics, full cross-instance gradient.
    StandardTrain,
    /// Normalize by the source running track, per-instance gradient.
    FrozenEval,
    /// Normalize by current-batch statistics but treat them as constants in
    /// the backward pass.
    DetachedStats,
    /// Gradient-preserving form: backpropagation runs through the
    /// current-batch statistics while the normalization statistics come from
    /// the configured source.
    GpreBn,
}

/// One normalization layer: affine parameters, both running tracks, and the
/// variant/statistics selectors. `stats_source` is only consulted by the
/// gradient-preserving variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayerState {
    pub affine: AffineParams,
    pub source_running: RunningStats,
    pub testing_running: RunningStats,
    pub variant: BnVariant,
    pub stats_source: StatsSource,
    pub epsilon: f64,
}

impl BnLayerState {
    pub fn new(dim: usize) -> Self {
        Self {
            affine: AffineParams::identity(dim),
            source_running: RunningStats::new(dim, RunningMode::Cma),
            testing_running: RunningStats::new(dim, RunningMode::Cma),
            variant: BnVariant::StandardTrain,
            stats_source: StatsSource::CurrentBatch,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.affine.dim()
    }
}

/// Saved intermediates from a forward pass, enough to run the matching
/// backward pass. `x_hat` holds the inner standardized values;
/// `batch_stats` holds the statistics that produced them (current-batch for
/// the batch-statistic variants, the source running track for the frozen
/// variant). `norm_mu`/`norm_var` are the statistics the output was
/// normalized with.
#[derive(Debug, Clone)]
pub struct BnForwardTape {
    pub x_hat: Matrix,
    pub batch_stats: BatchStats,
    pub norm_mu: Vector,
    pub norm_var: Vector,
    pub effective: EffectiveAffine,
    pub variant: BnVariant,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Matrix,
    pub gamma: Vector,
    pub beta: Vector,
}

// ── Shared kernels ─────────────────────────────────────────────────

fn std_eps(var: &Vector, epsilon: f64) -> Vector {
    var.map(|v| (v + epsilon).sqrt())
}

/// `(x - mu) / sqrt(var + eps)` row by row.
fn standardize(batch: &Matrix, mu: &Vector, var: &Vector, epsilon: f64) -> Matrix {
    let inv_std = var.map(|v| 1.0 / (v + epsilon).sqrt());
    let mut out = batch.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mu.get(j)) * inv_std.get(j);
        }
    }
    out
}

fn check_upstream(upstream: &Matrix, x_hat: &Matrix, op: &'static str) -> Result<()> {
    if upstream.rows() != x_hat.rows() || upstream.cols() != x_hat.cols() {
        return Err(Error::DimMismatch {
            op,
            lhs_rows: upstream.rows(),
            lhs_cols: upstream.cols(),
            rhs_rows: x_hat.rows(),
            rhs_cols: x_hat.cols(),
        });
    }
    Ok(())
}

/// Input gradient of the batch-standardization map scaled per feature:
/// `scale_f * (g - mean_i(g) - x_hat * mean_i(g * x_hat))`.
///
/// This is the cross-instance part every gradient-preserving variant shares.
fn cross_instance_input_grad(upstream: &Matrix, x_hat: &Matrix, scale: &Vector) -> Matrix {
    let rows = upstream.rows();
    let cols = upstream.cols();
    let inv_b = 1.0 / rows as f64;

    let mean_g = upstream.col_sum().scale(inv_b);
    let mut mean_gx = vec![0.0; cols];
    for i in 0..rows {
        let g = upstream.row(i);
        let xh = x_hat.row(i);
        for j in 0..cols {
            mean_gx[j] += g[j] * xh[j];
        }
    }
    for v in &mut mean_gx {
        *v *= inv_b;
    }

    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let g = upstream.row(i);
        let xh = x_hat.row(i);
        let o = out.row_mut(i);
        for j in 0..cols {
            o[j] = scale.get(j) * (g[j] - mean_g.get(j) - xh[j] * mean_gx[j]);
        }
    }
    out
}

fn param_grads(upstream: &Matrix, normalized: &Matrix) -> Result<(Vector, Vector)> {
    let grad_gamma = upstream.hadamard(normalized)?.col_sum();
    let grad_beta = upstream.col_sum();
    Ok((grad_gamma, grad_beta))
}

// ── Standard training form ─────────────────────────────────────────

/// Training forward: standardize by current-batch statistics, then apply the
/// affine transform. Requires at least two rows so the variance is defined.
pub fn bn_train_forward(batch: &Matrix, layer: &BnLayerState) -> Result<(Matrix, BnForwardTape)> {
    if batch.rows() < 2 {
        return Err(Error::DegenerateBatch {
            op: "bn_train_forward",
            rows: batch.rows(),
        });
    }
    let stats = batch_mean_var(batch)?;
    let x_hat = standardize(batch, &stats.mu, &stats.var, layer.epsilon);
    let output = x_hat
        .mul_row_vector(&layer.affine.gamma)?
        .add_row_vector(&layer.affine.beta)?;
    let tape = BnForwardTape {
        x_hat,
        norm_mu: stats.mu.clone(),
        norm_var: stats.var.clone(),
        batch_stats: stats,
        effective: EffectiveAffine {
            gamma_prime: layer.affine.gamma.clone(),
            beta_prime: layer.affine.beta.clone(),
        },
        variant: BnVariant::StandardTrain,
    };
    Ok((output, tape))
}

/// Full backward pass through the batch statistics: the gradient at one
/// input depends on every sample in the batch.
pub fn bn_train_backward(
    upstream: &Matrix,
    tape: &BnForwardTape,
    layer: &BnLayerState,
) -> Result<BnGrads> {
    check_upstream(upstream, &tape.x_hat, "bn_train_backward")?;
    let scale = layer
        .affine
        .gamma
        .zip_map(&tape.batch_stats.var, |g, v| {
            g / (v + layer.epsilon).sqrt()
        })?;
    let input = cross_instance_input_grad(upstream, &tape.x_hat, &scale);
    let (gamma, beta) = param_grads(upstream, &tape.x_hat)?;
    Ok(BnGrads { input, gamma, beta })
}

// ── Frozen inference form ──────────────────────────────────────────

/// Inference forward: normalize by the source running track. Pointwise, so
/// any batch size is accepted; no tape is produced.
pub fn bn_eval_forward(batch: &Matrix, layer: &BnLayerState) -> Result<Matrix> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch {
            op: "bn_eval_forward",
        });
    }
    if !layer.source_running.is_initialized() {
        return Err(Error::UninitializedStats { track: "source" });
    }
    let x_hat = standardize(
        batch,
        &layer.source_running.mu,
        &layer.source_running.var,
        layer.epsilon,
    );
    x_hat
        .mul_row_vector(&layer.affine.gamma)?
        .add_row_vector(&layer.affine.beta)
}

/// Like [`bn_eval_forward`] but records a tape so the frozen variant can be
/// optimized at test time.
pub fn frozen_forward(batch: &Matrix, layer: &BnLayerState) -> Result<(Matrix, BnForwardTape)> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch {
            op: "frozen_forward",
        });
    }
    if !layer.source_running.is_initialized() {
        return Err(Error::UninitializedStats { track: "source" });
    }
    let mu = layer.source_running.mu.clone();
    let var = layer.source_running.var.clone();
    let x_hat = standardize(batch, &mu, &var, layer.epsilon);
    let output = x_hat
        .mul_row_vector(&layer.affine.gamma)?
        .add_row_vector(&layer.affine.beta)?;
    let tape = BnForwardTape {
        x_hat,
        batch_stats: BatchStats {
            mu: mu.clone(),
            var: var.clone(),
        },
        norm_mu: mu,
        norm_var: var,
        effective: EffectiveAffine {
            gamma_prime: layer.affine.gamma.clone(),
            beta_prime: layer.affine.beta.clone(),
        },
        variant: BnVariant::FrozenEval,
    };
    Ok((output, tape))
}

/// Backward for the frozen form. The statistics are constants, so the input
/// gradient is strictly per-instance: `g * gamma / sqrt(var_r + eps)`.
pub fn frozen_backward(
    upstream: &Matrix,
    tape: &BnForwardTape,
    layer: &BnLayerState,
) -> Result<BnGrads> {
    check_upstream(upstream, &tape.x_hat, "frozen_backward")?;
    let scale = layer
        .affine
        .gamma
        .zip_map(&tape.norm_var, |g, v| g / (v + layer.epsilon).sqrt())?;
    let input = upstream.mul_row_vector(&scale)?;
    let (gamma, beta) = param_grads(upstream, &tape.x_hat)?;
    Ok(BnGrads { input, gamma, beta })
}

// ── Detached form ──────────────────────────────────────────────────

/// Backward for the detached variant: normalized by current-batch statistics
/// in the forward pass, but the statistics are treated as constants here, so
/// the cross-instance terms vanish. Parameter gradients are identical to the
/// standard form.
pub fn detached_backward(
    upstream: &Matrix,
    tape: &BnForwardTape,
    layer: &BnLayerState,
) -> Result<BnGrads> {
    check_upstream(upstream, &tape.x_hat, "detached_backward")?;
    let scale = layer
        .affine
        .gamma
        .zip_map(&tape.batch_stats.var, |g, v| {
            g / (v + layer.epsilon).sqrt()
        })?;
    let input = upstream.mul_row_vector(&scale)?;
    let (gamma, beta) = param_grads(upstream, &tape.x_hat)?;
    Ok(BnGrads { input, gamma, beta })
}

// ── Statistics resolution ──────────────────────────────────────────

/// Resolve the `(mu, var)` pair the gradient-preserving layer normalizes
/// with. The mixture endpoints reduce to the pure tracks bitwise. Variances
/// mix, not standard deviations.
pub fn resolve_stats(
    source: StatsSource,
    batch_stats: &BatchStats,
    layer: &BnLayerState,
) -> Result<(Vector, Vector)> {
    match source {
        StatsSource::CurrentBatch => Ok((batch_stats.mu.clone(), batch_stats.var.clone())),
        StatsSource::SourceRunning => {
            if !layer.source_running.is_initialized() {
                return Err(Error::UninitializedStats { track: "source" });
            }
            Ok((
                layer.source_running.mu.clone(),
                layer.source_running.var.clone(),
            ))
        }
        StatsSource::TestingRunning => {
            if !layer.testing_running.is_initialized() {
                return Err(Error::UninitializedStats { track: "testing" });
            }
            Ok((
                layer.testing_running.mu.clone(),
                layer.testing_running.var.clone(),
            ))
        }
        StatsSource::ThetaMixture { theta } => {
            if theta == 0.0 {
                return resolve_stats(StatsSource::SourceRunning, batch_stats, layer);
            }
            if theta == 1.0 {
                return resolve_stats(StatsSource::TestingRunning, batch_stats, layer);
            }
            if !layer.source_running.is_initialized() {
                return Err(Error::UninitializedStats { track: "source" });
            }
            if !layer.testing_running.is_initialized() {
                return Err(Error::UninitializedStats { track: "testing" });
            }
            let mu = layer
                .testing_running
                .mu
                .zip_map(&layer.source_running.mu, |t, s| {
                    theta * t + (1.0 - theta) * s
                })?;
            let var = layer
                .testing_running
                .var
                .zip_map(&layer.source_running.var, |t, s| {
                    theta * t + (1.0 - theta) * s
                })?;
            Ok((mu, var))
        }
    }
}

// ── Gradient-preserving form ───────────────────────────────────────

/// Gradient-preserving forward: re-standardize the batch-standardized values
/// with stop-gradient copies of the batch statistics, then normalize with
/// the resolved statistics:
///
/// `y = ((x_hat * sd_c + mu_c - mu) / sqrt(var + eps)) * gamma + beta`
///
/// where `sd_c = sqrt(var_c + eps)` and `mu_c`, `sd_c` carry no gradient.
/// With the current-batch source this collapses to the standard training
/// form.
pub fn gprebn_forward(batch: &Matrix, layer: &BnLayerState) -> Result<(Matrix, BnForwardTape)> {
    if batch.rows() < 2 {
        return Err(Error::DegenerateBatch {
            op: "gprebn_forward",
            rows: batch.rows(),
        });
    }
    let stats = batch_mean_var(batch)?;
    let x_hat = standardize(batch, &stats.mu, &stats.var, layer.epsilon);
    let (norm_mu, norm_var) = resolve_stats(layer.stats_source, &stats, layer)?;

    let sd_c = std_eps(&stats.var, layer.epsilon);
    let sd_out = std_eps(&norm_var, layer.epsilon);
    let shift = stats.mu.sub(&norm_mu)?;
    let inv_sd_out = sd_out.map(|v| 1.0 / v);

    let pre_affine = x_hat
        .mul_row_vector(&sd_c)?
        .add_row_vector(&shift)?
        .mul_row_vector(&inv_sd_out)?;
    let output = pre_affine
        .mul_row_vector(&layer.affine.gamma)?
        .add_row_vector(&layer.affine.beta)?;

    let gamma_prime = sd_c
        .zip_map(&sd_out, |c, o| c / o)?
        .zip_map(&layer.affine.gamma, |r, g| r * g)?;
    let beta_prime = shift
        .zip_map(&sd_out, |s, o| s / o)?
        .zip_map(&layer.affine.gamma, |s, g| s * g)?
        .add(&layer.affine.beta)?;

    let tape = BnForwardTape {
        x_hat,
        batch_stats: stats,
        norm_mu,
        norm_var,
        effective: EffectiveAffine {
            gamma_prime,
            beta_prime,
        },
        variant: BnVariant::GpreBn,
    };
    Ok((output, tape))
}

/// Backward for the gradient-preserving form: the standard cross-instance
/// input gradient scaled per feature by `sqrt(var_c + eps) / sqrt(var + eps)`.
/// The scaling is exactly 1 when the layer normalizes with current-batch
/// statistics, recovering the standard backward bit for bit.
pub fn gprebn_backward(
    upstream: &Matrix,
    tape: &BnForwardTape,
    layer: &BnLayerState,
) -> Result<BnGrads> {
    check_upstream(upstream, &tape.x_hat, "gprebn_backward")?;
    let scale = layer
        .affine
        .gamma
        .zip_map(&tape.batch_stats.var, |g, v| {
            g / (v + layer.epsilon).sqrt()
        })?;
    let sd_c = std_eps(&tape.batch_stats.var, layer.epsilon);
    let sd_out = std_eps(&tape.norm_var, layer.epsilon);
    let ratio = sd_c.zip_map(&sd_out, |c, o| c / o)?;

    let input = cross_instance_input_grad(upstream, &tape.x_hat, &scale).mul_row_vector(&ratio)?;

    // Gradient for gamma flows through the pre-affine normalized values.
    let shift = tape.batch_stats.mu.sub(&tape.norm_mu)?;
    let inv_sd_out = sd_out.map(|v| 1.0 / v);
    let pre_affine = tape
        .x_hat
        .mul_row_vector(&sd_c)?
        .add_row_vector(&shift)?
        .mul_row_vector(&inv_sd_out)?;
    let (gamma, beta) = param_grads(upstream, &pre_affine)?;
    Ok(BnGrads { input, gamma, beta })
}
