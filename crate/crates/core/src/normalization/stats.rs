//! Batch and running statistics, and the selector that decouples which
//! statistics normalize a batch from which statistics carry the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{column_mean_var, Matrix, Vector};

/// Per-feature mean and population variance of the current batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mu: Vector,
    pub var: Vector,
}

impl BatchStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Per-column mean and population variance (divide by the batch size).
pub fn batch_mean_var(batch: &Matrix) -> Result<BatchStats> {
    let (mu, var) = column_mean_var(batch)?;
    Ok(BatchStats { mu, var })
}

/// How a running track blends each new batch in.
///
/// Cumulative mode uses a weight of `1/n` at the n-th update, so the track
/// equals the arithmetic mean of everything it has seen. Exponential mode
/// uses a fixed momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunningMode {
    Cma,
    Ema { momentum: f64 },
}

pub const DEFAULT_EMA_MOMENTUM: f64 = 0.1;

/// Moving-average statistics over a stream of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mu: Vector,
    pub var: Vector,
    pub n_tracked: u64,
    pub mode: RunningMode,
}

impl RunningStats {
    /// Fresh track: zero mean, unit variance, nothing seen yet.
    pub fn new(dim: usize, mode: RunningMode) -> Self {
        Self {
            mu: Vector::zeros(dim),
            var: Vector::filled(dim, 1.0),
            n_tracked: 0,
            mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.n_tracked >= 1
    }

    /// Blend one batch into the track. The very first update copies the
    /// batch statistics exactly (weight 1) in both modes, so a track never
    /// mixes its placeholder initialization into real data; the fixed
    /// momentum applies from the second update on.
    pub fn update(&mut self, batch: &BatchStats) -> Result<()> {
        if batch.dim() != self.dim() {
            return Err(Error::DimMismatch {
                op: "running stats update",
                lhs_rows: 1,
                lhs_cols: self.dim(),
                rhs_rows: 1,
                rhs_cols: batch.dim(),
            });
        }
        let lambda = match self.mode {
            RunningMode::Cma => 1.0 / (self.n_tracked + 1) as f64,
            RunningMode::Ema { momentum } => {
                if self.n_tracked == 0 {
                    1.0
                } else {
                    momentum
                }
            }
        };
        self.mu = batch
            .mu
            .zip_map(&self.mu, |b, r| lambda * b + (1.0 - lambda) * r)?;
        self.var = batch
            .var
            .zip_map(&self.var, |b, r| lambda * b + (1.0 - lambda) * r)?;
        self.n_tracked += 1;
        Ok(())
    }
}

/// Which statistics normalize the feature in the gradient-preserving layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StatsSource {
    CurrentBatch,
    SourceRunning,
    TestingRunning,
    ThetaMixture { theta: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn cma_first_update_copies_batch_exactly() {
        let mut running = RunningStats::new(2, RunningMode::Cma);
        let batch = BatchStats {
            mu: Vector::from_vec(vec![1.25, -0.5]),
            var: Vector::from_vec(vec![0.75, 2.0]),
        };
        running.update(&batch).unwrap();
        assert_eq!(running.mu, batch.mu);
        assert_eq!(running.var, batch.var);
        assert_eq!(running.n_tracked, 1);
    }

    #[test]
    fn cma_averages_batch_means() {
        let mut running = RunningStats::new(1, RunningMode::Cma);
        for mean in [2.0, 4.0] {
            running
                .update(&BatchStats {
                    mu: Vector::from_vec(vec![mean]),
                    var: Vector::from_vec(vec![1.0]),
                })
                .unwrap();
        }
        assert_eq!(running.mu.get(0), 3.0);
    }

    #[test]
    fn ema_single_blend() {
        // A track already holding real state blends with the momentum.
        let mut running = RunningStats::new(1, RunningMode::Ema { momentum: 0.1 });
        running.n_tracked = 1;
        running
            .update(&BatchStats {
                mu: Vector::from_vec(vec![10.0]),
                var: Vector::from_vec(vec![1.0]),
            })
            .unwrap();
        assert!((running.mu.get(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ema_first_update_defines_the_track() {
        let mut running = RunningStats::new(1, RunningMode::Ema { momentum: 0.1 });
        running
            .update(&BatchStats {
                mu: Vector::from_vec(vec![10.0]),
                var: Vector::from_vec(vec![4.0]),
            })
            .unwrap();
        assert_eq!(running.mu.get(0), 10.0);
        assert_eq!(running.var.get(0), 4.0);
    }

    #[test]
    fn cma_equals_arithmetic_mean_oracle() {
        let mut rng = Rng::new(31);
        let mut running = RunningStats::new(3, RunningMode::Cma);
        let mut mus: Vec<Vector> = Vec::new();
        let mut vars: Vec<Vector> = Vec::new();
        for _ in 0..20 {
            let batch = Matrix::random_uniform(8, 3, -2.0, 2.0, &mut rng);
            let stats = batch_mean_var(&batch).unwrap();
            mus.push(stats.mu.clone());
            vars.push(stats.var.clone());
            running.update(&stats).unwrap();
        }
        let k = mus.len() as f64;
        for j in 0..3 {
            let mean_of_means: f64 = mus.iter().map(|m| m.get(j)).sum::<f64>() / k;
            let mean_of_vars: f64 = vars.iter().map(|v| v.get(j)).sum::<f64>() / k;
            assert!((running.mu.get(j) - mean_of_means).abs() < 1e-12);
            assert!((running.var.get(j) - mean_of_vars).abs() < 1e-12);
        }
    }

    #[test]
    fn update_rejects_dimension_mismatch() {
        let mut running = RunningStats::new(2, RunningMode::Cma);
        let batch = BatchStats {
            mu: Vector::zeros(3),
            var: Vector::zeros(3),
        };
        assert!(running.update(&batch).is_err());
    }
}
