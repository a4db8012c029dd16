//! Source-domain training: plain SGD on cross-entropy, with an optional
//! frozen-normalization fine-tuning mode where the layers normalize by their
//! stored running statistics and never update them.

use crate::error::{Error, Result};
use crate::normalization::BnVariant;
use crate::numerics::{Matrix, Rng};
use crate::shiftgen::LabeledDataset;

use super::checkpoint::{Checkpoint, TrainMeta};
use super::{accuracy, ForwardMode, Network, ParamScope};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Normalize by the stored running statistics during training and leave
    /// them untouched; requires initialized running tracks.
    pub frozen_bn: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// predicted probabilities.
pub fn cross_entropy(probs: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    let b = probs.rows();
    if b != labels.len() {
        return Err(Error::DimMismatch {
            op: "cross_entropy",
            lhs_rows: b,
            lhs_cols: probs.cols(),
            rhs_rows: labels.len(),
            rhs_cols: 1,
        });
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, probs.cols());
    let inv_b = 1.0 / b as f64;
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.get(i, label as usize).max(1e-300);
        loss -= p.ln();
        grad.set(i, label as usize, -inv_b / p);
    }
    Ok((loss * inv_b, grad))
}

/// Train on the source dataset and package the result as a checkpoint.
pub fn train_source(
    net: &mut Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    data.validate(net.num_classes())?;
    if cfg.frozen_bn {
        for layer in net.bn_states() {
            if !layer.source_running.is_initialized() {
                return Err(Error::UninitializedStats { track: "source" });
            }
        }
        for layer in net.bn_states_mut() {
            layer.variant = BnVariant::FrozenEval;
        }
    }
    let mode = if cfg.frozen_bn {
        ForwardMode::Adapt { update_trs: false }
    } else {
        ForwardMode::Train
    };

    let shuffle_streams = Rng::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    let n = data.len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_streams.split(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        let mut start = 0;
        while start < n {
            let mut end = (start + cfg.batch_size).min(n);
            if n - end == 1 {
                end = n; // avoid a singleton batch: batch stats need 2 rows
            }
            let idx = &order[start..end];
            let batch = data.features.gather_rows(idx);
            let labels: Vec<u32> = idx.iter().map(|&i| data.labels[i]).collect();

            let pass = net.forward(&batch, mode)?;
            let (loss, upstream) = cross_entropy(&pass.probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("epoch {epoch}, samples {start}..{end}"),
                });
            }
            loss_sum += loss * labels.len() as f64;
            correct += accuracy(&pass.probs, &labels) * labels.len() as f64;

            let grads = net.backward(&pass, &upstream)?;
            net.apply_sgd(&grads, cfg.lr, ParamScope::All);
            start = end;
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct / n as f64,
        };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&record);
        }
        log.push(record);
    }

    let checkpoint = Checkpoint::from_network(
        net,
        TrainMeta {
            seed: cfg.seed,
            epochs: cfg.epochs as u64,
            frozen_bn: cfg.frozen_bn,
        },
    );
    Ok(TrainOutcome { checkpoint, log })
}
