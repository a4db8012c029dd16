//! Small fully-connected network with normalization slots and hand-derived
//! backprop: the substrate test-time adaptation operates on.

mod checkpoint;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, CHECKPOINT_VERSION,
};
pub use train::{train_source, EpochRecord, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalization::{
    batch_mean_var, bn_train_backward, bn_train_forward, detached_backward, frozen_backward,
    frozen_forward, gprebn_backward, gprebn_forward, AffineParams, BnForwardTape, BnLayerState,
    BnVariant, RunningMode, StatsSource,
};
use crate::numerics::{Matrix, Rng, Vector};

// ── Architecture ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "kebab-case")]
pub enum LayerSpec {
    Linear { input: usize, output: usize },
    BatchNorm { dim: usize },
    Relu,
    SoftmaxHead { classes: usize },
}

/// Default stack: two hidden blocks with normalization, small enough for
/// full finite-difference audits.
pub fn default_arch(input_dim: usize, classes: usize) -> Vec<LayerSpec> {
    arch_with_hidden(input_dim, &[64, 64], classes)
}

pub fn arch_with_hidden(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::Linear {
            input: width,
            output: h,
        });
        specs.push(LayerSpec::BatchNorm { dim: h });
        specs.push(LayerSpec::Relu);
        width = h;
    }
    specs.push(LayerSpec::Linear {
        input: width,
        output: classes,
    });
    specs.push(LayerSpec::SoftmaxHead { classes });
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Matrix, // input x output
    pub bias: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Linear(usize),
    Bn(usize),
    Relu,
    SoftmaxHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    nodes: Vec<NodeKind>,
    linears: Vec<LinearParams>,
    bn: Vec<BnLayerState>,
    input_dim: usize,
    num_classes: usize,
    last_linear_node: Option<usize>,
}

impl Network {
    /// Build and initialize from an architecture description. Weights and
    /// biases are uniform in `±sqrt(1/fan_in)`; normalization layers start as
    /// the identity with fresh running tracks.
    pub fn with_seed(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed).split(0x1217);
        let mut nodes = Vec::with_capacity(specs.len());
        let mut linears = Vec::new();
        let mut bn = Vec::new();
        let mut width = None;
        let mut head_seen = false;
        let mut last_linear_node = None;

        for (idx, spec) in specs.iter().enumerate() {
            if head_seen {
                return Err(Error::InvalidSpec {
                    reason: "layers after the softmax head".into(),
                });
            }
            match *spec {
                LayerSpec::Linear { input, output } => {
                    if let Some(w) = width {
                        if w != input {
                            return Err(Error::InvalidSpec {
                                reason: format!(
                                    "layer {idx}: linear expects input {input}, previous width is {w}"
                                ),
                            });
                        }
                    }
                    if input == 0 || output == 0 {
                        return Err(Error::InvalidSpec {
                            reason: format!("layer {idx}: zero-sized linear"),
                        });
                    }
                    let bound = (1.0 / input as f64).sqrt();
                    let weight = Matrix::random_uniform(input, output, -bound, bound, &mut rng);
                    let bias =
                        Vector::from_vec((0..output).map(|_| rng.uniform(-bound, bound)).collect());
                    nodes.push(NodeKind::Linear(linears.len()));
                    last_linear_node = Some(idx);
                    linears.push(LinearParams { weight, bias });
                    width = Some(output);
                }
                LayerSpec::BatchNorm { dim } => {
                    if width != Some(dim) {
                        return Err(Error::InvalidSpec {
                            reason: format!(
                                "layer {idx}: batch norm dim {dim} does not match width {width:?}"
                            ),
                        });
                    }
                    nodes.push(NodeKind::Bn(bn.len()));
                    bn.push(BnLayerState::new(dim));
                }
                LayerSpec::Relu => {
                    if width.is_none() {
                        return Err(Error::InvalidSpec {
                            reason: format!("layer {idx}: relu before any sized layer"),
                        });
                    }
                    nodes.push(NodeKind::Relu);
                }
                LayerSpec::SoftmaxHead { classes } => {
                    if width != Some(classes) {
                        return Err(Error::InvalidSpec {
                            reason: format!(
                                "layer {idx}: softmax head over {classes} classes, width is {width:?}"
                            ),
                        });
                    }
                    nodes.push(NodeKind::SoftmaxHead);
                    head_seen = true;
                }
            }
        }
        if !head_seen {
            return Err(Error::InvalidSpec {
                reason: "architecture must end with a softmax head".into(),
            });
        }
        let input_dim = match specs.first() {
            Some(LayerSpec::Linear { input, .. }) => *input,
            _ => {
                return Err(Error::InvalidSpec {
                    reason: "architecture must start with a linear layer".into(),
                })
            }
        };
        let num_classes = match specs.last() {
            Some(LayerSpec::SoftmaxHead { classes }) => *classes,
            _ => unreachable!("head checked above"),
        };
        Ok(Self {
            specs: specs.to_vec(),
            nodes,
            linears,
            bn,
            input_dim,
            num_classes,
            last_linear_node,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn linears(&self) -> &[LinearParams] {
        &self.linears
    }

    pub fn linears_mut(&mut self) -> &mut [LinearParams] {
        &mut self.linears
    }

    pub fn bn_states(&self) -> &[BnLayerState] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnLayerState] {
        &mut self.bn
    }

    /// Configure every normalization layer for adaptation in one call.
    pub fn configure_bn(&mut self, variant: BnVariant, source: StatsSource) {
        for layer in &mut self.bn {
            layer.variant = variant;
            layer.stats_source = source;
        }
    }

    /// Per-slot statistics-source override (for the per-layer probe).
    pub fn set_bn_source(&mut self, slot: usize, source: StatsSource) {
        self.bn[slot].stats_source = source;
    }

    /// Reset the testing tracks so a new stream starts from scratch.
    pub fn reset_testing_running(&mut self, mode: RunningMode) {
        for layer in &mut self.bn {
            layer.testing_running =
                crate::normalization::RunningStats::new(layer.dim(), mode);
        }
    }

    pub fn collect_affines(&self) -> Vec<AffineParams> {
        self.bn.iter().map(|l| l.affine.clone()).collect()
    }

    pub fn restore_affines(&mut self, affines: &[AffineParams]) {
        for (layer, saved) in self.bn.iter_mut().zip(affines) {
            layer.affine = saved.clone();
        }
    }
}

// ── Forward ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Current-batch normalization with source running-track updates.
    Train,
    /// Frozen source statistics; mutates nothing.
    Eval,
    /// Dispatch on each layer's configured variant. `update_trs` feeds the
    /// incoming batch into the testing track once, before normalizing.
    Adapt { update_trs: bool },
}

#[derive(Debug, Clone)]
enum Tape {
    Linear { input: Matrix },
    Bn { tape: BnForwardTape },
    Relu { input: Matrix },
    Softmax { probs: Matrix },
}

/// Everything a forward pass produced: class probabilities, per-layer tapes
/// for the backward pass, and the activations feeding the classifier head.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: Matrix,
    tapes: Vec<Tape>,
    pub penultimate: Matrix,
}

pub(crate) fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Index of the largest entry; ties break to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(probs: &Matrix, labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax_row(probs.row(*i)) == label as usize)
        .count();
    correct as f64 / labels.len() as f64
}

impl Network {
    pub fn forward(&mut self, batch: &Matrix, mode: ForwardMode) -> Result<ForwardPass> {
        if batch.cols() != self.input_dim {
            return Err(Error::DimMismatch {
                op: "network forward",
                lhs_rows: batch.rows(),
                lhs_cols: batch.cols(),
                rhs_rows: batch.rows(),
                rhs_cols: self.input_dim,
            });
        }
        let mut x = batch.clone();
        let mut tapes = Vec::with_capacity(self.nodes.len());
        let mut penultimate = batch.clone();

        for (idx, node) in self.nodes.clone().into_iter().enumerate() {
            match node {
                NodeKind::Linear(li) => {
                    if Some(idx) == self.last_linear_node {
                        penultimate = x.clone();
                    }
                    tapes.push(Tape::Linear { input: x.clone() });
                    let params = &self.linears[li];
                    x = x.matmul(&params.weight)?.add_row_vector(&params.bias)?;
                }
                NodeKind::Bn(bi) => {
                    let layer = &mut self.bn[bi];
                    let (out, tape) = match mode {
                        ForwardMode::Train => {
                            let (out, tape) = bn_train_forward(&x, layer)?;
                            layer.source_running.update(&tape.batch_stats)?;
                            (out, tape)
                        }
                        ForwardMode::Eval => frozen_forward(&x, layer)?,
                        ForwardMode::Adapt { update_trs } => match layer.variant {
                            BnVariant::StandardTrain => bn_train_forward(&x, layer)?,
                            BnVariant::DetachedStats => {
                                let (out, mut tape) = bn_train_forward(&x, layer)?;
                                tape.variant = BnVariant::DetachedStats;
                                (out, tape)
                            }
                            BnVariant::FrozenEval => frozen_forward(&x, layer)?,
                            BnVariant::GpreBn => {
                                if update_trs {
                                    let stats = batch_mean_var(&x)?;
                                    layer.testing_running.update(&stats)?;
                                }
                                gprebn_forward(&x, layer)?
                            }
                        },
                    };
                    tapes.push(Tape::Bn { tape });
                    x = out;
                }
                NodeKind::Relu => {
                    tapes.push(Tape::Relu { input: x.clone() });
                    // Propagate NaN instead of laundering it to zero, so a
                    // poisoned batch surfaces as an invalid loss downstream.
                    x = x.map(|v| if v.is_nan() || v > 0.0 { v } else { 0.0 });
                }
                NodeKind::SoftmaxHead => {
                    x = softmax_rows(&x);
                    tapes.push(Tape::Softmax { probs: x.clone() });
                }
            }
        }
        Ok(ForwardPass {
            probs: x,
            tapes,
            penultimate,
        })
    }

    /// Inference forward on an immutable network.
    pub fn eval_forward(&self, batch: &Matrix) -> Result<Matrix> {
        // The eval path never mutates, so a clone-free implementation would
        // also work; reuse the mode dispatch and keep one code path.
        let mut probe = self.clone();
        let pass = probe.forward(batch, ForwardMode::Eval)?;
        debug_assert!(probe == *self);
        Ok(pass.probs)
    }

    pub fn backward(&self, pass: &ForwardPass, upstream: &Matrix) -> Result<Gradients> {
        if pass.tapes.len() != self.nodes.len() {
            return Err(Error::InvalidSpec {
                reason: format!(
                    "tape mismatch: {} tapes for {} layers",
                    pass.tapes.len(),
                    self.nodes.len()
                ),
            });
        }
        if upstream.rows() != pass.probs.rows() || upstream.cols() != pass.probs.cols() {
            return Err(Error::DimMismatch {
                op: "network backward",
                lhs_rows: upstream.rows(),
                lhs_cols: upstream.cols(),
                rhs_rows: pass.probs.rows(),
                rhs_cols: pass.probs.cols(),
            });
        }

        let mut grads = Gradients {
            linear: self
                .linears
                .iter()
                .map(|p| LinearGrad {
                    weight: Matrix::zeros(p.weight.rows(), p.weight.cols()),
                    bias: Vector::zeros(p.bias.len()),
                })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|l| AffineGrad {
                    gamma: Vector::zeros(l.dim()),
                    beta: Vector::zeros(l.dim()),
                })
                .collect(),
        };

        let mut g = upstream.clone();
        for (node, tape) in self.nodes.iter().zip(pass.tapes.iter()).rev() {
            match (node, tape) {
                (NodeKind::SoftmaxHead, Tape::Softmax { probs }) => {
                    // g_logit = p * (g - sum_c g_c p_c) row by row.
                    let mut out = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let gi = g.row(i);
                        let pi = probs.row(i);
                        let dot: f64 = gi.iter().zip(pi.iter()).map(|(a, b)| a * b).sum();
                        let o = out.row_mut(i);
                        for j in 0..gi.len() {
                            o[j] = pi[j] * (gi[j] - dot);
                        }
                    }
                    g = out;
                }
                (NodeKind::Relu, Tape::Relu { input }) => {
                    let mut out = g.clone();
                    for i in 0..out.rows() {
                        let mask = input.row(i);
                        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                            if mask[j] <= 0.0 {
                                *v = 0.0;
                            }
                        }
                    }
                    g = out;
                }
                (NodeKind::Linear(li), Tape::Linear { input }) => {
                    let params = &self.linears[*li];
                    grads.linear[*li].weight = input.transpose().matmul(&g)?;
                    grads.linear[*li].bias = g.col_sum();
                    g = g.matmul(&params.weight.transpose())?;
                }
                (NodeKind::Bn(bi), Tape::Bn { tape }) => {
                    let layer = &self.bn[*bi];
                    let bn_grads = match tape.variant {
                        BnVariant::StandardTrain => bn_train_backward(&g, tape, layer)?,
                        BnVariant::DetachedStats => detached_backward(&g, tape, layer)?,
                        BnVariant::FrozenEval => frozen_backward(&g, tape, layer)?,
                        BnVariant::GpreBn => gprebn_backward(&g, tape, layer)?,
                    };
                    grads.bn[*bi].gamma = bn_grads.gamma;
                    grads.bn[*bi].beta = bn_grads.beta;
                    g = bn_grads.input;
                }
                _ => {
                    return Err(Error::InvalidSpec {
                        reason: "tape mismatch: tape kind does not match layer kind".into(),
                    })
                }
            }
        }
        Ok(grads)
    }

    /// Plain SGD step.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64, scope: ParamScope) {
        if scope == ParamScope::All {
            for (params, grad) in self.linears.iter_mut().zip(grads.linear.iter()) {
                for (w, d) in params
                    .weight
                    .data_mut()
                    .iter_mut()
                    .zip(grad.weight.data())
                {
                    *w -= lr * d;
                }
                for (b, d) in params
                    .bias
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.bias.as_slice())
                {
                    *b -= lr * d;
                }
            }
        }
        for (layer, grad) in self.bn.iter_mut().zip(grads.bn.iter()) {
            for (g, d) in layer
                .affine
                .gamma
                .as_mut_slice()
                .iter_mut()
                .zip(grad.gamma.as_slice())
            {
                *g -= lr * d;
            }
            for (b, d) in layer
                .affine
                .beta
                .as_mut_slice()
                .iter_mut()
                .zip(grad.beta.as_slice())
            {
                *b -= lr * d;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    All,
    BnAffineOnly,
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vector,
}

#[derive(Debug, Clone)]
pub struct AffineGrad {
    pub gamma: Vector,
    pub beta: Vector,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub linear: Vec<LinearGrad>,
    pub bn: Vec<AffineGrad>,
}

#[cfg(test)]
mod tests;
