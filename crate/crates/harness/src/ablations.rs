//! The four ablation matrices.
//!
//! A — gradient preserving: optimized variants with and without
//!     cross-instance backpropagation, against the no-adaptation baselines.
//! B — testing running statistics against current-batch statistics, with
//!     and without optimization.
//! C — cumulative versus exponential moving average for the testing track.
//! D — fine-tuned-with-frozen-normalization versus fully trained source
//!     models, crossed with the statistics choice and optimization.

use std::str::FromStr;

use ttbn_core::network::{arch_with_hidden, train_source, Network, TrainConfig};
use ttbn_core::shiftgen::{
    apply_corruption, generate_domains, CorruptionKind, GeneratorSpec, LabeledDataset, ShiftSpec,
};

use crate::config::{ExperimentConfig, TaskConfig};
use crate::error::{HarnessError, Result};
use crate::methods::Method;
use crate::report::{ResultRow, ResultTable};
use crate::runner::{
    derived_seed, parallel_map, run_cell, train_all_reps, TargetCell,
};
use ttbn_core::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationId {
    A,
    B,
    C,
    D,
}

impl FromStr for AblationId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(AblationId::A),
            "B" => Ok(AblationId::B),
            "C" => Ok(AblationId::C),
            "D" => Ok(AblationId::D),
            other => Err(HarnessError::config(
                "ablation",
                format!("unknown ablation '{other}', expected A, B, C, or D"),
            )),
        }
    }
}

impl AblationId {
    /// Methods for the grid-style ablations (A, B, C).
    pub fn methods(&self) -> Vec<Method> {
        match self {
            AblationId::A => vec![
                Method::SourceEval,
                Method::TargetEval,
                Method::FrozenOpt,
                Method::GpreBnSource,
                Method::TentDetached,
                Method::Tent,
            ],
            AblationId::B => vec![
                Method::TargetEval,
                Method::TrsEval,
                Method::GpreBnCurrent,
                Method::GpreBnTrs,
                Method::GpreBnTrsEma,
            ],
            AblationId::C => vec![Method::GpreBnTrs, Method::GpreBnTrsEma],
            AblationId::D => Vec::new(),
        }
    }
}

pub fn cmd_ablate(cfg: &ExperimentConfig, which: AblationId, jobs: usize) -> Result<ResultTable> {
    match which {
        AblationId::A | AblationId::B | AblationId::C => {
            let reps = train_all_reps(cfg, jobs)?;
            crate::runner::run_method_grid(cfg, &which.methods(), &reps, jobs)
        }
        AblationId::D => ablation_d(cfg, jobs),
    }
}

/// Generator parameters for ablation D, borrowed from the configured task.
fn d_generator(cfg: &ExperimentConfig, rep: usize) -> Result<GeneratorSpec> {
    let data_seed = derived_seed(cfg.seed, &[rep as u64, 0xD0]);
    let (num_classes, dim, samples, plane_radius, rest_spread, noise_std) = match &cfg.task {
        TaskConfig::Rotations {
            num_classes,
            dim,
            samples_per_domain,
            plane_radius,
            rest_spread,
            noise_std,
            ..
        }
        | TaskConfig::Corruption {
            num_classes,
            dim,
            samples_per_domain,
            plane_radius,
            rest_spread,
            noise_std,
            ..
        } => (
            *num_classes,
            *dim,
            *samples_per_domain,
            *plane_radius,
            *rest_spread,
            *noise_std,
        ),
        TaskConfig::Files { .. } => {
            return Err(HarnessError::config(
                "task",
                "ablation D needs a generator task, not files",
            ))
        }
    };
    Ok(GeneratorSpec::sample(
        num_classes,
        dim,
        samples,
        data_seed,
        plane_radius,
        rest_spread,
        noise_std,
    )?)
}

struct DRegime {
    label: &'static str,
    checkpoint: ttbn_core::network::Checkpoint,
}

/// One repetition of ablation D: build the two training regimes and the two
/// evaluation targets they are crossed with — a rotation target whose
/// marginal feature statistics barely move (the domain-generalization
/// regime) and a scale corruption that shifts means and variances together
/// (the robustness regime).
fn d_regimes(cfg: &ExperimentConfig, rep: usize) -> Result<(Vec<DRegime>, Vec<TargetCell>)> {
    let spec = d_generator(cfg, rep)?;
    // Independent draws: a training split, a held-out draw the corruption
    // perturbs, a broad pre-training base, and a rotated domain.
    let domains = generate_domains(
        &spec,
        &[
            ShiftSpec::rotation_degrees(0.0),
            ShiftSpec::rotation_degrees(0.0),
            ShiftSpec::rotation_degrees(0.0),
            ShiftSpec::rotation_degrees(45.0),
        ],
    )?;
    let clean_train = &domains[1];
    let eval_base = &domains[2];
    let broad_base = &domains[3];

    let targets = vec![
        TargetCell {
            label: "rotation".into(),
            severity: None,
            data: domains[4].clone(),
        },
        TargetCell {
            label: "gaussian-noise".into(),
            severity: Some(3),
            data: apply_corruption(
                eval_base,
                CorruptionKind::GaussianNoise,
                3,
                Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xDB])),
            )?,
        },
        TargetCell {
            label: "scaling".into(),
            severity: Some(4),
            data: apply_corruption(
                eval_base,
                CorruptionKind::Scaling,
                4,
                Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xD7])),
            )?,
        },
    ];

    // Broad pre-training mixture: strongly perturbed copies only, so the
    // frozen statistics the fine-tune inherits sit far from both the narrow
    // source and any realistic target batch.
    let scaled = apply_corruption(
        broad_base,
        CorruptionKind::Scaling,
        5,
        Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xD1])),
    )?;
    let double_scaled = apply_corruption(
        &scaled,
        CorruptionKind::Scaling,
        5,
        Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xDA])),
    )?;
    let noisy = apply_corruption(
        broad_base,
        CorruptionKind::GaussianNoise,
        5,
        Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xD2])),
    )?;
    let impulsive = apply_corruption(
        broad_base,
        CorruptionKind::ImpulseNoise,
        4,
        Rng::new(derived_seed(cfg.seed, &[rep as u64, 0xD3])),
    )?;
    let broad = LabeledDataset::concat(
        &[&scaled, &double_scaled, &noisy, &impulsive],
        "broad-pretrain",
    )?;

    let arch = arch_with_hidden(spec.dim, &cfg.model.hidden, spec.num_classes);

    // Regime 1: fully trained on the narrow source, statistics live.
    let mut full_net = Network::with_seed(
        &arch,
        derived_seed(cfg.seed, &[rep as u64, 0xD4]),
    )?;
    let full = train_source(
        &mut full_net,
        clean_train,
        &TrainConfig {
            epochs: cfg.model.epochs,
            lr: cfg.model.lr,
            batch_size: cfg.model.batch_size,
            seed: derived_seed(cfg.seed, &[rep as u64, 0xD5]),
            frozen_bn: false,
        },
        None,
    )?;

    // Regime 2: pre-train on the broad mixture, then fine-tune on the
    // narrow source with the normalization layers frozen at the broad
    // statistics.
    let mut ft_net = Network::with_seed(
        &arch,
        derived_seed(cfg.seed, &[rep as u64, 0xD4]),
    )?;
    train_source(
        &mut ft_net,
        &broad,
        &TrainConfig {
            epochs: cfg.model.epochs,
            lr: cfg.model.lr,
            batch_size: cfg.model.batch_size,
            seed: derived_seed(cfg.seed, &[rep as u64, 0xD6]),
            frozen_bn: false,
        },
        None,
    )?;
    let fine_tuned = train_source(
        &mut ft_net,
        clean_train,
        &TrainConfig {
            epochs: cfg.model.epochs,
            lr: cfg.model.lr,
            batch_size: cfg.model.batch_size,
            seed: derived_seed(cfg.seed, &[rep as u64, 0xD8]),
            frozen_bn: true,
        },
        None,
    )?;

    Ok((
        vec![
            DRegime {
                label: "full-train",
                checkpoint: full.checkpoint,
            },
            DRegime {
                label: "fine-tuned",
                checkpoint: fine_tuned.checkpoint,
            },
        ],
        targets,
    ))
}

/// Source-statistics and target-statistics cells, with and without entropy
/// minimization, for both regimes.
fn ablation_d(cfg: &ExperimentConfig, jobs: usize) -> Result<ResultTable> {
    let reps: Vec<usize> = (0..cfg.repetitions).collect();
    let prepared = parallel_map(&reps, jobs, |&rep| d_regimes(cfg, rep))?;

    let methods = [
        Method::SourceEval,
        Method::TargetEval,
        Method::FrozenOpt,
        Method::Tent,
    ];
    let mut cells: Vec<(usize, usize, usize, Method)> = Vec::new();
    for rep in 0..prepared.len() {
        for regime in 0..prepared[rep].0.len() {
            for target in 0..prepared[rep].1.len() {
                for &method in &methods {
                    cells.push((rep, regime, target, method));
                }
            }
        }
    }
    let rows: Vec<ResultRow> = parallel_map(&cells, jobs, |&(rep, regime, target, method)| {
        let (regimes, targets) = &prepared[rep];
        let mut result = run_cell(
            &regimes[regime].checkpoint,
            &targets[target],
            method,
            &cfg.adaptation,
            rep as u64,
        )?;
        result.row.method = format!("{}/{}", regimes[regime].label, method.label());
        Ok(result.row)
    })?;
    Ok(ResultTable::from_rows(rows))
}
