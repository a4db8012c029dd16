//! Experiment orchestration: builds the per-repetition task data, trains
//! checkpoints, and runs (method x target x seed) adaptation cells.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ttbn_core::adaptation::{run_adaptation, StreamBatch};
use ttbn_core::network::{
    accuracy, arch_with_hidden, save_checkpoint, train_source, Checkpoint, EpochRecord, Network,
    TrainConfig,
};
use ttbn_core::numerics::Rng;
use ttbn_core::shiftgen::{
    apply_corruption, generate_domains, load_binary, load_csv, CsvSchema, GeneratorSpec,
    LabeledDataset, ShiftSpec,
};

use crate::config::{ExperimentConfig, FileFormat, TaskConfig};
use crate::error::{HarnessError, Result};
use crate::methods::{Method, DEFAULT_METHODS};
use crate::report::{ResultRow, ResultTable};

/// Deterministic seed derivation: one master seed fans out by tag path.
pub fn derived_seed(master: u64, tags: &[u64]) -> u64 {
    let mut rng = Rng::new(master);
    for &tag in tags {
        rng = rng.split(tag);
    }
    rng.next_u64()
}

const TAG_DATA: u64 = 0xDA;
const TAG_SPLIT: u64 = 0x51;
const TAG_INIT: u64 = 0x11;
const TAG_TRAIN: u64 = 0x73;
const TAG_CORRUPT: u64 = 0xC0;

/// One adaptation target: a labeled dataset plus its grid coordinates.
#[derive(Debug, Clone)]
pub struct TargetCell {
    pub label: String,
    pub severity: Option<u8>,
    pub data: LabeledDataset,
}

/// Everything one repetition trains and adapts on.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub num_classes: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub targets: Vec<TargetCell>,
}

/// Build the datasets for one repetition. Every repetition draws fresh data
/// from a seed derived from the master seed and the repetition index.
pub fn build_task(cfg: &ExperimentConfig, rep: usize) -> Result<TaskData> {
    let data_seed = derived_seed(cfg.seed, &[rep as u64, TAG_DATA]);
    match &cfg.task {
        TaskConfig::Rotations {
            num_classes,
            dim,
            samples_per_domain,
            rotations_deg,
            target_domain,
            plane_radius,
            rest_spread,
            noise_std,
        } => {
            let spec = GeneratorSpec::sample(
                *num_classes,
                *dim,
                *samples_per_domain,
                data_seed,
                *plane_radius,
                *rest_spread,
                *noise_std,
            )?;
            let shifts: Vec<ShiftSpec> = rotations_deg
                .iter()
                .map(|&deg| ShiftSpec::rotation_degrees(deg))
                .collect();
            let domains = generate_domains(&spec, &shifts)?;
            // domains[0] is the unshifted base draw; domains[1..] carry the
            // configured rotations, one fresh draw each.
            let rotated = &domains[1..];
            let target = rotated[*target_domain].clone();
            let pool: Vec<&LabeledDataset> = rotated
                .iter()
                .enumerate()
                .filter(|(i, _)| i != target_domain)
                .map(|(_, d)| d)
                .collect();
            let pooled = LabeledDataset::concat(&pool, "source-pool")?;
            let mut split_rng = Rng::new(derived_seed(cfg.seed, &[rep as u64, TAG_SPLIT]));
            let (val, train) = pooled.split(0.1, &mut split_rng);
            Ok(TaskData {
                num_classes: *num_classes,
                train,
                val,
                targets: vec![TargetCell {
                    label: format!("domain-{target_domain}"),
                    severity: None,
                    data: target,
                }],
            })
        }
        TaskConfig::Corruption {
            num_classes,
            dim,
            samples_per_domain,
            kinds,
            severities,
            plane_radius,
            rest_spread,
            noise_std,
        } => {
            let spec = GeneratorSpec::sample(
                *num_classes,
                *dim,
                *samples_per_domain,
                data_seed,
                *plane_radius,
                *rest_spread,
                *noise_std,
            )?;
            // Two identity shifts: a training draw and an independent clean
            // draw that the corruptions perturb.
            let domains = generate_domains(
                &spec,
                &[
                    ShiftSpec::rotation_degrees(0.0),
                    ShiftSpec::rotation_degrees(0.0),
                ],
            )?;
            let clean_target = &domains[2];
            let mut targets = Vec::new();
            for (ki, kind) in kinds.iter().enumerate() {
                for &severity in severities {
                    let rng = Rng::new(derived_seed(
                        cfg.seed,
                        &[rep as u64, TAG_CORRUPT, ki as u64, severity as u64],
                    ));
                    targets.push(TargetCell {
                        label: kind.label().to_string(),
                        severity: Some(severity),
                        data: apply_corruption(clean_target, *kind, severity, rng)?,
                    });
                }
            }
            let mut split_rng = Rng::new(derived_seed(cfg.seed, &[rep as u64, TAG_SPLIT]));
            let (val, train) = domains[1].split(0.1, &mut split_rng);
            Ok(TaskData {
                num_classes: *num_classes,
                train,
                val,
                targets,
            })
        }
        TaskConfig::Files {
            train,
            target,
            num_classes,
            format,
        } => {
            let load = |path: &Path| -> Result<LabeledDataset> {
                let data = match format {
                    FileFormat::Csv => load_csv(
                        path,
                        &CsvSchema {
                            feature_dim: None,
                            num_classes: *num_classes,
                        },
                    )?,
                    FileFormat::Binary => load_binary(path)?,
                };
                data.validate(*num_classes)?;
                Ok(data)
            };
            let train_parts: Vec<LabeledDataset> =
                train.iter().map(|p| load(p)).collect::<Result<_>>()?;
            let refs: Vec<&LabeledDataset> = train_parts.iter().collect();
            let pooled = LabeledDataset::concat(&refs, "train-files")?;
            let mut split_rng = Rng::new(derived_seed(cfg.seed, &[rep as u64, TAG_SPLIT]));
            let (val, train_set) = pooled.split(0.1, &mut split_rng);
            let targets = target
                .iter()
                .map(|p| {
                    Ok(TargetCell {
                        label: p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| p.display().to_string()),
                        severity: None,
                        data: load(p)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(TaskData {
                num_classes: *num_classes,
                train: train_set,
                val,
                targets,
            })
        }
    }
}

/// Train one repetition's checkpoint on the task's training split.
pub fn train_for_rep(
    cfg: &ExperimentConfig,
    rep: usize,
    task: &TaskData,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let arch = arch_with_hidden(task.train.dim(), &cfg.model.hidden, task.num_classes);
    let mut net = Network::with_seed(&arch, derived_seed(cfg.seed, &[rep as u64, TAG_INIT]))?;
    let train_cfg = TrainConfig {
        epochs: cfg.model.epochs,
        lr: cfg.model.lr,
        batch_size: cfg.model.batch_size,
        seed: derived_seed(cfg.seed, &[rep as u64, TAG_TRAIN]),
        frozen_bn: cfg.model.frozen_bn,
    };
    let outcome = train_source(&mut net, &task.train, &train_cfg, progress)?;
    Ok((outcome.checkpoint, outcome.log))
}

/// Result of one adaptation cell, with the raw affine trajectory kept for
/// identity checks between equivalent methods.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: ResultRow,
    pub final_affines: Vec<f64>,
}

fn checkpoint_affines(checkpoint: &Checkpoint) -> Vec<f64> {
    checkpoint
        .bn
        .iter()
        .flat_map(|snap| {
            snap.gamma
                .as_slice()
                .iter()
                .chain(snap.beta.as_slice())
                .copied()
        })
        .collect()
}

/// Run one (method, target) cell against a trained checkpoint.
pub fn run_cell(
    checkpoint: &Checkpoint,
    target: &TargetCell,
    method: Method,
    base: &crate::config::AdaptationConfig,
    seed: u64,
) -> Result<CellResult> {
    let adapt_cfg = method.adapt_config(base);
    let stream: Vec<StreamBatch> = target
        .data
        .into_batches(base.batch_size)
        .into_iter()
        .map(|(features, labels)| StreamBatch::labeled(features, labels))
        .collect();
    let log = run_adaptation(checkpoint, &stream, &adapt_cfg)?;
    let loaded = checkpoint_affines(checkpoint);
    let affine_delta_norm = log
        .final_affines
        .iter()
        .zip(loaded.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(CellResult {
        row: ResultRow {
            method: method.label().to_string(),
            target: target.label.clone(),
            severity: target.severity,
            seed,
            accuracy: log.overall_accuracy.unwrap_or(0.0),
            mean_entropy: log.mean_entropy(),
            affine_delta_norm,
            batches: log.records.len(),
        },
        final_affines: log.final_affines,
    })
}

/// Deterministic parallel map: results come back in input order no matter
/// how the worker threads interleave.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= items.len() {
                    break;
                }
                let result = f(&items[index]);
                slots.lock().expect("worker panicked")[index] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|slot| slot.expect("all items visited"))
        .collect()
}

/// Train every repetition's checkpoint (parallel over repetitions).
pub fn train_all_reps(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<(TaskData, Checkpoint)>> {
    let reps: Vec<usize> = (0..cfg.repetitions).collect();
    parallel_map(&reps, jobs, |&rep| {
        let task = build_task(cfg, rep)?;
        let (checkpoint, _) = train_for_rep(cfg, rep, &task, None)?;
        Ok((task, checkpoint))
    })
}

/// Run a method grid over every (repetition, target) pair and assemble the
/// result table.
pub fn run_method_grid(
    cfg: &ExperimentConfig,
    methods: &[Method],
    reps: &[(TaskData, Checkpoint)],
    jobs: usize,
) -> Result<ResultTable> {
    let mut cells: Vec<(usize, usize, Method)> = Vec::new();
    for rep in 0..reps.len() {
        for target in 0..reps[rep].0.targets.len() {
            for &method in methods {
                cells.push((rep, target, method));
            }
        }
    }
    let results = parallel_map(&cells, jobs, |&(rep, target, method)| {
        let (task, checkpoint) = &reps[rep];
        run_cell(
            checkpoint,
            &task.targets[target],
            method,
            &cfg.adaptation,
            rep as u64,
        )
    })?;
    Ok(ResultTable::from_rows(
        results.into_iter().map(|c| c.row).collect(),
    ))
}

pub fn resolve_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    if cfg.methods.is_empty() {
        DEFAULT_METHODS.to_vec()
    } else {
        cfg.methods
            .iter()
            .filter_map(|label| Method::from_label(label))
            .collect()
    }
}

// ── Commands ───────────────────────────────────────────────────────

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Train the repetition-0 checkpoint and persist it with its training log.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainArtifacts> {
    let task = build_task(cfg, 0)?;
    let (checkpoint, log) = train_for_rep(cfg, 0, &task, progress)?;
    std::fs::create_dir_all(out_dir).map_err(|e| crate::error::io_err(out_dir, e))?;
    save_checkpoint(&checkpoint, &out_dir.join("checkpoint.bin"))?;
    let mut lines = String::new();
    for record in &log {
        lines.push_str(&format!(
            "{{\"epoch\":{},\"loss\":{},\"accuracy\":{}}}\n",
            record.epoch, record.loss, record.accuracy
        ));
    }
    std::fs::write(out_dir.join("train_log.jsonl"), lines)
        .map_err(|e| crate::error::io_err(out_dir, e))?;
    Ok(TrainArtifacts { checkpoint, log })
}

/// Plain inference accuracy of a checkpoint on every target, plus the
/// source validation split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Checkpoint) -> Result<ResultTable> {
    let task = build_task(cfg, 0)?;
    let net = checkpoint.build_network()?;
    let mut rows = Vec::new();
    let mut eval_on = |label: &str, severity: Option<u8>, data: &LabeledDataset| -> Result<()> {
        let probs = net.eval_forward(&data.features)?;
        rows.push(ResultRow {
            method: "source-eval".into(),
            target: label.to_string(),
            severity,
            seed: 0,
            accuracy: accuracy(&probs, &data.labels),
            mean_entropy: ttbn_core::adaptation::entropy_loss(&probs)?,
            affine_delta_norm: 0.0,
            batches: 1,
        });
        Ok(())
    };
    eval_on("source-val", None, &task.val)?;
    for target in &task.targets {
        eval_on(&target.label, target.severity, &target.data)?;
    }
    Ok(ResultTable::from_rows(rows))
}

/// The adaptation method grid over repetitions. A checkpoint override pins
/// the model and requires a single repetition.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    checkpoint_override: Option<Checkpoint>,
    jobs: usize,
) -> Result<ResultTable> {
    let methods = resolve_methods(cfg);
    let reps = match checkpoint_override {
        Some(checkpoint) => {
            if cfg.repetitions != 1 {
                return Err(HarnessError::config(
                    "repetitions",
                    "an explicit checkpoint requires repetitions = 1",
                ));
            }
            vec![(build_task(cfg, 0)?, checkpoint)]
        }
        None => train_all_reps(cfg, jobs)?,
    };
    run_method_grid(cfg, &methods, &reps, jobs)
}
