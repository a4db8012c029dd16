//! Harness integration: CLI exit codes and artifacts, cell/eval
//! consistency, sweep behavior, and report round trips.

use std::path::{Path, PathBuf};
use std::process::Command;

use ttbn_core::network::load_checkpoint;
use ttbn_harness::config::{ExperimentConfig, TaskConfig};
use ttbn_harness::methods::Method;
use ttbn_harness::report::{emit_report, read_table, ResultTable};
use ttbn_harness::runner::{build_task, cmd_adapt, cmd_eval, cmd_train, run_cell, train_for_rep};
use ttbn_harness::sweep::cmd_sweep;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ttbn"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ttbn-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config_json(out_dir: &Path, reps: usize) -> String {
    format!(
        r#"{{
  "seed": 11,
  "repetitions": {reps},
  "output_dir": "{}",
  "task": {{ "kind": "rotations", "samples_per_domain": 600 }},
  "model": {{ "epochs": 15 }},
  "adaptation": {{}},
  "methods": ["source-eval", "target-eval", "tent", "gprebn-trs"]
}}"#,
        out_dir.display()
    )
}

fn small_config(out_dir: &Path, reps: usize) -> ExperimentConfig {
    let path = out_dir.join("config.json");
    std::fs::write(&path, small_config_json(out_dir, reps)).unwrap();
    ExperimentConfig::from_file(&path).unwrap()
}

// ── Exit codes ─────────────────────────────────────────────────────

#[test]
fn missing_config_exits_with_config_code() {
    let output = bin().args(["adapt"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--config"), "{stderr}");
}

#[test]
fn invalid_config_field_exits_with_config_code_and_field_path() {
    let dir = temp_dir("badcfg");
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{ "task": { "kind": "rotations", "target_domain": 9 } }"#,
    )
    .unwrap();
    let output = bin()
        .args(["adapt", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("task.target_domain"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unreadable_checkpoint_exits_with_io_code() {
    let dir = temp_dir("noio");
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, small_config_json(&dir, 1)).unwrap();
    let output = bin()
        .args([
            "eval",
            "--config",
            cfg_path.to_str().unwrap(),
            "--checkpoint",
            dir.join("missing.bin").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_ablation_exits_with_config_code() {
    let dir = temp_dir("badab");
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, small_config_json(&dir, 1)).unwrap();
    let output = bin()
        .args([
            "ablate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--which",
            "Z",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

// ── Training artifacts ─────────────────────────────────────────────

#[test]
fn train_writes_checkpoint_and_log_into_created_dir() {
    let dir = temp_dir("train");
    let out = dir.join("nested").join("out"); // does not exist yet
    let mut cfg = small_config(&dir, 1);
    cfg.output_dir = out.clone();
    // Well-separated blobs: a single clean domain with low noise trains to
    // high accuracy. (The rotated-domain default trades separability for
    // adaptation headroom, so it is not the fixture here.)
    cfg.task = TaskConfig::Corruption {
        num_classes: 7,
        dim: 16,
        samples_per_domain: 1000,
        kinds: vec![ttbn_core::shiftgen::CorruptionKind::GaussianNoise],
        severities: vec![1],
        plane_radius: 2.5,
        rest_spread: 0.5,
        noise_std: 0.6,
    };
    cfg.model.epochs = 40;
    let artifacts = cmd_train(&cfg, &out, None).unwrap();
    assert!(out.join("checkpoint.bin").exists());
    assert!(out.join("train_log.jsonl").exists());

    // Source-validation accuracy on the held-out split.
    let eval_table = cmd_eval(&cfg, &artifacts.checkpoint).unwrap();
    let val_acc = eval_table
        .rows
        .iter()
        .find(|r| r.target == "source-val")
        .unwrap()
        .accuracy;
    assert!(val_acc >= 0.95, "source-val accuracy {val_acc}");

    // Reload gives back the same checkpoint bytes.
    let loaded = load_checkpoint(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(loaded.to_bytes(), artifacts.checkpoint.to_bytes());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = temp_dir("train-rep");
    let cfg = small_config(&dir, 1);
    let task = build_task(&cfg, 0).unwrap();
    let (a, _) = train_for_rep(&cfg, 0, &task, None).unwrap();
    let (b, _) = train_for_rep(&cfg, 0, &task, None).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    std::fs::remove_dir_all(&dir).ok();
}

// ── Cell consistency ───────────────────────────────────────────────

#[test]
fn source_eval_cell_matches_cmd_eval_exactly() {
    let dir = temp_dir("evalcell");
    let cfg = small_config(&dir, 1);
    let task = build_task(&cfg, 0).unwrap();
    let (checkpoint, _) = train_for_rep(&cfg, 0, &task, None).unwrap();

    let eval_table = cmd_eval(&cfg, &checkpoint).unwrap();
    let eval_acc = eval_table
        .rows
        .iter()
        .find(|r| r.target == "domain-3")
        .unwrap()
        .accuracy;
    let cell = run_cell(
        &checkpoint,
        &task.targets[0],
        Method::SourceEval,
        &cfg.adaptation,
        0,
    )
    .unwrap();
    assert_eq!(cell.row.accuracy, eval_acc);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adapt_grid_has_full_row_count_and_helps_over_frozen_baseline() {
    let dir = temp_dir("grid");
    let cfg = small_config(&dir, 3);
    let table = cmd_adapt(&cfg, None, 2).unwrap();
    // methods x targets x severities x seeds.
    assert_eq!(table.rows.len(), 4 * 1 * 1 * 3);
    // Aggregates recomputable from stored rows.
    assert_eq!(table.recompute_aggregates(), table.aggregates);

    // End-to-end direction: adapted dataset-level statistics beat the
    // frozen-statistics baseline on the shifted target.
    let frozen = table.aggregate_for("source-eval", None).unwrap().mean_accuracy;
    let adapted = table.aggregate_for("gprebn-trs", None).unwrap().mean_accuracy;
    assert!(
        adapted > frozen,
        "gprebn-trs {adapted:.4} should beat source-eval {frozen:.4}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adapt_with_checkpoint_override_requires_single_repetition() {
    let dir = temp_dir("override");
    let cfg = small_config(&dir, 2);
    let single = small_config(&temp_dir("override-single"), 1);
    let task = build_task(&single, 0).unwrap();
    let (checkpoint, _) = train_for_rep(&single, 0, &task, None).unwrap();
    let err = cmd_adapt(&cfg, Some(checkpoint), 1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    std::fs::remove_dir_all(&dir).ok();
}

// ── Sweep ──────────────────────────────────────────────────────────

#[test]
fn sweep_single_cell_grid_returns_that_cell() {
    let dir = temp_dir("sweep1");
    let mut cfg = small_config(&dir, 1);
    cfg.sweep.thetas = vec![0.5];
    cfg.sweep.rhos = vec![2.0];
    cfg.sweep.deltas = vec![1];
    let outcome = cmd_sweep(&cfg, None, 1).unwrap();
    assert_eq!(outcome.best.theta, 0.5);
    assert_eq!(outcome.best.rho, 2.0);
    assert_eq!(outcome.best.delta, 1);
    assert_eq!(outcome.table.rows.len(), 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_best_is_at_least_the_zero_rho_cell_and_is_deterministic() {
    let dir = temp_dir("sweep0");
    let mut cfg = small_config(&dir, 1);
    cfg.sweep.thetas = vec![0.5];
    cfg.sweep.rhos = vec![0.0, 2.0, 20.0];
    cfg.sweep.deltas = vec![1];
    let outcome = cmd_sweep(&cfg, None, 2).unwrap();
    let zero_rho = outcome
        .table
        .rows
        .iter()
        .find(|r| r.method.contains("rho0-"))
        .unwrap()
        .accuracy;
    assert!(outcome.best.accuracy >= zero_rho);

    let again = cmd_sweep(&cfg, None, 2).unwrap();
    assert_eq!(outcome.best, again.best);
    assert_eq!(outcome.table, again.table);
    std::fs::remove_dir_all(&dir).ok();
}

// ── Reports ────────────────────────────────────────────────────────

#[test]
fn empty_table_report_succeeds_via_cli() {
    let dir = temp_dir("empty");
    let table = ResultTable::from_rows(Vec::new());
    emit_report(&table, &dir, "empty").unwrap();
    let output = bin()
        .args([
            "report",
            "--table",
            dir.join("empty.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn json_reingestion_reproduces_aggregates_bitwise() {
    let dir = temp_dir("reingest");
    let cfg = small_config(&dir, 2);
    let table = cmd_adapt(&cfg, None, 2).unwrap();
    emit_report(&table, &dir, "results").unwrap();
    let back = read_table(&dir.join("results.json")).unwrap();
    assert_eq!(back, table);
    for (a, b) in table.aggregates.iter().zip(back.aggregates.iter()) {
        assert_eq!(a.mean_accuracy.to_bits(), b.mean_accuracy.to_bits());
        assert_eq!(a.std_accuracy.to_bits(), b.std_accuracy.to_bits());
    }
    // CSV rows match JSON records.
    let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + table.rows.len());
    std::fs::remove_dir_all(&dir).ok();
}
