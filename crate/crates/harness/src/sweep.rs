//! Hyper-parameter sweep: a theta x rho x delta grid scored by adaptation
//! accuracy on the held-out source-validation split (target labels are
//! never consulted).

use serde::{Deserialize, Serialize};

use ttbn_core::network::Checkpoint;

use crate::config::{AdaptationConfig, ExperimentConfig};
use crate::error::Result;
use crate::methods::Method;
use crate::report::{ResultRow, ResultTable};
use crate::runner::{build_task, parallel_map, run_cell, train_for_rep, TargetCell};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub theta: f64,
    pub rho: f64,
    pub delta: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best: GridCell,
    pub table: ResultTable,
}

fn cell_label(theta: f64, rho: f64, delta: usize) -> String {
    format!("theta{theta}-rho{rho}-delta{delta}")
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    checkpoint_override: Option<Checkpoint>,
    jobs: usize,
) -> Result<SweepOutcome> {
    let task = build_task(cfg, 0)?;
    let checkpoint = match checkpoint_override {
        Some(c) => c,
        None => train_for_rep(cfg, 0, &task, None)?.0,
    };
    let val_target = TargetCell {
        label: "source-val".into(),
        severity: None,
        data: task.val.clone(),
    };

    let mut grid: Vec<(f64, f64, usize)> = Vec::new();
    let mut thetas = cfg.sweep.thetas.clone();
    let mut rhos = cfg.sweep.rhos.clone();
    let mut deltas = cfg.sweep.deltas.clone();
    thetas.sort_by(f64::total_cmp);
    rhos.sort_by(f64::total_cmp);
    deltas.sort_unstable();
    for &theta in &thetas {
        for &rho in &rhos {
            for &delta in &deltas {
                grid.push((theta, rho, delta));
            }
        }
    }

    let results = parallel_map(&grid, jobs, |&(theta, rho, delta)| {
        let base = AdaptationConfig {
            theta,
            rho,
            delta,
            ..cfg.adaptation.clone()
        };
        let cell = run_cell(&checkpoint, &val_target, Method::GpreBnMix, &base, 0)?;
        Ok(GridCell {
            theta,
            rho,
            delta,
            accuracy: cell.row.accuracy,
        })
    })?;

    // Deterministic argmax: the first strictly-better cell in grid order.
    let mut best = results[0].clone();
    for cell in &results[1..] {
        if cell.accuracy > best.accuracy {
            best = cell.clone();
        }
    }

    let rows = results
        .iter()
        .map(|cell| ResultRow {
            method: cell_label(cell.theta, cell.rho, cell.delta),
            target: "source-val".into(),
            severity: None,
            seed: 0,
            accuracy: cell.accuracy,
            mean_entropy: 0.0,
            affine_delta_norm: 0.0,
            batches: 0,
        })
        .collect();
    Ok(SweepOutcome {
        best,
        table: ResultTable::from_rows(rows),
    })
}
