//! Mode × constraint × K grid of training runs.

use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::{OperatorMode, SkeletonAdjacency};
use crate::basis::ConstraintKind;
use crate::data::Dataset;
use crate::error::Result;

use super::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub modes: Vec<OperatorMode>,
    pub kinds: Vec<ConstraintKind>,
    pub ks: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            modes: OperatorMode::ALL.to_vec(),
            kinds: ConstraintKind::ALL.to_vec(),
            ks: vec![1, 4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    NotApplicable,
    Ok { test_acc: f64, train_acc: f64 },
    Failed { error: String },
}

impl CellOutcome {
    pub fn test_acc(&self) -> Option<f64> {
        match self {
            CellOutcome::Ok { test_acc, .. } => Some(*test_acc),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub mode: OperatorMode,
    pub kind: ConstraintKind,
    pub k: usize,
    pub outcome: CellOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: AblationGrid,
    pub cells: Vec<AblationCell>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl AblationTable {
    pub fn cell(&self, mode: OperatorMode, kind: ConstraintKind, k: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.mode == mode && c.kind == kind && c.k == k)
    }

    fn accs<'a>(&'a self, pred: impl Fn(&AblationCell) -> bool + 'a) -> impl Iterator<Item = f64> + 'a {
        self.cells.iter().filter(move |c| pred(c)).filter_map(|c| c.outcome.test_acc())
    }

    /// Mean test accuracy of one (mode, K) row over the applicable kinds.
    pub fn row_mean(&self, mode: OperatorMode, k: usize) -> Option<f64> {
        mean(self.accs(move |c| c.mode == mode && c.k == k))
    }

    /// Mean over all of a mode's K rows for one kind.
    pub fn mode_kind_mean(&self, mode: OperatorMode, kind: ConstraintKind) -> Option<f64> {
        mean(self.accs(move |c| c.mode == mode && c.kind == kind))
    }

    /// Mean over every applicable cell of a mode.
    pub fn mode_mean(&self, mode: OperatorMode) -> Option<f64> {
        mean(self.accs(move |c| c.mode == mode))
    }

    /// Mean over every mode and K for one kind.
    pub fn kind_mean(&self, kind: ConstraintKind) -> Option<f64> {
        mean(self.accs(move |c| c.kind == kind))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut rows = Vec::new();
        for &mode in &self.grid.modes {
            for &k in &self.grid.ks {
                let cells: serde_json::Map<String, serde_json::Value> = self
                    .grid
                    .kinds
                    .iter()
                    .map(|&kind| {
                        let v = self
                            .cell(mode, kind, k)
                            .map(|c| serde_json::to_value(&c.outcome).expect("outcome serializes"))
                            .unwrap_or(serde_json::Value::Null);
                        (kind.as_str().to_string(), v)
                    })
                    .collect();
                rows.push(serde_json::json!({
                    "mode": mode, "k": k, "cells": cells, "mean": self.row_mean(mode, k),
                }));
            }
            let means: serde_json::Map<String, serde_json::Value> = self
                .grid
                .kinds
                .iter()
                .map(|&kind| (kind.as_str().to_string(), serde_json::json!(self.mode_kind_mean(mode, kind))))
                .collect();
            rows.push(serde_json::json!({
                "mode": mode, "k": "mean", "cells": means, "mean": self.mode_mean(mode),
            }));
        }
        let column_means: serde_json::Map<String, serde_json::Value> = self
            .grid
            .kinds
            .iter()
            .map(|&kind| (kind.as_str().to_string(), serde_json::json!(self.kind_mean(kind))))
            .collect();
        serde_json::json!({
            "metric": "test_macro_accuracy",
            "columns": self.grid.kinds,
            "rows": rows,
            "column_means": column_means,
        })
    }

    /// Fixed-width text table; accuracies in percent, `--` for cells
    /// that do not apply.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "--".to_string(), |a| format!("{:.2}", 100.0 * a));
        let mut out = String::new();
        let _ = write!(out, "{:<6}{:>5}", "mode", "K");
        for kind in &self.grid.kinds {
            let _ = write!(out, "{:>10}", kind.as_str());
        }
        let _ = writeln!(out, "{:>10}", "mean");
        for &mode in &self.grid.modes {
            for &k in &self.grid.ks {
                let _ = write!(out, "{:<6}{:>5}", mode.as_str(), k);
                for &kind in &self.grid.kinds {
                    let text = match self.cell(mode, kind, k).map(|c| &c.outcome) {
                        Some(CellOutcome::Ok { test_acc, .. }) => fmt(Some(*test_acc)),
                        Some(CellOutcome::Failed { .. }) => "failed".to_string(),
                        _ => "--".to_string(),
                    };
                    let _ = write!(out, "{text:>10}");
                }
                let _ = writeln!(out, "{:>10}", fmt(self.row_mean(mode, k)));
            }
            let _ = write!(out, "{:<6}{:>5}", mode.as_str(), "mean");
            for &kind in &self.grid.kinds {
                let _ = write!(out, "{:>10}", fmt(self.mode_kind_mean(mode, kind)));
            }
            let _ = writeln!(out, "{:>10}", fmt(self.mode_mean(mode)));
        }
        out
    }
}

/// Trains every applicable cell of `grid` starting from `base`. Cells that
/// fail are recorded and do not stop the grid.
pub fn run_ablation_grid(
    base: &TrainConfig,
    grid: &AblationGrid,
    skeleton: &SkeletonAdjacency,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<AblationTable> {
    let mut cells = Vec::new();
    for &mode in &grid.modes {
        for &k in &grid.ks {
            for &kind in &grid.kinds {
                let outcome = if kind.validate_for(k).is_err() {
                    CellOutcome::NotApplicable
                } else {
                    let cfg = TrainConfig {
                        mode,
                        k,
                        constraint: kind,
                        metrics_path: None,
                        artifact_path: None,
                        checkpoint_path: None,
                        ..base.clone()
                    };
                    match train(&cfg, skeleton, train_set, Some(test_set), &mut |_| Ok(())) {
                        Ok(run) => {
                            let last = run.metrics.last().expect("at least one epoch");
                            CellOutcome::Ok {
                                test_acc: last.test_acc.unwrap_or(f64::NAN),
                                train_acc: last.train_acc,
                            }
                        }
                        Err(e) => {
                            warn!("cell {mode} {} K={k} failed: {e}", kind.as_str());
                            CellOutcome::Failed { error: e.to_string() }
                        }
                    }
                };
                if let Some(acc) = outcome.test_acc() {
                    info!("cell {mode} {} K={k}: test accuracy {acc:.4}", kind.as_str());
                }
                cells.push(AblationCell { mode, kind, k, outcome });
            }
        }
    }
    Ok(AblationTable {
        grid: grid.clone(),
        cells,
    })
}
