//! τ sweeps and their accuracy/time Pareto front.

use serde::{Deserialize, Serialize};

use super::{ensure_writable, execute, write_csv, ExperimentSpec};
use crate::config::Config;
use crate::error::{Error, Result};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub nodes_explored: f64,
    pub pareto: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Indices into `rows` of the Pareto-optimal points, ascending.
    pub pareto: Vec<usize>,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>6} {:>9} {:>11} {:>10} {:>7}\n",
            "tau", "accuracy", "time_s", "explored", "pareto"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>6.2} {:>9.4} {:>11.3} {:>10.2} {:>7}\n",
                r.tau,
                r.accuracy,
                r.wall_time_s,
                r.nodes_explored,
                if r.pareto { "*" } else { "" }
            ));
        }
        out
    }
}

/// Indices of points not dominated under (maximize accuracy, minimize time).
///
/// Sorts by time and sweeps once; equal points are all kept.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(a.cmp(&b)));
    let mut front = Vec::new();
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let time = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].1 == time {
            j += 1;
        }
        let group = &order[i..j];
        let group_best = group.iter().map(|&g| points[g].0).fold(f64::NEG_INFINITY, f64::max);
        if group_best > best_before {
            front.extend(group.iter().copied().filter(|&g| points[g].0 == group_best));
            best_before = group_best;
        }
        i = j;
    }
    front.sort();
    front
}

/// Run `spec` once per τ and report mean accuracy, time and explored nodes.
///
/// Writes `sweep.csv` into the spec's output directory.
pub fn tau_sweep(spec: &ExperimentSpec, taus: &[f64]) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::InvalidInput("tau sweep needs at least one tau".into()));
    }
    spec.validate()?;
    ensure_writable(&spec.output_dir)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let run = ExperimentSpec {
            config: Config {
                tau,
                ..spec.config.clone()
            },
            ..spec.clone()
        };
        let records = execute(&run)?;
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&super::RunRow) -> f64| records.iter().map(|r| f(&r.row)).sum::<f64>() / n;
        rows.push(SweepRow {
            tau,
            accuracy: mean(&|r| r.accuracy),
            wall_time_s: mean(&|r| r.wall_time_s),
            nodes_explored: mean(&|r| r.nodes_explored as f64),
            pareto: false,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.accuracy, r.wall_time_s)).collect();
    let pareto = pareto_front(&points);
    for &i in &pareto {
        rows[i].pareto = true;
    }
    write_csv(&spec.output_dir.join(SWEEP_FILE), &rows)?;
    Ok(SweepReport { rows, pareto })
}

/// The grid 0.00, 0.05, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}
