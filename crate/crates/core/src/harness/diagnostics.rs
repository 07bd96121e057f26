//! Mean nodes generated and explored per strategy, recounted from traces.

use std::collections::BTreeMap;

use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::trace::{replay, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyNodes {
    pub strategy: StrategyId,
    pub samples: usize,
    pub mean_generated: f64,
    pub mean_explored: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub rows: Vec<StrategyNodes>,
    /// Percent fewer nodes explored by SSDP than by the no-merge search,
    /// when both are present.
    pub explored_reduction_pct: Option<f64>,
    pub generated_reduction_pct: Option<f64>,
}

impl NodeTable {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<18} {:>8} {:>10} {:>10}\n",
            "strategy", "samples", "generated", "explored"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>8} {:>10.2} {:>10.2}\n",
                r.strategy.name(),
                r.samples,
                r.mean_generated,
                r.mean_explored
            ));
        }
        if let (Some(g), Some(e)) = (self.generated_reduction_pct, self.explored_reduction_pct) {
            out.push_str(&format!("reduction vs parallel_no_merge: generated {g:.1}%, explored {e:.1}%\n"));
        }
        out
    }
}

fn reduction(ours: f64, theirs: f64) -> Option<f64> {
    (theirs > 0.0).then(|| 100.0 * (1.0 - ours / theirs))
}

/// Build the table from `(strategy, generated, explored)` samples.
pub fn node_table(samples: &[(StrategyId, usize, usize)]) -> Result<NodeTable> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("node diagnostics need at least one trace".into()));
    }
    let mut by: BTreeMap<StrategyId, (usize, f64, f64)> = BTreeMap::new();
    for &(s, g, e) in samples {
        let slot = by.entry(s).or_default();
        slot.0 += 1;
        slot.1 += g as f64;
        slot.2 += e as f64;
    }
    let rows: Vec<StrategyNodes> = by
        .into_iter()
        .map(|(strategy, (n, g, e))| StrategyNodes {
            strategy,
            samples: n,
            mean_generated: g / n as f64,
            mean_explored: e / n as f64,
        })
        .collect();
    let find = |s| rows.iter().find(|r| r.strategy == s);
    let (explored_reduction_pct, generated_reduction_pct) =
        match (find(StrategyId::Ssdp), find(StrategyId::ParallelNoMerge)) {
            (Some(a), Some(b)) => (
                reduction(a.mean_explored, b.mean_explored),
                reduction(a.mean_generated, b.mean_generated),
            ),
            _ => (None, None),
        };
    Ok(NodeTable {
        rows,
        explored_reduction_pct,
        generated_reduction_pct,
    })
}

/// Replay every trace, recount its nodes and tabulate per strategy.
pub fn node_diagnostics(traces: &[Trace]) -> Result<NodeTable> {
    let samples = traces
        .iter()
        .map(|t| {
            let r = replay(t)?;
            Ok((t.header.strategy, r.counters.nodes_generated, r.counters.nodes_explored))
        })
        .collect::<Result<Vec<_>>>()?;
    node_table(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_example() {
        let t = node_table(&[
            (StrategyId::Ssdp, 40, 10),
            (StrategyId::Ssdp, 44, 12),
            (StrategyId::ParallelNoMerge, 200, 50),
            (StrategyId::ParallelNoMerge, 216, 54),
        ])
        .unwrap();
        assert_eq!(t.rows[0].mean_explored, 11.0);
        assert_eq!(t.rows[1].mean_explored, 52.0);
        let pct = t.explored_reduction_pct.unwrap();
        assert_eq!(format!("{pct:.1}"), "78.8");
    }

    #[test]
    fn single_strategy_has_no_reduction() {
        let t = node_table(&[(StrategyId::Beam, 5, 3)]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.explored_reduction_pct, None);
        assert!(!t.render().contains("reduction"));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(node_diagnostics(&[]), Err(Error::InvalidInput(_))));
    }
}
