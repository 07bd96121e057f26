//! Comparison strategies running over the same backends, clock and trace
//! format as the SSDP engine.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::config::{Config, MergeMode};
use crate::error::{Error, Result};
use crate::search::{
    budget_check, expand_and_score, expansion_seed, run_parallel, Budget, RunResult, RunState,
    ScoredChild,
};
use crate::seed;
use crate::trace::{HaltReason, PruneReason};
use crate::tree::{NodeId, NodeState, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Ssdp,
    ParallelNoMerge,
    Mcts,
    BestOfN,
    Beam,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::Ssdp,
        StrategyId::ParallelNoMerge,
        StrategyId::Mcts,
        StrategyId::BestOfN,
        StrategyId::Beam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Ssdp => "ssdp",
            StrategyId::ParallelNoMerge => "parallel_no_merge",
            StrategyId::Mcts => "mcts",
            StrategyId::BestOfN => "best_of_n",
            StrategyId::Beam => "beam",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy {s:?}")))
    }
}

/// Dispatch to the runner for `strategy`.
pub fn run_strategy(
    strategy: StrategyId,
    problem: &str,
    config: &Config,
    backends: &Backends<'_>,
) -> RunResult {
    match strategy {
        StrategyId::Ssdp => run_parallel(problem, config, backends, StrategyId::Ssdp),
        StrategyId::ParallelNoMerge => run_parallel_no_merge(problem, config, backends),
        StrategyId::Mcts => run_mcts(problem, config, backends),
        StrategyId::BestOfN => run_best_of_n(problem, config, backends),
        StrategyId::Beam => run_beam(problem, config, backends),
    }
}

/// The SSDP engine with merging switched off.
pub fn run_parallel_no_merge(problem: &str, config: &Config, backends: &Backends<'_>) -> RunResult {
    let config = Config {
        merge_mode: MergeMode::Disabled,
        ..config.clone()
    };
    run_parallel(problem, &config, backends, StrategyId::ParallelNoMerge)
}

fn greedy_pick(children: &[ScoredChild]) -> Option<usize> {
    (0..children.len()).min_by(|&a, &b| children[b].phi.total_cmp(&children[a].phi).then(a.cmp(&b)))
}

struct Rollout {
    /// Per step: every sampled child, and the index of the kept one.
    steps: Vec<(Vec<ScoredChild>, usize)>,
}

fn sample_rollout(
    problem: &str,
    index: usize,
    config: &Config,
    backends: &Backends<'_>,
) -> Result<Rollout> {
    let mut path = vec![problem.to_owned()];
    let mut steps = Vec::new();
    loop {
        let refs: Vec<&str> = path.iter().map(String::as_str).collect();
        let seed = seed::mix(expansion_seed(config.seed, &refs), index as u64);
        let children = expand_and_score(backends, &refs, config.b, seed)?;
        let Some(kept) = greedy_pick(&children) else {
            return Err(Error::Backend(crate::error::BackendError::Protocol(
                "generator returned no candidates".into(),
            )));
        };
        let terminal = children[kept].candidate.terminal;
        path.push(children[kept].candidate.text.clone());
        steps.push((children, kept));
        if terminal || steps.len() >= config.max_depth {
            return Ok(Rollout { steps });
        }
    }
}

/// `config.bon_n` independent greedy rollouts; the answer is the best terminal.
///
/// Each step samples `b` continuations and keeps the highest-scoring one, so
/// only kept steps enter the tree. A rollout that reaches `max_depth` without
/// a terminal step is discarded.
pub fn run_best_of_n(problem: &str, config: &Config, backends: &Backends<'_>) -> RunResult {
    let mut run = RunState::start(problem, config, StrategyId::BestOfN)?;
    if config.bon_n == 0 {
        return Err(run.fail(Error::InvalidInput("best-of-n needs n >= 1".into())));
    }
    let rollouts: Vec<Result<Rollout>> = (0..config.bon_n)
        .into_par_iter()
        .map(|i| sample_rollout(problem, i, config, backends))
        .collect();
    for (i, rollout) in rollouts.into_iter().enumerate() {
        let applied = rollout.and_then(|r| apply_rollout(&mut run, i + 1, r));
        if let Err(e) = applied {
            return Err(run.fail(e));
        }
    }
    Ok(run.finish(StrategyId::BestOfN, config.bon_n, HaltReason::Completed))
}

fn apply_rollout(run: &mut RunState, iteration: usize, rollout: Rollout) -> Result<()> {
    let mut cursor = NodeId::ROOT;
    for (children, kept) in &rollout.steps {
        for c in children {
            run.clock.charge(c.candidate.cost);
            run.clock.charge(c.score_cost);
        }
        if run.tree.nodes()[cursor.index()].state == NodeState::Frontier {
            run.expand(iteration, cursor, None)?;
        }
        let child = &children[*kept];
        cursor = run.add_scored_child(iteration, cursor, &child.candidate, child.phi, child.candidate.terminal)?;
    }
    if run.tree.nodes()[cursor.index()].state == NodeState::Frontier {
        run.prune(iteration, cursor, PruneReason::MaxDepth, 0.0)?;
    }
    Ok(())
}

/// Depth-synchronous beam search keeping the `config.beam_width` best nodes
/// by φ (lowest id on ties) at each depth.
pub fn run_beam(problem: &str, config: &Config, backends: &Backends<'_>) -> RunResult {
    let mut run = RunState::start(problem, config, StrategyId::Beam)?;
    if config.beam_width == 0 {
        return Err(run.fail(Error::InvalidInput("beam width must be >= 1".into())));
    }
    match beam_loop(&mut run, config, backends) {
        Ok((levels, halt)) => Ok(run.finish(StrategyId::Beam, levels, halt)),
        Err(e) => Err(run.fail(e)),
    }
}

fn beam_loop(run: &mut RunState, config: &Config, backends: &Backends<'_>) -> Result<(usize, HaltReason)> {
    let mut beam = vec![NodeId::ROOT];
    let mut levels = 0;
    loop {
        let open: Vec<NodeId> = beam
            .iter()
            .copied()
            .filter(|&id| run.tree.nodes()[id.index()].state == NodeState::Frontier)
            .collect();
        if open.is_empty() {
            return Ok((levels, HaltReason::Completed));
        }
        if levels >= config.max_depth {
            for id in open {
                run.prune(levels, id, PruneReason::MaxDepth, 0.0)?;
            }
            return Ok((levels, HaltReason::DepthLimit));
        }
        levels += 1;

        let tree = &run.tree;
        let expansions: Vec<Result<Vec<ScoredChild>>> = open
            .par_iter()
            .map(|&id| {
                let path = tree.path_texts(id)?;
                expand_and_score(backends, &path, config.b, expansion_seed(config.seed, &path))
            })
            .collect();

        let mut pool: Vec<NodeId> = beam
            .iter()
            .copied()
            .filter(|&id| run.tree.nodes()[id.index()].state == NodeState::Terminal)
            .collect();
        let mut fresh = Vec::new();
        for (&parent, children) in open.iter().zip(expansions) {
            let children = children?;
            for c in &children {
                run.clock.charge(c.candidate.cost);
            }
            run.expand(levels, parent, None)?;
            for c in &children {
                run.clock.charge(c.score_cost);
                let id = run.add_scored_child(levels, parent, &c.candidate, c.phi, c.candidate.terminal)?;
                fresh.push(id);
            }
        }
        pool.extend(&fresh);
        beam = top_by_phi(&run.tree, pool, config.beam_width);
        for id in fresh {
            if !beam.contains(&id) && run.tree.nodes()[id.index()].state == NodeState::Frontier {
                run.prune(levels, id, PruneReason::BeamCut, 0.0)?;
            }
        }
    }
}

fn top_by_phi(tree: &SearchTree, mut ids: Vec<NodeId>, width: usize) -> Vec<NodeId> {
    ids.sort_by(|&a, &b| {
        let (pa, pb) = (tree.nodes()[a.index()].phi, tree.nodes()[b.index()].phi);
        pb.total_cmp(&pa).then(a.cmp(&b))
    });
    ids.truncate(width);
    ids.sort();
    ids
}

/// Sequential UCB tree search: descend to one leaf per iteration, expand it
/// with `b` children and backpropagate the best child's φ.
///
/// Reaching an existing terminal backpropagates that terminal's φ again.
pub fn run_mcts(problem: &str, config: &Config, backends: &Backends<'_>) -> RunResult {
    let mut run = RunState::start(problem, config, StrategyId::Mcts)?;
    match mcts_loop(&mut run, config, backends) {
        Ok((iterations, halt)) => Ok(run.finish(StrategyId::Mcts, iterations, halt)),
        Err(e) => Err(run.fail(e)),
    }
}

/// Nodes whose subtree still holds a frontier or terminal node.
fn live_nodes(tree: &SearchTree) -> Vec<bool> {
    let mut live: Vec<bool> = tree
        .nodes()
        .iter()
        .map(|n| matches!(n.state, NodeState::Frontier | NodeState::Terminal))
        .collect();
    // children always have larger ids than their parent
    for n in tree.nodes().iter().rev() {
        if live[n.id.index()] {
            if let Some(p) = n.parent {
                live[p.index()] = true;
            }
        }
    }
    live
}

fn descend(tree: &SearchTree, w: f64) -> Result<Option<NodeId>> {
    let live = live_nodes(tree);
    if !live[NodeId::ROOT.index()] {
        return Ok(None);
    }
    let mut cursor = NodeId::ROOT;
    loop {
        let node = tree.get(cursor)?;
        if node.state != NodeState::Expanded {
            return Ok(Some(cursor));
        }
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &node.children {
            if !live[c.index()] {
                continue;
            }
            let score = crate::policy::node_ucb(tree, c, w)?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        cursor = best.expect("a live expanded node has a live child").0;
    }
}

fn mcts_loop(run: &mut RunState, config: &Config, backends: &Backends<'_>) -> Result<(usize, HaltReason)> {
    let mut iterations = 0;
    loop {
        if budget_check(run.clock.elapsed(), iterations, config) == Budget::Halt {
            let reason = if iterations >= config.r_max {
                HaltReason::RolloutBudget
            } else {
                HaltReason::TimeBudget
            };
            return Ok((iterations, reason));
        }
        let Some(leaf) = descend(&run.tree, config.w)? else {
            return Ok((iterations, HaltReason::FrontierExhausted));
        };
        iterations += 1;
        let node = &run.tree.nodes()[leaf.index()];
        if node.state == NodeState::Terminal {
            let phi = node.phi;
            run.backprop(iterations, leaf, phi)?;
            continue;
        }
        if node.depth >= config.max_depth {
            run.prune(iterations, leaf, PruneReason::MaxDepth, 0.0)?;
            continue;
        }
        let path = run.tree.path_texts(leaf)?;
        let seed = expansion_seed(config.seed, &path);
        let children = expand_and_score(backends, &path, config.b, seed)?;
        for c in &children {
            run.clock.charge(c.candidate.cost);
        }
        run.expand(iterations, leaf, None)?;
        let mut ids = Vec::with_capacity(children.len());
        for c in &children {
            run.clock.charge(c.score_cost);
            ids.push(run.add_scored_child(iterations, leaf, &c.candidate, c.phi, c.candidate.terminal)?);
        }
        if let Some(best) = greedy_pick(&children) {
            run.backprop(iterations, ids[best], children[best].phi)?;
        }
    }
}
