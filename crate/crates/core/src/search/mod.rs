//! The SSDP search loop.
//!
//! Each round selects up to `k` frontier nodes, expands them concurrently,
//! and then applies the results to the tree one parent at a time in
//! ascending id order:
//!
//! 1. expand `b` children and score each one;
//! 2. prune exploration-slot children below the deep-seek threshold;
//! 3. embed the remaining children and merge semantic duplicates;
//! 4. attach the survivors and backpropagate each survivor's score.
//!
//! Thresholds for a round are computed from the reward statistics as they
//! stood when the round began, so buffered concurrent results are applied
//! exactly as a sequential run would apply them.

pub mod gates;

use std::time::Instant;

use rayon::prelude::*;

use crate::backends::{Backends, Candidate};
use crate::baselines::StrategyId;
use crate::config::{ClockMode, Config};
use crate::error::{BackendError, Error, Result};
use crate::merge::{cosine_similarity, merge_and_prune, Embedding};
use crate::policy::{select_frontier, Slot};
use crate::seed;
use crate::trace::{Counters, Event, HaltReason, PruneReason, Recorder, Trace, TraceHeader, TRACE_SCHEMA, TRACE_VERSION};
use crate::tree::{NodeId, NodeState, SearchTree};

pub use gates::{
    budget_check, deep_seek_check, early_stop_check, solution_gate, Budget, DeepSeek, EarlyStop,
    RewardStats, SolutionGate,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub strategy: StrategyId,
    pub nodes_generated: usize,
    pub nodes_explored: usize,
    pub nodes_merged: usize,
    pub nodes_pruned: usize,
    pub rollouts_completed: usize,
    /// Children actually sent to the embedding backend.
    pub embed_calls: usize,
    /// Children that skipped embedding because they were pruned first.
    pub embeds_skipped: usize,
    /// Virtual seconds under a simulated clock, wall seconds otherwise.
    pub wall_time_s: f64,
    pub solutions: Vec<(NodeId, f64)>,
    pub answer: Option<String>,
    pub answer_phi: Option<f64>,
    pub halt: HaltReason,
}

impl RunMetrics {
    pub fn counters(&self) -> Counters {
        Counters {
            nodes_generated: self.nodes_generated,
            nodes_explored: self.nodes_explored,
            nodes_merged: self.nodes_merged,
            rollouts: self.rollouts_completed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub metrics: RunMetrics,
    pub tree: SearchTree,
    pub trace: Trace,
}

/// A run that stopped on an error; `trace` holds the events recorded so far.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: Trace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run {} aborted: {}", self.trace.header.run_id, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type RunResult = std::result::Result<SearchOutcome, Box<RunFailure>>;

pub(crate) enum Clock {
    Simulated { now: f64 },
    Real { start: Instant },
}

impl Clock {
    pub(crate) fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::Simulated => Clock::Simulated { now: 0.0 },
            ClockMode::Real => Clock::Real {
                start: Instant::now(),
            },
        }
    }

    pub(crate) fn charge(&mut self, cost: f64) {
        if let Clock::Simulated { now } = self {
            *now += cost.max(0.0);
        }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        match self {
            Clock::Simulated { now } => *now,
            Clock::Real { start } => start.elapsed().as_secs_f64(),
        }
    }
}

/// Terminal node with the highest φ (lowest id on ties), with its text.
pub fn extract_answer(tree: &SearchTree) -> Option<(NodeId, String, f64)> {
    tree.terminals()
        .iter()
        .map(|&id| &tree.nodes()[id.index()])
        .min_by(|a, b| b.phi.total_cmp(&a.phi).then(a.id.cmp(&b.id)))
        .map(|n| (n.id, n.text.clone(), n.phi))
}

pub(crate) fn run_id(strategy: StrategyId, config: &Config) -> String {
    format!("{}-seed{}", strategy.name(), config.seed)
}

/// Seed handed to the generator when expanding the node at the end of `path`.
pub fn expansion_seed<S: AsRef<str>>(run_seed: u64, path: &[S]) -> u64 {
    seed::mix(run_seed, seed::hash_path(path))
}

/// Mutable state shared by all strategy runners.
pub(crate) struct RunState {
    pub(crate) tree: SearchTree,
    pub(crate) recorder: Recorder,
    pub(crate) clock: Clock,
    pub(crate) header: TraceHeader,
    pub(crate) merged: usize,
    pub(crate) pruned: usize,
    pub(crate) embed_calls: usize,
    pub(crate) embeds_skipped: usize,
}

impl RunState {
    pub(crate) fn start(
        problem: &str,
        config: &Config,
        strategy: StrategyId,
    ) -> std::result::Result<Self, Box<RunFailure>> {
        let run_id = run_id(strategy, config);
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            version: TRACE_VERSION,
            run_id: run_id.clone(),
            strategy,
            clock: config.clock_mode,
            problem: problem.to_owned(),
            config: config.clone(),
        };
        let early = |error| {
            Box::new(RunFailure {
                error,
                trace: Trace {
                    header: header.clone(),
                    events: Vec::new(),
                },
            })
        };
        config.validate().map_err(early)?;
        let tree = SearchTree::new(problem).map_err(early)?;
        let mut state = Self {
            tree,
            recorder: Recorder::new(run_id),
            clock: Clock::new(config.clock_mode),
            header,
            merged: 0,
            pruned: 0,
            embed_calls: 0,
            embeds_skipped: 0,
        };
        state.emit(
            0,
            Event::NodeCreated {
                node: NodeId::ROOT,
                parent: None,
                depth: 0,
                text: problem.to_owned(),
                terminal: false,
                group: None,
            },
        );
        Ok(state)
    }

    pub(crate) fn emit(&mut self, iteration: usize, event: Event) {
        let t = self.clock.elapsed();
        self.recorder.emit(iteration, t, event);
    }

    pub(crate) fn fail(self, error: Error) -> Box<RunFailure> {
        Box::new(RunFailure {
            error,
            trace: self.recorder.finish(self.header),
        })
    }

    pub(crate) fn expand(&mut self, iteration: usize, node: NodeId, slot: Option<Slot>) -> Result<()> {
        self.tree.mark_state(node, NodeState::Expanded)?;
        self.emit(iteration, Event::NodeExpanded { node, slot });
        Ok(())
    }

    /// Attach a scored child; Terminal children are recorded as solutions.
    pub(crate) fn add_scored_child(
        &mut self,
        iteration: usize,
        parent: NodeId,
        candidate: &Candidate,
        phi: f64,
        terminal_now: bool,
    ) -> Result<NodeId> {
        let id = self.tree.add_child(parent, &candidate.text, phi, terminal_now)?;
        let depth = self.tree.nodes()[id.index()].depth;
        self.emit(
            iteration,
            Event::NodeCreated {
                node: id,
                parent: Some(parent),
                depth,
                text: candidate.text.clone(),
                terminal: terminal_now,
                group: candidate.group,
            },
        );
        self.emit(iteration, Event::NodeScored { node: id, phi });
        if terminal_now {
            self.emit(iteration, Event::Solution { node: id, phi });
        }
        Ok(id)
    }

    pub(crate) fn prune(
        &mut self,
        iteration: usize,
        node: NodeId,
        reason: PruneReason,
        threshold: f64,
    ) -> Result<()> {
        self.tree.mark_state(node, reason.state())?;
        self.pruned += 1;
        let phi = self.tree.nodes()[node.index()].phi;
        self.emit(
            iteration,
            Event::NodePruned {
                node,
                reason,
                phi,
                threshold,
            },
        );
        Ok(())
    }

    pub(crate) fn backprop(&mut self, iteration: usize, node: NodeId, reward: f64) -> Result<()> {
        self.tree.backpropagate(node, reward)?;
        self.emit(iteration, Event::Backprop { node, reward });
        Ok(())
    }

    pub(crate) fn finish(mut self, strategy: StrategyId, rollouts: usize, halt: HaltReason) -> SearchOutcome {
        let counters = Counters {
            nodes_generated: self.tree.nodes_generated(),
            nodes_explored: self.tree.nodes_explored(),
            nodes_merged: self.merged,
            rollouts,
        };
        let iteration = rollouts;
        self.emit(
            iteration,
            Event::Halt {
                reason: halt,
                counters,
                embed_calls: self.embed_calls,
                embeds_skipped: self.embeds_skipped,
            },
        );
        let answer = extract_answer(&self.tree);
        let solutions = self
            .tree
            .terminals()
            .iter()
            .map(|&id| (id, self.tree.nodes()[id.index()].phi))
            .collect();
        let metrics = RunMetrics {
            strategy,
            nodes_generated: counters.nodes_generated,
            nodes_explored: counters.nodes_explored,
            nodes_merged: counters.nodes_merged,
            nodes_pruned: self.pruned,
            rollouts_completed: rollouts,
            embed_calls: self.embed_calls,
            embeds_skipped: self.embeds_skipped,
            wall_time_s: self.clock.elapsed(),
            solutions,
            answer_phi: answer.as_ref().map(|a| a.2),
            answer: answer.map(|a| a.1),
            halt,
        };
        SearchOutcome {
            metrics,
            tree: self.tree,
            trace: self.recorder.finish(self.header),
        }
    }
}

/// Backend results for one scored child, computed off the tree.
pub(crate) struct ScoredChild {
    pub(crate) candidate: Candidate,
    pub(crate) phi: f64,
    pub(crate) score_cost: f64,
}

pub(crate) fn check_phi(phi: f64) -> std::result::Result<f64, BackendError> {
    if phi.is_finite() && (0.0..=1.0).contains(&phi) {
        Ok(phi)
    } else {
        Err(BackendError::Protocol(format!("reward {phi} outside [0, 1]")))
    }
}

/// Generate `b` continuations of `path` and score each one.
pub(crate) fn expand_and_score(
    backends: &Backends<'_>,
    path: &[&str],
    b: usize,
    seed: u64,
) -> Result<Vec<ScoredChild>> {
    let candidates = backends.generator.expand(path, b, seed)?;
    candidates
        .into_iter()
        .map(|candidate| {
            let mut child_path = path.to_vec();
            child_path.push(&candidate.text);
            let scored = backends.reward.score(&child_path)?;
            let phi = check_phi(scored.phi)?;
            Ok(ScoredChild {
                candidate,
                phi,
                score_cost: scored.cost,
            })
        })
        .collect()
}

struct ExpandedChild {
    scored: ScoredChild,
    /// Threshold it fell below, if deep-seek pruned it.
    pruned_below: Option<f64>,
    embedding: Option<(Embedding, f64)>,
}

struct Expansion {
    parent: NodeId,
    slot: Slot,
    children: Vec<ExpandedChild>,
}

fn run_expansion(
    tree: &SearchTree,
    parent: NodeId,
    slot: Slot,
    config: &Config,
    backends: &Backends<'_>,
    stats: &RewardStats,
    embed: bool,
) -> Result<Expansion> {
    let path = tree.path_texts(parent)?;
    let seed = expansion_seed(config.seed, &path);
    let scored = expand_and_score(backends, &path, config.b, seed)?;
    let children = scored
        .into_iter()
        .map(|scored| {
            let pruned_below = (slot == Slot::Explore
                && deep_seek_check(scored.phi, stats, config.lambda_ds) == DeepSeek::Prune)
                .then(|| stats.threshold(config.lambda_ds));
            let embedding = if embed && pruned_below.is_none() {
                let raw = backends.embedder.embed(&scored.candidate.text)?;
                Some((Embedding::normalize(raw.values)?, raw.cost))
            } else {
                None
            };
            Ok(ExpandedChild {
                scored,
                pruned_below,
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Expansion {
        parent,
        slot,
        children,
    })
}

/// Run SSDP (or, with merging disabled, the plain parallel search).
pub fn run_search(problem: &str, config: &Config, backends: &Backends<'_>) -> RunResult {
    let strategy = if config.merge_policy().is_some() {
        StrategyId::Ssdp
    } else {
        StrategyId::ParallelNoMerge
    };
    run_parallel(problem, config, backends, strategy)
}

pub(crate) fn run_parallel(
    problem: &str,
    config: &Config,
    backends: &Backends<'_>,
    strategy: StrategyId,
) -> RunResult {
    let mut run = RunState::start(problem, config, strategy)?;
    match parallel_loop(&mut run, config, backends) {
        Ok((rollouts, halt)) => Ok(run.finish(strategy, rollouts, halt)),
        Err(e) => Err(run.fail(e)),
    }
}

fn parallel_loop(run: &mut RunState, config: &Config, backends: &Backends<'_>) -> Result<(usize, HaltReason)> {
    let policy = config.policy();
    let merge = config.merge_policy();
    let mut stats = RewardStats::default();
    let mut rollouts = 0usize;

    loop {
        if budget_check(run.clock.elapsed(), rollouts, config) == Budget::Halt {
            let reason = if rollouts >= config.r_max {
                HaltReason::RolloutBudget
            } else {
                HaltReason::TimeBudget
            };
            return Ok((rollouts, reason));
        }
        if run.tree.frontier().is_empty() {
            return Ok((rollouts, HaltReason::FrontierExhausted));
        }

        let solution_phis: Vec<f64> = run
            .tree
            .terminals()
            .iter()
            .map(|&id| run.tree.nodes()[id.index()].phi)
            .collect();
        let mut selection: Vec<_> = select_frontier(&run.tree, &policy)
            .into_iter()
            .filter(|s| {
                let phi = run.tree.nodes()[s.id.index()].phi;
                solution_gate(phi, &solution_phis, config.t_star) == SolutionGate::Pursue
            })
            .collect();
        if selection.is_empty() {
            return Ok((rollouts, HaltReason::SolutionGate));
        }
        selection.sort_by_key(|s| s.id);
        rollouts += 1;
        let iteration = rollouts;
        let snapshot = stats;

        let mut to_expand = Vec::with_capacity(selection.len());
        for s in selection {
            let phi = run.tree.nodes()[s.id.index()].phi;
            if early_stop_check(phi, &snapshot, config.lambda_es) == EarlyStop::Stop {
                run.prune(iteration, s.id, PruneReason::EarlyStop, snapshot.threshold(config.lambda_es))?;
            } else {
                to_expand.push(s);
            }
        }

        let tree = &run.tree;
        let results: Vec<Result<Expansion>> = to_expand
            .par_iter()
            .map(|s| run_expansion(tree, s.id, s.slot, config, backends, &snapshot, merge.is_some()))
            .collect();

        for result in results {
            let expansion = result?;
            apply_expansion(run, iteration, expansion, merge.as_ref(), &mut stats)?;
        }
    }
}

fn apply_expansion(
    run: &mut RunState,
    iteration: usize,
    expansion: Expansion,
    merge: Option<&crate::merge::MergePolicy>,
    stats: &mut RewardStats,
) -> Result<()> {
    let parent = expansion.parent;
    for child in &expansion.children {
        run.clock.charge(child.scored.candidate.cost);
    }
    run.expand(iteration, parent, Some(expansion.slot))?;

    let mut ids = Vec::with_capacity(expansion.children.len());
    for child in &expansion.children {
        run.clock.charge(child.scored.score_cost);
        let id = run.add_scored_child(iteration, parent, &child.scored.candidate, child.scored.phi, false)?;
        stats.push(child.scored.phi);
        ids.push(id);
    }

    let mut kept = Vec::with_capacity(ids.len());
    for (child, &id) in expansion.children.iter().zip(&ids) {
        if let Some(threshold) = child.pruned_below {
            run.prune(iteration, id, PruneReason::DeepSeek, threshold)?;
        } else {
            kept.push(id);
        }
    }

    let survivors = match merge {
        None => kept,
        Some(policy) => {
            let mut embeddings: Vec<(NodeId, &Embedding)> = Vec::with_capacity(kept.len());
            for (child, &id) in expansion.children.iter().zip(&ids) {
                match &child.embedding {
                    Some((embedding, cost)) => {
                        run.clock.charge(*cost);
                        run.embed_calls += 1;
                        run.tree.set_embedding(id, embedding.clone())?;
                        run.emit(
                            iteration,
                            Event::NodeEmbedded {
                                node: id,
                                embedding: embedding.clone(),
                                centroid: false,
                            },
                        );
                        embeddings.push((id, embedding));
                    }
                    None => run.embeds_skipped += 1,
                }
            }
            let outcome = merge_and_prune(&mut run.tree, &kept, policy)?;
            let embedding_of = |id: NodeId| {
                embeddings
                    .iter()
                    .find(|(n, _)| *n == id)
                    .map(|(_, e)| *e)
                    .expect("every kept child was embedded")
            };
            for cluster in &outcome.clusters {
                let groups = cluster
                    .members
                    .iter()
                    .map(|m| expansion.children[ids.iter().position(|i| i == m).expect("member of batch")].scored.candidate.group)
                    .collect();
                run.emit(
                    iteration,
                    Event::ClusterFormed {
                        parent,
                        members: cluster.members.clone(),
                        representative: cluster.representative,
                        groups,
                    },
                );
                let rep = embedding_of(cluster.representative);
                for &m in &cluster.members {
                    if m != cluster.representative {
                        let similarity = cosine_similarity(embedding_of(m), rep)?;
                        run.merged += 1;
                        run.emit(
                            iteration,
                            Event::NodeMerged {
                                node: m,
                                representative: cluster.representative,
                                similarity,
                            },
                        );
                    }
                }
                if let Some(centroid) = &cluster.centroid {
                    run.emit(
                        iteration,
                        Event::NodeEmbedded {
                            node: cluster.representative,
                            embedding: centroid.clone(),
                            centroid: true,
                        },
                    );
                }
            }
            outcome.survivors
        }
    };

    for &id in &survivors {
        let child = &expansion.children[ids.iter().position(|i| *i == id).expect("survivor of batch")];
        if child.scored.candidate.terminal {
            run.tree.mark_state(id, NodeState::Terminal)?;
            run.emit(iteration, Event::Solution { node: id, phi: child.scored.phi });
        }
    }
    for &id in &survivors {
        let phi = run.tree.nodes()[id.index()].phi;
        run.backprop(iteration, id, phi)?;
    }
    Ok(())
}
