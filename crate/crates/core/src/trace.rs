//! Run traces: one JSON object per line.
//!
//! The first line is a [`TraceHeader`]; every following line is a
//! [`TraceEvent`]. Events are numbered from 0 without gaps and the last one
//! is always `Halt`, which carries the run's counters. [`replay`] rebuilds
//! the final tree from the events alone and checks the recounted counters
//! against the recorded ones.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::StrategyId;
use crate::config::{ClockMode, Config};
use crate::error::{Error, Result};
use crate::merge::Embedding;
use crate::policy::Slot;
use crate::tree::{NodeId, NodeState, SearchTree};

pub const TRACE_SCHEMA: &str = "ssdp-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub run_id: String,
    pub strategy: StrategyId,
    pub clock: ClockMode,
    pub problem: String,
    pub config: Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruneReason {
    EarlyStop,
    DeepSeek,
    BeamCut,
    MaxDepth,
}

impl PruneReason {
    pub fn state(self) -> NodeState {
        match self {
            PruneReason::DeepSeek => NodeState::PrunedDeepSeek,
            _ => NodeState::PrunedEarlyStop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaltReason {
    RolloutBudget,
    TimeBudget,
    FrontierExhausted,
    SolutionGate,
    DepthLimit,
    Completed,
}

/// Counters every run reports and every trace can recount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub nodes_generated: usize,
    pub nodes_explored: usize,
    pub nodes_merged: usize,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Event {
    NodeCreated {
        node: NodeId,
        parent: Option<NodeId>,
        depth: usize,
        text: String,
        terminal: bool,
        group: Option<u64>,
    },
    NodeScored {
        node: NodeId,
        phi: f64,
    },
    NodeEmbedded {
        node: NodeId,
        embedding: Embedding,
        centroid: bool,
    },
    ClusterFormed {
        parent: NodeId,
        members: Vec<NodeId>,
        representative: NodeId,
        /// Ground-truth group of each member, when the backend knows it.
        groups: Vec<Option<u64>>,
    },
    NodeMerged {
        node: NodeId,
        representative: NodeId,
        similarity: f64,
    },
    NodePruned {
        node: NodeId,
        reason: PruneReason,
        phi: f64,
        threshold: f64,
    },
    NodeExpanded {
        node: NodeId,
        slot: Option<Slot>,
    },
    Backprop {
        node: NodeId,
        reward: f64,
    },
    Solution {
        node: NodeId,
        phi: f64,
    },
    Halt {
        reason: HaltReason,
        counters: Counters,
        embed_calls: usize,
        embeds_skipped: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub run_id: String,
    pub iteration: usize,
    /// Virtual or wall-clock seconds since the run started, per the header's clock.
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Counters recorded in the closing `Halt` event.
    pub fn recorded_counters(&self) -> Option<Counters> {
        match self.events.last().map(|e| &e.event) {
            Some(Event::Halt { counters, .. }) => Some(*counters),
            _ => None,
        }
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty trace".into(),
        })?;
        let first = first.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let header: TraceHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.schema != TRACE_SCHEMA || header.version != TRACE_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "unsupported trace schema {} v{}",
                    header.schema, header.version
                ),
            });
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let event: TraceEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Self { header, events })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub header: TraceHeader,
    pub tree: SearchTree,
    pub counters: Counters,
}

/// Parse and replay a JSONL trace.
pub fn replay_reader<R: BufRead>(input: R) -> Result<Replay> {
    replay(&Trace::read_jsonl(input)?)
}

/// Rebuild the final tree from a trace's events.
///
/// Line numbers in errors count the header as line 1.
pub fn replay(trace: &Trace) -> Result<Replay> {
    let mut tree: Option<SearchTree> = None;
    let mut counted = Counters::default();
    let mut iterations = BTreeSet::new();
    let mut halted: Option<Counters> = None;

    for (i, ev) in trace.events.iter().enumerate() {
        let line = i + 2;
        let fail = |message: String| Error::Consistency { line, message };
        if ev.seq != i as u64 {
            return Err(fail(format!("expected seq {i}, found {}", ev.seq)));
        }
        if halted.is_some() {
            return Err(fail("event after Halt".into()));
        }
        if ev.iteration > 0 && !matches!(ev.event, Event::Halt { .. }) {
            iterations.insert(ev.iteration);
        }
        let wrap = |e: Error| fail(e.to_string());

        if let Event::NodeCreated { node, parent: None, text, .. } = &ev.event {
            if tree.is_some() || *node != NodeId::ROOT {
                return Err(fail(format!("unexpected root creation of {node}")));
            }
            tree = Some(SearchTree::new(text).map_err(wrap)?);
            counted.nodes_generated = 1;
            continue;
        }
        let t = tree
            .as_mut()
            .ok_or_else(|| fail("event before the root was created".into()))?;
        match &ev.event {
            Event::NodeCreated {
                node,
                parent: Some(parent),
                depth,
                text,
                terminal,
                ..
            } => {
                if node.index() != t.len() {
                    return Err(fail(format!("node {node} created out of order")));
                }
                t.add_child(*parent, text, 0.0, *terminal).map_err(wrap)?;
                if t.get(*node).map_err(wrap)?.depth != *depth {
                    return Err(fail(format!("node {node} has inconsistent depth")));
                }
                counted.nodes_generated += 1;
            }
            Event::NodeCreated { parent: None, .. } => unreachable!("handled above"),
            Event::NodeScored { node, phi } => t.set_phi(*node, *phi).map_err(wrap)?,
            Event::NodeEmbedded { node, embedding, .. } => {
                t.set_embedding(*node, embedding.clone()).map_err(wrap)?
            }
            Event::ClusterFormed {
                parent,
                members,
                representative,
                ..
            } => {
                if !members.contains(representative) {
                    return Err(fail("representative is not a cluster member".into()));
                }
                for m in members {
                    if t.get(*m).map_err(wrap)?.parent != Some(*parent) {
                        return Err(fail(format!("cluster member {m} is not a child of {parent}")));
                    }
                }
            }
            Event::NodeMerged { node, .. } => {
                t.mark_state(*node, NodeState::Merged).map_err(wrap)?;
                counted.nodes_merged += 1;
            }
            Event::NodePruned { node, reason, .. } => {
                t.mark_state(*node, reason.state()).map_err(wrap)?
            }
            Event::NodeExpanded { node, .. } => {
                t.mark_state(*node, NodeState::Expanded).map_err(wrap)?;
                counted.nodes_explored += 1;
            }
            Event::Backprop { node, reward } => t.backpropagate(*node, *reward).map_err(wrap)?,
            Event::Solution { node, .. } => {
                let state = t.get(*node).map_err(wrap)?.state;
                if state != NodeState::Terminal {
                    t.mark_state(*node, NodeState::Terminal).map_err(wrap)?;
                }
            }
            Event::Halt { counters, .. } => {
                counted.rollouts = iterations.len();
                if *counters != counted {
                    return Err(fail(format!(
                        "recorded counters {counters:?} disagree with recount {counted:?}"
                    )));
                }
                halted = Some(*counters);
            }
        }
    }

    let line = trace.events.len() + 1;
    let tree = tree.ok_or(Error::Consistency {
        line,
        message: "trace never creates a root".into(),
    })?;
    if halted.is_none() {
        return Err(Error::Consistency {
            line,
            message: "trace ends without a Halt event".into(),
        });
    }
    Ok(Replay {
        header: trace.header.clone(),
        tree,
        counters: counted,
    })
}

/// Collects events for one run.
#[derive(Debug)]
pub(crate) struct Recorder {
    run_id: String,
    events: Vec<TraceEvent>,
}

impl Recorder {
    pub(crate) fn new(run_id: String) -> Self {
        Self {
            run_id,
            events: Vec::new(),
        }
    }

    pub(crate) fn emit(&mut self, iteration: usize, t: f64, event: Event) {
        self.events.push(TraceEvent {
            seq: self.events.len() as u64,
            run_id: self.run_id.clone(),
            iteration,
            t,
            event,
        });
    }

    pub(crate) fn finish(self, header: TraceHeader) -> Trace {
        Trace {
            header,
            events: self.events,
        }
    }
}
