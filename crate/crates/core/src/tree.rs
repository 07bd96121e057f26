//! Arena-backed search tree.
//!
//! Nodes are never removed. Pruning and merging are state transitions that
//! release the node's payload (its embedding), so a finished tree still holds
//! every node that was ever generated.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::Embedding;

/// Dense node index; the root is always `NodeId(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeState {
    Frontier,
    Expanded,
    Merged,
    PrunedEarlyStop,
    PrunedDeepSeek,
    Terminal,
}

impl NodeState {
    /// Merged and pruned nodes are dead: no children, never selected again.
    pub fn is_released(self) -> bool {
        matches!(
            self,
            NodeState::Merged | NodeState::PrunedEarlyStop | NodeState::PrunedDeepSeek
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub text: String,
    pub embedding: Option<Embedding>,
    /// Reward-model score in `[0, 1]`.
    pub phi: f64,
    /// Cumulative backpropagated reward.
    pub q: f64,
    pub n_visits: u64,
    pub depth: usize,
    pub state: NodeState,
    pub payload_released: bool,
}

impl SearchNode {
    /// Mean backpropagated reward, defined as 0 for unvisited nodes.
    pub fn mean_value(&self) -> f64 {
        if self.n_visits == 0 {
            0.0
        } else {
            self.q / self.n_visits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    frontier: BTreeSet<NodeId>,
    terminals: BTreeSet<NodeId>,
    nodes_explored: usize,
}

fn check_phi(phi: f64) -> Result<()> {
    if phi.is_finite() && (0.0..=1.0).contains(&phi) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("reward {phi} outside [0, 1]")))
    }
}

impl SearchTree {
    pub fn new(root_text: &str) -> Result<Self> {
        if root_text.is_empty() {
            return Err(Error::InvalidInput("root text must be non-empty".into()));
        }
        let root = SearchNode {
            id: NodeId::ROOT,
            parent: None,
            children: Vec::new(),
            text: root_text.to_owned(),
            embedding: None,
            phi: 0.0,
            q: 0.0,
            n_visits: 0,
            depth: 0,
            state: NodeState::Frontier,
            payload_released: false,
        };
        Ok(Self {
            nodes: vec![root],
            frontier: BTreeSet::from([NodeId::ROOT]),
            terminals: BTreeSet::new(),
            nodes_explored: 0,
        })
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn get(&self, id: NodeId) -> Result<&SearchNode> {
        self.nodes.get(id.0).ok_or(Error::NotFound(id))
    }

    fn get_mut(&mut self, id: NodeId) -> Result<&mut SearchNode> {
        self.nodes.get_mut(id.0).ok_or(Error::NotFound(id))
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn frontier(&self) -> &BTreeSet<NodeId> {
        &self.frontier
    }

    pub fn terminals(&self) -> &BTreeSet<NodeId> {
        &self.terminals
    }

    pub fn nodes_generated(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes_explored(&self) -> usize {
        self.nodes_explored
    }

    pub fn count_in_state(&self, state: NodeState) -> usize {
        self.nodes.iter().filter(|n| n.state == state).count()
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        text: &str,
        phi: f64,
        terminal: bool,
    ) -> Result<NodeId> {
        check_phi(phi)?;
        let parent_node = self.get(parent)?;
        if !matches!(parent_node.state, NodeState::Frontier | NodeState::Expanded) {
            return Err(Error::IllegalState {
                node: parent,
                state: parent_node.state,
                reason: "cannot add children",
            });
        }
        let id = NodeId(self.nodes.len());
        let state = if terminal {
            NodeState::Terminal
        } else {
            NodeState::Frontier
        };
        let depth = parent_node.depth + 1;
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            children: Vec::new(),
            text: text.to_owned(),
            embedding: None,
            phi,
            q: 0.0,
            n_visits: 0,
            depth,
            state,
            payload_released: false,
        });
        self.nodes[parent.0].children.push(id);
        if terminal {
            self.terminals.insert(id);
        } else {
            self.frontier.insert(id);
        }
        Ok(id)
    }

    /// Add `reward` to Q and one visit to N on every node from `leaf` to the root.
    pub fn backpropagate(&mut self, leaf: NodeId, reward: f64) -> Result<()> {
        check_phi(reward)?;
        self.get(leaf)?;
        let mut cursor = Some(leaf);
        while let Some(id) = cursor {
            let node = &mut self.nodes[id.0];
            node.n_visits += 1;
            node.q += reward;
            cursor = node.parent;
        }
        Ok(())
    }

    pub fn mark_state(&mut self, id: NodeId, new_state: NodeState) -> Result<()> {
        let node = self.get_mut(id)?;
        let from = node.state;
        if from != NodeState::Frontier || new_state == NodeState::Frontier {
            return Err(Error::IllegalTransition {
                node: id,
                from,
                to: new_state,
            });
        }
        if new_state.is_released() && !node.children.is_empty() {
            return Err(Error::IllegalState {
                node: id,
                state: from,
                reason: "a node with children cannot be merged or pruned",
            });
        }
        node.state = new_state;
        if new_state.is_released() {
            node.payload_released = true;
            node.embedding = None;
        }
        self.frontier.remove(&id);
        match new_state {
            NodeState::Terminal => {
                self.terminals.insert(id);
            }
            NodeState::Expanded => self.nodes_explored += 1,
            _ => {}
        }
        Ok(())
    }

    pub fn set_phi(&mut self, id: NodeId, phi: f64) -> Result<()> {
        check_phi(phi)?;
        self.get_mut(id)?.phi = phi;
        Ok(())
    }

    pub fn set_embedding(&mut self, id: NodeId, embedding: Embedding) -> Result<()> {
        let node = self.get_mut(id)?;
        if node.payload_released {
            return Err(Error::IllegalState {
                node: id,
                state: node.state,
                reason: "payload already released",
            });
        }
        node.embedding = Some(embedding);
        Ok(())
    }

    /// Texts from the root down to `id`, inclusive.
    pub fn path_texts(&self, id: NodeId) -> Result<Vec<&str>> {
        self.get(id)?;
        let mut path = Vec::new();
        let mut cursor = Some(id);
        while let Some(c) = cursor {
            let node = &self.nodes[c.0];
            path.push(node.text.as_str());
            cursor = node.parent;
        }
        path.reverse();
        Ok(path)
    }
}
