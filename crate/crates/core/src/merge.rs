//! Online semantic merging of sibling nodes.
//!
//! Each freshly expanded sibling set is embedded, grouped into clusters of
//! near-duplicates, and collapsed to one representative per cluster. The
//! remaining members are marked [`NodeState::Merged`] and release their
//! payload.
//!
//! Clusters are the connected components of the graph whose edges join
//! siblings with cosine similarity `>= tau` (single link). Components do not
//! depend on input order, and two survivors of one merge step are never
//! linked by an edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, NodeState, SearchTree};

/// Tolerance on the unit-norm invariant.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Unit-length embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scale `raw` to unit ℓ2 norm.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidInput("embedding must have at least one dimension".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite entries".into()));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self(raw.into_iter().map(|v| v / norm).collect()))
    }

    /// Wrap a vector that is already unit length, checking the norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!("expected unit vector, norm is {norm}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RepresentativeMode {
    /// Keep the highest-scoring member as is.
    #[default]
    OptionA,
    /// Keep the highest-scoring member but give it the cluster centroid embedding.
    OptionB,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    pub tau: f64,
    pub mode: RepresentativeMode,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            tau: 0.75,
            mode: RepresentativeMode::OptionA,
        }
    }
}

/// Siblings judged semantically equivalent, with the member that survives.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Ascending node ids.
    pub members: Vec<NodeId>,
    pub representative: NodeId,
    /// Normalized member centroid, present only under [`RepresentativeMode::OptionB`].
    pub centroid: Option<Embedding>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root so roots are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Group siblings whose similarity is at least `tau` (single link).
///
/// Components come out ordered by their smallest id, members ascending.
pub fn cluster_siblings(siblings: &[(NodeId, &Embedding)], tau: f64) -> Result<Vec<Vec<NodeId>>> {
    let mut order: Vec<usize> = (0..siblings.len()).collect();
    order.sort_by_key(|&i| siblings[i].0);
    let mut sets = DisjointSet::new(siblings.len());
    for a in 0..order.len() {
        for b in a + 1..order.len() {
            if cosine_similarity(siblings[order[a]].1, siblings[order[b]].1)? >= tau {
                sets.union(a, b);
            }
        }
    }
    let mut components: Vec<Vec<NodeId>> = Vec::new();
    let mut slot_of_root = vec![usize::MAX; siblings.len()];
    for (pos, &i) in order.iter().enumerate() {
        let root = sets.find(pos);
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = components.len();
            components.push(Vec::new());
        }
        components[slot_of_root[root]].push(siblings[i].0);
    }
    Ok(components)
}

/// A cluster member as seen by representative selection.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub id: NodeId,
    pub phi: f64,
    pub embedding: Option<&'a Embedding>,
}

/// Pick the argmax-φ member (lowest id on ties); under Option B also return
/// the normalized centroid of the member embeddings.
pub fn select_representative(
    members: &[Member<'_>],
    mode: RepresentativeMode,
) -> Result<(NodeId, Option<Embedding>)> {
    let best = members
        .iter()
        .min_by(|a, b| b.phi.total_cmp(&a.phi).then(a.id.cmp(&b.id)))
        .ok_or_else(|| Error::InvalidInput("cannot select a representative of an empty cluster".into()))?;
    let centroid = match mode {
        RepresentativeMode::OptionA => None,
        RepresentativeMode::OptionB => {
            let embeddings = members
                .iter()
                .map(|m| {
                    m.embedding
                        .ok_or_else(|| Error::InvalidInput(format!("member {} has no embedding", m.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let dim = embeddings[0].dim();
            let mut sum = vec![0.0; dim];
            for e in &embeddings {
                if e.dim() != dim {
                    return Err(Error::InvalidInput("cluster members differ in dimension".into()));
                }
                for (acc, v) in sum.iter_mut().zip(e.values()) {
                    *acc += v;
                }
            }
            let n = embeddings.len() as f64;
            let mean: Vec<f64> = sum.into_iter().map(|v| v / n).collect();
            match Embedding::normalize(mean) {
                Ok(c) => Some(c),
                // antipodal members (only reachable with tau < 0) cancel out;
                // the representative keeps its own embedding
                Err(Error::DegenerateEmbedding) => best.embedding.cloned(),
                Err(e) => return Err(e),
            }
        }
    };
    Ok((best.id, centroid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    /// Representatives in ascending id order.
    pub survivors: Vec<NodeId>,
    pub clusters: Vec<Cluster>,
}

/// Cluster a freshly expanded sibling set and merge every non-representative.
pub fn merge_and_prune(
    tree: &mut SearchTree,
    new_children: &[NodeId],
    policy: &MergePolicy,
) -> Result<MergeOutcome> {
    if new_children.is_empty() {
        return Ok(MergeOutcome {
            survivors: Vec::new(),
            clusters: Vec::new(),
        });
    }
    let parent = tree.get(new_children[0])?.parent;
    let mut siblings = Vec::with_capacity(new_children.len());
    for &id in new_children {
        let node = tree.get(id)?;
        if node.parent != parent || parent.is_none() {
            return Err(Error::InvalidInput(
                "merge candidates must be children of one parent".into(),
            ));
        }
        if node.state != NodeState::Frontier {
            return Err(Error::IllegalState {
                node: id,
                state: node.state,
                reason: "only frontier siblings can be merged",
            });
        }
        let embedding = node.embedding.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("node {id} has no embedding"))
        })?;
        siblings.push((id, embedding));
    }

    let components = cluster_siblings(&siblings, policy.tau)?;
    let mut clusters = Vec::with_capacity(components.len());
    for members in components {
        let view: Vec<Member<'_>> = members
            .iter()
            .map(|&id| {
                let node = &tree.nodes()[id.index()];
                Member {
                    id,
                    phi: node.phi,
                    embedding: node.embedding.as_ref(),
                }
            })
            .collect();
        let (representative, centroid) = select_representative(&view, policy.mode)?;
        clusters.push(Cluster {
            members,
            representative,
            centroid,
        });
    }
    drop(siblings);

    for cluster in &clusters {
        for &m in &cluster.members {
            if m != cluster.representative {
                tree.mark_state(m, NodeState::Merged)?;
            }
        }
        if let Some(c) = &cluster.centroid {
            tree.set_embedding(cluster.representative, c.clone())?;
        }
    }
    let mut survivors: Vec<NodeId> = clusters.iter().map(|c| c.representative).collect();
    survivors.sort();
    Ok(MergeOutcome {
        survivors,
        clusters,
    })
}
