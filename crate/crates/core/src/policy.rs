//! UCB scoring and frontier selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Exploration weight.
    pub w: f64,
    /// Nodes selected per round.
    pub k: usize,
    /// Fraction of the `k` slots filled greedily by reward.
    pub p: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            w: std::f64::consts::FRAC_1_SQRT_2,
            k: 4,
            p: 0.5,
        }
    }
}

impl PolicyParams {
    /// Number of exploit slots: `round(p * k)`, halves rounded up.
    pub fn exploit_slots(&self) -> usize {
        ((self.p * self.k as f64 + 0.5).floor() as usize).min(self.k)
    }
}

/// `Q/N + w * sqrt(1 + N_parent) * phi / (1 + N)`, with `Q/N := 0` when `N = 0`.
pub fn ucb_score(q: f64, n_visits: i64, n_parent_visits: i64, phi: f64, w: f64) -> Result<f64> {
    if n_visits < 0 || n_parent_visits < 0 {
        return Err(Error::InvalidInput(format!(
            "visit counts must be non-negative (N = {n_visits}, N_parent = {n_parent_visits})"
        )));
    }
    let exploit = if n_visits == 0 { 0.0 } else { q / n_visits as f64 };
    let explore = w * ((1 + n_parent_visits) as f64).sqrt() * phi / (1 + n_visits) as f64;
    Ok(exploit + explore)
}

/// Score a tree node; the root has no parent and uses `N_parent = 0`.
pub fn node_ucb(tree: &SearchTree, id: NodeId, w: f64) -> Result<f64> {
    let node = tree.get(id)?;
    let parent_visits = match node.parent {
        Some(p) => tree.get(p)?.n_visits,
        None => 0,
    };
    ucb_score(node.q, node.n_visits as i64, parent_visits as i64, node.phi, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Exploit,
    Explore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub id: NodeId,
    pub slot: Slot,
}

/// Pick up to `k` frontier nodes: the first `round(p*k)` by highest φ, the
/// rest by highest UCB among those not yet taken. Ties go to the lower id.
pub fn select_frontier(tree: &SearchTree, params: &PolicyParams) -> Vec<Selection> {
    let mut candidates: Vec<(NodeId, f64, f64)> = tree
        .frontier()
        .iter()
        .map(|&id| {
            let phi = tree.nodes()[id.index()].phi;
            // frontier ids always exist and counts are unsigned
            let ucb = node_ucb(tree, id, params.w).unwrap_or(f64::NEG_INFINITY);
            (id, phi, ucb)
        })
        .collect();

    let exploit = params.exploit_slots();
    let mut out = Vec::with_capacity(params.k.min(candidates.len()));

    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let rest = candidates.split_off(exploit.min(candidates.len()));
    out.extend(candidates.into_iter().map(|(id, _, _)| Selection {
        id,
        slot: Slot::Exploit,
    }));

    let mut rest = rest;
    rest.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    out.extend(
        rest.into_iter()
            .take(params.k - out.len())
            .map(|(id, _, _)| Selection {
                id,
                slot: Slot::Explore,
            }),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeState;
    use proptest::prelude::*;

    const W: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb_score(1.0, 2, 7, 0.3, 0.0).unwrap(), 0.5);
        let v = ucb_score(1.6, 2, 3, 0.8, W).unwrap();
        assert!((v - 1.17712).abs() < 1e-5, "{v}");
        let v = ucb_score(0.0, 0, 0, 0.9, W).unwrap();
        assert!((v - 0.63640).abs() < 1e-5, "{v}");
        assert!(ucb_score(0.0, -1, 0, 0.5, W).is_err());
        assert!(ucb_score(0.0, 0, -3, 0.5, W).is_err());
    }

    #[test]
    fn exploit_slots_round_half_up() {
        let p = |p, k| PolicyParams { w: W, k, p }.exploit_slots();
        assert_eq!(p(0.5, 4), 2);
        assert_eq!(p(0.5, 3), 2);
        assert_eq!(p(0.5, 1), 1);
        assert_eq!(p(0.0, 4), 0);
        assert_eq!(p(1.0, 4), 4);
        assert_eq!(p(0.25, 2), 1);
    }

    fn frontier_tree(phis: &[f64]) -> SearchTree {
        let mut tree = SearchTree::new("p").unwrap();
        tree.mark_state(NodeId::ROOT, NodeState::Expanded).unwrap();
        for &phi in phis {
            tree.add_child(NodeId::ROOT, "c", phi, false).unwrap();
        }
        tree
    }

    #[test]
    fn pure_exploit_takes_argmax() {
        let tree = frontier_tree(&[0.9, 0.5]);
        let sel = select_frontier(&tree, &PolicyParams { w: W, k: 1, p: 1.0 });
        assert_eq!(sel, vec![Selection { id: NodeId(1), slot: Slot::Exploit }]);
    }

    #[test]
    fn empty_frontier() {
        let mut tree = SearchTree::new("p").unwrap();
        tree.mark_state(NodeId::ROOT, NodeState::Expanded).unwrap();
        assert!(select_frontier(&tree, &PolicyParams::default()).is_empty());
    }

    /// Re-derive the selection rule by enumerating every ordered pick.
    fn brute_force(tree: &SearchTree, params: &PolicyParams) -> Vec<NodeId> {
        let ids: Vec<NodeId> = tree.frontier().iter().copied().collect();
        let exploit = ((params.p * params.k as f64) + 0.5).floor() as usize;
        let mut chosen: Vec<NodeId> = Vec::new();
        for slot in 0..params.k.min(ids.len()) {
            let mut best: Option<(NodeId, f64)> = None;
            for &id in &ids {
                if chosen.contains(&id) {
                    continue;
                }
                let n = tree.get(id).unwrap();
                let pn = tree.get(n.parent.unwrap()).unwrap().n_visits as f64;
                let key = if slot < exploit {
                    n.phi
                } else {
                    let exploit_term = if n.n_visits == 0 { 0.0 } else { n.q / n.n_visits as f64 };
                    exploit_term + params.w * (1.0 + pn).sqrt() * n.phi / (1.0 + n.n_visits as f64)
                };
                match best {
                    Some((_, b)) if key <= b => {}
                    _ => best = Some((id, key)),
                }
            }
            chosen.push(best.unwrap().0);
        }
        chosen
    }

    #[test]
    fn mixed_slots_match_enumeration() {
        let mut tree = frontier_tree(&[0.4, 0.6, 0.5]);
        tree.backpropagate(NodeId(1), 0.9).unwrap();
        tree.backpropagate(NodeId(1), 0.9).unwrap();
        let params = PolicyParams { w: W, k: 2, p: 0.5 };
        let sel = select_frontier(&tree, &params);
        assert_eq!(sel.len(), 2);
        assert_eq!(sel[0], Selection { id: NodeId(2), slot: Slot::Exploit });
        assert_eq!(sel[1].slot, Slot::Explore);
        let ids: Vec<_> = sel.iter().map(|s| s.id).collect();
        assert_eq!(ids, brute_force(&tree, &params));
        assert_eq!(ids, vec![NodeId(2), NodeId(1)]);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let tree = frontier_tree(&[0.5, 0.5, 0.5]);
        let sel = select_frontier(&tree, &PolicyParams { w: W, k: 2, p: 0.5 });
        assert_eq!(sel.iter().map(|s| s.id).collect::<Vec<_>>(), vec![NodeId(1), NodeId(2)]);
    }

    fn random_tree() -> impl Strategy<Value = SearchTree> {
        proptest::collection::vec((0.0f64..=1.0, 0usize..4, 0.0f64..=1.0), 1..10).prop_map(|spec| {
            let mut tree = SearchTree::new("p").unwrap();
            tree.mark_state(NodeId::ROOT, NodeState::Expanded).unwrap();
            for (phi, visits, reward) in spec {
                let id = tree.add_child(NodeId::ROOT, "c", phi, false).unwrap();
                for _ in 0..visits {
                    tree.backpropagate(id, reward).unwrap();
                }
            }
            tree
        })
    }

    proptest! {
        #[test]
        fn ucb_monotone_in_phi_and_q(
            q in 0.0f64..10.0, dq in 0.0f64..5.0,
            n in 0i64..50, np in 0i64..100,
            phi in 0.0f64..=1.0, dphi in 0.0f64..=1.0,
            w in 0.0f64..3.0,
        ) {
            let base = ucb_score(q, n, np, phi, w).unwrap();
            prop_assert!(ucb_score(q + dq, n, np, phi, w).unwrap() >= base);
            prop_assert!(ucb_score(q, n, np, (phi + dphi).min(1.0), w).unwrap() >= base);
        }

        #[test]
        fn selection_matches_enumeration(
            tree in random_tree(),
            k in 1usize..6,
            p in 0.0f64..=1.0,
            w in 0.0f64..2.0,
        ) {
            let params = PolicyParams { w, k, p };
            let sel = select_frontier(&tree, &params);
            let ids: Vec<_> = sel.iter().map(|s| s.id).collect();
            prop_assert_eq!(&ids, &brute_force(&tree, &params));
            prop_assert!(sel.len() <= k);
            for s in &sel {
                prop_assert_eq!(tree.get(s.id).unwrap().state, NodeState::Frontier);
            }
            prop_assert_eq!(select_frontier(&tree, &params), sel);
        }

        #[test]
        fn zero_weight_pure_explore_ranks_by_mean(tree in random_tree(), k in 1usize..6) {
            let sel = select_frontier(&tree, &PolicyParams { w: 0.0, k, p: 0.0 });
            let means: Vec<f64> = sel.iter().map(|s| tree.get(s.id).unwrap().mean_value()).collect();
            prop_assert!(means.windows(2).all(|w| w[0] >= w[1]));
            let sel = select_frontier(&tree, &PolicyParams { w: 0.0, k, p: 1.0 });
            let phis: Vec<f64> = sel.iter().map(|s| tree.get(s.id).unwrap().phi).collect();
            prop_assert!(phis.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
