//! Planted-path benchmark.
//!
//! A problem is a hidden sequence of `depth` moves, each drawn from `arity`
//! options. Expanding a path emits `b` step texts that fall into a known
//! number of semantic groups (one group per distinct move, `dup_rate`
//! paraphrases each), so redundancy among siblings is exact ground truth.
//!
//! Embeddings are `e_m + δ` for the move's basis vector `e_m` and a seeded
//! perturbation with `‖δ‖ < r`. Since `‖δ‖ < r < 1` keeps every vector within
//! `asin(r)` of its basis direction:
//!
//! * two paraphrases of one move are within `2·asin(r)`, so their cosine is
//!   at least `cos(2·asin r) = 1 - 2r²`;
//! * vectors of different (orthogonal) moves are at least `π/2 - 2·asin(r)`
//!   apart, so their cosine is at most `sin(2·asin r) = 2r·√(1 - r²)`.
//!
//! Choosing `r = min(√((1 - σ_dup)/2), √((1 - √(1 - σ_distinct²))/2))`
//! therefore guarantees `cos ≥ σ_dup` within a group and `cos ≤ σ_distinct`
//! across groups.
//!
//! The reward of a path with `L` steps whose first `P` steps follow the
//! planted sequence is `clamp(0.7·P/L + 0.3·reward_noise·u, 0, 1)` with `u`
//! uniform in `[0, 1)` seeded by the path.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    BackendResult, Candidate, EmbeddingBackend, GeneratorBackend, RawEmbedding, RewardBackend,
    Scored, ANSWER_MARKER,
};
use crate::error::BackendError;
use crate::seed;

const EMBED_SALT: u64 = 0x656d_6265_6464_696e;
const SCORE_SALT: u64 = 0x7363_6f72_655f_7068;
const PLANT_SALT: u64 = 0x706c_616e_7465_6421;

/// Weight of the on-path prefix fraction in the reward.
pub const PREFIX_WEIGHT: f64 = 0.7;
/// Weight of the seeded noise term in the reward.
pub const NOISE_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedPathProblem {
    pub seed: u64,
    /// Length of the planted solution.
    pub depth: usize,
    /// Distinct moves available at every state.
    pub arity: usize,
    /// Paraphrases emitted per distinct move in one expansion.
    pub dup_rate: usize,
    pub sigma_dup: f64,
    pub sigma_distinct: f64,
    pub reward_noise: f64,
    /// Embedding dimension; must be at least `arity`.
    pub dim: usize,
}

impl Default for PlantedPathProblem {
    fn default() -> Self {
        Self {
            seed: 0,
            depth: 6,
            arity: 3,
            dup_rate: 2,
            sigma_dup: 0.95,
            sigma_distinct: 0.30,
            reward_noise: 0.05,
            dim: 32,
        }
    }
}

/// Virtual seconds charged per backend call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCosts {
    /// Per generated candidate.
    pub generate: f64,
    pub score: f64,
    pub embed: f64,
}

impl Default for SyntheticCosts {
    fn default() -> Self {
        Self {
            generate: 0.5,
            score: 0.1,
            embed: 0.01,
        }
    }
}

/// Largest perturbation radius that keeps both separation guarantees.
pub fn perturbation_radius(sigma_dup: f64, sigma_distinct: f64) -> f64 {
    let r_dup = ((1.0 - sigma_dup) / 2.0).max(0.0).sqrt();
    let s = sigma_distinct.clamp(0.0, 1.0);
    let r_distinct = ((1.0 - (1.0 - s * s).sqrt()) / 2.0).max(0.0).sqrt();
    r_dup.min(r_distinct)
}

/// A parsed synthetic step text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub depth: usize,
    pub mv: usize,
    pub variant: u32,
}

impl Step {
    fn render(&self) -> String {
        format!("step {}: move {} (variant {:05})", self.depth, self.mv, self.variant)
    }
}

pub fn parse_step(text: &str) -> BackendResult<Step> {
    let bad = || BackendError::InvalidInput(format!("not a planted-path step: {text:?}"));
    let rest = text.strip_prefix("step ").ok_or_else(bad)?;
    let (depth, rest) = rest.split_once(": move ").ok_or_else(bad)?;
    let (mv, rest) = rest.split_once(" (variant ").ok_or_else(bad)?;
    let (variant, rest) = rest.split_once(')').ok_or_else(bad)?;
    if !(rest.is_empty() || rest.starts_with(". ")) {
        return Err(bad());
    }
    Ok(Step {
        depth: depth.parse().map_err(|_| bad())?,
        mv: mv.parse().map_err(|_| bad())?,
        variant: variant.parse().map_err(|_| bad())?,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    problem: PlantedPathProblem,
    costs: SyntheticCosts,
    planted: Vec<usize>,
    radius: f64,
}

fn render_answer(moves: &[usize]) -> String {
    moves
        .iter()
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

impl SyntheticBackend {
    pub fn new(problem: PlantedPathProblem) -> BackendResult<Self> {
        Self::with_costs(problem, SyntheticCosts::default())
    }

    pub fn with_costs(problem: PlantedPathProblem, costs: SyntheticCosts) -> BackendResult<Self> {
        let invalid = |m: &str| Err(BackendError::InvalidInput(m.to_owned()));
        if problem.depth == 0 || problem.arity == 0 || problem.dup_rate == 0 {
            return invalid("depth, arity and dup_rate must be positive");
        }
        if problem.dim < problem.arity {
            return invalid("embedding dimension must be at least the arity");
        }
        if !(problem.sigma_distinct >= 0.0 && problem.sigma_distinct < problem.sigma_dup && problem.sigma_dup <= 1.0) {
            return invalid("need 0 <= sigma_distinct < sigma_dup <= 1");
        }
        if !(0.0..=1.0).contains(&problem.reward_noise) {
            return invalid("reward_noise must lie in [0, 1]");
        }
        if [costs.generate, costs.score, costs.embed].iter().any(|c| c.is_nan() || *c < 0.0) {
            return invalid("costs must be non-negative");
        }
        let mut rng = seed::rng(seed::mix(problem.seed, PLANT_SALT));
        let planted = (0..problem.depth)
            .map(|_| rng.random_range(0..problem.arity))
            .collect();
        let radius = perturbation_radius(problem.sigma_dup, problem.sigma_distinct);
        Ok(Self {
            problem,
            costs,
            planted,
            radius,
        })
    }

    pub fn problem(&self) -> &PlantedPathProblem {
        &self.problem
    }

    pub fn planted(&self) -> &[usize] {
        &self.planted
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn statement(&self) -> String {
        format!(
            "Planted-path problem {}: find the {}-move sequence ({} moves per step).",
            self.problem.seed, self.problem.depth, self.problem.arity
        )
    }

    pub fn expected_answer(&self) -> String {
        render_answer(&self.planted)
    }

    /// Moves along `path`; the first entry is the problem statement.
    fn moves(&self, path: &[&str]) -> BackendResult<Vec<usize>> {
        if path.is_empty() {
            return Err(BackendError::InvalidInput("empty path".into()));
        }
        if path.len() - 1 > self.problem.depth {
            return Err(BackendError::InvalidInput("path is deeper than the problem".into()));
        }
        path[1..]
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let step = parse_step(text)?;
                if step.depth != i + 1 || step.mv >= self.problem.arity {
                    return Err(BackendError::InvalidInput(format!(
                        "step {:?} is out of place at depth {}",
                        text,
                        i + 1
                    )));
                }
                Ok(step.mv)
            })
            .collect()
    }

    pub fn is_on_path(&self, moves: &[usize]) -> bool {
        moves.len() <= self.planted.len() && self.planted[..moves.len()] == *moves
    }

    pub fn synthetic_expand(&self, path: &[&str], b: usize, seed: u64) -> BackendResult<Vec<Candidate>> {
        let moves = self.moves(path)?;
        if moves.len() >= self.problem.depth {
            return Err(BackendError::InvalidInput("cannot expand a terminal path".into()));
        }
        if b == 0 {
            return Ok(Vec::new());
        }
        let mut rng = seed::rng(seed::mix(self.problem.seed, seed));
        let groups = self.problem.arity.min(b.div_ceil(self.problem.dup_rate));
        let mut options: Vec<usize> = (0..self.problem.arity).collect();
        options.shuffle(&mut rng);
        options.truncate(groups);
        if self.is_on_path(&moves) {
            let correct = self.planted[moves.len()];
            if !options.contains(&correct) {
                let slot = rng.random_range(0..groups);
                options[slot] = correct;
            }
        }

        let depth = moves.len() + 1;
        let terminal = depth == self.problem.depth;
        let mut used_variants = Vec::with_capacity(b);
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let mv = options[(i / self.problem.dup_rate) % groups];
            let variant = loop {
                let v = rng.random_range(0..100_000u32);
                if !used_variants.contains(&v) {
                    used_variants.push(v);
                    break v;
                }
            };
            let mut text = Step { depth, mv, variant }.render();
            if terminal {
                let mut full = moves.clone();
                full.push(mv);
                text.push_str(&format!(". {} {}", ANSWER_MARKER, render_answer(&full)));
            }
            out.push(Candidate {
                text,
                terminal,
                cost: self.costs.generate,
                group: Some(mv as u64),
            });
        }
        Ok(out)
    }

    pub fn synthetic_score(&self, path: &[&str]) -> BackendResult<f64> {
        let moves = self.moves(path)?;
        if moves.is_empty() {
            return Ok(0.0);
        }
        let prefix = moves
            .iter()
            .zip(&self.planted)
            .take_while(|(a, b)| a == b)
            .count();
        let fraction = prefix as f64 / moves.len() as f64;
        let mut rng = seed::rng(seed::mix(self.problem.seed ^ SCORE_SALT, seed::hash_path(path)));
        let u: f64 = rng.random();
        Ok((PREFIX_WEIGHT * fraction + NOISE_WEIGHT * self.problem.reward_noise * u).clamp(0.0, 1.0))
    }

    pub fn synthetic_embed(&self, text: &str) -> BackendResult<Vec<f64>> {
        let step = parse_step(text)?;
        if step.mv >= self.problem.arity {
            return Err(BackendError::InvalidInput(format!("unknown move in {text:?}")));
        }
        let dim = self.problem.dim;
        let mut rng = seed::rng(seed::mix(self.problem.seed ^ EMBED_SALT, seed::fnv1a(text.as_bytes())));
        let mut direction: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        let length = self.radius * rng.random::<f64>();
        if norm > 0.0 {
            direction.iter_mut().for_each(|v| *v *= length / norm);
        }
        direction[step.mv] += 1.0;
        Ok(direction)
    }
}

impl GeneratorBackend for SyntheticBackend {
    fn expand(&self, path: &[&str], b: usize, seed: u64) -> BackendResult<Vec<Candidate>> {
        self.synthetic_expand(path, b, seed)
    }
}

impl RewardBackend for SyntheticBackend {
    fn score(&self, path: &[&str]) -> BackendResult<Scored> {
        Ok(Scored {
            phi: self.synthetic_score(path)?,
            cost: self.costs.score,
        })
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn embed(&self, text: &str) -> BackendResult<RawEmbedding> {
        Ok(RawEmbedding {
            values: self.synthetic_embed(text)?,
            cost: self.costs.embed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::{cosine_similarity, Embedding};

    fn backend(problem: PlantedPathProblem) -> SyntheticBackend {
        SyntheticBackend::new(problem).unwrap()
    }

    fn texts(c: &[Candidate]) -> Vec<&str> {
        c.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn radius_matches_closed_form() {
        let r = perturbation_radius(0.95, 0.30);
        assert!((1.0 - 2.0 * r * r) >= 0.95 - 1e-15);
        assert!(2.0 * r * (1.0 - r * r).sqrt() <= 0.30 + 1e-15);
        // the distinct-group bound binds for the default margins
        assert!((r - 0.151_76).abs() < 1e-4, "{r}");
    }

    #[test]
    fn two_groups_of_two() {
        let be = backend(PlantedPathProblem { dup_rate: 2, ..Default::default() });
        let root = be.statement();
        let c = be.synthetic_expand(&[&root], 4, 11).unwrap();
        assert_eq!(c.len(), 4);
        let mut groups: Vec<_> = c.iter().map(|c| c.group.unwrap()).collect();
        assert_eq!(groups[0], groups[1]);
        assert_eq!(groups[2], groups[3]);
        groups.dedup();
        assert_eq!(groups.len(), 2);
        assert!(groups.contains(&(be.planted()[0] as u64)));
    }

    #[test]
    fn terminal_depth_children_are_terminal() {
        let be = backend(PlantedPathProblem { depth: 2, ..Default::default() });
        let root = be.statement();
        let first = be.synthetic_expand(&[&root], 4, 1).unwrap();
        assert!(first.iter().all(|c| !c.terminal));
        let second = be.synthetic_expand(&[&root, &first[0].text], 4, 2).unwrap();
        assert!(second.iter().all(|c| c.terminal));
        assert!(second[0].text.contains(ANSWER_MARKER));
        assert!(be.synthetic_expand(&[&root, &first[0].text, &second[0].text], 4, 3).is_err());
    }

    #[test]
    fn expansion_is_deterministic() {
        let be = backend(PlantedPathProblem::default());
        let root = be.statement();
        let a = be.synthetic_expand(&[&root], 4, 5).unwrap();
        let b = be.synthetic_expand(&[&root], 4, 5).unwrap();
        assert_eq!(a, b);
        let c = be.synthetic_expand(&[&root], 4, 6).unwrap();
        assert_ne!(texts(&a), texts(&c));
    }

    #[test]
    fn invalid_paths_rejected() {
        let be = backend(PlantedPathProblem::default());
        let root = be.statement();
        assert!(be.synthetic_expand(&[&root, "hello"], 4, 0).is_err());
        assert!(be.synthetic_expand(&[&root, "step 2: move 0 (variant 00001)"], 4, 0).is_err());
        assert!(be.synthetic_expand(&[&root, "step 1: move 9 (variant 00001)"], 4, 0).is_err());
        assert!(be.synthetic_embed("nope").is_err());
    }

    #[test]
    fn on_path_move_always_offered() {
        let be = backend(PlantedPathProblem { arity: 5, dup_rate: 4, ..Default::default() });
        let root = be.statement();
        for s in 0..200 {
            let c = be.synthetic_expand(&[&root], 4, s).unwrap();
            assert!(c.iter().all(|c| c.group == Some(be.planted()[0] as u64)));
        }
    }

    #[test]
    fn score_formula() {
        let be = backend(PlantedPathProblem { reward_noise: 0.0, depth: 3, ..Default::default() });
        let root = be.statement();
        let planted = be.planted().to_vec();
        let step = |d: usize, mv: usize| Step { depth: d, mv, variant: 1 }.render();
        let on: Vec<String> = planted.iter().enumerate().map(|(i, &m)| step(i + 1, m)).collect();
        let mut path = vec![root.as_str()];
        path.extend(on.iter().map(String::as_str));
        assert_eq!(be.synthetic_score(&path).unwrap(), 0.7);
        let off: Vec<String> = planted
            .iter()
            .enumerate()
            .map(|(i, &m)| step(i + 1, (m + 1) % 3))
            .collect();
        let mut path = vec![root.as_str()];
        path.extend(off.iter().map(String::as_str));
        assert_eq!(be.synthetic_score(&path).unwrap(), 0.0);
        // two of three steps on the planted prefix
        let mixed = [on[0].as_str(), on[1].as_str(), off[2].as_str()];
        let mut path = vec![root.as_str()];
        path.extend(mixed);
        assert!((be.synthetic_score(&path).unwrap() - 0.7 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn score_noise_bounded_and_repeatable() {
        let be = backend(PlantedPathProblem::default());
        let root = be.statement();
        let c = be.synthetic_expand(&[&root], 4, 3).unwrap();
        for cand in &c {
            let path = [root.as_str(), cand.text.as_str()];
            let a = be.synthetic_score(&path).unwrap();
            assert_eq!(a, be.synthetic_score(&path).unwrap());
            let base = if cand.group == Some(be.planted()[0] as u64) { 0.7 } else { 0.0 };
            assert!(a >= base && a < base + 0.3 * 0.05);
        }
    }

    #[test]
    fn embedding_separation_over_many_pairs() {
        let problem = PlantedPathProblem { arity: 4, dim: 16, ..Default::default() };
        let be = backend(problem);
        let mut min_same = f64::INFINITY;
        let mut max_diff = f64::NEG_INFINITY;
        for i in 0..1000u32 {
            let a = Step { depth: 1, mv: (i % 4) as usize, variant: i }.render();
            let same = Step { depth: 1, mv: (i % 4) as usize, variant: i + 50_000 }.render();
            let diff = Step { depth: 1, mv: ((i + 1) % 4) as usize, variant: i + 70_000 }.render();
            let e = |t: &str| Embedding::normalize(be.synthetic_embed(t).unwrap()).unwrap();
            let (ea, es, ed) = (e(&a), e(&same), e(&diff));
            min_same = min_same.min(cosine_similarity(&ea, &es).unwrap());
            max_diff = max_diff.max(cosine_similarity(&ea, &ed).unwrap());
        }
        assert!(min_same >= 0.95, "{min_same}");
        assert!(max_diff <= 0.30, "{max_diff}");
        let t = Step { depth: 1, mv: 0, variant: 7 }.render();
        assert_eq!(be.synthetic_embed(&t).unwrap(), be.synthetic_embed(&t).unwrap());
    }

    #[test]
    fn step_text_round_trip() {
        let s = Step { depth: 3, mv: 2, variant: 42 };
        assert_eq!(parse_step(&s.render()).unwrap(), s);
        let t = format!("{}. The answer is 1-2-2", s.render());
        assert_eq!(parse_step(&t).unwrap(), s);
        assert!(parse_step(&format!("{}x", s.render())).is_err());
    }
}
