//! Backend interfaces for step generation, reward scoring and text embedding.
//!
//! Every call declares a cost in seconds. Under a simulated clock the engine
//! advances virtual time by exactly these costs, which is what makes
//! time-budgeted runs reproducible.

pub mod http;
pub mod synthetic;

use crate::error::BackendError;

pub type BackendResult<T> = std::result::Result<T, BackendError>;

/// One sampled continuation of a reasoning path.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub terminal: bool,
    pub cost: f64,
    /// Ground-truth semantic group, known only for synthetic problems.
    pub group: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub phi: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding {
    pub values: Vec<f64>,
    pub cost: f64,
}

pub trait GeneratorBackend: Send + Sync {
    /// Sample `b` continuations of `path` (root text first).
    fn expand(&self, path: &[&str], b: usize, seed: u64) -> BackendResult<Vec<Candidate>>;

    /// Whether a terminal step's answer matches the expected answer.
    fn answer_matches(&self, answer: &str, expected: &str) -> bool {
        extract_final_answer(answer) == extract_final_answer(expected)
    }
}

pub trait RewardBackend: Send + Sync {
    /// Score the full path ending in the candidate step; `phi` is in `[0, 1]`.
    fn score(&self, path: &[&str]) -> BackendResult<Scored>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> BackendResult<RawEmbedding>;
}

/// The three backends a search run needs.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub generator: &'a dyn GeneratorBackend,
    pub reward: &'a dyn RewardBackend,
    pub embedder: &'a dyn EmbeddingBackend,
}

impl<'a> Backends<'a> {
    /// Use one value for all three roles.
    pub fn uniform<B>(backend: &'a B) -> Self
    where
        B: GeneratorBackend + RewardBackend + EmbeddingBackend,
    {
        Self {
            generator: backend,
            reward: backend,
            embedder: backend,
        }
    }
}

pub const ANSWER_MARKER: &str = "The answer is";

/// Text after the last answer marker, trimmed of whitespace and a trailing
/// period. Text without a marker is returned trimmed.
pub fn extract_final_answer(text: &str) -> &str {
    let tail = match text.rfind(ANSWER_MARKER) {
        Some(i) => &text[i + ANSWER_MARKER.len()..],
        None => text,
    };
    let tail = tail.trim().trim_start_matches(':').trim();
    tail.strip_suffix('.').unwrap_or(tail).trim()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_final_answer("so x = 4. The answer is 42."), "42");
        assert_eq!(extract_final_answer("The answer is: 7"), "7");
        assert_eq!(extract_final_answer(" 42 "), "42");
        assert_eq!(
            extract_final_answer("The answer is 1. Wait. The answer is 2"),
            "2"
        );
    }
}
