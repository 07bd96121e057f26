//! Stopping and pruning rules applied by the search loop.

use crate::config::Config;

/// Running mean of every reward scored so far in a run.
///
/// Uses Neumaier compensated summation so the mean does not drift with the
/// order in which scores arrive.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardStats {
    sum: f64,
    compensation: f64,
    count: usize,
}

impl RewardStats {
    /// Stats as if `count` scores with the given mean had been observed.
    pub fn with_mean(mean: f64, count: usize) -> Self {
        Self {
            sum: mean * count as f64,
            compensation: 0.0,
            count,
        }
    }

    pub fn push(&mut self, phi: f64) {
        let t = self.sum + phi;
        if self.sum.abs() >= phi.abs() {
            self.compensation += (self.sum - t) + phi;
        } else {
            self.compensation += (phi - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum + self.compensation) / self.count as f64
        }
    }

    /// `lambda * mean`, the cutoff both reward gates compare against.
    pub fn threshold(&self, lambda: f64) -> f64 {
        lambda * self.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepSeek {
    Keep,
    Prune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionGate {
    Pursue,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Continue,
    Halt,
}

/// Stop a rollout whose node scores strictly below `lambda_es * mean`.
pub fn early_stop_check(phi: f64, stats: &RewardStats, lambda_es: f64) -> EarlyStop {
    if stats.count() > 0 && phi < stats.threshold(lambda_es) {
        EarlyStop::Stop
    } else {
        EarlyStop::Continue
    }
}

/// Prune an exploration child scoring strictly below `lambda_ds * mean`.
pub fn deep_seek_check(phi: f64, stats: &RewardStats, lambda_ds: f64) -> DeepSeek {
    if stats.count() > 0 && phi < stats.threshold(lambda_ds) {
        DeepSeek::Prune
    } else {
        DeepSeek::Keep
    }
}

/// Once `t_star` solutions exist, only pursue nodes that beat the best one.
pub fn solution_gate(candidate_phi: f64, solutions: &[f64], t_star: usize) -> SolutionGate {
    if solutions.len() < t_star {
        return SolutionGate::Pursue;
    }
    let best = solutions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if candidate_phi > best {
        SolutionGate::Pursue
    } else {
        SolutionGate::Skip
    }
}

pub fn budget_check(elapsed_s: f64, rollouts: usize, config: &Config) -> Budget {
    if elapsed_s > config.t_max || rollouts >= config.r_max {
        Budget::Halt
    } else {
        Budget::Continue
    }
}
