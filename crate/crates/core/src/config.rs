use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{MergePolicy, RepresentativeMode};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    OptionA,
    OptionB,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Real,
    /// Time advances only by backend-declared call costs.
    #[default]
    Simulated,
}

/// Search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Similarity threshold for merging siblings.
    pub tau: f64,
    /// Children generated per expansion.
    pub b: usize,
    /// Nodes selected per round.
    pub k: usize,
    /// UCB exploration weight.
    pub w: f64,
    pub lambda_es: f64,
    pub lambda_ds: f64,
    /// Solutions found before quality gating switches on.
    pub t_star: usize,
    /// Time budget in seconds.
    pub t_max: f64,
    /// Maximum number of selection rounds.
    pub r_max: usize,
    /// Exploit ratio.
    pub p: f64,
    pub merge_mode: MergeMode,
    pub seed: u64,
    pub clock_mode: ClockMode,
    /// Best-of-N: independent rollouts.
    pub bon_n: usize,
    /// Beam search width.
    pub beam_width: usize,
    /// Depth cap for Best-of-N rollouts and beam search.
    pub max_depth: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            tau: 0.75,
            b: 4,
            k: 4,
            w: std::f64::consts::FRAC_1_SQRT_2,
            lambda_es: 0.8,
            lambda_ds: 0.8,
            t_star: 5,
            t_max: 120.0,
            r_max: 20,
            p: 0.5,
            merge_mode: MergeMode::OptionA,
            seed: 0,
            clock_mode: ClockMode::Simulated,
            bon_n: 8,
            beam_width: 4,
            max_depth: 32,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau < -1.0 {
            return Err(Error::Config(format!("tau must be >= -1, got {}", self.tau)));
        }
        at_least_one("b", self.b)?;
        at_least_one("k", self.k)?;
        at_least_one("t_star", self.t_star)?;
        at_least_one("r_max", self.r_max)?;
        at_least_one("bon_n", self.bon_n)?;
        at_least_one("beam_width", self.beam_width)?;
        at_least_one("max_depth", self.max_depth)?;
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config(format!("w must be >= 0, got {}", self.w)));
        }
        unit_interval("lambda_es", self.lambda_es)?;
        unit_interval("lambda_ds", self.lambda_ds)?;
        unit_interval("p", self.p)?;
        if self.t_max.is_nan() || self.t_max <= 0.0 {
            return Err(Error::Config(format!("t_max must be positive, got {}", self.t_max)));
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyParams {
        PolicyParams {
            w: self.w,
            k: self.k,
            p: self.p,
        }
    }

    /// Merge policy, or `None` when merging cannot change the survivor set.
    ///
    /// Cosine similarity never exceeds 1, so `tau > 1` behaves exactly like
    /// a disabled merge step and skips embedding altogether.
    pub fn merge_policy(&self) -> Option<MergePolicy> {
        let mode = match self.merge_mode {
            MergeMode::Disabled => return None,
            MergeMode::OptionA => RepresentativeMode::OptionA,
            MergeMode::OptionB => RepresentativeMode::OptionB,
        };
        (self.tau <= 1.0).then_some(MergePolicy {
            tau: self.tau,
            mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let c = Config::default();
        assert_eq!(c.tau, 0.75);
        assert_eq!(c.b, 4);
        assert!((c.w - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.lambda_es, 0.8);
        assert_eq!(c.lambda_ds, 0.8);
        assert_eq!(c.t_star, 5);
        assert_eq!(c.t_max, 120.0);
        assert_eq!(c.r_max, 20);
        assert_eq!(c.p, 0.5);
        assert_eq!(c.k, 4);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let bad = [
            Config { tau: -1.5, ..Default::default() },
            Config { b: 0, ..Default::default() },
            Config { lambda_es: 1.2, ..Default::default() },
            Config { p: -0.1, ..Default::default() },
            Config { t_max: 0.0, ..Default::default() },
            Config { r_max: 0, ..Default::default() },
            Config { tau: f64::NAN, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn tau_above_one_disables_merging() {
        let c = Config { tau: 1.01, ..Default::default() };
        assert!(c.merge_policy().is_none());
        let c = Config { merge_mode: MergeMode::Disabled, ..Default::default() };
        assert!(c.merge_policy().is_none());
        assert!(Config::default().merge_policy().is_some());
    }

    #[test]
    fn toml_round_trip_with_partial_keys() {
        let c: Config = toml::from_str("tau = 0.5\nmerge_mode = \"option_b\"\n").unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.merge_mode, MergeMode::OptionB);
        assert_eq!(c.b, 4);
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
    }
}
