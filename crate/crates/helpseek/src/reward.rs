//! Pay-per-search reward: binary answer correctness multiplied by a search
//! penalty computed against the group's efficiency baseline.
//!
//! The baseline `n` is the search count of the most efficient *correct*
//! trajectory within a sampled group; `m` is the scored trajectory's own
//! search count. Three penalty shapes are provided, in decreasing order of
//! severity: `OtcStrict`, `Exp`, `Otc`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("lambda_decay must lie in (0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("otc constant c must be >= 1")]
    InvalidC,
    #[error("reward group must be non-empty")]
    EmptyGroup,
}

/// Search-penalty variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardVariant {
    /// `lambda^(m - n)`, clamped to 1 for `m <= n`.
    Exp,
    /// Sinusoidal over-call penalty with a cosine branch when the group has a
    /// correct zero-search trajectory.
    Otc,
    /// Like `Otc`, but zero reward for any search when the group shows the
    /// question was answerable without one.
    OtcStrict,
}

impl RewardVariant {
    pub fn label(&self) -> &'static str {
        match self {
            RewardVariant::Exp => "exp",
            RewardVariant::Otc => "otc",
            RewardVariant::OtcStrict => "otc-strict",
        }
    }
}

/// Penalty variant plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    /// Decay base for `Exp`; ignored by the OTC variants.
    pub lambda_decay: f64,
    /// OTC normalization constant; set to the search budget unless overridden.
    pub c: u32,
}

impl RewardConfig {
    pub fn new(variant: RewardVariant, lambda_decay: f64, c: u32) -> Result<Self, RewardError> {
        let cfg = Self {
            variant,
            lambda_decay,
            c,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.lambda_decay > 0.0 && self.lambda_decay <= 1.0) {
            return Err(RewardError::InvalidLambda(self.lambda_decay));
        }
        if self.c < 1 {
            return Err(RewardError::InvalidC);
        }
        Ok(())
    }

    /// Dispatch to the configured penalty.
    pub fn r_help(&self, m: u32, n: u32) -> Result<f64, RewardError> {
        match self.variant {
            RewardVariant::Exp => r_help_exp(m, n, self.lambda_decay),
            RewardVariant::Otc => Ok(r_help_otc(m, n, self.c)),
            RewardVariant::OtcStrict => Ok(r_help_otc_strict(m, n, self.c)),
        }
    }
}

/// Exact-match normalization: lowercase, trim, collapse internal whitespace.
fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Exact-match correctness after normalization; empty answers never match.
pub fn exact_match(answer: &str, gold: &str) -> bool {
    let a = normalize(answer);
    if a.is_empty() {
        return false;
    }
    a == normalize(gold)
}

/// Binary accuracy reward.
pub fn r_acc(answer: &str, gold: &str) -> f64 {
    if exact_match(answer, gold) {
        1.0
    } else {
        0.0
    }
}

/// Search count of the most efficient correct trajectory in a group; 0 when
/// the group has no correct trajectory (a sentinel: every total reward in
/// such a group is already 0, the baseline only keeps `r_help` defined).
pub fn n_eff(group: &[(bool, u32)]) -> Result<u32, RewardError> {
    if group.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    Ok(group
        .iter()
        .filter(|(correct, _)| *correct)
        .map(|&(_, m)| m)
        .min()
        .unwrap_or(0))
}

/// Exponential-decay penalty `lambda^(m - n)`, clamped to 1 for `m <= n` so
/// the output stays in [0, 1].
pub fn r_help_exp(m: u32, n: u32, lambda_decay: f64) -> Result<f64, RewardError> {
    if !(lambda_decay > 0.0 && lambda_decay <= 1.0) {
        return Err(RewardError::InvalidLambda(lambda_decay));
    }
    if m <= n {
        Ok(1.0)
    } else {
        Ok(lambda_decay.powi((m - n) as i32))
    }
}

/// OTC penalty:
/// 1 at `m = n = 0`; `cos(m*pi / (2m + c))` when `n = 0`; `sin(m*pi / (m + n))`
/// otherwise. The sine branch yields 0 at `m = 0, n > 0`, which only arises
/// for incorrect zero-search trajectories (a correct one would force `n = 0`).
pub fn r_help_otc(m: u32, n: u32, c: u32) -> f64 {
    debug_assert!(c >= 1);
    if m == 0 && n == 0 {
        1.0
    } else if n == 0 {
        (m as f64 * PI / (2 * m + c) as f64).cos()
    } else {
        (m as f64 * PI / (m + n) as f64).sin()
    }
}

/// OTC-Strict penalty: any search on a question the group answered correctly
/// without searching earns exactly 0; otherwise identical to `r_help_otc`.
pub fn r_help_otc_strict(m: u32, n: u32, c: u32) -> f64 {
    debug_assert!(c >= 1);
    if m == 0 && n == 0 {
        1.0
    } else if n == 0 {
        0.0
    } else {
        (m as f64 * PI / (m + n) as f64).sin()
    }
}

/// Total reward: correctness times the search penalty.
pub fn total_reward(r_acc: f64, r_help: f64) -> f64 {
    r_acc * r_help
}

/// Per-trajectory reward terms within one scored group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub correct: bool,
    pub search_count: u32,
    pub help_reward: f64,
    pub total: f64,
}

/// Rewards for a full group plus the shared efficiency baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub scores: Vec<TrajectoryScore>,
    /// The baseline `n`: minimum search count among correct trajectories.
    pub efficient_search_count: u32,
}

impl GroupRewards {
    pub fn totals(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.total).collect()
    }
}

/// Score a group of `(correct, search_count)` outcomes under one config.
pub fn score_group(
    outcomes: &[(bool, u32)],
    config: &RewardConfig,
) -> Result<GroupRewards, RewardError> {
    config.validate()?;
    let n = n_eff(outcomes)?;
    let mut scores = Vec::with_capacity(outcomes.len());
    for &(correct, m) in outcomes {
        let help_reward = config.r_help(m, n)?;
        let acc = if correct { 1.0 } else { 0.0 };
        scores.push(TrajectoryScore {
            correct,
            search_count: m,
            help_reward,
            total: total_reward(acc, help_reward),
        });
    }
    Ok(GroupRewards {
        scores,
        efficient_search_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;
    // Independent value for sin(pi/3) = sin(2*pi/3) = sqrt(3)/2.
    fn sqrt3_half() -> f64 {
        3.0f64.sqrt() / 2.0
    }

    #[test]
    fn exact_match_normalizes_case_and_whitespace() {
        assert_eq!(r_acc("Paris", "Paris"), 1.0);
        assert_eq!(r_acc("paris ", "Paris"), 1.0);
        assert_eq!(r_acc("new  york", "New York"), 1.0);
        assert_eq!(r_acc("London", "Paris"), 0.0);
        assert_eq!(r_acc("   ", "Paris"), 0.0);
    }

    #[test]
    fn n_eff_minimum_over_correct_entries() {
        assert_eq!(n_eff(&[(true, 2), (true, 0), (false, 1)]).unwrap(), 0);
        assert_eq!(n_eff(&[(false, 3), (false, 0)]).unwrap(), 0);
        assert_eq!(n_eff(&[(true, 1), (true, 3)]).unwrap(), 1);
        assert_eq!(n_eff(&[]), Err(RewardError::EmptyGroup));
    }

    #[test]
    fn exp_penalty_values() {
        assert!((r_help_exp(2, 2, 0.5).unwrap() - 1.0).abs() < TOL);
        assert!((r_help_exp(3, 1, 0.5).unwrap() - 0.25).abs() < TOL);
        assert!((r_help_exp(1, 0, 0.8).unwrap() - 0.8).abs() < TOL);
        // Clamped below n: never rewards over-frugality above 1.
        assert!((r_help_exp(1, 3, 0.5).unwrap() - 1.0).abs() < TOL);
        assert_eq!(
            r_help_exp(1, 0, 1.5),
            Err(RewardError::InvalidLambda(1.5))
        );
        assert_eq!(
            r_help_exp(1, 0, 0.0),
            Err(RewardError::InvalidLambda(0.0))
        );
    }

    #[test]
    fn otc_penalty_values() {
        assert!((r_help_otc(0, 0, 5) - 1.0).abs() < TOL);
        // cos(5*pi/15) = cos(pi/3) = 1/2.
        assert!((r_help_otc(5, 0, 5) - 0.5).abs() < TOL);
        // sin(pi/2) at m = n.
        assert!((r_help_otc(2, 2, 5) - 1.0).abs() < TOL);
        // sin(2*pi/3).
        assert!((r_help_otc(2, 1, 5) - sqrt3_half()).abs() < TOL);
    }

    #[test]
    fn otc_strict_penalty_values() {
        assert_eq!(r_help_otc_strict(3, 0, 5), 0.0);
        assert!((r_help_otc_strict(0, 0, 5) - 1.0).abs() < TOL);
        // sin(pi/3).
        assert!((r_help_otc_strict(1, 2, 5) - sqrt3_half()).abs() < TOL);
    }

    #[test]
    fn total_reward_is_product() {
        assert_eq!(total_reward(1.0, 0.5), 0.5);
        assert_eq!(total_reward(0.0, 1.0), 0.0);
        assert_eq!(total_reward(1.0, 1.0), 1.0);
    }

    #[test]
    fn help_rewards_stay_in_unit_interval() {
        for m in 0..=8u32 {
            for n in 0..=8u32 {
                for c in 1..=8u32 {
                    for v in [
                        r_help_otc(m, n, c),
                        r_help_otc_strict(m, n, c),
                        r_help_exp(m, n, 0.5).unwrap(),
                        r_help_exp(m, n, 0.8).unwrap(),
                    ] {
                        assert!((0.0..=1.0 + TOL).contains(&v), "m={m} n={n} c={c} v={v}");
                    }
                }
            }
        }
    }

    #[test]
    fn severity_ordering_at_zero_baseline() {
        // Decreasing severity: otc-strict -> exp -> otc, for m in 1..=L.
        for m in 1..=5u32 {
            for lambda in [0.5, 0.8] {
                let strict = r_help_otc_strict(m, 0, 5);
                let exp = r_help_exp(m, 0, lambda).unwrap();
                let otc = r_help_otc(m, 0, 5);
                assert!(strict <= exp + TOL, "m={m} lambda={lambda}");
                assert!(strict <= otc + TOL, "m={m} lambda={lambda}");
                assert!(exp <= otc + TOL, "m={m} lambda={lambda}");
            }
        }
    }

    #[test]
    fn otc_non_increasing_in_m_at_zero_baseline() {
        let c = 5;
        let mut prev = r_help_otc(0, 0, c);
        for m in 1..=c {
            let cur = r_help_otc(m, 0, c);
            assert!(cur <= prev + TOL, "m={m}");
            prev = cur;
        }
    }

    #[test]
    fn incorrect_trajectories_score_zero_under_every_variant() {
        for variant in [RewardVariant::Exp, RewardVariant::Otc, RewardVariant::OtcStrict] {
            let cfg = RewardConfig::new(variant, 0.5, 5).unwrap();
            let rewards = score_group(&[(false, 2), (true, 1), (false, 0)], &cfg).unwrap();
            assert_eq!(rewards.scores[0].total, 0.0);
            assert_eq!(rewards.scores[2].total, 0.0);
            assert!(rewards.scores[1].total > 0.0);
        }
    }

    #[test]
    fn score_group_uses_self_inclusive_baseline() {
        let cfg = RewardConfig::new(RewardVariant::Otc, 0.5, 5).unwrap();
        let rewards = score_group(&[(true, 2), (true, 1)], &cfg).unwrap();
        assert_eq!(rewards.efficient_search_count, 1);
        // m=1 vs n=1: sin(pi/2) = 1.
        assert!((rewards.scores[1].total - 1.0).abs() < TOL);
        // m=2 vs n=1: sin(2*pi/3).
        assert!((rewards.scores[0].total - 3.0f64.sqrt() / 2.0).abs() < TOL);
    }

    #[test]
    fn reward_config_rejects_bad_parameters() {
        assert!(RewardConfig::new(RewardVariant::Exp, 0.0, 5).is_err());
        assert!(RewardConfig::new(RewardVariant::Otc, 0.5, 0).is_err());
    }
}
