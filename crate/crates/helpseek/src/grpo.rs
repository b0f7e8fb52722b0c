//! Group-relative policy-gradient trainer: clipped surrogate over
//! policy-chosen actions with group-normalized advantages, an entropy bonus,
//! and an optional KL anchor to the initial policy.

use crate::eval;
use crate::policy::{Action, PolicyError, PolicyTable, Rollout};
use crate::protocol::ProtocolError;
use crate::reward::{self, GroupRewards, RewardConfig, RewardError};
use crate::seed::{derive_seed, stream};
use crate::world::{self, QuestionSpec, WorldConfig, WorldError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stabilizer for group advantage normalization. Applied as a floor on the
/// group standard deviation so that positively rescaling a group's rewards
/// leaves its advantages bit-for-bit unchanged.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("advantage groups need at least 2 rewards")]
    GroupTooSmall,
    #[error("train config invalid: {0}")]
    BadConfig(String),
    #[error("policy shape does not match the world")]
    ShapeMismatch,
    #[error("beta_kl > 0 requires the initial policy")]
    MissingInitPolicy,
    #[error("non-finite gradient at step {step}: {detail}")]
    NonFiniteGradient { step: u64, detail: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub batch_questions: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub entropy_coeff: f64,
    pub beta_kl: f64,
    pub grad_clip_norm: f64,
    pub steps: u64,
    pub eval_every: u64,
    pub std_normalize: bool,
    pub val_questions: usize,
    pub val_samples_per_q: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            batch_questions: 64,
            learning_rate: 0.5,
            clip_epsilon: 0.2,
            entropy_coeff: 0.001,
            beta_kl: 0.0,
            grad_clip_norm: 1.0,
            steps: 200,
            eval_every: 25,
            std_normalize: true,
            val_questions: 200,
            val_samples_per_q: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(TrainError::BadConfig("group_size must be >= 2".into()));
        }
        if self.batch_questions < 1 {
            return Err(TrainError::BadConfig("batch_questions must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if !(self.clip_epsilon.is_finite() && self.clip_epsilon > 0.0) {
            return Err(TrainError::BadConfig("clip_epsilon must be positive".into()));
        }
        for (name, v) in [
            ("entropy_coeff", self.entropy_coeff),
            ("beta_kl", self.beta_kl),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::BadConfig(format!("{name} must be >= 0")));
            }
        }
        if self.eval_every < 1 {
            return Err(TrainError::BadConfig("eval_every must be >= 1".into()));
        }
        if self.val_questions < 1 || self.val_samples_per_q < 1 {
            return Err(TrainError::BadConfig(
                "validation set and samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Group-relative advantages: rewards centered on the group mean and, when
/// `std_normalize` is set, divided by the group standard deviation (floored
/// at [`ADVANTAGE_STD_FLOOR`]). An all-equal group yields all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_normalize: bool) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let denom = if std_normalize {
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        var.sqrt().max(ADVANTAGE_STD_FLOOR)
    } else {
        1.0
    };
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// PPO-style clipped surrogate for one action.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    (ratio * advantage).min(clipped)
}

/// All rollouts, rewards, and advantages for one question.
#[derive(Debug, Clone)]
pub struct QuestionGroup {
    pub question: QuestionSpec,
    pub rollouts: Vec<Rollout>,
    pub rewards: GroupRewards,
    pub advantages: Vec<f64>,
}

/// One training batch: a group of rollouts per question.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub groups: Vec<QuestionGroup>,
}

impl GroupBatch {
    pub fn mean_reward(&self) -> f64 {
        let (sum, count) = self.fold(|s| s.total);
        sum / count
    }

    pub fn mean_tool_calls(&self) -> f64 {
        let (sum, count) = self.fold(|s| s.search_count as f64);
        sum / count
    }

    pub fn accuracy(&self) -> f64 {
        let (sum, count) = self.fold(|s| if s.correct { 1.0 } else { 0.0 });
        sum / count
    }

    pub fn help_rate(&self) -> f64 {
        let (sum, count) = self.fold(|s| if s.search_count >= 1 { 1.0 } else { 0.0 });
        sum / count
    }

    fn fold(&self, f: impl Fn(&reward::TrajectoryScore) -> f64) -> (f64, f64) {
        let mut sum = 0.0;
        let mut count = 0.0f64;
        for g in &self.groups {
            for s in &g.rewards.scores {
                sum += f(s);
                count += 1.0;
            }
        }
        (sum, count.max(1.0))
    }
}

/// Roll out `group_size` trajectories per question and score them. Each
/// rollout draws from its own seed stream, so results are independent of
/// rollout scheduling.
pub fn collect_batch(
    policy: &PolicyTable,
    world: &WorldConfig,
    questions: &[QuestionSpec],
    reward_config: &RewardConfig,
    config: &TrainConfig,
    step: u64,
) -> Result<GroupBatch, TrainError> {
    let mut groups = Vec::with_capacity(questions.len());
    for (qi, question) in questions.iter().enumerate() {
        let mut rollouts = Vec::with_capacity(config.group_size);
        for g in 0..config.group_size {
            let seed = derive_seed(config.seed, "rollout", &[step, qi as u64, g as u64]);
            rollouts.push(crate::policy::sample_trajectory(
                policy, question, world, seed,
            )?);
        }
        let outcomes: Vec<(bool, u32)> = rollouts
            .iter()
            .map(|r| {
                let answer = r.trajectory.answer_text().unwrap_or("");
                (
                    reward::exact_match(answer, &question.gold_answer),
                    r.trajectory.search_count(),
                )
            })
            .collect();
        let rewards = reward::score_group(&outcomes, reward_config)?;
        let advantages = compute_advantages(&rewards.totals(), config.std_normalize)?;
        groups.push(QuestionGroup {
            question: question.clone(),
            rollouts,
            rewards,
            advantages,
        });
    }
    Ok(GroupBatch { groups })
}

/// Diagnostics from one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub mean_reward: f64,
    pub mean_tc: f64,
    pub accuracy: f64,
    pub entropy: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub help_rate: f64,
}

/// Per-step training log record (JSON-lines schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_tc: f64,
    pub accuracy: f64,
    pub entropy: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub help_rate: f64,
}

/// Validation record emitted every `eval_every` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub tool_productivity: f64,
    pub accuracy: f64,
    pub mean_tool_calls: f64,
}

/// Receives log records as training progresses, so logs survive aborts.
pub trait TrainSink {
    fn on_step(&mut self, record: &TrainLogRecord) -> std::io::Result<()>;
    fn on_validation(&mut self, record: &ValidationRecord) -> std::io::Result<()>;
}

/// Sink that discards records.
pub struct NullSink;

impl TrainSink for NullSink {
    fn on_step(&mut self, _record: &TrainLogRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn on_validation(&mut self, _record: &ValidationRecord) -> std::io::Result<()> {
        Ok(())
    }
}

/// One ascent step on the clipped surrogate plus entropy bonus minus the KL
/// anchor, over policy-chosen actions only (document and think content never
/// enters the loss). The reward driving the advantages is exactly the
/// accuracy-times-penalty product; no auxiliary shaping.
pub fn policy_gradient_step(
    policy: &mut PolicyTable,
    batch: &GroupBatch,
    init_policy: Option<&PolicyTable>,
    config: &TrainConfig,
) -> Result<StepDiagnostics, TrainError> {
    config.validate()?;
    if config.beta_kl > 0.0 && init_policy.is_none() {
        return Err(TrainError::MissingInitPolicy);
    }
    let num_states = policy.num_states();
    let mut grad = vec![0.0f64; num_states * Action::COUNT];
    let mut visits = vec![0.0f64; num_states];
    let mut tokens = 0usize;
    let mut entropy_sum = 0.0;

    for group in &batch.groups {
        for (rollout, &advantage) in group.rollouts.iter().zip(&group.advantages) {
            for rec in rollout.actions.iter().filter(|r| !r.forced) {
                tokens += 1;
                visits[rec.state] += 1.0;
                let probs = policy.action_prob(rec.state)?;
                let cur_log_prob = probs[rec.action.index()].ln();
                let ratio = (cur_log_prob - rec.log_prob).exp();
                let unclipped = ratio * advantage;
                let clipped = ratio.clamp(1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
                    * advantage;
                // Gradient flows only while the unclipped branch is active.
                let factor = if unclipped <= clipped { advantage * ratio } else { 0.0 };
                let h = -(probs[0] * safe_ln(probs[0]) + probs[1] * safe_ln(probs[1]));
                entropy_sum += h;
                for b in 0..Action::COUNT {
                    let indicator = if b == rec.action.index() { 1.0 } else { 0.0 };
                    let g = factor * (indicator - probs[b])
                        + config.entropy_coeff * (-probs[b] * (safe_ln(probs[b]) + h));
                    grad[rec.state * 2 + b] += g;
                }
            }
        }
    }

    if tokens == 0 {
        return Ok(StepDiagnostics {
            mean_reward: batch.mean_reward(),
            mean_tc: batch.mean_tool_calls(),
            accuracy: batch.accuracy(),
            entropy: 0.0,
            kl: 0.0,
            grad_norm: 0.0,
            help_rate: batch.help_rate(),
        });
    }
    let t = tokens as f64;
    for g in grad.iter_mut() {
        *g /= t;
    }

    let mut kl = 0.0;
    if config.beta_kl > 0.0 {
        let init = init_policy.expect("checked above");
        if !policy.same_shape(init) {
            return Err(TrainError::ShapeMismatch);
        }
        kl = policy.kl_to_init(init, &visits)?;
        let total_visits: f64 = visits.iter().sum();
        for (state, &w) in visits.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p = policy.action_prob(state)?;
            let q = init.action_prob(state)?;
            let kl_s = p[0] * safe_ln(p[0] / q[0]) + p[1] * safe_ln(p[1] / q[1]);
            for b in 0..Action::COUNT {
                let dkl = p[b] * (safe_ln(p[b] / q[b]) - kl_s);
                grad[state * 2 + b] -= config.beta_kl * (w / total_visits) * dkl;
            }
        }
    }

    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFiniteGradient {
            step: 0,
            detail: format!(
                "mean_reward={:.6} tokens={} first_bad={:?}",
                batch.mean_reward(),
                tokens,
                grad.iter().position(|g| !g.is_finite())
            ),
        });
    }
    let scale = if grad_norm > config.grad_clip_norm && grad_norm > 0.0 {
        config.grad_clip_norm / grad_norm
    } else {
        1.0
    };
    policy.add_to_logits(&grad, config.learning_rate * scale)?;

    Ok(StepDiagnostics {
        mean_reward: batch.mean_reward(),
        mean_tc: batch.mean_tool_calls(),
        accuracy: batch.accuracy(),
        entropy: entropy_sum / t,
        kl,
        grad_norm,
        help_rate: batch.help_rate(),
    })
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        0.0
    }
}

/// Outcome of a training run. `best_policy` is the checkpoint maximizing
/// validation tool productivity; with zero steps it is the initial policy.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_policy: PolicyTable,
    pub best_policy: PolicyTable,
    pub best_step: Option<u64>,
    pub best_val_tp: Option<f64>,
    pub step_log: Vec<TrainLogRecord>,
    pub val_log: Vec<ValidationRecord>,
}

/// Run the rollout -> reward -> advantage -> update loop, evaluating on a
/// held-out validation set every `eval_every` steps (and at the final step)
/// and tracking the checkpoint with the best validation tool productivity.
pub fn train(
    world: &WorldConfig,
    init_policy: &PolicyTable,
    reward_config: &RewardConfig,
    config: &TrainConfig,
    sink: &mut dyn TrainSink,
) -> Result<TrainOutcome, TrainError> {
    world.validate()?;
    reward_config.validate()?;
    config.validate()?;
    if !init_policy.same_shape(&PolicyTable::uniform(world)) {
        return Err(TrainError::ShapeMismatch);
    }

    let mut val_rng = stream(config.seed, "val-q", &[]);
    let mut val_questions = Vec::with_capacity(config.val_questions);
    for _ in 0..config.val_questions {
        val_questions.push(world::sample_question(world, &mut val_rng)?);
    }

    let mut policy = init_policy.clone();
    let reference = if config.beta_kl > 0.0 {
        Some(init_policy.clone())
    } else {
        None
    };
    let mut best: Option<(u64, f64, PolicyTable)> = None;
    let mut step_log = Vec::with_capacity(config.steps as usize);
    let mut val_log = Vec::new();

    for step in 1..=config.steps {
        let mut q_rng = stream(config.seed, "train-q", &[step]);
        let mut questions = Vec::with_capacity(config.batch_questions);
        for _ in 0..config.batch_questions {
            questions.push(world::sample_question(world, &mut q_rng)?);
        }
        let batch = collect_batch(&policy, world, &questions, reward_config, config, step)?;
        let diag = policy_gradient_step(&mut policy, &batch, reference.as_ref(), config)
            .map_err(|e| match e {
                TrainError::NonFiniteGradient { detail, .. } => {
                    TrainError::NonFiniteGradient { step, detail }
                }
                other => other,
            })?;
        let record = TrainLogRecord {
            step,
            mean_reward: diag.mean_reward,
            mean_tc: diag.mean_tc,
            accuracy: diag.accuracy,
            entropy: diag.entropy,
            kl: diag.kl,
            grad_norm: diag.grad_norm,
            help_rate: diag.help_rate,
        };
        sink.on_step(&record)?;
        step_log.push(record);

        if step % config.eval_every == 0 || step == config.steps {
            let outcome = eval::eval_search_mode(
                &policy,
                world,
                &val_questions,
                config.val_samples_per_q,
                derive_seed(config.seed, "val-eval", &[step]),
            )?;
            let record = ValidationRecord {
                step,
                tool_productivity: outcome.report.tool_productivity,
                accuracy: outcome.report.accuracy,
                mean_tool_calls: outcome.report.mean_tool_calls,
            };
            sink.on_validation(&record)?;
            let is_better = best
                .as_ref()
                .map(|(_, tp, _)| record.tool_productivity > *tp)
                .unwrap_or(true);
            if is_better {
                best = Some((step, record.tool_productivity, policy.clone()));
            }
            val_log.push(record);
        }
    }

    let (best_step, best_val_tp, best_policy) = match best {
        Some((s, tp, p)) => (Some(s), Some(tp), p),
        None => (None, None, policy.clone()),
    };
    Ok(TrainOutcome {
        final_policy: policy,
        best_policy,
        best_step,
        best_val_tp,
        step_log,
        val_log,
    })
}
