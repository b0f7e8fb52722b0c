//! Dual-mode evaluation: search-enabled efficiency metrics (accuracy, tool
//! calls, tool productivity, per-search-count breakdown) and search-disabled
//! abstention metrics (accuracy, precision, abstention rates, Delta).

use crate::policy::{Action, PolicyTable};
use crate::protocol::{self, ProtocolError, TrajectoryRecord};
use crate::reward;
use crate::seed::{derive_seed, stream};
use crate::trajectory::{StepKind, Trajectory};
use crate::world::{self, QuestionSpec, WorldConfig, WorldError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record set must be non-empty")]
    EmptyRecords,
    #[error("question set must be non-empty")]
    EmptyQuestions,
    #[error("question {0} missing from the answerability profile")]
    ProfileMismatch(u64),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Mean of `correct / (1 + searches)`: accuracy discounted by tool calls.
pub fn tool_productivity(records: &[(bool, u32)]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let sum: f64 = records
        .iter()
        .map(|&(correct, m)| {
            if correct {
                1.0 / (1.0 + m as f64)
            } else {
                0.0
            }
        })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Fraction and accuracy of one search-count bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub fraction: f64,
    pub accuracy: Option<f64>,
}

/// Search-enabled evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchModeReport {
    pub accuracy: f64,
    pub mean_tool_calls: f64,
    pub tool_productivity: f64,
    pub bucket_zero: Bucket,
    pub bucket_one: Bucket,
    pub bucket_two_plus: Bucket,
    pub samples_per_question: usize,
    pub num_records: usize,
}

/// Report plus the trajectory corpus records behind it.
#[derive(Debug, Clone)]
pub struct SearchEvalOutcome {
    pub report: SearchModeReport,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Roll out the policy with search enabled over `samples_per_q` samples per
/// question and aggregate the efficiency metrics.
pub fn eval_search_mode(
    policy: &PolicyTable,
    world: &WorldConfig,
    questions: &[QuestionSpec],
    samples_per_q: usize,
    seed: u64,
) -> Result<SearchEvalOutcome, EvalError> {
    if questions.is_empty() || samples_per_q == 0 {
        return Err(EvalError::EmptyQuestions);
    }
    let grammar = protocol::TagGrammar::for_mode(world.oracle_mode);
    let mut records = Vec::with_capacity(questions.len() * samples_per_q);
    let mut trajectories = Vec::with_capacity(records.capacity());
    for (qi, question) in questions.iter().enumerate() {
        for sample in 0..samples_per_q {
            let rollout_seed = derive_seed(seed, "eval-search", &[qi as u64, sample as u64]);
            let rollout = crate::policy::sample_trajectory(policy, question, world, rollout_seed)?;
            let answer = rollout.trajectory.answer_text().unwrap_or("");
            let correct = reward::exact_match(answer, &question.gold_answer);
            let m = rollout.trajectory.search_count();
            trajectories.push(TrajectoryRecord {
                question_id: question.question_id,
                text: protocol::serialize(&rollout.trajectory, &grammar)?,
                truncated: rollout.trajectory.truncated,
                search_count: m,
                correct,
            });
            records.push((correct, m));
        }
    }
    let report = summarize_search_records(&records, samples_per_q)?;
    Ok(SearchEvalOutcome {
        report,
        trajectories,
    })
}

fn summarize_search_records(
    records: &[(bool, u32)],
    samples_per_q: usize,
) -> Result<SearchModeReport, EvalError> {
    let n = records.len() as f64;
    let accuracy = records.iter().filter(|(c, _)| *c).count() as f64 / n;
    let mean_tc = records.iter().map(|&(_, m)| m as f64).sum::<f64>() / n;
    let tp = tool_productivity(records)?;
    let bucket = |pred: &dyn Fn(u32) -> bool| -> Bucket {
        let members: Vec<_> = records.iter().filter(|&&(_, m)| pred(m)).collect();
        let fraction = members.len() as f64 / n;
        let accuracy = if members.is_empty() {
            None
        } else {
            Some(members.iter().filter(|(c, _)| *c).count() as f64 / members.len() as f64)
        };
        Bucket { fraction, accuracy }
    };
    Ok(SearchModeReport {
        accuracy,
        mean_tool_calls: mean_tc,
        tool_productivity: tp,
        bucket_zero: bucket(&|m| m == 0),
        bucket_one: bucket(&|m| m == 1),
        bucket_two_plus: bucket(&|m| m >= 2),
        samples_per_question: samples_per_q,
        num_records: records.len(),
    })
}

/// Per-question parametric answerability estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionProfile {
    pub question_id: u64,
    pub mean_accuracy: f64,
    pub always_correct: bool,
    pub always_incorrect: bool,
    pub answerable: bool,
}

/// Answerability profile over a question set: `k_samples` parametric draws
/// per question, plus the threshold classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerabilityProfile {
    pub k_samples: usize,
    pub lambda_ans: f64,
    pub entries: Vec<QuestionProfile>,
}

impl AnswerabilityProfile {
    fn by_id(&self) -> BTreeMap<u64, &QuestionProfile> {
        self.entries.iter().map(|e| (e.question_id, e)).collect()
    }
}

/// Estimate parametric accuracy per question with `k_samples` zero-search
/// outcome draws.
pub fn answerability_profile(
    world: &WorldConfig,
    questions: &[QuestionSpec],
    k_samples: usize,
    lambda_ans: f64,
    seed: u64,
) -> Result<AnswerabilityProfile, EvalError> {
    let k = k_samples.max(1);
    let mut entries = Vec::with_capacity(questions.len());
    for (qi, question) in questions.iter().enumerate() {
        let qtype = world.question_type(question.type_id)?;
        let mut rng = stream(seed, "profile", &[qi as u64]);
        let mut hits = 0usize;
        for _ in 0..k {
            if world::answer_outcome(world::EnvState::default(), qtype, &mut rng) {
                hits += 1;
            }
        }
        let mean = hits as f64 / k as f64;
        entries.push(QuestionProfile {
            question_id: question.question_id,
            mean_accuracy: mean,
            always_correct: hits == k,
            always_incorrect: hits == 0,
            answerable: mean > lambda_ans,
        });
    }
    Ok(AnswerabilityProfile {
        k_samples: k,
        lambda_ans,
        entries,
    })
}

/// Abstention-mode evaluation report. Metrics that need a non-empty bucket
/// (precision with zero answered records, the abstention rates over
/// always-incorrect / always-correct questions) are `None` when unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionReport {
    pub overall_accuracy: f64,
    pub precision: Option<f64>,
    pub abstain_rate: f64,
    pub abs0_pct: Option<f64>,
    pub abs1_pct: Option<f64>,
    pub delta: Option<f64>,
    pub samples_per_question: usize,
    pub num_records: usize,
    pub num_always_incorrect: usize,
    pub num_always_correct: usize,
}

/// Abstention-mode outcome: report plus the (single-action) trajectories.
#[derive(Debug, Clone)]
pub struct AbstentionEvalOutcome {
    pub report: AbstentionReport,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Evaluate with search access removed: the first action decides — a search
/// at the initial state is recorded as an abstention and the trajectory ends
/// (serialized with its literal search step); an answer is scored by the
/// world. Every sample counts as an independent record.
pub fn eval_abstention_mode(
    policy: &PolicyTable,
    world: &WorldConfig,
    questions: &[QuestionSpec],
    profile: &AnswerabilityProfile,
    samples_per_q: usize,
    seed: u64,
) -> Result<AbstentionEvalOutcome, EvalError> {
    if questions.is_empty() || samples_per_q == 0 {
        return Err(EvalError::EmptyQuestions);
    }
    let by_id = profile.by_id();
    let grammar = protocol::TagGrammar::for_mode(world.oracle_mode);
    let mut trajectories = Vec::with_capacity(questions.len() * samples_per_q);
    let mut total = 0usize;
    let mut abstained = 0usize;
    let mut correct_total = 0usize;
    let mut answered = 0usize;
    let mut answered_correct = 0usize;
    let mut abs0 = (0usize, 0usize); // (abstained, records) over always-incorrect
    let mut abs1 = (0usize, 0usize); // over always-correct
    for (qi, question) in questions.iter().enumerate() {
        let entry = *by_id
            .get(&question.question_id)
            .ok_or(EvalError::ProfileMismatch(question.question_id))?;
        let qtype = world.question_type(question.type_id)?;
        let state = policy.state_index(question.type_id, 0, 0)?;
        for sample in 0..samples_per_q {
            let mut rng = stream(seed, "eval-abstain", &[qi as u64, sample as u64]);
            let probs = policy.action_prob(state)?;
            let action = if rng.random::<f64>() < probs[Action::Answer.index()] {
                Action::Answer
            } else {
                Action::Search
            };
            total += 1;
            let trajectory = match action {
                Action::Search => {
                    abstained += 1;
                    if entry.always_incorrect {
                        abs0.0 += 1;
                    }
                    if entry.always_correct {
                        abs1.0 += 1;
                    }
                    Trajectory {
                        question_id: question.question_id,
                        steps: vec![
                            StepKind::Think(protocol::THINK_PLACEHOLDER.into()),
                            StepKind::Search(format!(
                                "lookup {:016x} s0",
                                question.question_id
                            )),
                        ],
                        truncated: true,
                    }
                }
                Action::Answer => {
                    answered += 1;
                    let ok = world::answer_outcome(world::EnvState::default(), qtype, &mut rng);
                    if ok {
                        correct_total += 1;
                        answered_correct += 1;
                    }
                    let text = if ok {
                        question.gold_answer.clone()
                    } else {
                        format!("unknown-{:016x}", question.question_id)
                    };
                    Trajectory {
                        question_id: question.question_id,
                        steps: vec![
                            StepKind::Think(protocol::THINK_PLACEHOLDER.into()),
                            StepKind::Answer(text),
                        ],
                        truncated: false,
                    }
                }
            };
            if entry.always_incorrect {
                abs0.1 += 1;
            }
            if entry.always_correct {
                abs1.1 += 1;
            }
            let correct = matches!(trajectory.answer_text(), Some(a) if reward::exact_match(a, &question.gold_answer));
            trajectories.push(TrajectoryRecord {
                question_id: question.question_id,
                text: protocol::serialize(&trajectory, &grammar)?,
                truncated: trajectory.truncated,
                search_count: trajectory.search_count(),
                correct,
            });
        }
    }
    let pct = |(num, den): (usize, usize)| -> Option<f64> {
        if den == 0 {
            None
        } else {
            Some(100.0 * num as f64 / den as f64)
        }
    };
    let abs0_pct = pct(abs0);
    let abs1_pct = pct(abs1);
    let report = AbstentionReport {
        overall_accuracy: correct_total as f64 / total as f64,
        precision: if answered == 0 {
            None
        } else {
            Some(answered_correct as f64 / answered as f64)
        },
        abstain_rate: abstained as f64 / total as f64,
        abs0_pct,
        abs1_pct,
        delta: match (abs0_pct, abs1_pct) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        },
        samples_per_question: samples_per_q,
        num_records: total,
        num_always_incorrect: abs0.1 / samples_per_q,
        num_always_correct: abs1.1 / samples_per_q,
    };
    Ok(AbstentionEvalOutcome {
        report,
        trajectories,
    })
}
