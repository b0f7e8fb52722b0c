//! Warm-start corpus construction (forced think/search/answer sequences with
//! a uniformly random search count) and behavior-cloning initialization of
//! the policy table from the corpus.
//!
//! The forced action sequence is independent of the question's parametric
//! answerability, so the cloned policy starts with diverse search behavior
//! that carries no knowledge-boundary signal.

use crate::policy::{Action, PolicyError, PolicyTable};
use crate::protocol::{
    self, ActionGenerator, InferenceConfig, ProtocolError, HELP_MESSAGE, THINK_PLACEHOLDER,
};
use crate::reward;
use crate::seed::{derive_seed, stream};
use crate::trajectory::{StepKind, Trajectory};
use crate::world::{self, QuestionSpec, QuestionType, WorldConfig, WorldError, WorldHelper};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarmStartError {
    #[error("l_target {l_target} exceeds l_max {l_max}")]
    LTargetTooLarge { l_target: u32, l_max: u32 },
    #[error("l_max {l_max} exceeds the world search budget {budget}")]
    LMaxTooLarge { l_max: u32, budget: u32 },
    #[error("num_samples must be >= 1")]
    NoSamples,
    #[error("candidate list must be non-empty")]
    EmptyCandidates,
    #[error("corpus must be non-empty")]
    EmptyCorpus,
    #[error("corpus row {index} invalid: {detail}")]
    BadRecord { index: usize, detail: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Corpus construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartConfig {
    pub l_max: u32,
    pub num_samples: usize,
    pub num_questions: usize,
    pub seed: u64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            l_max: 2,
            num_samples: 5,
            num_questions: 1000,
            seed: 0,
        }
    }
}

impl WarmStartConfig {
    pub fn validate(&self, world: &WorldConfig) -> Result<(), WarmStartError> {
        if self.l_max > world.budget {
            return Err(WarmStartError::LMaxTooLarge {
                l_max: self.l_max,
                budget: world.budget,
            });
        }
        if self.num_samples < 1 {
            return Err(WarmStartError::NoSamples);
        }
        Ok(())
    }
}

/// One constructed trajectory candidate.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub trajectory: Trajectory,
    pub answer: String,
    pub correct: bool,
}

/// Corpus row (JSON-lines schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub question_id: u64,
    pub type_id: u32,
    pub l_target: u32,
    pub text: String,
    pub correct: bool,
}

/// Generator that forces exactly `l_target` searches followed by one answer,
/// the constrained-decoding analogue for corpus construction. Correct answers
/// are emitted in a mangled-but-matching form (case or padding noise) so
/// selection has a real gold swap to perform.
struct ForcedGenerator<'a> {
    l_target: u32,
    question: &'a QuestionSpec,
    qtype: &'a QuestionType,
    world: &'a WorldConfig,
    rng: ChaCha8Rng,
}

impl ForcedGenerator<'_> {
    fn answer_text(&mut self, obs: world::EnvState) -> String {
        if world::answer_outcome(obs, self.qtype, &mut self.rng) {
            mangle_gold(&self.question.gold_answer, &mut self.rng)
        } else {
            wrong_answer(&mut self.rng)
        }
    }
}

/// A correct answer in the generator's own style: matches under exact-match
/// normalization without being byte-identical to the gold.
fn mangle_gold(gold: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4u32) {
        0 => gold.to_uppercase(),
        1 => format!(" {gold}"),
        2 => format!("{gold} "),
        _ => gold.to_string(),
    }
}

/// An incorrect answer of varying length (selection breaks ties on length).
fn wrong_answer(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..=11u32);
    let mut s = String::from("x");
    for _ in 0..len {
        let c = (b'a' + rng.random_range(0..26u8)) as char;
        s.push(c);
    }
    s
}

impl ActionGenerator for ForcedGenerator<'_> {
    fn next_action(&mut self, partial: &Trajectory) -> Result<String, ProtocolError> {
        let obs = world::observed_state(
            self.question,
            self.qtype,
            self.world.oracle_mode,
            &partial.steps,
        );
        let grammar = protocol::TagGrammar::for_mode(self.world.oracle_mode);
        if obs.searches_done < self.l_target {
            let query = if self.world.oracle_mode {
                HELP_MESSAGE.to_string()
            } else {
                format!(
                    "lookup {:016x} s{}",
                    self.question.question_id, obs.searches_done
                )
            };
            Ok(format!(
                "<{t}>{think}</{t}><{s}>{query}</{s}>",
                t = grammar.think,
                think = THINK_PLACEHOLDER,
                s = grammar.search,
            ))
        } else {
            let text = self.answer_text(obs);
            Ok(format!(
                "<{t}>{think}</{t}><{a}>{text}</{a}>",
                t = grammar.think,
                think = THINK_PLACEHOLDER,
                a = grammar.answer,
            ))
        }
    }
}

/// Build one candidate with exactly `l_target` searches then an answer;
/// documents come from the world helper, the answer outcome from the world.
pub fn build_trajectory(
    question: &QuestionSpec,
    world: &WorldConfig,
    config: &WarmStartConfig,
    l_target: u32,
    seed: u64,
) -> Result<Candidate, WarmStartError> {
    if l_target > config.l_max {
        return Err(WarmStartError::LTargetTooLarge {
            l_target,
            l_max: config.l_max,
        });
    }
    config.validate(world)?;
    let qtype = world.question_type(question.type_id)?;
    let mut generator = ForcedGenerator {
        l_target,
        question,
        qtype,
        world,
        rng: stream(seed, "ws-gen", &[]),
    };
    let mut helper = WorldHelper::new(question, world, stream(seed, "ws-env", &[]))?;
    let inference = InferenceConfig::new(world.budget, world.oracle_mode);
    let trajectory = protocol::run_inference(
        question.question_id,
        &mut generator,
        &mut helper,
        &inference,
    )?;
    let answer = trajectory.answer_text().unwrap_or("").to_string();
    let correct = reward::exact_match(&answer, &question.gold_answer);
    Ok(Candidate {
        trajectory,
        answer,
        correct,
    })
}

/// Pick a uniformly random correct candidate if any exists, otherwise the
/// candidate with the shortest answer text (ties broken by lowest index).
/// A correct selection has its answer replaced by the gold answer verbatim.
pub fn select_trajectory(
    mut candidates: Vec<Candidate>,
    gold: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Candidate, WarmStartError> {
    if candidates.is_empty() {
        return Err(WarmStartError::EmptyCandidates);
    }
    let correct_indices: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.correct)
        .map(|(i, _)| i)
        .collect();
    let chosen = if correct_indices.is_empty() {
        let mut best = 0usize;
        for (i, c) in candidates.iter().enumerate() {
            if c.answer.len() < candidates[best].answer.len() {
                best = i;
            }
        }
        best
    } else {
        correct_indices[rng.random_range(0..correct_indices.len())]
    };
    let mut selected = candidates.swap_remove(chosen);
    if selected.correct {
        if let Some(StepKind::Answer(text)) = selected.trajectory.steps.last_mut() {
            *text = gold.to_string();
        }
        selected.answer = gold.to_string();
    }
    Ok(selected)
}

/// Build the warm-start corpus: for each question, draw the target search
/// count uniformly from {0..l_max}, construct `num_samples` candidates, and
/// keep the selected one.
pub fn generate_corpus(
    world: &WorldConfig,
    config: &WarmStartConfig,
) -> Result<Vec<CorpusRecord>, WarmStartError> {
    world.validate()?;
    config.validate(world)?;
    let grammar = protocol::TagGrammar::for_mode(world.oracle_mode);
    let mut q_rng = stream(config.seed, "ws-q", &[]);
    let mut records = Vec::with_capacity(config.num_questions);
    for qi in 0..config.num_questions {
        let question = world::sample_question(world, &mut q_rng)?;
        let l_target = stream(config.seed, "ws-l", &[qi as u64]).random_range(0..=config.l_max);
        let mut candidates = Vec::with_capacity(config.num_samples);
        for ci in 0..config.num_samples {
            let seed = derive_seed(config.seed, "ws-cand", &[qi as u64, ci as u64]);
            candidates.push(build_trajectory(&question, world, config, l_target, seed)?);
        }
        let mut sel_rng = stream(config.seed, "ws-sel", &[qi as u64]);
        let selected = select_trajectory(candidates, &question.gold_answer, &mut sel_rng)?;
        records.push(CorpusRecord {
            question_id: question.question_id,
            type_id: question.type_id,
            l_target,
            text: protocol::serialize(&selected.trajectory, &grammar)?,
            correct: selected.correct,
        });
    }
    Ok(records)
}

/// Behavior-clone a policy from corpus action counts: logits are the log of
/// Laplace-smoothed (alpha = 1) per-state action frequencies; states never
/// visited keep uniform logits.
pub fn behavior_clone(
    corpus: &[CorpusRecord],
    world: &WorldConfig,
) -> Result<PolicyTable, WarmStartError> {
    if corpus.is_empty() {
        return Err(WarmStartError::EmptyCorpus);
    }
    let mut policy = PolicyTable::uniform(world);
    let grammar = protocol::TagGrammar::for_mode(world.oracle_mode);
    let mut counts = vec![[0u64; 2]; policy.num_states()];
    for (index, record) in corpus.iter().enumerate() {
        let qtype = world
            .question_type(record.type_id)
            .map_err(|e| WarmStartError::BadRecord {
                index,
                detail: e.to_string(),
            })?;
        let question = QuestionSpec {
            question_id: record.question_id,
            type_id: record.type_id,
            gold_answer: world::gold_answer_for(record.question_id),
        };
        let trajectory = protocol::parse(&record.text, &grammar, record.question_id)
            .map_err(|e| WarmStartError::BadRecord {
                index,
                detail: e.to_string(),
            })?;
        for (i, step) in trajectory.steps.iter().enumerate() {
            let action = match step {
                StepKind::Search(_) => Action::Search,
                StepKind::Answer(_) => Action::Answer,
                _ => continue,
            };
            let obs = world::observed_state(
                &question,
                qtype,
                world.oracle_mode,
                &trajectory.steps[..i],
            );
            let state = policy
                .state_index(record.type_id, obs.searches_done, obs.resolved_hops)
                .map_err(|e| WarmStartError::BadRecord {
                    index,
                    detail: e.to_string(),
                })?;
            counts[state][action.index()] += 1;
        }
    }
    for (state, c) in counts.iter().enumerate() {
        let total = c[0] + c[1];
        if total == 0 {
            continue;
        }
        let p_answer = (c[0] + 1) as f64 / (total + 2) as f64;
        let p_search = (c[1] + 1) as f64 / (total + 2) as f64;
        policy.set_logits(state, [p_answer.ln(), p_search.ln()])?;
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::presets;

    fn world() -> WorldConfig {
        presets::by_name("default").unwrap()
    }

    fn question(world: &WorldConfig, seed: u64) -> QuestionSpec {
        world::sample_question(world, &mut stream(seed, "q", &[])).unwrap()
    }

    #[test]
    fn zero_search_candidate_is_think_answer() {
        let cfg = WarmStartConfig::default();
        let w = world();
        let q = question(&w, 1);
        let cand = build_trajectory(&q, &w, &cfg, 0, 5).unwrap();
        assert_eq!(cand.trajectory.search_count(), 0);
        assert_eq!(cand.trajectory.steps.len(), 2);
        assert!(matches!(cand.trajectory.steps[0], StepKind::Think(_)));
        assert!(matches!(cand.trajectory.steps[1], StepKind::Answer(_)));
    }

    #[test]
    fn two_search_candidate_follows_forced_sequence() {
        let cfg = WarmStartConfig::default();
        let w = world();
        let q = question(&w, 2);
        let cand = build_trajectory(&q, &w, &cfg, 2, 7).unwrap();
        let kinds: Vec<&'static str> = cand
            .trajectory
            .steps
            .iter()
            .map(|s| match s {
                StepKind::Think(_) => "think",
                StepKind::Search(_) => "search",
                StepKind::Documents(_) => "docs",
                StepKind::Warning(_) => "warning",
                StepKind::Answer(_) => "answer",
            })
            .collect();
        assert_eq!(
            kinds,
            vec!["think", "search", "docs", "think", "search", "docs", "think", "answer"]
        );
    }

    #[test]
    fn l_target_above_l_max_is_rejected() {
        let cfg = WarmStartConfig::default();
        let w = world();
        let q = question(&w, 3);
        assert!(matches!(
            build_trajectory(&q, &w, &cfg, 3, 9),
            Err(WarmStartError::LTargetTooLarge { l_target: 3, l_max: 2 })
        ));
    }

    fn candidate(answer: &str, correct: bool) -> Candidate {
        Candidate {
            trajectory: Trajectory {
                question_id: 1,
                steps: vec![StepKind::Answer(answer.to_string())],
                truncated: false,
            },
            answer: answer.to_string(),
            correct,
        }
    }

    #[test]
    fn selection_prefers_correct_candidates() {
        let mut rng = stream(1, "sel", &[]);
        let selected = select_trajectory(
            vec![candidate("GOLD-X", true), candidate("bad", false)],
            "gold-x",
            &mut rng,
        )
        .unwrap();
        assert!(selected.correct);
        // Gold swap: the answer becomes the gold verbatim.
        assert_eq!(selected.answer, "gold-x");
        assert_eq!(
            selected.trajectory.answer_text(),
            Some("gold-x")
        );
    }

    #[test]
    fn selection_falls_back_to_shortest_answer() {
        let mut rng = stream(2, "sel", &[]);
        let selected = select_trajectory(
            vec![
                candidate("12345", false),
                candidate("123", false),
                candidate("123456789", false),
            ],
            "gold-x",
            &mut rng,
        )
        .unwrap();
        assert_eq!(selected.answer, "123");
        // Ties break on the lowest index.
        let mut rng = stream(3, "sel", &[]);
        let tied = select_trajectory(
            vec![candidate("aaa", false), candidate("bbb", false)],
            "gold-x",
            &mut rng,
        )
        .unwrap();
        assert_eq!(tied.answer, "aaa");
        assert!(select_trajectory(vec![], "g", &mut rng).is_err());
    }

    #[test]
    fn corpus_rows_round_trip_through_the_parser() {
        let w = world();
        let cfg = WarmStartConfig {
            num_questions: 40,
            seed: 11,
            ..WarmStartConfig::default()
        };
        let corpus = generate_corpus(&w, &cfg).unwrap();
        assert_eq!(corpus.len(), 40);
        let grammar = protocol::TagGrammar::standard();
        for row in &corpus {
            let parsed = protocol::parse(&row.text, &grammar, row.question_id).unwrap();
            assert!(!parsed.truncated);
            assert_eq!(parsed.search_count(), row.l_target);
            let reserialized = protocol::serialize(&parsed, &grammar).unwrap();
            assert_eq!(reserialized, row.text);
        }
    }

    #[test]
    fn corpus_l_targets_are_uniform() {
        let w = world();
        let cfg = WarmStartConfig {
            num_questions: 3000,
            seed: 13,
            ..WarmStartConfig::default()
        };
        let corpus = generate_corpus(&w, &cfg).unwrap();
        for l in 0..=2u32 {
            let freq = corpus.iter().filter(|r| r.l_target == l).count() as f64
                / corpus.len() as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.03, "l={l} freq {freq}");
        }
    }

    #[test]
    fn corpus_contains_incorrect_rows() {
        // The default preset has p=0 types and rho < 1, so some selected
        // trajectories stay incorrect.
        let w = world();
        let cfg = WarmStartConfig {
            num_questions: 300,
            seed: 17,
            ..WarmStartConfig::default()
        };
        let corpus = generate_corpus(&w, &cfg).unwrap();
        let incorrect = corpus.iter().filter(|r| !r.correct).count();
        assert!(incorrect > 0);
        assert!(incorrect < corpus.len());
    }

    #[test]
    fn laplace_smoothing_matches_counts() {
        let w = world();
        // Nine single-search rows for type 0: the (0, s=0, h=0) state sees
        // nine search actions and nothing else.
        let grammar = protocol::TagGrammar::standard();
        let mut rows = Vec::new();
        for i in 0..9u64 {
            let qid = 1000 + i;
            let q = QuestionSpec {
                question_id: qid,
                type_id: 0,
                gold_answer: world::gold_answer_for(qid),
            };
            let t = Trajectory {
                question_id: qid,
                steps: vec![
                    StepKind::Search("q".into()),
                    StepKind::Documents(vec![format!("filler {qid:016x} s0 d0")]),
                    StepKind::Answer(q.gold_answer.clone()),
                ],
                truncated: false,
            };
            rows.push(CorpusRecord {
                question_id: qid,
                type_id: 0,
                l_target: 1,
                text: protocol::serialize(&t, &grammar).unwrap(),
                correct: true,
            });
        }
        let policy = behavior_clone(&rows, &w).unwrap();
        let s0 = policy.state_index(0, 0, 0).unwrap();
        let p = policy.action_prob(s0).unwrap();
        assert!((p[Action::Search.index()] - 10.0 / 11.0).abs() < 1e-9);
        // Unvisited state stays uniform.
        let far = policy.state_index(3, 5, 2).unwrap();
        let p = policy.action_prob(far).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn behavior_clone_rejects_bad_rows() {
        let w = world();
        assert!(matches!(
            behavior_clone(&[], &w),
            Err(WarmStartError::EmptyCorpus)
        ));
        let rows = vec![CorpusRecord {
            question_id: 1,
            type_id: 99,
            l_target: 0,
            text: "<answer>x</answer>".into(),
            correct: false,
        }];
        assert!(matches!(
            behavior_clone(&rows, &w),
            Err(WarmStartError::BadRecord { .. })
        ));
    }

    #[test]
    fn cloned_policy_reproduces_corpus_search_distribution() {
        let w = world();
        let cfg = WarmStartConfig {
            num_questions: 1500,
            seed: 19,
            ..WarmStartConfig::default()
        };
        let corpus = generate_corpus(&w, &cfg).unwrap();
        let policy = behavior_clone(&corpus, &w).unwrap();
        let mut corpus_dist = [0.0f64; 3];
        for row in &corpus {
            corpus_dist[row.l_target.min(2) as usize] += 1.0 / corpus.len() as f64;
        }
        let mut q_rng = stream(23, "q", &[]);
        let rollouts = 2000;
        let mut rollout_dist = [0.0f64; 3];
        for i in 0..rollouts {
            let q = world::sample_question(&w, &mut q_rng).unwrap();
            let r = crate::policy::sample_trajectory(&policy, &q, &w, 1000 + i).unwrap();
            let m = r.trajectory.search_count().min(2) as usize;
            rollout_dist[m] += 1.0 / rollouts as f64;
        }
        for b in 0..3 {
            assert!(
                (corpus_dist[b] - rollout_dist[b]).abs() < 0.05,
                "bucket {b}: corpus {} rollout {}",
                corpus_dist[b],
                rollout_dist[b]
            );
        }
    }
}
