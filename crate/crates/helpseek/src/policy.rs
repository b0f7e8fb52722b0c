//! Tabular-softmax stochastic policy over environment observations, with
//! exact log-probabilities, entropy, and KL divergence.
//!
//! The table is immutable during rollout generation; updates happen in a
//! distinct single-writer phase, so concurrent readers between updates are
//! safe.

use crate::protocol::{
    self, ActionGenerator, InferenceConfig, ProtocolError, HELP_MESSAGE, THINK_PLACEHOLDER,
};
use crate::seed::stream;
use crate::trajectory::{StepKind, Trajectory};
use crate::world::{self, QuestionSpec, QuestionType, WorldConfig, WorldHelper};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("state out of range: type {type_id}, s {searches}, hops {hops}")]
    StateOutOfRange {
        type_id: u32,
        searches: u32,
        hops: u32,
    },
    #[error("state index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("policy table shapes differ")]
    ShapeMismatch,
    #[error("logits must be finite")]
    NonFiniteLogits,
    #[error("visit weights must match the state count and sum to a positive value")]
    BadVisitWeights,
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
}

/// The two policy actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Answer,
    Search,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Action::Answer => 0,
            Action::Search => 1,
        }
    }
}

/// Softmax action logits indexed by the observation (type, searches done,
/// resolved hops).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    num_types: usize,
    budget: usize,
    max_hops: usize,
    logits: Vec<f64>,
}

impl PolicyTable {
    /// Uniform-logit table shaped for a world.
    pub fn uniform(config: &WorldConfig) -> Self {
        let num_types = config.types.len();
        let budget = config.budget as usize;
        let max_hops = config.max_hops() as usize;
        let states = num_types * (budget + 1) * (max_hops + 1);
        Self {
            num_types,
            budget,
            max_hops,
            logits: vec![0.0; states * Action::COUNT],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_types * (self.budget + 1) * (self.max_hops + 1)
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn max_hops(&self) -> usize {
        self.max_hops
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_types == other.num_types
            && self.budget == other.budget
            && self.max_hops == other.max_hops
    }

    /// Row index for an observation.
    pub fn state_index(&self, type_id: u32, searches: u32, hops: u32) -> Result<usize, PolicyError> {
        if type_id as usize >= self.num_types
            || searches as usize > self.budget
            || hops as usize > self.max_hops
        {
            return Err(PolicyError::StateOutOfRange {
                type_id,
                searches,
                hops,
            });
        }
        Ok((type_id as usize * (self.budget + 1) + searches as usize) * (self.max_hops + 1)
            + hops as usize)
    }

    pub fn logits_at(&self, state: usize) -> Result<[f64; 2], PolicyError> {
        if state >= self.num_states() {
            return Err(PolicyError::IndexOutOfRange(state));
        }
        Ok([self.logits[state * 2], self.logits[state * 2 + 1]])
    }

    pub fn set_logits(&mut self, state: usize, values: [f64; 2]) -> Result<(), PolicyError> {
        if state >= self.num_states() {
            return Err(PolicyError::IndexOutOfRange(state));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(PolicyError::NonFiniteLogits);
        }
        self.logits[state * 2] = values[0];
        self.logits[state * 2 + 1] = values[1];
        Ok(())
    }

    pub fn add_to_logits(&mut self, deltas: &[f64], scale: f64) -> Result<(), PolicyError> {
        if deltas.len() != self.logits.len() {
            return Err(PolicyError::ShapeMismatch);
        }
        for (l, d) in self.logits.iter_mut().zip(deltas) {
            *l += scale * d;
            if !l.is_finite() {
                return Err(PolicyError::NonFiniteLogits);
            }
        }
        Ok(())
    }

    pub fn raw_logits(&self) -> &[f64] {
        &self.logits
    }

    /// Softmax action distribution at a state: (P(answer), P(search)).
    pub fn action_prob(&self, state: usize) -> Result<[f64; 2], PolicyError> {
        let [a, s] = self.logits_at(state)?;
        let m = a.max(s);
        let ea = (a - m).exp();
        let es = (s - m).exp();
        let z = ea + es;
        Ok([ea / z, es / z])
    }

    pub fn log_prob(&self, state: usize, action: Action) -> Result<f64, PolicyError> {
        let p = self.action_prob(state)?;
        Ok(p[action.index()].ln())
    }

    /// Shannon entropy of the action distribution, in nats.
    pub fn entropy(&self, state: usize) -> Result<f64, PolicyError> {
        let p = self.action_prob(state)?;
        let mut h = 0.0;
        for v in p {
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        Ok(h)
    }

    /// Visitation-weighted mean KL(self || init) over states; weights are one
    /// entry per state and are normalized internally.
    pub fn kl_to_init(&self, init: &PolicyTable, visit_weights: &[f64]) -> Result<f64, PolicyError> {
        if !self.same_shape(init) {
            return Err(PolicyError::ShapeMismatch);
        }
        if visit_weights.len() != self.num_states() {
            return Err(PolicyError::BadVisitWeights);
        }
        let total: f64 = visit_weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(PolicyError::BadVisitWeights);
        }
        let mut acc = 0.0;
        for (state, &w) in visit_weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            acc += w * kl_between(self.action_prob(state)?, init.action_prob(state)?);
        }
        Ok(acc / total)
    }

    pub fn to_checkpoint(
        &self,
        world_preset_hash: &str,
        train_step: u64,
        config_hash: &str,
        seed: u64,
    ) -> PolicyCheckpoint {
        PolicyCheckpoint {
            num_types: self.num_types,
            budget: self.budget,
            max_hops: self.max_hops,
            logits: self.logits.clone(),
            world_preset_hash: world_preset_hash.to_string(),
            train_step,
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<Self, PolicyError> {
        let states = ckpt.num_types * (ckpt.budget + 1) * (ckpt.max_hops + 1);
        if ckpt.logits.len() != states * Action::COUNT {
            return Err(PolicyError::BadCheckpoint(format!(
                "logit count {} does not match shape {}x{}x{}",
                ckpt.logits.len(),
                ckpt.num_types,
                ckpt.budget + 1,
                ckpt.max_hops + 1
            )));
        }
        if !ckpt.logits.iter().all(|v| v.is_finite()) {
            return Err(PolicyError::NonFiniteLogits);
        }
        Ok(Self {
            num_types: ckpt.num_types,
            budget: ckpt.budget,
            max_hops: ckpt.max_hops,
            logits: ckpt.logits.clone(),
        })
    }
}

/// KL between two binary action distributions.
fn kl_between(p: [f64; 2], q: [f64; 2]) -> f64 {
    let mut acc = 0.0;
    for i in 0..2 {
        if p[i] > 0.0 {
            acc += p[i] * (p[i] / q[i]).ln();
        }
    }
    acc
}

/// Policy checkpoint file contents: table shape, row-major logits, the world
/// preset hash it was trained against, and provenance stamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub num_types: usize,
    pub budget: usize,
    pub max_hops: usize,
    pub logits: Vec<f64>,
    pub world_preset_hash: String,
    pub train_step: u64,
    pub config_hash: String,
    pub seed: u64,
}

/// One policy-chosen action during a rollout. `forced` marks the answer
/// forced once the search budget is spent; forced actions carry no gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionRecord {
    pub state: usize,
    pub action: Action,
    pub log_prob: f64,
    pub forced: bool,
}

/// A sampled trajectory together with its per-step action records.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub actions: Vec<ActionRecord>,
}

/// Drives the inference loop with actions sampled from a policy table.
///
/// The observation is reconstructed from the partial trajectory text, the
/// same way a language model would condition on it. Once the budget is spent
/// the search action is masked and the answer action forced.
pub struct PolicyGenerator<'a> {
    policy: &'a PolicyTable,
    question: &'a QuestionSpec,
    qtype: &'a QuestionType,
    world: &'a WorldConfig,
    rng: ChaCha8Rng,
    records: Vec<ActionRecord>,
}

impl<'a> PolicyGenerator<'a> {
    pub fn new(
        policy: &'a PolicyTable,
        question: &'a QuestionSpec,
        world: &'a WorldConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self, ProtocolError> {
        let qtype = world
            .question_type(question.type_id)
            .map_err(|e| ProtocolError::Generator(e.to_string()))?;
        Ok(Self {
            policy,
            question,
            qtype,
            world,
            rng,
            records: Vec::new(),
        })
    }

    pub fn into_records(self) -> Vec<ActionRecord> {
        self.records
    }

    fn answer_text(&mut self, partial: &Trajectory, obs: world::EnvState) -> String {
        if self.world.oracle_mode && obs.searches_done > 0 {
            // Copy the helper answer verbatim; the oracle returned the gold.
            for step in partial.steps.iter().rev() {
                if let StepKind::Documents(docs) = step {
                    if let Some(first) = docs.first() {
                        return first.clone();
                    }
                }
            }
        }
        if world::answer_outcome(obs, self.qtype, &mut self.rng) {
            self.question.gold_answer.clone()
        } else {
            format!("unknown-{:016x}", self.question.question_id)
        }
    }
}

impl ActionGenerator for PolicyGenerator<'_> {
    fn next_action(&mut self, partial: &Trajectory) -> Result<String, ProtocolError> {
        let obs = world::observed_state(
            self.question,
            self.qtype,
            self.world.oracle_mode,
            &partial.steps,
        );
        let state = self
            .policy
            .state_index(self.question.type_id, obs.searches_done, obs.resolved_hops)
            .map_err(|e| ProtocolError::Generator(e.to_string()))?;
        let budget_spent = obs.searches_done >= self.world.budget;
        let (action, log_prob, forced) = if budget_spent {
            (Action::Answer, 0.0, true)
        } else {
            let probs = self
                .policy
                .action_prob(state)
                .map_err(|e| ProtocolError::Generator(e.to_string()))?;
            let action = if self.rng.random::<f64>() < probs[Action::Answer.index()] {
                Action::Answer
            } else {
                Action::Search
            };
            (action, probs[action.index()].ln(), false)
        };
        self.records.push(ActionRecord {
            state,
            action,
            log_prob,
            forced,
        });
        let grammar = protocol::TagGrammar::for_mode(self.world.oracle_mode);
        let fragment = match action {
            Action::Search => {
                let query = if self.world.oracle_mode {
                    HELP_MESSAGE.to_string()
                } else {
                    format!(
                        "lookup {:016x} s{}",
                        self.question.question_id, obs.searches_done
                    )
                };
                format!(
                    "<{t}>{think}</{t}><{s}>{query}</{s}>",
                    t = grammar.think,
                    think = THINK_PLACEHOLDER,
                    s = grammar.search,
                )
            }
            Action::Answer => {
                let text = self.answer_text(partial, obs);
                format!(
                    "<{t}>{think}</{t}><{a}>{text}</{a}>",
                    t = grammar.think,
                    think = THINK_PLACEHOLDER,
                    a = grammar.answer,
                )
            }
        };
        Ok(fragment)
    }
}

/// Sample one trajectory by driving the inference state machine with the
/// policy as generator. Bit-reproducible for a fixed seed.
pub fn sample_trajectory(
    policy: &PolicyTable,
    question: &QuestionSpec,
    world: &WorldConfig,
    seed: u64,
) -> Result<Rollout, ProtocolError> {
    let mut generator = PolicyGenerator::new(policy, question, world, stream(seed, "policy", &[]))?;
    let mut helper = WorldHelper::new(question, world, stream(seed, "env", &[]))
        .map_err(|e| ProtocolError::Helper(e.to_string()))?;
    let config = InferenceConfig::new(world.budget, world.oracle_mode);
    let trajectory = protocol::run_inference(
        question.question_id,
        &mut generator,
        &mut helper,
        &config,
    )?;
    Ok(Rollout {
        trajectory,
        actions: generator.into_records(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::presets;

    const TOL: f64 = 1e-9;

    fn world() -> WorldConfig {
        presets::by_name("default").unwrap()
    }

    fn forced(policy: &mut PolicyTable, state: usize, action: Action) {
        let mut logits = [0.0; 2];
        logits[action.index()] = 50.0;
        logits[1 - action.index()] = -50.0;
        policy.set_logits(state, logits).unwrap();
    }

    #[test]
    fn uniform_softmax_is_half_half() {
        let policy = PolicyTable::uniform(&world());
        let p = policy.action_prob(0).unwrap();
        assert!((p[0] - 0.5).abs() < TOL);
        assert!((p[1] - 0.5).abs() < TOL);
    }

    #[test]
    fn extreme_logits_saturate() {
        let mut policy = PolicyTable::uniform(&world());
        policy.set_logits(0, [10.0, -10.0]).unwrap();
        let p = policy.action_prob(0).unwrap();
        assert!(p[Action::Answer.index()] >= 0.9999);
    }

    #[test]
    fn probabilities_sum_to_one_for_varied_logits() {
        let mut policy = PolicyTable::uniform(&world());
        let cases = [
            [0.0, 0.0],
            [3.5, -2.25],
            [-700.0, 700.0],
            [1e8, 1e8 + 1.0],
        ];
        for (i, case) in cases.into_iter().enumerate() {
            policy.set_logits(i, case).unwrap();
            let p = policy.action_prob(i).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12, "case {case:?}");
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut policy = PolicyTable::uniform(&world());
        policy.set_logits(0, [1.25, -0.5]).unwrap();
        let before = policy.action_prob(0).unwrap();
        policy.set_logits(0, [1.25 + 37.0, -0.5 + 37.0]).unwrap();
        let after = policy.action_prob(0).unwrap();
        assert!((before[0] - after[0]).abs() < 1e-12);
    }

    #[test]
    fn entropy_values() {
        let mut policy = PolicyTable::uniform(&world());
        assert!((policy.entropy(0).unwrap() - 2f64.ln()).abs() < 1e-12);
        policy.set_logits(1, [10.0, -10.0]).unwrap();
        assert!(policy.entropy(1).unwrap() < 1e-3);
        for (i, logits) in [[2.0, -1.0], [0.3, 0.7], [-4.0, 4.0]].into_iter().enumerate() {
            policy.set_logits(2 + i, logits).unwrap();
            assert!(policy.entropy(2 + i).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_examples() {
        let cfg = world();
        let mut policy = PolicyTable::uniform(&cfg);
        let init = PolicyTable::uniform(&cfg);
        let mut weights = vec![0.0; policy.num_states()];
        weights[0] = 1.0;
        assert!(policy.kl_to_init(&init, &weights).unwrap().abs() < TOL);

        // (0.9, 0.1) vs (0.5, 0.5): 0.9 ln 1.8 + 0.1 ln 0.2.
        let expected = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        policy
            .set_logits(0, [0.9f64.ln(), 0.1f64.ln()])
            .unwrap();
        let got = policy.kl_to_init(&init, &weights).unwrap();
        assert!((got - expected).abs() < TOL);
        assert!((got - 0.368).abs() < 1e-3);

        // KL >= 0 on varied pairs.
        let mut other = PolicyTable::uniform(&cfg);
        other.set_logits(0, [1.3, -0.4]).unwrap();
        assert!(policy.kl_to_init(&other, &weights).unwrap() >= 0.0);
    }

    #[test]
    fn kl_requires_matching_shape_and_weights() {
        let policy = PolicyTable::uniform(&world());
        let other = PolicyTable::uniform(&presets::by_name("singlehop").unwrap());
        let weights = vec![1.0; policy.num_states()];
        assert_eq!(
            policy.kl_to_init(&other, &weights),
            Err(PolicyError::ShapeMismatch)
        );
        assert_eq!(
            policy.kl_to_init(&policy, &[1.0]),
            Err(PolicyError::BadVisitWeights)
        );
    }

    #[test]
    fn state_index_bounds() {
        let policy = PolicyTable::uniform(&world());
        assert!(policy.state_index(0, 0, 0).is_ok());
        assert!(policy.state_index(3, 5, 2).is_ok());
        assert!(policy.state_index(4, 0, 0).is_err());
        assert!(policy.state_index(0, 6, 0).is_err());
        assert!(policy.state_index(0, 0, 3).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = world();
        let mut policy = PolicyTable::uniform(&cfg);
        policy.set_logits(5, [1.5, -2.5]).unwrap();
        let ckpt = policy.to_checkpoint(&cfg.fingerprint(), 42, "cfg-hash", 7);
        let json = serde_json::to_string(&ckpt).unwrap();
        let parsed: PolicyCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = PolicyTable::from_checkpoint(&parsed).unwrap();
        assert_eq!(policy, restored);

        let mut bad = ckpt.clone();
        bad.logits.pop();
        assert!(PolicyTable::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn forced_answer_policy_yields_zero_search_trajectory() {
        let cfg = world();
        let mut policy = PolicyTable::uniform(&cfg);
        let q = world::sample_question(&cfg, &mut stream(1, "q", &[])).unwrap();
        let s0 = policy.state_index(q.type_id, 0, 0).unwrap();
        forced(&mut policy, s0, Action::Answer);
        let rollout = sample_trajectory(&policy, &q, &cfg, 3).unwrap();
        assert_eq!(rollout.trajectory.search_count(), 0);
        assert!(!rollout.trajectory.truncated);
        assert_eq!(rollout.actions.len(), 1);
        assert!(!rollout.actions[0].forced);
    }

    #[test]
    fn always_search_policy_is_masked_at_budget() {
        let cfg = world();
        let mut policy = PolicyTable::uniform(&cfg);
        for state in 0..policy.num_states() {
            forced(&mut policy, state, Action::Search);
        }
        let q = world::sample_question(&cfg, &mut stream(2, "q", &[])).unwrap();
        let rollout = sample_trajectory(&policy, &q, &cfg, 4).unwrap();
        assert_eq!(rollout.trajectory.search_count(), cfg.budget);
        assert!(!rollout.trajectory.truncated);
        // No warning step: the forced answer preempts over-budget searches.
        assert!(!rollout
            .trajectory
            .steps
            .iter()
            .any(|s| matches!(s, StepKind::Warning(_))));
        let last = rollout.actions.last().unwrap();
        assert!(last.forced);
        assert_eq!(last.action, Action::Answer);
        assert_eq!(last.log_prob, 0.0);
    }

    #[test]
    fn recorded_log_probs_match_action_prob() {
        let cfg = world();
        let mut policy = PolicyTable::uniform(&cfg);
        for state in 0..policy.num_states() {
            let a = (state as f64 * 0.37).sin();
            policy.set_logits(state, [a, -a * 0.5]).unwrap();
        }
        let q = world::sample_question(&cfg, &mut stream(5, "q", &[])).unwrap();
        let rollout = sample_trajectory(&policy, &q, &cfg, 11).unwrap();
        for rec in rollout.actions.iter().filter(|r| !r.forced) {
            let expected = policy.log_prob(rec.state, rec.action).unwrap();
            assert!((rec.log_prob - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let cfg = world();
        let policy = PolicyTable::uniform(&cfg);
        let q = world::sample_question(&cfg, &mut stream(6, "q", &[])).unwrap();
        let a = sample_trajectory(&policy, &q, &cfg, 9).unwrap();
        let b = sample_trajectory(&policy, &q, &cfg, 9).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.actions, b.actions);
    }

    #[test]
    fn oracle_mode_answer_copies_helper_answer() {
        let cfg = presets::by_name("oracle").unwrap();
        let mut policy = PolicyTable::uniform(&cfg);
        let q = world::sample_question(&cfg, &mut stream(7, "q", &[])).unwrap();
        let s0 = policy.state_index(q.type_id, 0, 0).unwrap();
        forced(&mut policy, s0, Action::Search);
        for searches in 1..=cfg.budget {
            for hops in 0..=cfg.max_hops() {
                let st = policy.state_index(q.type_id, searches, hops).unwrap();
                forced(&mut policy, st, Action::Answer);
            }
        }
        let rollout = sample_trajectory(&policy, &q, &cfg, 13).unwrap();
        assert_eq!(rollout.trajectory.search_count(), 1);
        assert_eq!(rollout.trajectory.answer_text(), Some(q.gold_answer.as_str()));
    }
}
