//! Synthetic QA environment: typed questions with latent parametric
//! answerability, a noisy retriever helper, and an oracle helper mode.
//!
//! Retrieval success is signalled through the document text itself: a search
//! that resolves a hop returns a document containing a fact token derived
//! from the question id. The policy's observation is reconstructed from the
//! trajectory text alone, so generation and behavior-cloning replay share one
//! state derivation.

use crate::protocol::{Helper, ProtocolError};
use crate::seed;
use crate::trajectory::StepKind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("world must configure at least one question type")]
    EmptyTypes,
    #[error("type_id {0} must equal its position in the type list")]
    BadTypeId(u32),
    #[error("type {0}: hops must be 1 or 2")]
    BadHops(u32),
    #[error("type {0}: p_param must lie in [0, 1]")]
    BadPParam(u32),
    #[error("type {0}: weight must be positive and finite")]
    BadWeight(u32),
    #[error("rho must lie in (0, 1], got {0}")]
    BadRho(f64),
    #[error("search budget must be >= 1")]
    BadBudget,
    #[error("docs_per_search must be >= 1")]
    BadDocsPerSearch,
    #[error("unknown type_id {0}")]
    UnknownType(u32),
    #[error("search budget exceeded: {used} of {budget}")]
    BudgetExceeded { used: u32, budget: u32 },
}

/// A question population: hop count and parametric answerability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionType {
    pub type_id: u32,
    pub name: String,
    /// Hops that must be resolved by retrieval before the answer is certain.
    pub hops: u32,
    /// Probability a parametric (unresolved) answer is correct.
    pub p_param: f64,
    /// Mixture weight for question sampling.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// One synthetic QA instance. The gold answer is a deterministic function of
/// the question id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_id: u64,
    pub type_id: u32,
    pub gold_answer: String,
}

/// Environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub types: Vec<QuestionType>,
    /// Retriever fidelity: probability one search resolves one hop.
    pub rho: f64,
    /// Maximum searches per trajectory (L).
    pub budget: u32,
    #[serde(default = "default_docs_per_search")]
    pub docs_per_search: u32,
    #[serde(default)]
    pub oracle_mode: bool,
    /// Identity seed of the preset; folded into the fingerprint that ties
    /// checkpoints to the world they were trained against. Episode RNG
    /// streams derive from the experiment seed, not from this value.
    pub seed: u64,
}

fn default_docs_per_search() -> u32 {
    3
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.types.is_empty() {
            return Err(WorldError::EmptyTypes);
        }
        for (i, t) in self.types.iter().enumerate() {
            if t.type_id as usize != i {
                return Err(WorldError::BadTypeId(t.type_id));
            }
            if !(1..=2).contains(&t.hops) {
                return Err(WorldError::BadHops(t.type_id));
            }
            if !(0.0..=1.0).contains(&t.p_param) {
                return Err(WorldError::BadPParam(t.type_id));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(WorldError::BadWeight(t.type_id));
            }
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(WorldError::BadRho(self.rho));
        }
        if self.budget < 1 {
            return Err(WorldError::BadBudget);
        }
        if self.docs_per_search < 1 {
            return Err(WorldError::BadDocsPerSearch);
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn question_type(&self, type_id: u32) -> Result<&QuestionType, WorldError> {
        self.types
            .get(type_id as usize)
            .ok_or(WorldError::UnknownType(type_id))
    }

    /// Largest hop count across configured types; sizes the observation space.
    pub fn max_hops(&self) -> u32 {
        self.types.iter().map(|t| t.hops).max().unwrap_or(1)
    }

    /// Stable fingerprint of the configuration, stamped into checkpoints.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("world config serializes");
        seed::fingerprint(canonical.as_bytes())
    }
}

/// Per-episode retrieval state and the policy-visible observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvState {
    pub searches_done: u32,
    pub resolved_hops: u32,
}

/// Shipped world presets.
pub mod presets {
    use super::WorldConfig;

    pub const NAMES: [&str; 4] = ["default", "oracle", "singlehop", "twohop"];

    /// Look up a shipped preset by name.
    pub fn by_name(name: &str) -> Option<WorldConfig> {
        let json = match name {
            "default" => include_str!("../presets/default.json"),
            "oracle" => include_str!("../presets/oracle.json"),
            "singlehop" => include_str!("../presets/singlehop.json"),
            "twohop" => include_str!("../presets/twohop.json"),
            _ => return None,
        };
        let config = WorldConfig::from_json(json).expect("shipped preset parses");
        config.validate().expect("shipped preset is valid");
        Some(config)
    }
}

/// The world's answer convention: gold text is deterministic in the id.
pub fn gold_answer_for(question_id: u64) -> String {
    format!("gold-{question_id:016x}")
}

fn fact_text(question_id: u64, hop: u32) -> String {
    format!("fact {question_id:016x} hop {hop}")
}

fn filler_text(question_id: u64, s: u32, slot: u32) -> String {
    format!("filler {question_id:016x} s{s} d{slot}")
}

/// Extract the hop index from a resolving fact document, if this document is
/// one for the given question.
fn parse_fact(doc: &str, question_id: u64) -> Option<u32> {
    let rest = doc.strip_prefix("fact ")?;
    let (qid, rest) = rest.split_once(" hop ")?;
    if qid != format!("{question_id:016x}") {
        return None;
    }
    rest.parse().ok()
}

/// Draw a question from the configured type mixture. The gold answer is
/// deterministic in the question id, so replaying a seed replays the exact
/// question sequence.
pub fn sample_question(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<QuestionSpec, WorldError> {
    if config.types.is_empty() {
        return Err(WorldError::EmptyTypes);
    }
    let total: f64 = config.types.iter().map(|t| t.weight).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut type_id = config.types.len() as u32 - 1;
    for t in &config.types {
        pick -= t.weight;
        if pick < 0.0 {
            type_id = t.type_id;
            break;
        }
    }
    let question_id = rng.random::<u64>();
    Ok(QuestionSpec {
        question_id,
        type_id,
        gold_answer: gold_answer_for(question_id),
    })
}

/// Serve one search: with probability `rho` the next hop resolves and the
/// returned documents include its fact token; otherwise every document is
/// distractor filler. The search counter advances either way.
pub fn helper_search(
    state: EnvState,
    _query: &str,
    question: &QuestionSpec,
    qtype: &QuestionType,
    config: &WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, EnvState), WorldError> {
    if state.searches_done >= config.budget {
        return Err(WorldError::BudgetExceeded {
            used: state.searches_done,
            budget: config.budget,
        });
    }
    let s = state.searches_done;
    let resolved = rng.random::<f64>() < config.rho;
    let mut next = EnvState {
        searches_done: s + 1,
        resolved_hops: state.resolved_hops,
    };
    let mut docs = Vec::with_capacity(config.docs_per_search as usize);
    if resolved {
        next.resolved_hops = (state.resolved_hops + 1).min(qtype.hops);
        docs.push(fact_text(question.question_id, next.resolved_hops));
    }
    let mut slot = 0;
    while docs.len() < config.docs_per_search as usize {
        docs.push(filler_text(question.question_id, s, slot));
        slot += 1;
    }
    Ok((docs, next))
}

/// Oracle helper: directly returns the gold answer, whatever the query.
pub fn helper_oracle(_query: &str, question: &QuestionSpec) -> String {
    question.gold_answer.clone()
}

/// Outcome of an answer action: certain once every hop is resolved, otherwise
/// a parametric draw at the type's success probability.
pub fn answer_outcome(
    state: EnvState,
    qtype: &QuestionType,
    rng: &mut ChaCha8Rng,
) -> bool {
    if state.resolved_hops >= qtype.hops {
        return true;
    }
    rng.random::<f64>() < qtype.p_param
}

/// Reconstruct the environment observation from a trajectory prefix: served
/// searches and resolved hops (read off the fact tokens, or implied by any
/// helper answer in oracle mode).
pub fn observed_state(
    question: &QuestionSpec,
    qtype: &QuestionType,
    oracle_mode: bool,
    steps: &[StepKind],
) -> EnvState {
    let mut searches_done = 0;
    let mut resolved_hops = 0;
    for (i, step) in steps.iter().enumerate() {
        if step.is_search() {
            if let Some(StepKind::Documents(docs)) = steps.get(i + 1) {
                searches_done += 1;
                if oracle_mode {
                    resolved_hops = qtype.hops;
                } else {
                    for doc in docs {
                        if let Some(hop) = parse_fact(doc, question.question_id) {
                            resolved_hops = resolved_hops.max(hop.min(qtype.hops));
                        }
                    }
                }
            }
        }
    }
    EnvState {
        searches_done,
        resolved_hops,
    }
}

/// World-backed helper driving one episode; owns the authoritative retrieval
/// state and its own RNG stream.
pub struct WorldHelper<'a> {
    question: &'a QuestionSpec,
    qtype: &'a QuestionType,
    config: &'a WorldConfig,
    state: EnvState,
    rng: ChaCha8Rng,
}

impl<'a> WorldHelper<'a> {
    pub fn new(
        question: &'a QuestionSpec,
        config: &'a WorldConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self, WorldError> {
        let qtype = config.question_type(question.type_id)?;
        Ok(Self {
            question,
            qtype,
            config,
            state: EnvState::default(),
            rng,
        })
    }

    pub fn state(&self) -> EnvState {
        self.state
    }
}

impl Helper for WorldHelper<'_> {
    fn respond(&mut self, query: &str) -> Result<Vec<String>, ProtocolError> {
        if self.config.oracle_mode {
            if self.state.searches_done >= self.config.budget {
                return Err(ProtocolError::Helper(
                    WorldError::BudgetExceeded {
                        used: self.state.searches_done,
                        budget: self.config.budget,
                    }
                    .to_string(),
                ));
            }
            self.state.searches_done += 1;
            self.state.resolved_hops = self.qtype.hops;
            return Ok(vec![helper_oracle(query, self.question)]);
        }
        let (docs, next) = helper_search(
            self.state,
            query,
            self.question,
            self.qtype,
            self.config,
            &mut self.rng,
        )
        .map_err(|e| ProtocolError::Helper(e.to_string()))?;
        self.state = next;
        Ok(docs)
    }
}
