//! A desk-scale, fully seeded laboratory for selective help-seeking policies.
//!
//! A tabular softmax policy answers synthetic QA questions and may query a
//! noisy retriever (or an oracle) at a per-search price: trajectory reward is
//! binary answer correctness multiplied by a search penalty measured against
//! the most efficient correct trajectory in its rollout group. Group-relative
//! policy-gradient training over that reward aligns search behavior with the
//! policy's parametric knowledge, and the same trained policy doubles as an
//! abstention model once search access is removed (any search request counts
//! as an abstention).
//!
//! Modules:
//! - [`trajectory`], [`protocol`]: the tagged step grammar and the multi-turn
//!   inference state machine.
//! - [`world`]: the synthetic QA environment, retriever, and oracle helper.
//! - [`reward`]: pay-per-search reward formulations.
//! - [`policy`]: the tabular softmax policy, rollouts, checkpoints.
//! - [`grpo`]: the group-relative trainer.
//! - [`warmstart`]: corpus construction and behavior-cloning initialization.
//! - [`eval`]: search-enabled and abstention-mode metrics.

pub mod eval;
pub mod grpo;
pub mod policy;
pub mod protocol;
pub mod reward;
pub mod seed;
pub mod trajectory;
pub mod warmstart;
pub mod world;

#[doc(hidden)]
pub mod testkit;

pub use policy::{Action, PolicyCheckpoint, PolicyTable, Rollout};
pub use protocol::{InferenceConfig, TagGrammar, WARNING_STEP_TEXT};
pub use reward::{RewardConfig, RewardVariant};
pub use trajectory::{StepKind, Trajectory};
pub use world::{QuestionSpec, QuestionType, WorldConfig};
