//! Trajectory data model: the ordered step sequence produced for one question.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One step of a trajectory.
///
/// `Documents` holds the helper response for the preceding `Search` step; in
/// oracle-helper mode it carries the single helper answer. Document contents
/// are environment-emitted and never carry policy probability mass, which is
/// what lets training exclude them from the policy-gradient loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Think(String),
    Search(String),
    Documents(Vec<String>),
    Warning(String),
    Answer(String),
}

impl StepKind {
    pub fn is_search(&self) -> bool {
        matches!(self, StepKind::Search(_))
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, StepKind::Answer(_))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("step {index}: {kind} step must immediately follow a search step")]
    MisplacedHelperStep { index: usize, kind: &'static str },
    #[error("step {index}: answer step must be the final step")]
    AnswerNotFinal { index: usize },
    #[error("step {index}: documents step is empty")]
    EmptyDocuments { index: usize },
    #[error("non-truncated trajectory must end in exactly one answer step")]
    MissingAnswer,
    #[error("truncated trajectory must not end in a complete answer step")]
    TruncatedWithAnswer,
}

/// Ordered step sequence for one question; the unit of reward and parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: u64,
    pub steps: Vec<StepKind>,
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(question_id: u64) -> Self {
        Self {
            question_id,
            steps: Vec::new(),
            truncated: true,
        }
    }

    /// Number of searches served by the helper, i.e. `Search` steps
    /// immediately followed by a `Documents` step. Searches answered with a
    /// budget warning (or left dangling by truncation) do not count, so the
    /// count never exceeds the search budget.
    pub fn search_count(&self) -> u32 {
        let mut n = 0;
        for (i, step) in self.steps.iter().enumerate() {
            if step.is_search() {
                if let Some(StepKind::Documents(_)) = self.steps.get(i + 1) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Text of the final answer step, if the trajectory has one.
    pub fn answer_text(&self) -> Option<&str> {
        match self.steps.last() {
            Some(StepKind::Answer(text)) => Some(text),
            _ => None,
        }
    }

    /// Check the step-ordering invariants.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let last = self.steps.len().checked_sub(1);
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                StepKind::Documents(docs) => {
                    if docs.is_empty() {
                        return Err(TrajectoryError::EmptyDocuments { index: i });
                    }
                    if i == 0 || !self.steps[i - 1].is_search() {
                        return Err(TrajectoryError::MisplacedHelperStep {
                            index: i,
                            kind: "documents",
                        });
                    }
                }
                StepKind::Warning(_) => {
                    if i == 0 || !self.steps[i - 1].is_search() {
                        return Err(TrajectoryError::MisplacedHelperStep {
                            index: i,
                            kind: "warning",
                        });
                    }
                }
                StepKind::Answer(_) => {
                    if Some(i) != last {
                        return Err(TrajectoryError::AnswerNotFinal { index: i });
                    }
                }
                StepKind::Think(_) | StepKind::Search(_) => {}
            }
        }
        let ends_with_answer = matches!(self.steps.last(), Some(StepKind::Answer(_)));
        if !self.truncated && !ends_with_answer {
            return Err(TrajectoryError::MissingAnswer);
        }
        if self.truncated && ends_with_answer {
            return Err(TrajectoryError::TruncatedWithAnswer);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(steps: Vec<StepKind>, truncated: bool) -> Trajectory {
        Trajectory {
            question_id: 1,
            steps,
            truncated,
        }
    }

    #[test]
    fn search_count_skips_warned_and_dangling_searches() {
        let traj = t(
            vec![
                StepKind::Search("a".into()),
                StepKind::Documents(vec!["d".into()]),
                StepKind::Search("b".into()),
                StepKind::Warning(" SEARCH LIMIT REACHED ".into()),
                StepKind::Search("c".into()),
            ],
            true,
        );
        assert_eq!(traj.search_count(), 1);
    }

    #[test]
    fn validate_accepts_minimal_answer() {
        let traj = t(
            vec![StepKind::Think("x".into()), StepKind::Answer("y".into())],
            false,
        );
        assert!(traj.validate().is_ok());
        assert_eq!(traj.answer_text(), Some("y"));
    }

    #[test]
    fn validate_rejects_documents_without_search() {
        let traj = t(vec![StepKind::Documents(vec!["d".into()])], true);
        assert_eq!(
            traj.validate(),
            Err(TrajectoryError::MisplacedHelperStep {
                index: 0,
                kind: "documents"
            })
        );
    }

    #[test]
    fn validate_rejects_mid_trajectory_answer() {
        let traj = t(
            vec![StepKind::Answer("y".into()), StepKind::Think("x".into())],
            true,
        );
        assert_eq!(
            traj.validate(),
            Err(TrajectoryError::AnswerNotFinal { index: 0 })
        );
    }

    #[test]
    fn validate_ties_truncation_flag_to_final_answer() {
        let open = t(vec![StepKind::Think("x".into())], false);
        assert_eq!(open.validate(), Err(TrajectoryError::MissingAnswer));
        let closed = t(vec![StepKind::Answer("y".into())], true);
        assert_eq!(closed.validate(), Err(TrajectoryError::TruncatedWithAnswer));
    }
}
