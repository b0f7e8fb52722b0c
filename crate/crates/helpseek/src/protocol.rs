//! Tagged-trajectory text grammar and the multi-turn inference state machine,
//! generic over any action generator and helper.

use crate::trajectory::{StepKind, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Budget warning appended verbatim when a generator searches past the limit.
pub const WARNING_STEP_TEXT: &str = " SEARCH LIMIT REACHED ";

/// Placeholder reasoning text emitted by generators that do not model language.
pub const THINK_PLACEHOLDER: &str = "...";

/// Hardcoded help-request message used in oracle-helper mode.
pub const HELP_MESSAGE: &str = "I need help";

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("unknown tag <{name}> at byte {offset}")]
    UnknownTag { name: String, offset: usize },
    #[error("stray text outside tags at byte {offset}")]
    StrayText { offset: usize },
    #[error("interleaved or nested tag inside <{name}> content at byte {offset}")]
    InterleavedTag { name: String, offset: usize },
    #[error("close tag without matching open at byte {offset}")]
    UnmatchedClose { offset: usize },
    #[error("{kind} step at byte {offset} must immediately follow a search step")]
    MisplacedHelperStep { kind: &'static str, offset: usize },
    #[error("answer step must be final; found trailing step at byte {offset}")]
    AnswerNotFinal { offset: usize },
    #[error("cannot serialize: {0}")]
    Serialize(String),
    #[error("inference config invalid: {0}")]
    BadConfig(String),
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("helper failed: {0}")]
    Helper(String),
}

/// Tag names for each step kind. The standard grammar uses `search` and
/// `document`; in oracle-helper mode those two become `help` and
/// `helper_answer` while everything else is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagGrammar {
    pub think: &'static str,
    pub search: &'static str,
    pub document: &'static str,
    pub warning: &'static str,
    pub answer: &'static str,
}

impl TagGrammar {
    pub fn standard() -> Self {
        Self {
            think: "think",
            search: "search",
            document: "document",
            warning: "warning",
            answer: "answer",
        }
    }

    pub fn oracle() -> Self {
        Self {
            think: "think",
            search: "help",
            document: "helper_answer",
            warning: "warning",
            answer: "answer",
        }
    }

    pub fn for_mode(oracle_mode: bool) -> Self {
        if oracle_mode {
            Self::oracle()
        } else {
            Self::standard()
        }
    }

    fn names(&self) -> [&'static str; 5] {
        [self.think, self.search, self.document, self.warning, self.answer]
    }

    fn kind_of(&self, name: &str) -> Option<RawTag> {
        if name == self.think {
            Some(RawTag::Think)
        } else if name == self.search {
            Some(RawTag::Search)
        } else if name == self.document {
            Some(RawTag::Document)
        } else if name == self.warning {
            Some(RawTag::Warning)
        } else if name == self.answer {
            Some(RawTag::Answer)
        } else {
            None
        }
    }

    fn name_of(&self, tag: RawTag) -> &'static str {
        match tag {
            RawTag::Think => self.think,
            RawTag::Search => self.search,
            RawTag::Document => self.document,
            RawTag::Warning => self.warning,
            RawTag::Answer => self.answer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawTag {
    Think,
    Search,
    Document,
    Warning,
    Answer,
}

#[derive(Debug)]
struct RawStep {
    tag: RawTag,
    content: String,
    offset: usize,
}

/// Scan a text into raw tag blocks. Returns the blocks and whether the text
/// ended inside an unterminated block (truncation).
fn scan_blocks(text: &str, grammar: &TagGrammar) -> Result<(Vec<RawStep>, bool), ProtocolError> {
    let bytes = text.as_bytes();
    let mut pos = 0usize;
    let mut steps = Vec::new();
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Ok((steps, false));
        }
        if bytes[pos] != b'<' {
            return Err(ProtocolError::StrayText { offset: pos });
        }
        let rest = &text[pos..];
        let Some(gt) = rest.find('>') else {
            // Open bracket without a closing '>': unterminated tail.
            return Ok((steps, true));
        };
        let name = &rest[1..gt];
        if let Some(stripped) = name.strip_prefix('/') {
            let _ = stripped;
            return Err(ProtocolError::UnmatchedClose { offset: pos });
        }
        let Some(tag) = grammar.kind_of(name) else {
            return Err(ProtocolError::UnknownTag {
                name: name.to_string(),
                offset: pos,
            });
        };
        let content_start = pos + gt + 1;
        let close = format!("</{name}>");
        let Some(rel) = text[content_start..].find(&close) else {
            // No close tag before end of text: truncated tail.
            return Ok((steps, true));
        };
        let content = &text[content_start..content_start + rel];
        // Balanced, non-nested grammar: no known tag may appear inside content.
        for other in grammar.names() {
            let open_tag = format!("<{other}>");
            let close_tag = format!("</{other}>");
            if let Some(at) = content.find(&open_tag).or_else(|| content.find(&close_tag)) {
                return Err(ProtocolError::InterleavedTag {
                    name: name.to_string(),
                    offset: content_start + at,
                });
            }
        }
        steps.push(RawStep {
            tag,
            content: content.to_string(),
            offset: pos,
        });
        pos = content_start + rel + close.len();
    }
}

/// Parse a trajectory text into its step sequence. Consecutive document
/// blocks merge into one `Documents` step. Truncation is flagged when the
/// text does not end in a complete answer step.
pub fn parse(
    text: &str,
    grammar: &TagGrammar,
    question_id: u64,
) -> Result<Trajectory, ProtocolError> {
    let (raw, truncated_tail) = scan_blocks(text, grammar)?;
    let mut steps: Vec<StepKind> = Vec::with_capacity(raw.len());
    for rs in raw {
        if matches!(steps.last(), Some(StepKind::Answer(_))) {
            return Err(ProtocolError::AnswerNotFinal { offset: rs.offset });
        }
        match rs.tag {
            RawTag::Think => steps.push(StepKind::Think(rs.content)),
            RawTag::Search => steps.push(StepKind::Search(rs.content)),
            RawTag::Warning => {
                if !matches!(steps.last(), Some(StepKind::Search(_))) {
                    return Err(ProtocolError::MisplacedHelperStep {
                        kind: "warning",
                        offset: rs.offset,
                    });
                }
                steps.push(StepKind::Warning(rs.content));
            }
            RawTag::Document => match steps.last_mut() {
                Some(StepKind::Documents(docs)) => docs.push(rs.content),
                Some(StepKind::Search(_)) => steps.push(StepKind::Documents(vec![rs.content])),
                _ => {
                    return Err(ProtocolError::MisplacedHelperStep {
                        kind: "documents",
                        offset: rs.offset,
                    })
                }
            },
            RawTag::Answer => {
                steps.push(StepKind::Answer(rs.content));
            }
        }
    }
    let ends_with_answer = matches!(steps.last(), Some(StepKind::Answer(_)));
    Ok(Trajectory {
        question_id,
        steps,
        truncated: truncated_tail || !ends_with_answer,
    })
}

/// Serialize a trajectory under a grammar; `parse(serialize(t)) == t` for any
/// valid trajectory whose contents do not embed grammar tags.
pub fn serialize(trajectory: &Trajectory, grammar: &TagGrammar) -> Result<String, ProtocolError> {
    trajectory
        .validate()
        .map_err(|e| ProtocolError::Serialize(e.to_string()))?;
    let mut out = String::new();
    let mut write = |name: &str, content: &str| -> Result<(), ProtocolError> {
        for other in grammar.names() {
            if content.contains(&format!("<{other}>")) || content.contains(&format!("</{other}>"))
            {
                return Err(ProtocolError::Serialize(format!(
                    "step content embeds grammar tag <{other}>"
                )));
            }
        }
        out.push('<');
        out.push_str(name);
        out.push('>');
        out.push_str(content);
        out.push_str("</");
        out.push_str(name);
        out.push('>');
        Ok(())
    };
    for step in &trajectory.steps {
        match step {
            StepKind::Think(t) => write(grammar.name_of(RawTag::Think), t)?,
            StepKind::Search(q) => write(grammar.name_of(RawTag::Search), q)?,
            StepKind::Documents(docs) => {
                for d in docs {
                    write(grammar.name_of(RawTag::Document), d)?;
                }
            }
            StepKind::Warning(w) => write(grammar.name_of(RawTag::Warning), w)?,
            StepKind::Answer(a) => write(grammar.name_of(RawTag::Answer), a)?,
        }
    }
    Ok(out)
}

/// JSON-lines record for trajectory corpus files; `text` uses the tag grammar
/// verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question_id: u64,
    pub text: String,
    pub truncated: bool,
    pub search_count: u32,
    pub correct: bool,
}

/// Contract for the policy side of inference: produce the next action text,
/// ending at the first of `</search>`, `</answer>`, or end-of-sequence. The
/// produced text contains at most one complete action; returning text without
/// a complete action tag signals end-of-sequence.
pub trait ActionGenerator {
    fn next_action(&mut self, partial: &Trajectory) -> Result<String, ProtocolError>;
}

/// Contract for the helper answering search queries: returns the documents to
/// append (a single gold answer in oracle mode). Implementations must be safe
/// for per-trajectory sequential use; distinct trajectories may run
/// concurrently when the helper instances are independent.
pub trait Helper {
    fn respond(&mut self, query: &str) -> Result<Vec<String>, ProtocolError>;
}

/// Inference loop limits. `max_actions` is the bound on the zero-indexed
/// action counter (the loop runs while `l <= max_actions`) and equals
/// `budget + 2` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub budget: u32,
    pub max_actions: u32,
    pub oracle_mode: bool,
}

impl InferenceConfig {
    pub fn new(budget: u32, oracle_mode: bool) -> Self {
        Self {
            budget,
            max_actions: budget + 2,
            oracle_mode,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.max_actions != self.budget + 2 {
            return Err(ProtocolError::BadConfig(format!(
                "max_actions must equal budget + 2 (got {} for budget {})",
                self.max_actions, self.budget
            )));
        }
        Ok(())
    }
}

enum FragmentAction {
    Search { thinks: Vec<String>, query: String },
    Answer { thinks: Vec<String>, text: String },
    Eos { thinks: Vec<String> },
    Malformed,
}

/// Classify one generated action fragment: optional think steps followed by
/// at most one complete search or answer tag.
fn classify_fragment(text: &str, grammar: &TagGrammar) -> FragmentAction {
    let Ok((raw, truncated_tail)) = scan_blocks(text, grammar) else {
        return FragmentAction::Malformed;
    };
    let mut thinks = Vec::new();
    let mut action: Option<(RawTag, String)> = None;
    for rs in raw {
        match rs.tag {
            RawTag::Think if action.is_none() => thinks.push(rs.content),
            RawTag::Search | RawTag::Answer if action.is_none() => {
                action = Some((rs.tag, rs.content));
            }
            // Anything after the action, or helper-side tags, is malformed.
            _ => return FragmentAction::Malformed,
        }
    }
    if truncated_tail {
        // Generation stopped mid-tag: no complete action.
        return FragmentAction::Malformed;
    }
    match action {
        Some((RawTag::Search, query)) => FragmentAction::Search { thinks, query },
        Some((RawTag::Answer, text)) => FragmentAction::Answer { thinks, text },
        Some(_) => FragmentAction::Malformed,
        None => FragmentAction::Eos { thinks },
    }
}

/// Run the multi-turn inference loop.
///
/// Actions are generated while the action counter stays within
/// `max_actions`. A complete search within budget is answered by the helper
/// and the documents appended; a search past the budget receives the literal
/// warning step instead. An answer or end-of-sequence terminates the
/// trajectory; malformed actions terminate it as truncated (no
/// course-correction message is appended). Exhausting the loop bound returns
/// the trajectory truncated.
pub fn run_inference<G: ActionGenerator, H: Helper>(
    question_id: u64,
    generator: &mut G,
    helper: &mut H,
    config: &InferenceConfig,
) -> Result<Trajectory, ProtocolError> {
    config.validate()?;
    let grammar = TagGrammar::for_mode(config.oracle_mode);
    let mut trajectory = Trajectory::new(question_id);
    let mut l: u32 = 0;
    while l <= config.max_actions {
        let fragment = generator.next_action(&trajectory)?;
        match classify_fragment(&fragment, &grammar) {
            FragmentAction::Search { thinks, query } => {
                for t in thinks {
                    trajectory.steps.push(StepKind::Think(t));
                }
                trajectory.steps.push(StepKind::Search(query.clone()));
                if l < config.budget {
                    let docs = helper.respond(&query)?;
                    trajectory.steps.push(StepKind::Documents(docs));
                } else {
                    trajectory
                        .steps
                        .push(StepKind::Warning(WARNING_STEP_TEXT.to_string()));
                }
            }
            FragmentAction::Answer { thinks, text } => {
                for t in thinks {
                    trajectory.steps.push(StepKind::Think(t));
                }
                trajectory.steps.push(StepKind::Answer(text));
                trajectory.truncated = false;
                return Ok(trajectory);
            }
            FragmentAction::Eos { thinks } => {
                for t in thinks {
                    trajectory.steps.push(StepKind::Think(t));
                }
                return Ok(trajectory);
            }
            FragmentAction::Malformed => {
                return Ok(trajectory);
            }
        }
        l += 1;
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_grammar() -> TagGrammar {
        TagGrammar::standard()
    }

    #[test]
    fn parses_minimal_trajectory() {
        let t = parse("<think>a</think><answer>Paris</answer>", &std_grammar(), 1).unwrap();
        assert_eq!(
            t.steps,
            vec![
                StepKind::Think("a".into()),
                StepKind::Answer("Paris".into())
            ]
        );
        assert!(!t.truncated);
    }

    #[test]
    fn parses_single_search_trajectory() {
        let t = parse(
            "<search>q</search><document>d</document><answer>x</answer>",
            &std_grammar(),
            1,
        )
        .unwrap();
        assert_eq!(
            t.steps,
            vec![
                StepKind::Search("q".into()),
                StepKind::Documents(vec!["d".into()]),
                StepKind::Answer("x".into())
            ]
        );
        assert_eq!(t.search_count(), 1);
    }

    #[test]
    fn merges_consecutive_documents() {
        let t = parse(
            "<search>q</search><document>a</document><document>b</document><answer>x</answer>",
            &std_grammar(),
            1,
        )
        .unwrap();
        assert_eq!(t.steps[1], StepKind::Documents(vec!["a".into(), "b".into()]));
    }

    #[test]
    fn flags_truncation_without_answer_close() {
        let t = parse("<answer>x", &std_grammar(), 1).unwrap();
        assert!(t.truncated);
        assert!(t.steps.is_empty());
        let t = parse("<think>a</think><answer>x", &std_grammar(), 1).unwrap();
        assert!(t.truncated);
        assert_eq!(t.steps, vec![StepKind::Think("a".into())]);
    }

    #[test]
    fn rejects_unknown_tag_with_offset() {
        let err = parse("<think>a</think><frob>x</frob>", &std_grammar(), 1).unwrap_err();
        assert_eq!(
            err,
            ProtocolError::UnknownTag {
                name: "frob".into(),
                offset: 16
            }
        );
    }

    #[test]
    fn rejects_interleaved_tags() {
        let err = parse("<think>a<search>q</search></think>", &std_grammar(), 1).unwrap_err();
        assert!(matches!(err, ProtocolError::InterleavedTag { .. }));
    }

    #[test]
    fn rejects_stray_text_and_orphan_close() {
        assert!(matches!(
            parse("hello<answer>x</answer>", &std_grammar(), 1),
            Err(ProtocolError::StrayText { offset: 0 })
        ));
        assert!(matches!(
            parse("</think>", &std_grammar(), 1),
            Err(ProtocolError::UnmatchedClose { offset: 0 })
        ));
    }

    #[test]
    fn rejects_documents_without_search() {
        let err = parse("<document>d</document>", &std_grammar(), 1).unwrap_err();
        assert!(matches!(err, ProtocolError::MisplacedHelperStep { .. }));
    }

    #[test]
    fn rejects_steps_after_answer() {
        let err = parse(
            "<answer>x</answer><think>more</think>",
            &std_grammar(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::AnswerNotFinal { .. }));
    }

    #[test]
    fn serialize_round_trips_simple_steps() {
        let t = Trajectory {
            question_id: 9,
            steps: vec![StepKind::Answer("x".into())],
            truncated: false,
        };
        let text = serialize(&t, &std_grammar()).unwrap();
        assert_eq!(text, "<answer>x</answer>");
        assert_eq!(parse(&text, &std_grammar(), 9).unwrap(), t);
    }

    #[test]
    fn oracle_grammar_swaps_search_and_document_tags() {
        let t = Trajectory {
            question_id: 3,
            steps: vec![
                StepKind::Search(HELP_MESSAGE.into()),
                StepKind::Documents(vec!["gold-3".into()]),
                StepKind::Answer("gold-3".into()),
            ],
            truncated: false,
        };
        let text = serialize(&t, &TagGrammar::oracle()).unwrap();
        assert_eq!(
            text,
            "<help>I need help</help><helper_answer>gold-3</helper_answer><answer>gold-3</answer>"
        );
        assert_eq!(parse(&text, &TagGrammar::oracle(), 3).unwrap(), t);
        // Standard tags are unknown under the oracle grammar.
        assert!(parse("<search>q</search>", &TagGrammar::oracle(), 3).is_err());
    }

    #[test]
    fn warning_serialization_is_byte_exact() {
        let t = Trajectory {
            question_id: 1,
            steps: vec![
                StepKind::Search("q".into()),
                StepKind::Warning(WARNING_STEP_TEXT.into()),
            ],
            truncated: true,
        };
        let text = serialize(&t, &std_grammar()).unwrap();
        assert!(text.ends_with("<warning> SEARCH LIMIT REACHED </warning>"));
    }

    struct ScriptedGenerator {
        fragments: Vec<String>,
        at: usize,
    }

    impl ScriptedGenerator {
        fn new<const N: usize>(fragments: [&str; N]) -> Self {
            Self {
                fragments: fragments.iter().map(|s| s.to_string()).collect(),
                at: 0,
            }
        }
    }

    impl ActionGenerator for ScriptedGenerator {
        fn next_action(&mut self, _partial: &Trajectory) -> Result<String, ProtocolError> {
            let i = self.at.min(self.fragments.len() - 1);
            self.at += 1;
            Ok(self.fragments[i].clone())
        }
    }

    struct FixedHelper;

    impl Helper for FixedHelper {
        fn respond(&mut self, query: &str) -> Result<Vec<String>, ProtocolError> {
            Ok(vec![format!("doc for {query}")])
        }
    }

    #[test]
    fn immediate_answer_yields_zero_search_trajectory() {
        let mut g = ScriptedGenerator::new(["<think>t</think><answer>done</answer>"]);
        let t = run_inference(1, &mut g, &mut FixedHelper, &InferenceConfig::new(2, false))
            .unwrap();
        assert_eq!(t.search_count(), 0);
        assert!(!t.truncated);
    }

    #[test]
    fn persistent_searcher_hits_budget_then_warnings() {
        // Trace with L=2, bound l <= 4: searches at l=0,1 are served, searches
        // at l=2,3,4 each draw the warning, then the loop exhausts.
        let mut g = ScriptedGenerator::new(["<think>t</think><search>q</search>"]);
        let t = run_inference(1, &mut g, &mut FixedHelper, &InferenceConfig::new(2, false))
            .unwrap();
        let docs = t
            .steps
            .iter()
            .filter(|s| matches!(s, StepKind::Documents(_)))
            .count();
        let warnings = t
            .steps
            .iter()
            .filter(|s| matches!(s, StepKind::Warning(_)))
            .count();
        assert_eq!(docs, 2);
        assert_eq!(warnings, 3);
        assert_eq!(t.search_count(), 2);
        assert!(t.truncated);
        for w in t.steps.iter().filter_map(|s| match s {
            StepKind::Warning(w) => Some(w.as_str()),
            _ => None,
        }) {
            assert_eq!(w, WARNING_STEP_TEXT);
        }
    }

    #[test]
    fn eos_fragment_returns_truncated() {
        let mut g = ScriptedGenerator::new(["<think>hmm</think>"]);
        let t = run_inference(1, &mut g, &mut FixedHelper, &InferenceConfig::new(2, false))
            .unwrap();
        assert!(t.truncated);
        assert_eq!(t.steps, vec![StepKind::Think("hmm".into())]);
    }

    #[test]
    fn malformed_action_terminates_truncated() {
        let mut g = ScriptedGenerator::new(["<search>q</search><answer>x</answer>"]);
        let t = run_inference(1, &mut g, &mut FixedHelper, &InferenceConfig::new(2, false))
            .unwrap();
        assert!(t.truncated);
        assert!(t.steps.is_empty());
        let mut g = ScriptedGenerator::new(["<answer>x"]);
        let t = run_inference(1, &mut g, &mut FixedHelper, &InferenceConfig::new(2, false))
            .unwrap();
        assert!(t.truncated);
    }

    #[test]
    fn inference_config_pins_loop_bound() {
        let cfg = InferenceConfig::new(5, false);
        assert_eq!(cfg.max_actions, 7);
        let bad = InferenceConfig {
            budget: 5,
            max_actions: 5,
            oracle_mode: false,
        };
        assert!(bad.validate().is_err());
    }
}
