//! Seeded generators shared by property tests and the acceptance suite.

use crate::protocol::{ActionGenerator, Helper, ProtocolError, TagGrammar, WARNING_STEP_TEXT};
use crate::trajectory::{StepKind, Trajectory};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn fuzz_text(rng: &mut ChaCha8Rng) -> String {
    // Tag-free content: spaces and alphanumerics only, possibly empty.
    let len = rng.random_range(0..12u32);
    let mut s = String::new();
    for _ in 0..len {
        let c = match rng.random_range(0..37u32) {
            0 => ' ',
            n if n <= 10 => (b'0' + (n - 1) as u8) as char,
            n => (b'a' + (n - 11) as u8) as char,
        };
        s.push(c);
    }
    s
}

/// Generate a random structurally valid trajectory: think steps interleaved
/// with served/warned searches, optionally finished by an answer (truncated
/// otherwise).
pub fn fuzz_trajectory(rng: &mut ChaCha8Rng) -> Trajectory {
    let question_id = rng.random::<u64>();
    let mut steps = Vec::new();
    let blocks = rng.random_range(0..5u32);
    for _ in 0..blocks {
        if rng.random::<f64>() < 0.6 {
            steps.push(StepKind::Think(fuzz_text(rng)));
        }
        if rng.random::<f64>() < 0.7 {
            steps.push(StepKind::Search(fuzz_text(rng)));
            if rng.random::<f64>() < 0.8 {
                let docs = (0..rng.random_range(1..4u32))
                    .map(|_| fuzz_text(rng))
                    .collect();
                steps.push(StepKind::Documents(docs));
            } else {
                steps.push(StepKind::Warning(WARNING_STEP_TEXT.to_string()));
            }
        }
    }
    let answered = rng.random::<f64>() < 0.8;
    if answered {
        if rng.random::<f64>() < 0.5 {
            steps.push(StepKind::Think(fuzz_text(rng)));
        }
        steps.push(StepKind::Answer(fuzz_text(rng)));
    }
    Trajectory {
        question_id,
        steps,
        truncated: !answered,
    }
}

/// Budget-ignoring generator emitting random well-formed actions, used to
/// exercise the inference loop's warning and truncation paths.
pub struct ChaoticGenerator {
    pub rng: ChaCha8Rng,
    grammar: TagGrammar,
}

impl ChaoticGenerator {
    pub fn new(rng: ChaCha8Rng, grammar: TagGrammar) -> Self {
        Self { rng, grammar }
    }
}

impl ActionGenerator for ChaoticGenerator {
    fn next_action(&mut self, _partial: &Trajectory) -> Result<String, ProtocolError> {
        let roll = self.rng.random::<f64>();
        let think = format!("<{t}>{}</{t}>", fuzz_text(&mut self.rng), t = self.grammar.think);
        if roll < 0.7 {
            Ok(format!(
                "{think}<{s}>{}</{s}>",
                fuzz_text(&mut self.rng),
                s = self.grammar.search
            ))
        } else if roll < 0.9 {
            Ok(format!(
                "{think}<{a}>{}</{a}>",
                fuzz_text(&mut self.rng),
                a = self.grammar.answer
            ))
        } else if roll < 0.95 {
            // End-of-sequence: thinks only.
            Ok(think)
        } else {
            // Malformed fragment.
            Ok(format!("<{s}>dangling", s = self.grammar.search))
        }
    }
}

/// Helper returning deterministic filler documents.
pub struct FillerHelper {
    pub docs_per_search: u32,
    served: u32,
}

impl FillerHelper {
    pub fn new(docs_per_search: u32) -> Self {
        Self {
            docs_per_search,
            served: 0,
        }
    }
}

impl Helper for FillerHelper {
    fn respond(&mut self, query: &str) -> Result<Vec<String>, ProtocolError> {
        self.served += 1;
        Ok((0..self.docs_per_search)
            .map(|i| format!("doc {i} for {query} at {}", self.served))
            .collect())
    }
}
