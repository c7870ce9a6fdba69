//! Deterministic offline backends.
//!
//! - [`MockEmbedder`]: signed hashed bag-of-words.
//! - [`OracleGenerator`]: answers iff every required fact is visible in the
//!   prompt's document block or in its parametric store.
//! - [`MockDistiller`]: extracts sentences that share a content word with
//!   the question and concatenates them on rewrite.
//! - [`MockLlm`]: routes distillation prompts to the distiller and everything
//!   else to the oracle, like a single LLM serving both roles.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, Embedder, GenerationRequest, Generator};
use crate::corpus::split_sentences;
use crate::distill::{
    EXTRACTIVE_PASSAGES_HEADER, EXTRACTIVE_SYSTEM, REWRITE_EVIDENCE_HEADER, REWRITE_INSTRUCTIONS, REWRITE_SYSTEM,
};
use crate::index::EmbeddingVector;
use crate::metrics::normalized_tokens;
use crate::prompts::{extract_documents, extract_question};

pub const DEFAULT_MOCK_DIM: usize = 256;

/// Emitted by the oracle when it cannot answer.
pub const UNKNOWN_ANSWER: &str = "UNKNOWN";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    /// # Panics
    /// If `dim < 8`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 8, "mock embedder dimension must be at least 8");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        mock_embed(text, self.dim)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

/// Coordinate and sign a normalized token contributes to.
pub fn mock_slot(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a(token.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Hashed bag of normalized tokens: each token picks a coordinate and a sign.
/// No tokens gives the unit vector on coordinate 0.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0f64; dim];
    for token in normalized_tokens(text) {
        let (slot, sign) = mock_slot(&token, dim);
        values[slot] += sign;
    }
    EmbeddingVector::normalized(values).expect("finite non-empty vector")
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub required_facts: BTreeSet<String>,
    pub answer: String,
}

/// What the oracle "model" knows: parametric facts plus, per question, the
/// facts it needs and the answer it gives once it has them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleWorld {
    pub parametric_facts: BTreeSet<String>,
    pub answer_map: BTreeMap<String, OracleAnswer>,
}

impl OracleWorld {
    pub fn validate(&self) -> Result<(), String> {
        match self.answer_map.iter().find(|(_, a)| a.required_facts.is_empty()) {
            Some((q, _)) => Err(format!("question {q:?} has no required facts")),
            None => Ok(()),
        }
    }

    pub fn insert(&mut self, question: impl Into<String>, facts: impl IntoIterator<Item = String>, answer: impl Into<String>) {
        self.answer_map.insert(
            question.into(),
            OracleAnswer {
                required_facts: facts.into_iter().collect(),
                answer: answer.into(),
            },
        );
    }
}

#[derive(Debug, Clone)]
pub struct OracleGenerator {
    world: OracleWorld,
}

impl OracleGenerator {
    pub fn new(world: OracleWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }
}

/// Answers iff each required fact is a substring of the document block or a
/// member of the parametric store.
pub fn oracle_generate(request: &GenerationRequest, world: &OracleWorld) -> Result<String, BackendError> {
    let question = extract_question(&request.user).ok_or(BackendError::UnrecognizedTemplate)?;
    let entry = world
        .answer_map
        .get(question)
        .ok_or_else(|| BackendError::UnknownQuestion(question.to_string()))?;
    let context = extract_documents(&request.system).unwrap_or("");
    let knows = entry
        .required_facts
        .iter()
        .all(|f| world.parametric_facts.contains(f) || context.contains(f.as_str()));
    Ok(if knows {
        entry.answer.clone()
    } else {
        UNKNOWN_ANSWER.to_string()
    })
}

impl Generator for OracleGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        oracle_generate(request, &self.world)
    }
}

const STOPWORDS: &[&str] = &[
    "about", "and", "are", "as", "at", "be", "by", "can", "describe", "did", "do", "does", "for", "from", "how", "in",
    "is", "it", "its", "me", "of", "on", "or", "say", "tell", "that", "this", "to", "was", "were", "what", "when",
    "where", "which", "who", "whom", "why", "with", "you",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Normalized, de-duplicated non-stopword tokens in first-seen order.
pub fn content_terms(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    normalized_tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t) && seen.insert(t.clone()))
        .collect()
}

/// Deterministic distiller driven by the distillation templates.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockDistiller;

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = from + text[from..].find(end)?;
    Some(&text[from..to])
}

/// Parses `Doc <i>: <title>` headers followed by text lines.
fn parse_distill_reference(block: &str) -> Vec<(usize, String)> {
    let mut docs: Vec<(usize, String)> = Vec::new();
    for line in block.lines() {
        let header = line
            .strip_prefix("Doc ")
            .and_then(|rest| rest.split_once(": ").or_else(|| rest.strip_suffix(':').map(|n| (n, ""))))
            .and_then(|(n, _)| n.parse::<usize>().ok());
        match header {
            Some(i) => docs.push((i, String::new())),
            None => {
                if let Some((_, text)) = docs.last_mut() {
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    text.push_str(line);
                }
            }
        }
    }
    docs
}

pub fn mock_distill_generate(request: &GenerationRequest) -> Result<String, BackendError> {
    if request.system == EXTRACTIVE_SYSTEM {
        let question = extract_question(&request.user).ok_or(BackendError::UnrecognizedTemplate)?;
        let block = between(&request.user, EXTRACTIVE_PASSAGES_HEADER, "\nSelect up to ")
            .ok_or(BackendError::UnrecognizedTemplate)?;
        let max: usize = between(&request.user, "\nSelect up to ", " evidence sentences.")
            .and_then(|n| n.trim().parse().ok())
            .ok_or(BackendError::UnrecognizedTemplate)?;
        let terms: HashSet<String> = content_terms(question).into_iter().collect();
        let mut out = Vec::new();
        for (i, text) in parse_distill_reference(block) {
            for sentence in split_sentences(&text) {
                if out.len() == max {
                    break;
                }
                if normalized_tokens(&sentence).iter().any(|t| terms.contains(t)) {
                    out.push(format!("[Doc {i}] {sentence}"));
                }
            }
        }
        Ok(out.join("\n"))
    } else if request.system == REWRITE_SYSTEM {
        let question = extract_question(&request.user).ok_or(BackendError::UnrecognizedTemplate)?;
        let evidence = between(&request.user, REWRITE_EVIDENCE_HEADER, &format!("\n{REWRITE_INSTRUCTIONS}"))
            .ok_or(BackendError::UnrecognizedTemplate)?;
        let sentences: Vec<&str> = evidence
            .lines()
            .map(|l| match l.strip_prefix("[Doc ").and_then(|r| r.split_once("] ")) {
                Some((_, s)) => s.trim(),
                None => l.trim(),
            })
            .filter(|s| !s.is_empty())
            .collect();
        Ok(format!("Fused: {}\n{}", content_terms(question).join(" "), sentences.join(" ")))
    } else {
        Err(BackendError::UnrecognizedTemplate)
    }
}

impl Generator for MockDistiller {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        mock_distill_generate(request)
    }
}

pub fn is_distillation_request(request: &GenerationRequest) -> bool {
    request.system == EXTRACTIVE_SYSTEM || request.system == REWRITE_SYSTEM
}

/// Oracle answering plus mock distillation behind one generator.
#[derive(Debug, Clone)]
pub struct MockLlm {
    oracle: OracleGenerator,
}

impl MockLlm {
    pub fn new(world: OracleWorld) -> Self {
        Self {
            oracle: OracleGenerator::new(world),
        }
    }

    pub fn world(&self) -> &OracleWorld {
        self.oracle.world()
    }
}

impl Generator for MockLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if is_distillation_request(request) {
            mock_distill_generate(request)
        } else {
            self.oracle.generate(request)
        }
    }
}

/// Wraps a generator and keeps every request it sees, for prompt audits.
pub struct Recording<G> {
    inner: G,
    log: Mutex<Vec<GenerationRequest>>,
}

impl<G: Generator> Recording<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.log.lock().expect("recording lock").clone()
    }
}

impl<G: Generator> Generator for Recording<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.log.lock().expect("recording lock").push(request.clone());
        self.inner.generate(request)
    }
}
