//! RAG backbones: how a generator consumes retrieved documents.
//!
//! Write-back only changes what sits in the index, so any backbone works. Two
//! are provided: `naive` puts every retrieved document into one prompt;
//! `weighted` generates over growing rank prefixes and picks the answer with
//! the largest softmax(retrieval score) mass, ignoring abstentions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Generator};
use crate::backends::mock::UNKNOWN_ANSWER;
use crate::corpus::{DocLookup, Document};
use crate::index::RetrievalHit;
use crate::metrics::normalize_answer;
use crate::prompts::TaskPrompt;

/// Softmax temperature applied to cosine scores by the weighted backbone.
pub const WEIGHT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Naive,
    Weighted,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Naive => "naive",
            Backbone::Weighted => "weighted",
        })
    }
}

impl FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Backbone::Naive),
            "weighted" => Ok(Backbone::Weighted),
            other => Err(format!("unknown backbone {other:?}; expected naive or weighted")),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("generator failed: {0}")]
    Generator(#[from] BackendError),
    #[error("retrieved document {0:?} not found in any corpus")]
    MissingDocument(String),
}

/// Generator plus the prompt and decoding settings used for answering.
#[derive(Clone, Copy)]
pub struct Answerer<'a> {
    pub generator: &'a dyn Generator,
    pub task: TaskPrompt,
    pub max_new_tokens: usize,
    pub temperature: f64,
}

impl Answerer<'_> {
    pub fn no_retrieval(&self, question: &str) -> Result<String, AnswerError> {
        let req = self.task.request(question, None, self.max_new_tokens, self.temperature);
        Ok(self.generator.generate(&req)?)
    }

    pub fn with_documents(&self, question: &str, docs: &[&Document]) -> Result<String, AnswerError> {
        let req = self.task.request(question, Some(docs), self.max_new_tokens, self.temperature);
        Ok(self.generator.generate(&req)?)
    }
}

pub fn resolve<'d>(hits: &[RetrievalHit], docs: &'d dyn DocLookup) -> Result<Vec<&'d Document>, AnswerError> {
    hits.iter()
        .map(|h| docs.lookup(&h.doc_id).ok_or_else(|| AnswerError::MissingDocument(h.doc_id.clone())))
        .collect()
}

/// Softmax of `scores / temperature`, computed stably.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn is_abstention(answer: &str) -> bool {
    let norm = normalize_answer(answer);
    norm.is_empty() || norm == normalize_answer(UNKNOWN_ANSWER)
}

impl Backbone {
    pub fn answer(
        self,
        answerer: &Answerer<'_>,
        question: &str,
        hits: &[RetrievalHit],
        docs: &dyn DocLookup,
    ) -> Result<String, AnswerError> {
        let resolved = resolve(hits, docs)?;
        match self {
            Backbone::Naive => answerer.with_documents(question, &resolved),
            Backbone::Weighted => weighted_answer(answerer, question, hits, &resolved),
        }
    }
}

fn weighted_answer(
    answerer: &Answerer<'_>,
    question: &str,
    hits: &[RetrievalHit],
    resolved: &[&Document],
) -> Result<String, AnswerError> {
    if resolved.is_empty() {
        return answerer.with_documents(question, resolved);
    }
    let scores: Vec<f64> = hits.iter().map(|h| h.score).collect();
    let weights = softmax_weights(&scores, WEIGHT_TEMPERATURE);
    // (first prefix that produced it, raw answer, accumulated weight)
    let mut votes: HashMap<String, (usize, String, f64)> = HashMap::new();
    let mut last = String::new();
    for (i, w) in weights.iter().enumerate() {
        let answer = answerer.with_documents(question, &resolved[..=i])?;
        if !is_abstention(&answer) {
            votes
                .entry(normalize_answer(&answer))
                .or_insert_with(|| (i, answer.clone(), 0.0))
                .2 += w;
        }
        last = answer;
    }
    let best = votes
        .into_values()
        .max_by(|a, b| a.2.total_cmp(&b.2).then_with(|| b.0.cmp(&a.0)));
    Ok(best.map_or(last, |(_, answer, _)| answer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::GenerationRequest;
    use crate::corpus::{CorpusStore, Source};
    use crate::prompts::{extract_documents, task_prompt_for};

    /// Answers with the title of the last document in the block, or UNKNOWN.
    struct LastTitle;

    impl Generator for LastTitle {
        fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
            let block = extract_documents(&request.system).unwrap_or("");
            Ok(block
                .rsplit("(Title: ")
                .next()
                .filter(|_| !block.is_empty())
                .and_then(|t| t.split(')').next())
                .unwrap_or(UNKNOWN_ANSWER)
                .to_string())
        }
    }

    fn hit(id: &str, score: f64, rank: usize) -> RetrievalHit {
        RetrievalHit {
            doc_id: id.into(),
            score,
            rank,
            source: Source::Original,
        }
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let w = softmax_weights(&[0.9, 0.5, 0.1], 0.1);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
        assert!(softmax_weights(&[], 0.1).is_empty());
    }

    #[test]
    fn weighted_picks_heaviest_answer() {
        let store = CorpusStore::from_documents(vec![
            Document::new("a", "x", "t"),
            Document::new("b", "x", "t"),
            Document::new("c", "y", "t"),
        ])
        .unwrap();
        let answerer = Answerer {
            generator: &LastTitle,
            task: task_prompt_for("nq"),
            max_new_tokens: 8,
            temperature: 0.0,
        };
        let hits = [hit("a", 0.5, 1), hit("b", 0.5, 2), hit("c", 0.5, 3)];
        // prefixes answer x, x, y with equal weights: x wins
        assert_eq!(Backbone::Weighted.answer(&answerer, "q", &hits, &store).unwrap(), "x");
        assert_eq!(Backbone::Naive.answer(&answerer, "q", &hits, &store).unwrap(), "y");
    }

    #[test]
    fn missing_document_is_reported() {
        let store = CorpusStore::default();
        let answerer = Answerer {
            generator: &LastTitle,
            task: task_prompt_for("nq"),
            max_new_tokens: 8,
            temperature: 0.0,
        };
        let err = Backbone::Naive.answer(&answerer, "q", &[hit("zz", 1.0, 1)], &store).unwrap_err();
        assert!(matches!(err, AnswerError::MissingDocument(id) if id == "zz"));
    }

    #[test]
    fn backbone_parse() {
        assert_eq!("weighted".parse::<Backbone>(), Ok(Backbone::Weighted));
        assert!("replug".parse::<Backbone>().is_err());
    }
}
