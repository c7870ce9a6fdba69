//! Task metrics: answer normalization, exact match, containment accuracy and
//! token-level F1, plus the dataset to metric mapping.
//!
//! All metrics return a value in `[0, 1]`; multiple gold answers aggregate by max.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    ExactMatch,
    TokenF1,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown dataset {name:?}; expected one of nq, boolq, fever, zsre, hotpotqa, squad, or custom:<accuracy|exact_match|token_f1>")]
pub struct UnknownDataset {
    pub name: String,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::ExactMatch => "exact_match",
            MetricKind::TokenF1 => "token_f1",
        }
    }

    pub fn score(self, prediction: &str, golds: &[String]) -> f64 {
        match self {
            MetricKind::Accuracy => accuracy_contains(prediction, golds),
            MetricKind::ExactMatch => exact_match(prediction, golds),
            MetricKind::TokenF1 => token_f1(prediction, golds),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "exact_match" | "em" => Ok(MetricKind::ExactMatch),
            "token_f1" | "f1" => Ok(MetricKind::TokenF1),
            other => Err(format!("unknown metric kind {other:?}")),
        }
    }
}

pub fn metric_for_dataset(name: &str) -> Result<MetricKind, UnknownDataset> {
    let lowered = name.trim().to_ascii_lowercase();
    if let Some(kind) = lowered.strip_prefix("custom:") {
        return kind.parse().map_err(|_| UnknownDataset {
            name: name.to_string(),
        });
    }
    match lowered.as_str() {
        "nq" | "boolq" | "zsre" | "hotpotqa" => Ok(MetricKind::Accuracy),
        "fever" => Ok(MetricKind::TokenF1),
        "squad" => Ok(MetricKind::ExactMatch),
        _ => Err(UnknownDataset {
            name: name.to_string(),
        }),
    }
}

fn is_article(token: &str) -> bool {
    matches!(token, "a" | "an" | "the")
}

/// Lowercase, strip ASCII punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    normalized_tokens(text).join(" ")
}

pub fn normalized_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !is_article(t))
        .map(str::to_string)
        .collect()
}

fn max_over<F: Fn(&str) -> f64>(golds: &[String], f: F) -> f64 {
    golds.iter().map(|g| f(g)).fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    max_over(golds, |g| if normalize_answer(g) == pred { 1.0 } else { 0.0 })
}

/// 1 when some normalized gold occurs as a contiguous token run of the
/// normalized prediction.
pub fn accuracy_contains(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalized_tokens(prediction);
    max_over(golds, |g| {
        let gold = normalized_tokens(g);
        let hit = if gold.is_empty() {
            pred.is_empty()
        } else {
            pred.windows(gold.len()).any(|w| w == gold.as_slice())
        };
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalized_tokens(prediction);
    max_over(golds, |g| f1_single(&pred, &normalized_tokens(g)))
}
