//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Later keys override earlier ones.
//! Unknown keys are kept aside so callers can warn about them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::harness::{Grid, SyntheticSpec};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{key}: cannot parse {value:?}: {message}")]
    Value { key: String, value: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    /// Comma-separated list under `key`, for grid files.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|e| ConfigError::Value {
                            key: key.to_string(),
                            value: s.to_string(),
                            message: e.to_string(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

/// Keys understood by [`PipelineConfig`].
pub const PIPELINE_KEYS: [&str; 15] = [
    "retrieval_k",
    "wb_retrieval_k",
    "merged_k",
    "tau_s",
    "tau_delta",
    "tau_doc",
    "n_min",
    "extractive_max_sentences",
    "fallback_selected_sentences",
    "max_new_tokens",
    "temperature",
    "dataset",
    "backbone",
    "answer_max_new_tokens",
    "embed_batch_size",
];

macro_rules! set {
    ($kv:expr, $key:literal, $target:expr) => {
        if let Some(v) = $kv.parsed($key)? {
            $target = v;
        }
    };
}

impl PipelineConfig {
    /// Overrides defaults with recognized keys; returns the keys that were not
    /// pipeline keys.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<Vec<String>, ConfigError> {
        set!(kv, "retrieval_k", self.retrieval_k);
        set!(kv, "wb_retrieval_k", self.wb_retrieval_k);
        set!(kv, "merged_k", self.merged_k);
        set!(kv, "tau_s", self.thresholds.tau_s);
        set!(kv, "tau_delta", self.thresholds.tau_delta);
        set!(kv, "tau_doc", self.thresholds.tau_doc);
        set!(kv, "n_min", self.thresholds.n_min);
        set!(kv, "extractive_max_sentences", self.distill.extractive_max_sentences);
        set!(kv, "fallback_selected_sentences", self.distill.fallback_selected_sentences);
        set!(kv, "max_new_tokens", self.distill.max_new_tokens);
        set!(kv, "temperature", self.distill.temperature);
        set!(kv, "dataset", self.dataset);
        set!(kv, "backbone", self.backbone);
        set!(kv, "answer_max_new_tokens", self.answer_max_new_tokens);
        set!(kv, "embed_batch_size", self.embed_batch_size);
        Ok(kv
            .keys()
            .filter(|k| !PIPELINE_KEYS.contains(k))
            .map(str::to_string)
            .collect())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("retrieval_k", self.retrieval_k.to_string());
        kv.insert("wb_retrieval_k", self.wb_retrieval_k.to_string());
        kv.insert("merged_k", self.merged_k.to_string());
        kv.insert("tau_s", self.thresholds.tau_s.to_string());
        kv.insert("tau_delta", self.thresholds.tau_delta.to_string());
        kv.insert("tau_doc", self.thresholds.tau_doc.to_string());
        kv.insert("n_min", self.thresholds.n_min.to_string());
        kv.insert("extractive_max_sentences", self.distill.extractive_max_sentences.to_string());
        kv.insert("fallback_selected_sentences", self.distill.fallback_selected_sentences.to_string());
        kv.insert("max_new_tokens", self.distill.max_new_tokens.to_string());
        kv.insert("temperature", self.distill.temperature.to_string());
        kv.insert("dataset", self.dataset.clone());
        kv.insert("backbone", self.backbone.to_string());
        kv.insert("answer_max_new_tokens", self.answer_max_new_tokens.to_string());
        kv.insert("embed_batch_size", self.embed_batch_size.to_string());
        kv
    }
}

/// Keys understood by [`SyntheticSpec`].
pub const SPEC_KEYS: [&str; 7] = [
    "n_queries",
    "facts_per_answer",
    "noise_sentences_per_doc",
    "n_distractor_docs",
    "parametric_fraction",
    "seed",
    "embed_dim",
];

impl SyntheticSpec {
    /// Overrides fields with recognized keys; returns the unrecognized keys.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<Vec<String>, ConfigError> {
        set!(kv, "n_queries", self.n_queries);
        set!(kv, "facts_per_answer", self.facts_per_answer);
        set!(kv, "noise_sentences_per_doc", self.noise_sentences_per_doc);
        set!(kv, "n_distractor_docs", self.n_distractor_docs);
        set!(kv, "parametric_fraction", self.parametric_fraction);
        set!(kv, "seed", self.seed);
        set!(kv, "embed_dim", self.embed_dim);
        Ok(kv.keys().filter(|k| !SPEC_KEYS.contains(k)).map(str::to_string).collect())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("n_queries", self.n_queries.to_string());
        kv.insert("facts_per_answer", self.facts_per_answer.to_string());
        kv.insert("noise_sentences_per_doc", self.noise_sentences_per_doc.to_string());
        kv.insert("n_distractor_docs", self.n_distractor_docs.to_string());
        kv.insert("parametric_fraction", self.parametric_fraction.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("embed_dim", self.embed_dim.to_string());
        kv
    }
}

/// Reads a sweep file: each key is a threshold name, each value a
/// comma-separated list. Keys come back sorted.
pub fn parse_grid(kv: &KeyValues) -> Result<Grid, ConfigError> {
    kv.keys()
        .map(|k| Ok((k.to_string(), kv.list::<f64>(k)?.unwrap_or_default())))
        .collect()
}

/// Renders key-value pairs in file syntax, sorted by key.
pub fn render(kv: &KeyValues) -> String {
    let mut out = String::new();
    for (k, v) in kv.iter() {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Backbone;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# header\ntau_s = 0.2 # inline\n\nn_min=3\ntau_s = 0.3\n").unwrap();
        assert_eq!(kv.get("tau_s"), Some("0.3"));
        assert_eq!(kv.get("n_min"), Some("3"));
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = KeyValues::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        assert!(KeyValues::parse(" = 3").is_err());
    }

    #[test]
    fn apply_and_unknown_keys() {
        let kv = KeyValues::parse("tau_doc = 0.05\nbackbone = weighted\nfoo = bar\n").unwrap();
        let mut cfg = PipelineConfig::default();
        let unknown = cfg.apply(&kv).unwrap();
        assert_eq!(unknown, vec!["foo".to_string()]);
        assert_eq!(cfg.thresholds.tau_doc, 0.05);
        assert_eq!(cfg.backbone, Backbone::Weighted);
    }

    #[test]
    fn bad_value_is_named() {
        let kv = KeyValues::parse("n_min = two").unwrap();
        let err = PipelineConfig::default().apply(&kv).unwrap_err();
        assert!(err.to_string().contains("n_min"));
    }

    #[test]
    fn round_trip() {
        let cfg = PipelineConfig {
            merged_k: 7,
            dataset: "fever".into(),
            ..PipelineConfig::default()
        };
        let text = render(&cfg.to_key_values());
        let mut back = PipelineConfig::default();
        assert!(back.apply(&KeyValues::parse(&text).unwrap()).unwrap().is_empty());
        assert_eq!(back, cfg);
    }

    #[test]
    fn spec_and_grid_files() {
        let kv = KeyValues::parse("facts_per_answer = 4\nseed = 9\nbogus = 1\n").unwrap();
        let mut spec = SyntheticSpec::default();
        assert_eq!(spec.apply(&kv).unwrap(), vec!["bogus".to_string()]);
        assert_eq!((spec.facts_per_answer, spec.seed), (4, 9));
        let mut back = SyntheticSpec::default();
        back.apply(&spec.to_key_values()).unwrap();
        assert_eq!(back, spec);
        let grid = parse_grid(&KeyValues::parse("tau_doc = 0, 0.01\nn_min = 1,2,3").unwrap()).unwrap();
        assert_eq!(grid, vec![("n_min".to_string(), vec![1.0, 2.0, 3.0]), ("tau_doc".to_string(), vec![0.0, 0.01])]);
    }

    #[test]
    fn lists() {
        let kv = KeyValues::parse("tau_doc = 0.0, 0.01 ,0.05").unwrap();
        assert_eq!(kv.list::<f64>("tau_doc").unwrap(), Some(vec![0.0, 0.01, 0.05]));
        assert_eq!(kv.list::<f64>("missing").unwrap(), None);
    }
}
