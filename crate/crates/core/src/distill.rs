//! Two-phase distillation: pick answer-relevant evidence sentences from the
//! gated documents, then rewrite them into one compact knowledge unit.
//!
//! None of the prompt builders take an answer argument. The distiller only
//! ever sees the question and the documents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationRequest, Generator};
use crate::corpus::{count_tokens, split_sentences, Document, Source};

pub const EXTRACTIVE_SYSTEM: &str = "Extract only answer-relevant evidence sentences from retrieved passages.\nDo not paraphrase. Keep exact sentence text.";

pub const REWRITE_SYSTEM: &str = "You are writing a high-utility retrieval document for future QA. Use only facts supported by the provided knowledge.";

pub const EXTRACTIVE_PASSAGES_HEADER: &str = "Retrieved passages:\n";
pub const REWRITE_EVIDENCE_HEADER: &str = "Supporting knowledge:\n";
pub const REWRITE_INSTRUCTIONS: &str = "Write one merged document in the same style as the original evidence corpus.\n\
Quality requirements:\n\
1) Add concise supporting facts that improve retrieval recall: key entities, aliases, dates, numbers, and locations when supported.\n\
2) Reuse important terms from the question and evidence; include alternative names only if supported.\n\
3) Keep it factual and compact; do not add unsupported claims.\n\
Output format (exactly two parts, no labels):\n\
<title line>\n\
<knowledge paragraph(s)>\n\
Do not output prefixes like `Title:` or `Knowledge:`.";

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("example {example_id}: generator failed: {source}")]
    Generator {
        example_id: String,
        #[source]
        source: BackendError,
    },
    #[error("example {example_id}: empty distillation")]
    Empty { example_id: String },
    #[error("example {example_id}: no retained documents to distill")]
    NoDocuments { example_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub extractive_max_sentences: usize,
    pub fallback_selected_sentences: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            extractive_max_sentences: 8,
            fallback_selected_sentences: 6,
            max_new_tokens: 128,
            temperature: 0.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.extractive_max_sentences == 0 || self.fallback_selected_sentences == 0 || self.max_new_tokens == 0 {
            return Err("distillation sentence and token limits must be positive".into());
        }
        if self.fallback_selected_sentences > self.extractive_max_sentences {
            return Err(format!(
                "fallback_selected_sentences ({}) exceeds extractive_max_sentences ({})",
                self.fallback_selected_sentences, self.extractive_max_sentences
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be a finite non-negative number".into());
        }
        Ok(())
    }
}

/// Ordered `(doc_index, sentence)` pairs; `doc_index` is 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSelection {
    pub lines: Vec<(usize, String)>,
}

impl EvidenceSelection {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    /// One `[Doc N] sentence` line per entry.
    pub fn to_evidence_text(&self) -> String {
        self.lines
            .iter()
            .map(|(i, s)| format!("[Doc {i}] {s}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub id: String,
    pub title: String,
    /// Serialized as `text`: the unit's knowledge paragraph(s).
    #[serde(rename = "text")]
    pub body: String,
    pub source_example_id: String,
    pub retained_doc_ids: Vec<String>,
    pub source_tokens: usize,
    pub distilled_tokens: usize,
    pub fallback_used: bool,
}

impl KnowledgeUnit {
    pub fn compression(&self) -> f64 {
        self.source_tokens as f64 / self.distilled_tokens as f64
    }

    /// The unit as an indexable write-back document.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(self.id.clone(), self.title.clone(), self.body.clone());
        doc.source = Source::Writeback;
        doc
    }
}

/// `Doc <i>: <title>\n<text>` entries, numbered from 1, blank-line separated.
pub fn format_distill_reference(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Doc {}: {}\n{}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_extractive_prompt(question: &str, retained_docs: &[&Document], cfg: &DistillConfig) -> (String, String) {
    let user = format!(
        "Question: {question}\n{EXTRACTIVE_PASSAGES_HEADER}{}\nSelect up to {} evidence sentences.\n\
Output one sentence per line using this format only:\n\
[Doc <index>] <sentence>\n\
where Doc index starts from 1.",
        format_distill_reference(retained_docs),
        cfg.extractive_max_sentences
    );
    (EXTRACTIVE_SYSTEM.to_string(), user)
}

/// Tolerant parser: keeps well-formed `[Doc N] S` lines with `1 <= N <= num_docs`.
pub fn parse_extractive_output(raw: &str, num_docs: usize, max_sentences: usize) -> EvidenceSelection {
    let lines = raw
        .lines()
        .filter_map(|line| parse_evidence_line(line.trim(), num_docs))
        .take(max_sentences)
        .collect();
    EvidenceSelection { lines }
}

fn parse_evidence_line(line: &str, num_docs: usize) -> Option<(usize, String)> {
    let rest = line.strip_prefix("[Doc ")?;
    let close = rest.find(']')?;
    let index: usize = rest[..close].trim().parse().ok()?;
    if index == 0 || index > num_docs {
        return None;
    }
    let sentence = rest[close + 1..].trim();
    if sentence.is_empty() {
        return None;
    }
    Some((index, sentence.to_string()))
}

/// Round-robin over documents in rank order: sentence 1 of each document,
/// then sentence 2 of each, and so on, until `limit` sentences are taken.
pub fn round_robin_sentences(docs: &[&Document], limit: usize) -> EvidenceSelection {
    let per_doc: Vec<Vec<String>> = docs.iter().map(|d| split_sentences(&d.text)).collect();
    let longest = per_doc.iter().map(Vec::len).max().unwrap_or(0);
    let mut lines = Vec::new();
    'outer: for round in 0..longest {
        for (i, sentences) in per_doc.iter().enumerate() {
            if lines.len() == limit {
                break 'outer;
            }
            if let Some(s) = sentences.get(round) {
                lines.push((i + 1, s.clone()));
            }
        }
    }
    EvidenceSelection { lines }
}

fn request(system: String, user: String, cfg: &DistillConfig) -> GenerationRequest {
    GenerationRequest {
        system,
        user,
        max_new_tokens: cfg.max_new_tokens,
        temperature: cfg.temperature,
    }
}

pub fn select_evidence(
    question: &str,
    retained_docs: &[&Document],
    generator: &dyn Generator,
    cfg: &DistillConfig,
) -> Result<EvidenceSelection, BackendError> {
    let (system, user) = build_extractive_prompt(question, retained_docs, cfg);
    let raw = generator.generate(&request(system, user, cfg))?;
    let parsed = parse_extractive_output(&raw, retained_docs.len(), cfg.extractive_max_sentences);
    if parsed.is_empty() {
        Ok(round_robin_sentences(retained_docs, cfg.fallback_selected_sentences))
    } else {
        Ok(parsed)
    }
}

pub fn build_rewrite_prompt(question: &str, evidence: &EvidenceSelection) -> (String, String) {
    let user = format!(
        "Question: {question}\n{REWRITE_EVIDENCE_HEADER}{}\n{REWRITE_INSTRUCTIONS}",
        evidence.to_evidence_text()
    );
    (REWRITE_SYSTEM.to_string(), user)
}

fn strip_label<'a>(line: &'a str, label: &str) -> &'a str {
    match line.get(..label.len()) {
        Some(head) if head.eq_ignore_ascii_case(label) => line[label.len()..].trim_start(),
        _ => line,
    }
}

/// First non-empty line is the title, the rest is the body. A single line
/// yields an empty title. `None` when the output has no content.
pub fn parse_rewrite_output(raw: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.as_slice() {
        [] => None,
        [only] => {
            let body = strip_label(strip_label(only, "Title:"), "Knowledge:");
            (!body.is_empty()).then(|| (String::new(), body.to_string()))
        }
        [first, rest @ ..] => {
            let title = strip_label(first, "Title:").to_string();
            let body_lines: Vec<&str> = rest
                .iter()
                .enumerate()
                .map(|(i, l)| if i == 0 { strip_label(l, "Knowledge:") } else { *l })
                .filter(|l| !l.is_empty())
                .collect();
            if body_lines.is_empty() {
                (!title.is_empty()).then(|| (String::new(), title))
            } else {
                Some((title, body_lines.join("\n")))
            }
        }
    }
}

/// Extract, rewrite, parse, and assemble the knowledge unit for one example.
pub fn distill(
    question: &str,
    example_id: &str,
    retained_docs: &[&Document],
    fallback_used: bool,
    generator: &dyn Generator,
    cfg: &DistillConfig,
) -> Result<KnowledgeUnit, DistillError> {
    if retained_docs.is_empty() {
        return Err(DistillError::NoDocuments {
            example_id: example_id.to_string(),
        });
    }
    let gen_err = |source| DistillError::Generator {
        example_id: example_id.to_string(),
        source,
    };
    let evidence = select_evidence(question, retained_docs, generator, cfg).map_err(gen_err)?;
    if evidence.is_empty() {
        return Err(DistillError::Empty {
            example_id: example_id.to_string(),
        });
    }
    let (system, user) = build_rewrite_prompt(question, &evidence);
    let raw = generator.generate(&request(system, user, cfg)).map_err(gen_err)?;
    let (title, body) = parse_rewrite_output(&raw).ok_or_else(|| DistillError::Empty {
        example_id: example_id.to_string(),
    })?;
    let source_tokens = retained_docs.iter().map(|d| count_tokens(&d.text)).sum();
    let distilled_tokens = count_tokens(&format!("{title} {body}"));
    Ok(KnowledgeUnit {
        id: format!("wb-{example_id}"),
        title,
        body,
        source_example_id: example_id.to_string(),
        retained_doc_ids: retained_docs.iter().map(|d| d.id.clone()).collect(),
        source_tokens,
        distilled_tokens,
        fallback_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned outputs and records requests.
    struct Scripted {
        outputs: Mutex<Vec<String>>,
        seen: Mutex<Vec<GenerationRequest>>,
    }

    impl Scripted {
        fn new(outputs: &[&str]) -> Self {
            Self {
                outputs: Mutex::new(outputs.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Generator for Scripted {
        fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(self.outputs.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn doc(id: &str, title: &str, text: &str) -> Document {
        Document::new(id, title, text)
    }

    #[test]
    fn extractive_prompt_matches_template() {
        let d1 = doc("a", "Alpha", "First. Second.");
        let d2 = doc("b", "Beta", "Third.");
        let (system, user) = build_extractive_prompt("q", &[&d1, &d2], &DistillConfig::default());
        assert_eq!(
            system,
            "Extract only answer-relevant evidence sentences from retrieved passages.\nDo not paraphrase. Keep exact sentence text."
        );
        assert_eq!(
            user,
            "Question: q\nRetrieved passages:\nDoc 1: Alpha\nFirst. Second.\n\nDoc 2: Beta\nThird.\n\
Select up to 8 evidence sentences.\nOutput one sentence per line using this format only:\n\
[Doc <index>] <sentence>\nwhere Doc index starts from 1."
        );
        assert!(user.find("Doc 1").unwrap() < user.find("Doc 2").unwrap());
    }

    #[test]
    fn rewrite_prompt_matches_template() {
        let ev = EvidenceSelection {
            lines: vec![(2, "It is soluble.".into())],
        };
        let (system, user) = build_rewrite_prompt("what dissolves it", &ev);
        assert!(system.contains("Use only facts supported by the provided knowledge."));
        assert!(user.starts_with("Question: what dissolves it\nSupporting knowledge:\n[Doc 2] It is soluble.\nWrite one merged document"));
        assert!(user.ends_with("Do not output prefixes like `Title:` or `Knowledge:`."));
        assert_eq!(ev.to_evidence_text(), "[Doc 2] It is soluble.");
    }

    #[test]
    fn parse_extractive_cases() {
        let got = parse_extractive_output("[Doc 1] A.\n[Doc 2] B.", 2, 8);
        assert_eq!(got.lines, vec![(1, "A.".to_string()), (2, "B.".to_string())]);
        assert!(parse_extractive_output("garbage\n[Doc 9] X", 2, 8).is_empty());
        assert!(parse_extractive_output("[Doc 0] X\n[Doc x] Y\n[Doc 1]", 2, 8).is_empty());
        let ten: String = (0..10).map(|i| format!("[Doc 1] S{i}.\n")).collect();
        let got = parse_extractive_output(&ten, 1, 8);
        assert_eq!(got.len(), 8);
        assert_eq!(got.lines[0].1, "S0.");
        assert_eq!(got.lines[7].1, "S7.");
    }

    #[test]
    fn evidence_from_generator_output() {
        let d1 = doc("a", "", "A. B.");
        let d2 = doc("b", "", "C.");
        let g = Scripted::new(&["[Doc 2] C.\n[Doc 1] A."]);
        let ev = select_evidence("q", &[&d1, &d2], &g, &DistillConfig::default()).unwrap();
        assert_eq!(ev.lines, vec![(2, "C.".to_string()), (1, "A.".to_string())]);
    }

    #[test]
    fn empty_extraction_falls_back_round_robin() {
        let d1 = doc("a", "", "A1. A2. A3. A4.");
        let d2 = doc("b", "", "B1. B2.");
        let g = Scripted::new(&[""]);
        let ev = select_evidence("q", &[&d1, &d2], &g, &DistillConfig::default()).unwrap();
        let expected: Vec<(usize, String)> = vec![
            (1, "A1.".into()),
            (2, "B1.".into()),
            (1, "A2.".into()),
            (2, "B2.".into()),
            (1, "A3.".into()),
            (1, "A4.".into()),
        ];
        assert_eq!(ev.lines, expected);

        let short = doc("c", "", "Only one.");
        let ev = round_robin_sentences(&[&short], 6);
        assert_eq!(ev.lines, vec![(1, "Only one.".to_string())]);
    }

    #[test]
    fn parse_rewrite_cases() {
        assert_eq!(parse_rewrite_output("T\nB1\nB2"), Some(("T".into(), "B1\nB2".into())));
        assert_eq!(parse_rewrite_output("Title: T\nKnowledge: B"), Some(("T".into(), "B".into())));
        assert_eq!(parse_rewrite_output("title:T\nKNOWLEDGE:  B"), Some(("T".into(), "B".into())));
        assert_eq!(parse_rewrite_output("\n  only line \n"), Some((String::new(), "only line".into())));
        assert_eq!(parse_rewrite_output("  \n\n"), None);
        let raw = "Big Little Lies (TV series)\nBig Little Lies is an American drama television series, based on the novel of the same name by Liane Moriarty, that premiered on February 19, 2017, on HBO.";
        let (title, body) = parse_rewrite_output(raw).unwrap();
        assert_eq!(title, "Big Little Lies (TV series)");
        assert!(body.starts_with("Big Little Lies is an American drama television series"));
    }

    #[test]
    fn distill_assembles_unit_with_token_counts() {
        let forty = |w: &str| (0..40).map(|i| format!("{w}{i}")).collect::<Vec<_>>().join(" ") + ".";
        let d1 = doc("a", "A", &forty("x"));
        let d2 = doc("b", "B", &forty("y"));
        let output = format!("Fused title\n{}", (0..28).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
        let g = Scripted::new(&["[Doc 1] x.", &output]);
        let unit = distill("q", "e7", &[&d1, &d2], false, &g, &DistillConfig::default()).unwrap();
        assert_eq!(unit.id, "wb-e7");
        assert_eq!(unit.source_tokens, 80);
        assert_eq!(unit.distilled_tokens, 30);
        assert!((unit.compression() - 80.0 / 30.0).abs() < 1e-12);
        assert_eq!(unit.retained_doc_ids, ["a", "b"]);
        let seen = g.seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[1].max_new_tokens, 128);
        assert_eq!(seen[1].temperature, 0.0);
    }

    #[test]
    fn empty_rewrite_is_an_error() {
        let d1 = doc("a", "", "A.");
        let g = Scripted::new(&["[Doc 1] A.", "   "]);
        let err = distill("q", "e1", &[&d1], false, &g, &DistillConfig::default()).unwrap_err();
        assert!(matches!(err, DistillError::Empty { ref example_id } if example_id == "e1"));
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        let bad = DistillConfig {
            fallback_selected_sentences: 9,
            ..DistillConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_record_uses_text_field() {
        let unit = KnowledgeUnit {
            id: "wb-1".into(),
            title: "T".into(),
            body: "B".into(),
            source_example_id: "1".into(),
            retained_doc_ids: vec!["d".into()],
            source_tokens: 3,
            distilled_tokens: 2,
            fallback_used: true,
        };
        let json = serde_json::to_string(&unit).unwrap();
        assert!(json.contains("\"text\":\"B\""));
        let doc = unit.to_document();
        assert_eq!(doc.retrieval_text(), "T\nB");
        assert_eq!(doc.source, Source::Writeback);
    }
}
