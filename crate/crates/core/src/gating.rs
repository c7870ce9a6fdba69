//! Reference scores, the utility gate, and the per-document gate with its
//! top-`n_min` fallback.
//!
//! Scoring (generator calls) is kept apart from gating (threshold
//! comparisons) so threshold sweeps can reuse scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{resolve, AnswerError, Answerer, Backbone};
use crate::corpus::{DocLookup, LabeledExample};
use crate::index::RetrievalHit;
use crate::metrics::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub tau_s: f64,
    pub tau_delta: f64,
    pub tau_doc: f64,
    pub n_min: usize,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            tau_s: 0.1,
            tau_delta: 0.01,
            tau_doc: 0.01,
            n_min: 2,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self, retrieval_k: usize) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.tau_s) {
            return Err(format!("tau_s must be in [0, 1], got {}", self.tau_s));
        }
        if !self.tau_delta.is_finite() || !self.tau_doc.is_finite() {
            return Err("tau_delta and tau_doc must be finite".into());
        }
        if self.n_min == 0 || self.n_min > retrieval_k {
            return Err(format!(
                "n_min must be in 1..={retrieval_k} (retrieval top-K), got {}",
                self.n_min
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub s_nr: f64,
    pub s_rag: f64,
    pub delta: f64,
}

impl ScoreRecord {
    pub fn new(s_nr: f64, s_rag: f64) -> Self {
        Self {
            s_nr,
            s_rag,
            delta: s_rag - s_nr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentDecision {
    pub doc_id: String,
    pub rank: usize,
    pub s_doc: f64,
    pub margin: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub example_id: String,
    pub scores: ScoreRecord,
    pub utility_passed: bool,
    pub doc_decisions: Vec<DocumentDecision>,
    pub fallback_used: bool,
}

impl GateOutcome {
    pub fn retained(&self) -> impl Iterator<Item = &DocumentDecision> {
        self.doc_decisions.iter().filter(|d| d.retained)
    }
}

/// On-disk shape of a gate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub example_id: String,
    pub s_nr: f64,
    pub s_rag: f64,
    pub delta: f64,
    pub utility_passed: bool,
    pub fallback_used: bool,
    pub docs: Vec<DocRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub rank: usize,
    pub s_doc: f64,
    pub retained: bool,
}

impl From<&GateOutcome> for OutcomeRecord {
    fn from(o: &GateOutcome) -> Self {
        Self {
            example_id: o.example_id.clone(),
            s_nr: o.scores.s_nr,
            s_rag: o.scores.s_rag,
            delta: o.scores.delta,
            utility_passed: o.utility_passed,
            fallback_used: o.fallback_used,
            docs: o
                .doc_decisions
                .iter()
                .map(|d| DocRecord {
                    doc_id: d.doc_id.clone(),
                    rank: d.rank,
                    s_doc: d.s_doc,
                    retained: d.retained,
                })
                .collect(),
        }
    }
}

impl From<OutcomeRecord> for GateOutcome {
    fn from(r: OutcomeRecord) -> Self {
        let s_nr = r.s_nr;
        Self {
            example_id: r.example_id,
            scores: ScoreRecord {
                s_nr: r.s_nr,
                s_rag: r.s_rag,
                delta: r.delta,
            },
            utility_passed: r.utility_passed,
            fallback_used: r.fallback_used,
            doc_decisions: r
                .docs
                .into_iter()
                .map(|d| DocumentDecision {
                    margin: d.s_doc - s_nr,
                    doc_id: d.doc_id,
                    rank: d.rank,
                    s_doc: d.s_doc,
                    retained: d.retained,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("example {example_id}: {source}")]
    Example {
        example_id: String,
        #[source]
        source: AnswerError,
    },
    #[error("example {example_id}, document {doc_id}: {source}")]
    Document {
        example_id: String,
        doc_id: String,
        #[source]
        source: AnswerError,
    },
}

/// Everything needed to score an answer for one dataset.
#[derive(Clone, Copy)]
pub struct ScoringContext<'a> {
    pub answerer: Answerer<'a>,
    pub docs: &'a dyn DocLookup,
    pub metric: MetricKind,
    pub backbone: Backbone,
}

impl ScoringContext<'_> {
    fn example_err(&self, example: &LabeledExample) -> impl Fn(AnswerError) -> GateError + '_ {
        let id = example.id.clone();
        move |source| GateError::Example {
            example_id: id.clone(),
            source,
        }
    }

    pub fn score_no_retrieval(&self, example: &LabeledExample) -> Result<f64, GateError> {
        let pred = self.answerer.no_retrieval(&example.question).map_err(self.example_err(example))?;
        Ok(self.metric.score(&pred, &example.gold_answers))
    }

    pub fn score_with_hits(&self, example: &LabeledExample, hits: &[RetrievalHit]) -> Result<f64, GateError> {
        let pred = self
            .backbone
            .answer(&self.answerer, &example.question, hits, self.docs)
            .map_err(self.example_err(example))?;
        Ok(self.metric.score(&pred, &example.gold_answers))
    }
}

/// `s_nr` from the no-retrieval prompt, `s_rag` with all `hits`.
pub fn compute_reference_scores(
    example: &LabeledExample,
    hits: &[RetrievalHit],
    ctx: &ScoringContext<'_>,
) -> Result<ScoreRecord, GateError> {
    let s_nr = ctx.score_no_retrieval(example)?;
    let s_rag = ctx.score_with_hits(example, hits)?;
    Ok(ScoreRecord::new(s_nr, s_rag))
}

/// `delta > tau_delta` and `s_rag > tau_s`, both strict.
pub fn utility_gate(scores: &ScoreRecord, t: &GateThresholds) -> bool {
    scores.delta > t.tau_delta && scores.s_rag > t.tau_s
}

/// Standalone score of one retrieved document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub rank: usize,
    pub s_doc: f64,
}

/// Generates with each hit alone and scores it. Threshold independent.
pub fn score_documents(
    example: &LabeledExample,
    hits: &[RetrievalHit],
    ctx: &ScoringContext<'_>,
) -> Result<Vec<DocScore>, GateError> {
    hits.par_iter()
        .map(|hit| {
            let doc_err = |source| GateError::Document {
                example_id: example.id.clone(),
                doc_id: hit.doc_id.clone(),
                source,
            };
            let docs = resolve(std::slice::from_ref(hit), ctx.docs).map_err(doc_err)?;
            let pred = ctx.answerer.with_documents(&example.question, &docs).map_err(doc_err)?;
            Ok(DocScore {
                doc_id: hit.doc_id.clone(),
                rank: hit.rank,
                s_doc: ctx.metric.score(&pred, &example.gold_answers),
            })
        })
        .collect()
}

/// Retains documents with `s_doc - s_nr > tau_doc`; if none pass, retains
/// ranks `1..=n_min` (all hits when fewer) and reports the fallback.
pub fn apply_document_gate(doc_scores: &[DocScore], s_nr: f64, t: &GateThresholds) -> (Vec<DocumentDecision>, bool) {
    let mut decisions: Vec<DocumentDecision> = doc_scores
        .iter()
        .map(|d| {
            let margin = d.s_doc - s_nr;
            DocumentDecision {
                doc_id: d.doc_id.clone(),
                rank: d.rank,
                s_doc: d.s_doc,
                margin,
                retained: margin > t.tau_doc,
            }
        })
        .collect();
    let fallback = !decisions.iter().any(|d| d.retained);
    if fallback {
        for d in &mut decisions {
            d.retained = d.rank <= t.n_min;
        }
    }
    (decisions, fallback)
}

pub fn document_gate(
    example: &LabeledExample,
    hits: &[RetrievalHit],
    s_nr: f64,
    ctx: &ScoringContext<'_>,
    t: &GateThresholds,
) -> Result<(Vec<DocumentDecision>, bool), GateError> {
    let scores = score_documents(example, hits, ctx)?;
    Ok(apply_document_gate(&scores, s_nr, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{OracleGenerator, OracleWorld};
    use crate::corpus::{CorpusStore, Document, Source};
    use crate::prompts::task_prompt_for;
    use proptest::prelude::*;

    fn hit(id: &str, rank: usize) -> RetrievalHit {
        RetrievalHit {
            doc_id: id.into(),
            score: 1.0 - rank as f64 * 0.1,
            rank,
            source: Source::Original,
        }
    }

    fn ds(scores: &[f64]) -> Vec<DocScore> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| DocScore {
                doc_id: format!("d{}", i + 1),
                rank: i + 1,
                s_doc: s,
            })
            .collect()
    }

    #[test]
    fn utility_gate_examples() {
        let t = GateThresholds::default();
        assert!(utility_gate(&ScoreRecord::new(0.0, 1.0), &t));
        assert!(!utility_gate(&ScoreRecord::new(1.0, 1.0), &t));
        assert!(!utility_gate(&ScoreRecord::new(0.0, 0.05), &t));
        // boundaries are strict
        assert!(!utility_gate(&ScoreRecord::new(0.0, 0.1), &t));
        let zero = GateThresholds {
            tau_s: 0.0,
            tau_delta: 0.0,
            ..t
        };
        assert!(!utility_gate(&ScoreRecord::new(0.5, 0.5), &zero));
        assert!(utility_gate(&ScoreRecord::new(0.5, 0.6), &zero));
    }

    #[test]
    fn single_useful_document_is_retained() {
        let (dec, fb) = apply_document_gate(&ds(&[0.0, 0.0, 1.0, 0.0, 0.0]), 0.0, &GateThresholds::default());
        assert!(!fb);
        let kept: Vec<_> = dec.iter().filter(|d| d.retained).map(|d| d.rank).collect();
        assert_eq!(kept, [3]);
        assert_eq!(dec.len(), 5);
    }

    #[test]
    fn no_document_clears_margin_uses_fallback() {
        let (dec, fb) = apply_document_gate(&ds(&[0.0; 5]), 0.0, &GateThresholds::default());
        assert!(fb);
        let kept: Vec<_> = dec.iter().filter(|d| d.retained).map(|d| d.rank).collect();
        assert_eq!(kept, [1, 2]);
    }

    #[test]
    fn all_documents_sufficient() {
        let (dec, fb) = apply_document_gate(&ds(&[1.0; 5]), 0.0, &GateThresholds::default());
        assert!(!fb);
        assert_eq!(dec.iter().filter(|d| d.retained).count(), 5);
    }

    #[test]
    fn fallback_with_fewer_hits_than_n_min_keeps_all() {
        let t = GateThresholds {
            n_min: 3,
            ..GateThresholds::default()
        };
        let (dec, fb) = apply_document_gate(&ds(&[0.0, 0.0]), 0.0, &t);
        assert!(fb);
        assert!(dec.iter().all(|d| d.retained));
    }

    #[test]
    fn thresholds_validate() {
        assert!(GateThresholds::default().validate(5).is_ok());
        let t = GateThresholds {
            n_min: 6,
            ..GateThresholds::default()
        };
        assert!(t.validate(5).is_err());
        let t = GateThresholds {
            n_min: 0,
            ..GateThresholds::default()
        };
        assert!(t.validate(5).is_err());
    }

    #[test]
    fn outcome_record_round_trip() {
        let (dec, fb) = apply_document_gate(&ds(&[0.0, 1.0]), 0.0, &GateThresholds::default());
        let outcome = GateOutcome {
            example_id: "e".into(),
            scores: ScoreRecord::new(0.0, 1.0),
            utility_passed: true,
            doc_decisions: dec,
            fallback_used: fb,
        };
        let rec = OutcomeRecord::from(&outcome);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.starts_with("{\"example_id\":\"e\",\"s_nr\":0.0,\"s_rag\":1.0,\"delta\":1.0"));
        let back: GateOutcome = serde_json::from_str::<OutcomeRecord>(&json).unwrap().into();
        assert_eq!(back, outcome);
    }

    fn oracle_fixture() -> (CorpusStore, OracleGenerator, LabeledExample) {
        let docs = CorpusStore::from_documents(vec![
            Document::new("d1", "", "Filler one."),
            Document::new("d2", "", "Filler two."),
            Document::new("d3", "", "Persian is spoken in both."),
            Document::new("d4", "", "Filler four."),
            Document::new("d5", "", "Filler five."),
        ])
        .unwrap();
        let mut world = OracleWorld::default();
        world.insert(
            "do iran and afghanistan speak the same language",
            ["Persian is spoken in both.".to_string()],
            "True",
        );
        let ex = LabeledExample {
            id: "boolq-1".into(),
            question: "do iran and afghanistan speak the same language".into(),
            gold_answers: vec!["True".into()],
        };
        (docs, OracleGenerator::new(world), ex)
    }

    #[test]
    fn oracle_reference_scores_and_document_gate() {
        let (docs, gen, ex) = oracle_fixture();
        let ctx = ScoringContext {
            answerer: Answerer {
                generator: &gen,
                task: task_prompt_for("boolq"),
                max_new_tokens: 8,
                temperature: 0.0,
            },
            docs: &docs,
            metric: MetricKind::Accuracy,
            backbone: Backbone::Naive,
        };
        let hits: Vec<_> = (1..=5).map(|r| hit(&format!("d{r}"), r)).collect();
        let scores = compute_reference_scores(&ex, &hits, &ctx).unwrap();
        assert_eq!(scores, ScoreRecord::new(0.0, 1.0));
        assert_eq!(scores.delta, 1.0);
        assert!(utility_gate(&scores, &GateThresholds::default()));
        let (dec, fb) = document_gate(&ex, &hits, scores.s_nr, &ctx, &GateThresholds::default()).unwrap();
        assert!(!fb);
        let kept: Vec<_> = dec.iter().filter(|d| d.retained).map(|d| d.doc_id.as_str()).collect();
        assert_eq!(kept, ["d3"]);
    }

    #[test]
    fn parametric_knowledge_gives_zero_delta() {
        let (docs, gen, ex) = oracle_fixture();
        let mut world = gen.world().clone();
        world.parametric_facts.insert("Persian is spoken in both.".into());
        let gen = OracleGenerator::new(world);
        let ctx = ScoringContext {
            answerer: Answerer {
                generator: &gen,
                task: task_prompt_for("boolq"),
                max_new_tokens: 8,
                temperature: 0.0,
            },
            docs: &docs,
            metric: MetricKind::Accuracy,
            backbone: Backbone::Naive,
        };
        let hits: Vec<_> = (1..=5).map(|r| hit(&format!("d{r}"), r)).collect();
        assert_eq!(compute_reference_scores(&ex, &hits, &ctx).unwrap(), ScoreRecord::new(1.0, 1.0));
    }

    #[test]
    fn missing_doc_error_names_example_and_doc() {
        let (docs, gen, ex) = oracle_fixture();
        let ctx = ScoringContext {
            answerer: Answerer {
                generator: &gen,
                task: task_prompt_for("boolq"),
                max_new_tokens: 8,
                temperature: 0.0,
            },
            docs: &docs,
            metric: MetricKind::Accuracy,
            backbone: Backbone::Naive,
        };
        let err = score_documents(&ex, &[hit("nope", 1)], &ctx).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("boolq-1") && msg.contains("nope"), "{msg}");
    }

    proptest! {
        #[test]
        fn utility_gate_matches_direct_rule(s_nr in 0.0f64..=1.0, s_rag in 0.0f64..=1.0, tau_s in 0.0f64..=1.0, tau_delta in -0.5f64..0.5) {
            let t = GateThresholds { tau_s, tau_delta, ..GateThresholds::default() };
            let direct = (s_rag - s_nr) > tau_delta && s_rag > tau_s;
            prop_assert_eq!(utility_gate(&ScoreRecord::new(s_nr, s_rag), &t), direct);
        }

        #[test]
        fn fallback_totality(scores in proptest::collection::vec(0.0f64..=1.0, 1..8), s_nr in 0.0f64..=1.0, n_min in 1usize..5, tau_doc in 0.0f64..0.5) {
            let t = GateThresholds { tau_doc, n_min, ..GateThresholds::default() };
            let (dec, fb) = apply_document_gate(&ds(&scores), s_nr, &t);
            let kept = dec.iter().filter(|d| d.retained).count();
            prop_assert!(kept >= 1);
            if fb {
                prop_assert_eq!(kept, n_min.min(scores.len()));
                prop_assert!(dec.iter().all(|d| d.margin <= tau_doc));
                prop_assert!(dec.iter().all(|d| d.retained == (d.rank <= n_min)));
            } else {
                prop_assert!(dec.iter().all(|d| d.retained == (d.margin > tau_doc)));
            }
        }

        #[test]
        fn raising_tau_doc_shrinks_retained_set(scores in proptest::collection::vec(0.0f64..=1.0, 1..8), s_nr in 0.0f64..=1.0, lo in 0.0f64..0.5, bump in 0.0f64..0.5) {
            let t_lo = GateThresholds { tau_doc: lo, ..GateThresholds::default() };
            let t_hi = GateThresholds { tau_doc: lo + bump, ..GateThresholds::default() };
            let (a, fa) = apply_document_gate(&ds(&scores), s_nr, &t_lo);
            let (b, fb) = apply_document_gate(&ds(&scores), s_nr, &t_hi);
            if !fb {
                prop_assert!(!fa);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(!y.retained || x.retained);
                }
            }
        }

        #[test]
        fn decisions_independent_of_hit_order(scores in proptest::collection::vec(0.0f64..=1.0, 1..8), s_nr in 0.0f64..=1.0) {
            let t = GateThresholds::default();
            let fwd = ds(&scores);
            let mut rev = fwd.clone();
            rev.reverse();
            let (a, _) = apply_document_gate(&fwd, s_nr, &t);
            let (mut b, _) = apply_document_gate(&rev, s_nr, &t);
            b.reverse();
            prop_assert_eq!(a, b);
        }
    }
}
