//! Synthetic fragmented-knowledge corpora and desk-scale experiments.
//!
//! Each topic has an entity, F fact sentences in separate noisy documents,
//! and distractor documents that share the test phrasing's vocabulary. The
//! oracle answers a topic's questions only when all F facts are in context,
//! so a top-K list that misses one fact fails until a fused unit is written
//! back.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{AnswerError, Answerer, Backbone};
use crate::backends::mock::{mock_slot, MockEmbedder, MockLlm, OracleWorld};
use crate::backends::{Embedder, Generator};
use crate::corpus::{write_corpus, write_examples, write_jsonl, CorpusStore, Document, LabeledExample, MergedLookup, Source};
use crate::gating::{GateOutcome, GateThresholds};
use crate::index::{build_index, VectorIndex};
use crate::pipeline::{
    append_write_back, evaluate, gate_and_distill, score_examples, train_kb, units_store, write_csv, write_train_outputs,
    Backends, DocScoring, EvalReport, PipelineConfig, PipelineError, RankHistogram, RetrievalMode, TrainOutput,
    TrainingStats,
};
use crate::prompts::task_prompt_for;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("invalid ablation grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of topics; each yields one train and one test question.
    pub n_queries: usize,
    pub facts_per_answer: usize,
    pub noise_sentences_per_doc: usize,
    /// Distractor documents per topic.
    pub n_distractor_docs: usize,
    pub parametric_fraction: f64,
    pub seed: u64,
    /// Mock embedder dimension.
    pub embed_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_queries: 40,
            facts_per_answer: 3,
            noise_sentences_per_doc: 2,
            n_distractor_docs: 3,
            parametric_fraction: 0.2,
            seed: 7,
            embed_dim: 4096,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_queries == 0 || self.facts_per_answer == 0 {
            return Err(HarnessError::Spec("n_queries and facts_per_answer must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.parametric_fraction) {
            return Err(HarnessError::Spec(format!(
                "parametric_fraction must be in [0, 1], got {}",
                self.parametric_fraction
            )));
        }
        if self.embed_dim < 8 {
            return Err(HarnessError::Spec("embed_dim must be at least 8".into()));
        }
        Ok(())
    }

    /// Pipeline defaults with the fallback size raised to cover every fact
    /// of a topic (capped at the retrieval depth). With conjunctive facts no
    /// single document passes the document gate, so fallback decides what is
    /// distilled.
    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.thresholds.n_min = self.facts_per_answer.clamp(cfg.thresholds.n_min, cfg.retrieval_k);
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: CorpusStore,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub world: OracleWorld,
}

/// Words used by the question templates and the rewrite header.
const TEMPLATE_WORDS: &[&str] = &["what", "about", "and", "of", "tell", "me", "is", "fused"];

/// Pronounceable pseudo-words, unique across one generation run. While at
/// least half the embedding slots are free, each new word also gets a slot of
/// its own, so retrieval scores follow the construction exactly.
struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    slots: HashSet<usize>,
    dim: usize,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl Words {
    fn fresh(&mut self) -> String {
        loop {
            let mut w = String::with_capacity(6);
            for _ in 0..3 {
                w.push(CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[self.rng.random_range(0..VOWELS.len())] as char);
            }
            if self.used.contains(&w) {
                continue;
            }
            let (slot, _) = mock_slot(&w, self.dim);
            if self.slots.len() * 2 < self.dim && !self.slots.insert(slot) {
                continue;
            }
            self.used.insert(w.clone());
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map_or_else(String::new, |f| f.to_ascii_uppercase().to_string() + c.as_str())
}

fn join_relations(rel: &[String]) -> String {
    match rel {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(" "), last),
    }
}

pub fn train_question(entity: &str, relations: &[String]) -> String {
    format!("what about the {} of {}?", join_relations(relations), entity)
}

pub fn test_question(entity: &str, p1: &str, p2: &str) -> String {
    format!("tell me about {p1} {p2} of {entity}?")
}

/// Builds corpus, train/test questions and the oracle world. Pure in `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, HarnessError> {
    spec.validate()?;
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: HashSet::new(),
        slots: TEMPLATE_WORDS.iter().map(|w| mock_slot(w, spec.embed_dim).0).collect(),
        dim: spec.embed_dim,
    };
    let noise_pool: Vec<String> = (0..200).map(|_| words.fresh()).collect();
    let n_parametric = (spec.parametric_fraction * spec.n_queries as f64).round() as usize;
    let mut topic_order: Vec<usize> = (0..spec.n_queries).collect();
    topic_order.shuffle(&mut words.rng);
    let parametric: HashSet<usize> = topic_order[..n_parametric].iter().copied().collect();

    let mut docs = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut world = OracleWorld::default();
    for t in 0..spec.n_queries {
        let entity = capitalize(&words.fresh());
        let relations: Vec<String> = (0..spec.facts_per_answer).map(|_| words.fresh()).collect();
        let (p1, p2) = (words.fresh(), words.fresh());
        let answer = words.fresh();
        let noise = |words: &mut Words| -> String {
            (0..spec.noise_sentences_per_doc)
                .map(|_| {
                    let s: Vec<&str> = (0..6)
                        .map(|_| noise_pool[words.rng.random_range(0..noise_pool.len())].as_str())
                        .collect();
                    format!(" {}.", capitalize(&s.join(" ")))
                })
                .collect()
        };
        let mut facts = Vec::new();
        for (j, r) in relations.iter().enumerate() {
            let fact = format!("The {r} of {entity} is {}.", words.fresh());
            let text = format!("{fact}{}", noise(&mut words));
            docs.push(Document::new(format!("t{t:04}-f{j}"), format!("{entity} {r}"), text));
            facts.push(fact);
        }
        for k in 0..spec.n_distractor_docs {
            let text = format!("The {p1} {p2} of {entity} is {}.{}", words.fresh(), noise(&mut words));
            docs.push(Document::new(format!("t{t:04}-d{k}"), format!("{entity} {p1} {p2}"), text));
        }
        let q_train = train_question(&entity, &relations);
        let q_test = test_question(&entity, &p1, &p2);
        world.insert(q_train.clone(), facts.clone(), answer.clone());
        world.insert(q_test.clone(), facts.clone(), answer.clone());
        if parametric.contains(&t) {
            world.parametric_facts.extend(facts);
        }
        train.push(LabeledExample {
            id: format!("train-{t:04}"),
            question: q_train,
            gold_answers: vec![answer.clone()],
        });
        test.push(LabeledExample {
            id: format!("test-{t:04}"),
            question: q_test,
            gold_answers: vec![answer],
        });
    }
    let corpus = CorpusStore::from_documents(docs).map_err(|e| HarnessError::Spec(e.to_string()))?;
    Ok(SyntheticData {
        corpus,
        train,
        test,
        world,
    })
}

/// Oracle answering and mock distillation behind one LLM, plus the mock
/// embedder.
pub fn mock_backends(world: OracleWorld, embed_dim: usize) -> Backends {
    let llm: Arc<dyn Generator> = Arc::new(MockLlm::new(world));
    Backends {
        generator: llm.clone(),
        distiller: llm,
        embedder: Arc::new(MockEmbedder::new(embed_dim)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline_score: f64,
    pub writeback_score: f64,
    pub gain: f64,
    pub stats: TrainingStats,
    pub histogram: RankHistogram,
}

/// Everything produced by a gain run.
pub struct GainRun {
    pub original_index: VectorIndex,
    pub training: TrainOutput,
    pub wb_index: VectorIndex,
    pub wb_units: CorpusStore,
    pub baseline: EvalReport,
    pub writeback: EvalReport,
    pub report: ExperimentReport,
}

pub fn writeback_index(units: &[crate::distill::KnowledgeUnit], embedder: &dyn Embedder, batch: usize) -> Result<VectorIndex, PipelineError> {
    let mut index = VectorIndex::new(embedder.dim(), Source::Writeback);
    append_write_back(&mut index, units, embedder, batch)?;
    Ok(index)
}

/// Baseline evaluation, training, write-back and merged evaluation.
pub fn run_gain_with(data: &SyntheticData, backends: &Backends, cfg: &PipelineConfig) -> Result<GainRun, HarnessError> {
    let original_index = build_index(&data.corpus, backends.embedder.as_ref(), Source::Original, cfg.embed_batch_size)
        .map_err(PipelineError::from)?;
    let baseline = evaluate(&data.test, RetrievalMode::Original(&original_index), &data.corpus, backends, cfg)?;
    let training = train_kb(&data.train, &data.corpus, &original_index, backends, cfg)?;
    let wb_index = writeback_index(&training.units, backends.embedder.as_ref(), cfg.embed_batch_size)?;
    let wb_units = units_store(&training.units)?;
    let lookup = MergedLookup {
        original: &data.corpus,
        writeback: Some(&wb_units),
    };
    let writeback = evaluate(
        &data.test,
        RetrievalMode::Merged {
            original: &original_index,
            writeback: &wb_index,
        },
        &lookup,
        backends,
        cfg,
    )?;
    let report = ExperimentReport {
        baseline_score: baseline.mean_score,
        writeback_score: writeback.mean_score,
        gain: writeback.mean_score - baseline.mean_score,
        stats: training.stats.clone(),
        histogram: training.histogram.clone(),
    };
    Ok(GainRun {
        original_index,
        training,
        wb_index,
        wb_units,
        baseline,
        writeback,
        report,
    })
}

pub fn run_gain_experiment(spec: &SyntheticSpec, cfg: &PipelineConfig) -> Result<ExperimentReport, HarnessError> {
    let data = generate_synthetic(spec)?;
    let backends = mock_backends(data.world.clone(), spec.embed_dim);
    Ok(run_gain_with(&data, &backends, cfg)?.report)
}

/// Per written-back example: the score with the unit alone and the score with
/// the retained documents it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSufficiency {
    pub example_id: String,
    pub unit_score: f64,
    pub retained_score: f64,
}

pub fn unit_sufficiency(
    data: &SyntheticData,
    run: &GainRun,
    generator: &dyn Generator,
    cfg: &PipelineConfig,
) -> Result<Vec<UnitSufficiency>, HarnessError> {
    let metric = cfg.metric()?;
    let answerer = Answerer {
        generator,
        task: task_prompt_for(&cfg.dataset),
        max_new_tokens: cfg.answer_max_new_tokens,
        temperature: cfg.distill.temperature,
    };
    let examples: BTreeMap<&str, &LabeledExample> = data.train.iter().map(|e| (e.id.as_str(), e)).collect();
    run.training
        .units
        .iter()
        .map(|unit| {
            let ex = examples[unit.source_example_id.as_str()];
            let unit_doc = unit.to_document();
            let retained: Vec<&Document> = unit
                .retained_doc_ids
                .iter()
                .map(|id| data.corpus.get(id).ok_or_else(|| AnswerError::MissingDocument(id.clone())))
                .collect::<Result<_, _>>()?;
            let unit_answer = answerer.with_documents(&ex.question, &[&unit_doc])?;
            let retained_answer = answerer.with_documents(&ex.question, &retained)?;
            Ok(UnitSufficiency {
                example_id: ex.id.clone(),
                unit_score: metric.score(&unit_answer, &ex.gold_answers),
                retained_score: metric.score(&retained_answer, &ex.gold_answers),
            })
        })
        .collect()
}

/// Scores of two backbones with no write-back, their own write-back corpus,
/// and the other backbone's corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub backbones: [Backbone; 2],
    pub no_wb: [f64; 2],
    pub same_wb: [f64; 2],
    pub cross_wb: [f64; 2],
}

impl TransferReport {
    pub fn same_minus_cross(&self) -> [f64; 2] {
        [self.same_wb[0] - self.cross_wb[0], self.same_wb[1] - self.cross_wb[1]]
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        (0..2)
            .map(|i| {
                vec![
                    self.backbones[i].to_string(),
                    self.no_wb[i].to_string(),
                    self.same_wb[i].to_string(),
                    self.cross_wb[i].to_string(),
                ]
            })
            .collect()
    }
}

pub fn run_cross_writeback(
    spec: &SyntheticSpec,
    cfg: &PipelineConfig,
    backbones: [Backbone; 2],
) -> Result<TransferReport, HarnessError> {
    let data = generate_synthetic(spec)?;
    let backends = mock_backends(data.world.clone(), spec.embed_dim);
    let original_index = build_index(&data.corpus, backends.embedder.as_ref(), Source::Original, cfg.embed_batch_size)
        .map_err(PipelineError::from)?;
    let configs = backbones.map(|backbone| PipelineConfig {
        backbone,
        ..cfg.clone()
    });
    let mut kbs = Vec::with_capacity(2);
    for c in &configs {
        let out = train_kb(&data.train, &data.corpus, &original_index, &backends, c)?;
        let index = writeback_index(&out.units, backends.embedder.as_ref(), c.embed_batch_size)?;
        kbs.push((index, units_store(&out.units)?));
    }
    let score_with = |c: &PipelineConfig, kb: Option<&(VectorIndex, CorpusStore)>| -> Result<f64, HarnessError> {
        let report = match kb {
            None => evaluate(&data.test, RetrievalMode::Original(&original_index), &data.corpus, &backends, c)?,
            Some((index, units)) => {
                let lookup = MergedLookup {
                    original: &data.corpus,
                    writeback: Some(units),
                };
                evaluate(
                    &data.test,
                    RetrievalMode::Merged {
                        original: &original_index,
                        writeback: index,
                    },
                    &lookup,
                    &backends,
                    c,
                )?
            }
        };
        Ok(report.mean_score)
    };
    let mut report = TransferReport {
        backbones,
        no_wb: [0.0; 2],
        same_wb: [0.0; 2],
        cross_wb: [0.0; 2],
    };
    for i in 0..2 {
        report.no_wb[i] = score_with(&configs[i], None)?;
        report.same_wb[i] = score_with(&configs[i], Some(&kbs[i]))?;
        report.cross_wb[i] = score_with(&configs[i], Some(&kbs[1 - i]))?;
    }
    Ok(report)
}

pub const GRID_KEYS: [&str; 4] = ["tau_s", "tau_delta", "tau_doc", "n_min"];

/// Parameter sweeps in file order: (parameter, values).
pub type Grid = Vec<(String, Vec<f64>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: String,
    pub value: f64,
    pub score: f64,
    pub stats: TrainingStats,
    #[serde(skip)]
    pub outcomes: Vec<GateOutcome>,
    #[serde(skip)]
    pub units: Vec<crate::distill::KnowledgeUnit>,
}

impl AblationRow {
    pub const CSV_HEADER: [&'static str; 7] =
        ["param", "value", "score", "n_selected", "fallback_rate", "mean_retained_docs", "compression"];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.param.clone(),
            self.value.to_string(),
            self.score.to_string(),
            self.stats.n_selected.to_string(),
            self.stats.fallback_rate.to_string(),
            self.stats.mean_retained_docs.to_string(),
            self.stats.compression.to_string(),
        ]
    }
}

fn grid_points(grid: &Grid, base: &GateThresholds) -> Result<Vec<(String, f64, GateThresholds)>, HarnessError> {
    let mut points = Vec::new();
    for (param, values) in grid {
        for &v in values {
            let mut t = *base;
            match param.as_str() {
                "tau_s" => t.tau_s = v,
                "tau_delta" => t.tau_delta = v,
                "tau_doc" => t.tau_doc = v,
                "n_min" => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(HarnessError::Grid(format!("n_min values must be positive integers, got {v}")));
                    }
                    t.n_min = v as usize;
                }
                other => {
                    return Err(HarnessError::Grid(format!(
                        "unknown parameter {other:?}; expected one of {}",
                        GRID_KEYS.join(", ")
                    )))
                }
            }
            points.push((param.clone(), v, t));
        }
    }
    Ok(points)
}

struct AblationSetup {
    data: SyntheticData,
    backends: Backends,
    original_index: VectorIndex,
}

fn ablation_setup(spec: &SyntheticSpec, cfg: &PipelineConfig) -> Result<AblationSetup, HarnessError> {
    let data = generate_synthetic(spec)?;
    let backends = mock_backends(data.world.clone(), spec.embed_dim);
    let original_index = build_index(&data.corpus, backends.embedder.as_ref(), Source::Original, cfg.embed_batch_size)
        .map_err(PipelineError::from)?;
    Ok(AblationSetup {
        data,
        backends,
        original_index,
    })
}

fn ablation_row(
    setup: &AblationSetup,
    cfg: &PipelineConfig,
    param: String,
    value: f64,
    training: TrainOutput,
) -> Result<AblationRow, HarnessError> {
    let wb_index = writeback_index(&training.units, setup.backends.embedder.as_ref(), cfg.embed_batch_size)?;
    let wb_units = units_store(&training.units)?;
    let lookup = MergedLookup {
        original: &setup.data.corpus,
        writeback: Some(&wb_units),
    };
    let eval = evaluate(
        &setup.data.test,
        RetrievalMode::Merged {
            original: &setup.original_index,
            writeback: &wb_index,
        },
        &lookup,
        &setup.backends,
        cfg,
    )?;
    Ok(AblationRow {
        param,
        value,
        score: eval.mean_score,
        stats: training.stats,
        outcomes: training.outcomes,
        units: training.units,
    })
}

/// Sweeps gate thresholds. Reference and document scores are computed once
/// and reused for every grid point.
pub fn run_ablation(spec: &SyntheticSpec, cfg: &PipelineConfig, grid: &Grid) -> Result<Vec<AblationRow>, HarnessError> {
    let points = grid_points(grid, &cfg.thresholds)?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let setup = ablation_setup(spec, cfg)?;
    let scored = score_examples(
        &setup.data.train,
        &setup.data.corpus,
        &setup.original_index,
        &setup.backends,
        cfg,
        DocScoring::Always,
    )?;
    points
        .into_par_iter()
        .map(|(param, value, t)| {
            let point_cfg = PipelineConfig {
                thresholds: t,
                ..cfg.clone()
            };
            point_cfg.validate()?;
            let training = gate_and_distill(
                &setup.data.train,
                &scored,
                &setup.data.corpus,
                setup.backends.distiller.as_ref(),
                &t,
                &point_cfg,
            );
            ablation_row(&setup, &point_cfg, param, value, training)
        })
        .collect()
}

/// Same sweep, retraining from scratch at every grid point.
pub fn run_ablation_uncached(
    spec: &SyntheticSpec,
    cfg: &PipelineConfig,
    grid: &Grid,
) -> Result<Vec<AblationRow>, HarnessError> {
    let points = grid_points(grid, &cfg.thresholds)?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let setup = ablation_setup(spec, cfg)?;
    points
        .into_par_iter()
        .map(|(param, value, t)| {
            let point_cfg = PipelineConfig {
                thresholds: t,
                ..cfg.clone()
            };
            let training = train_kb(
                &setup.data.train,
                &setup.data.corpus,
                &setup.original_index,
                &setup.backends,
                &point_cfg,
            )?;
            ablation_row(&setup, &point_cfg, param, value, training)
        })
        .collect()
}

/// Output files of harness runs.
pub mod layout {
    pub const SPEC: &str = "spec.txt";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const WORLD: &str = "world.json";
    pub const ORIGINAL_INDEX: &str = "index.jsonl";
    pub const BASELINE_RECORDS: &str = "eval_baseline.jsonl";
    pub const WRITEBACK_RECORDS: &str = "eval_writeback.jsonl";
    pub const REPORT: &str = "report.jsonl";
    pub const REPORT_CSV: &str = "report.csv";
    pub const TRANSFER: &str = "transfer.jsonl";
    pub const TRANSFER_CSV: &str = "transfer.csv";
    pub const ABLATION: &str = "ablation.jsonl";
    pub const ABLATION_CSV: &str = "ablation.csv";
}

/// Writes the synthetic data, training outputs, evaluation records and the
/// report into `dir`.
pub fn write_gain_outputs(dir: &Path, data: &SyntheticData, run: &GainRun, embedder: &dyn Embedder, batch: usize) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(layout::CORPUS);
    write_corpus(&p, data.corpus.documents()).map_err(io_err(&p))?;
    let p = dir.join(layout::TRAIN);
    write_examples(&p, &data.train).map_err(io_err(&p))?;
    let p = dir.join(layout::TEST);
    write_examples(&p, &data.test).map_err(io_err(&p))?;
    let p = dir.join(layout::WORLD);
    let world = serde_json::to_string_pretty(&data.world).expect("world serializes");
    std::fs::write(&p, world + "\n").map_err(io_err(&p))?;
    run.original_index.save(dir.join(layout::ORIGINAL_INDEX)).map_err(PipelineError::from)?;
    write_train_outputs(dir, &run.training, embedder, batch)?;
    let p = dir.join(layout::BASELINE_RECORDS);
    write_jsonl(&p, &run.baseline.records).map_err(io_err(&p))?;
    let p = dir.join(layout::WRITEBACK_RECORDS);
    write_jsonl(&p, &run.writeback.records).map_err(io_err(&p))?;
    let p = dir.join(layout::REPORT);
    write_jsonl(&p, std::slice::from_ref(&run.report)).map_err(io_err(&p))?;
    write_csv(
        &dir.join(layout::REPORT_CSV),
        &["baseline_score", "writeback_score", "gain"],
        &[vec![
            run.report.baseline_score.to_string(),
            run.report.writeback_score.to_string(),
            run.report.gain.to_string(),
        ]],
    )?;
    Ok(())
}

pub fn write_transfer_outputs(dir: &Path, report: &TransferReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(layout::TRANSFER);
    write_jsonl(&p, std::slice::from_ref(report)).map_err(io_err(&p))?;
    write_csv(
        &dir.join(layout::TRANSFER_CSV),
        &["backbone", "no_wb", "same_wb", "cross_wb"],
        &report.csv_rows(),
    )?;
    Ok(())
}

pub fn write_ablation_outputs(dir: &Path, rows: &[AblationRow]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(layout::ABLATION);
    write_jsonl(&p, rows).map_err(io_err(&p))?;
    let csv_rows: Vec<Vec<String>> = rows.iter().map(AblationRow::csv_row).collect();
    write_csv(&dir.join(layout::ABLATION_CSV), &AblationRow::CSV_HEADER, &csv_rows)?;
    Ok(())
}
