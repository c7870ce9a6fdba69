//! Knowledge-base write-back for retrieval-augmented generation.
//!
//! Labeled examples are used to find retrieved evidence that actually helps a
//! generator, that evidence is distilled into compact knowledge units, and the
//! units are indexed next to the original corpus. At query time both indexes are
//! searched and merged, so the improvement costs nothing extra at inference.
//!
//! Module map:
//! - [`corpus`]: documents, labeled examples, tokens and sentences
//! - [`index`]: exact cosine search and dual-index merged search
//! - [`metrics`]: answer normalization, EM, containment accuracy, token F1
//! - [`backends`]: generation/embedding contracts, HTTP clients, mocks
//! - [`prompts`]: task prompts used for answering
//! - [`gating`]: reference scores, utility gate, document gate
//! - [`distill`]: extract-then-rewrite distillation into knowledge units
//! - [`pipeline`]: training loop, write-back, evaluation, statistics
//! - [`harness`]: synthetic corpora and desk-scale experiments
//! - [`config`]: flat key-value configuration files

pub mod backbone;
pub mod backends;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod gating;
pub mod harness;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod prompts;

pub use backends::{BackendError, Embedder, GenerationRequest, Generator};
pub use corpus::{count_tokens, split_sentences, CorpusStore, Document, LabeledExample, Source};
pub use distill::{DistillConfig, KnowledgeUnit};
pub use gating::{DocumentDecision, GateOutcome, GateThresholds, ScoreRecord};
pub use index::{EmbeddingVector, RetrievalHit, VectorIndex};
pub use metrics::MetricKind;
pub use pipeline::{Backbone, PipelineConfig, RankHistogram, TrainingStats};
