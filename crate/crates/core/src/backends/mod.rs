//! Generation and embedding provider contracts.
//!
//! [`http`] talks to chat-completions / embeddings style servers; [`mock`]
//! holds deterministic offline stand-ins (hashed embedder, oracle generator,
//! sentence-matching distiller) that make the whole pipeline testable.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system: String,
    pub user: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request to {url} failed with status {status} after {attempts} attempt(s): {body}")]
    Status {
        url: String,
        status: u16,
        attempts: usize,
        body: String,
    },
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: usize,
        message: String,
    },
    #[error("malformed response from {url}: missing {field}")]
    MissingField { url: String, field: String },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
    #[error("expected {expected} embeddings, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("embedding dimension {actual} does not match configured {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("question not known to the oracle: {0:?}")]
    UnknownQuestion(String),
    #[error("unrecognized prompt template")]
    UnrecognizedTemplate,
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
}

/// Text generator. Implementations must be callable from several workers.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

/// Text embedder producing unit vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let v = self.embed(&[text.to_string()])?;
        if v.len() != 1 {
            return Err(BackendError::CountMismatch {
                expected: 1,
                actual: v.len(),
            });
        }
        Ok(v.into_iter().next().expect("length checked"))
    }
}

impl<T: Generator + ?Sized> Generator for std::sync::Arc<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}
