//! Context-scoring strategies, registered by name and selected at
//! runtime.
//!
//! Both strategies score a pooled query vector against the K aggregated
//! context vectors of one document. `query_specific` is differentiable
//! everywhere and is the training default; `maxpool` keeps each context
//! vector independently indexable and is the inference default.

use crate::embedding::QueryVector;
use crate::error::{Error, Result};
use crate::polydense::{maxpool_score, query_specific_score};

pub trait ContextScorer: Sync {
    fn name(&self) -> &'static str;
    fn score(&self, query: &QueryVector, context_vectors: &[Vec<f64>]) -> Result<f64>;
}

/// Max over K of the query/context inner products.
pub struct MaxPoolScorer;

impl ContextScorer for MaxPoolScorer {
    fn name(&self) -> &'static str {
        "maxpool"
    }

    fn score(&self, query: &QueryVector, context_vectors: &[Vec<f64>]) -> Result<f64> {
        maxpool_score(query, context_vectors)
    }
}

/// Attention-weighted combination of the K context vectors.
pub struct QuerySpecificScorer;

impl ContextScorer for QuerySpecificScorer {
    fn name(&self) -> &'static str {
        "query_specific"
    }

    fn score(&self, query: &QueryVector, context_vectors: &[Vec<f64>]) -> Result<f64> {
        query_specific_score(query, context_vectors).map(|(s, _)| s)
    }
}

pub static REGISTRY: &[&dyn ContextScorer] = &[&MaxPoolScorer, &QuerySpecificScorer];

/// Look up a scorer by its registered name. Hyphens are accepted in
/// place of underscores.
pub fn scorer(name: &str) -> Result<&'static dyn ContextScorer> {
    let normalized = name.replace('-', "_");
    REGISTRY
        .iter()
        .find(|s| s.name() == normalized)
        .copied()
        .ok_or_else(|| Error::UnknownScorer(name.to_string()))
}

/// Scoring strategy selector used by training configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    MaxPool,
    QuerySpecific,
}

impl ScoreMode {
    pub fn as_scorer(self) -> &'static dyn ContextScorer {
        match self {
            ScoreMode::MaxPool => &MaxPoolScorer,
            ScoreMode::QuerySpecific => &QuerySpecificScorer,
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "maxpool" => Ok(ScoreMode::MaxPool),
            "query_specific" => Ok(ScoreMode::QuerySpecific),
            other => Err(Error::UnknownScorer(other.to_string())),
        }
    }
}
