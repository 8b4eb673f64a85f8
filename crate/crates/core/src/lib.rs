//! polyret: a retrieval-engine library combining lexical BM25/TF-IDF
//! search, multi-vector dense retrieval with in-batch-negative codebook
//! training, pretraining-pair generation (expanded titles, reduced
//! sentences, template-based questions), caption-composed multimodal
//! queries, and an MRR / P@k / R@k evaluation harness.

pub mod binio;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod lexical;
pub mod math;
pub mod pipeline;
pub mod polydense;
pub mod pretraingen;
pub mod rank;
pub mod score;
pub mod templateqg;

pub use error::{Error, Result};
