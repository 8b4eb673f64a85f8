//! Multi-vector dense retrieval.
//!
//! Each context is aggregated into K vectors by attending K learnable
//! code vectors over its token embeddings. A query is scored against
//! the K vectors either through a query-specific attention combination
//! or by max-pooling the K inner products. A flat index scans every
//! entry exactly, keeping scores MIPS-compatible.

pub mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::corpus::{tokenize, Document, TokenizerConfig};
use crate::embedding::{embed_query, embed_tokens, mean_pool, QueryVector, TokenEmbeddings, ToyEmbedder};
use crate::error::{Error, Result};
use crate::math::{dot, softmax};
use crate::rank::RankedList;
use crate::score::ContextScorer;

pub const DENSE_MAGIC: [u8; 4] = *b"PDNS";
const DENSE_VERSION: u32 = 1;
pub const CODEBOOK_MAGIC: [u8; 4] = *b"PCBK";
const CODEBOOK_VERSION: u32 = 1;

/// Context truncation presets: "short" and "long".
pub const MAX_CONTEXT_TOKENS_SHORT: usize = 128;
pub const MAX_CONTEXT_TOKENS_LONG: usize = 256;

/// The K learnable code vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBook {
    /// K x d, row i is code vector i.
    pub codes: Vec<Vec<f64>>,
}

impl CodeBook {
    /// Seeded uniform initialization in [-0.1, 0.1].
    pub fn seeded(k: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect();
        Self { codes }
    }

    pub fn k(&self) -> usize {
        self.codes.len()
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }
}

/// K aggregated context vectors plus the attention that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectors {
    /// K x d, row i is v_c^i.
    pub vectors: Vec<Vec<f64>>,
    /// K x n attention weights; each row sums to 1.
    pub attn: Vec<Vec<f64>>,
}

/// Query-specific combination of the K context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpecificRepresentation {
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Attend each code vector over the context tokens: row i of the
/// result is softmax(m_i . h_1, ..., m_i . h_n) applied to the token
/// rows.
pub fn extract_context_vectors(
    context: &TokenEmbeddings,
    codebook: &CodeBook,
) -> Result<ContextVectors> {
    let n = context.vectors.len();
    if n == 0 {
        return Err(Error::EmptyTokens("context has no tokens".into()));
    }
    let d = context.dim();
    if codebook.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: codebook.dim(),
        });
    }
    let mut vectors = Vec::with_capacity(codebook.k());
    let mut attn = Vec::with_capacity(codebook.k());
    for code in &codebook.codes {
        let logits: Vec<f64> = context.vectors.iter().map(|h| dot(code, h)).collect();
        let weights = softmax(&logits);
        let mut v = vec![0.0; d];
        for (w, h) in weights.iter().zip(&context.vectors) {
            for (vi, hi) in v.iter_mut().zip(h) {
                *vi += w * hi;
            }
        }
        vectors.push(v);
        attn.push(weights);
    }
    Ok(ContextVectors { vectors, attn })
}

fn check_dims(query: &QueryVector, context_vectors: &[Vec<f64>]) -> Result<()> {
    let d = query.vector.len();
    for v in context_vectors {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    if context_vectors.is_empty() {
        return Err(Error::EmptyTokens("no context vectors".into()));
    }
    Ok(())
}

/// Attention-combined score: weights = softmax over K of the query
/// dot products; the returned score is the query dotted with the
/// weighted combination.
pub fn query_specific_score(
    query: &QueryVector,
    context_vectors: &[Vec<f64>],
) -> Result<(f64, QuerySpecificRepresentation)> {
    check_dims(query, context_vectors)?;
    let dots: Vec<f64> = context_vectors.iter().map(|v| dot(&query.vector, v)).collect();
    let weights = softmax(&dots);
    let d = query.vector.len();
    let mut rep = vec![0.0; d];
    for (w, v) in weights.iter().zip(context_vectors) {
        for (ri, vi) in rep.iter_mut().zip(v) {
            *ri += w * vi;
        }
    }
    let score = dot(&query.vector, &rep);
    Ok((score, QuerySpecificRepresentation { vector: rep, weights }))
}

/// Max over K of the query dot products.
pub fn maxpool_score(query: &QueryVector, context_vectors: &[Vec<f64>]) -> Result<f64> {
    check_dims(query, context_vectors)?;
    Ok(context_vectors
        .iter()
        .map(|v| dot(&query.vector, v))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Flat multi-vector index: one K x d block per document.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    pub entries: Vec<(String, Vec<Vec<f64>>)>,
    pub dim: usize,
    pub k: usize,
}

fn context_tokens(doc: &Document, config: &TokenizerConfig, max_context_tokens: usize) -> Result<Vec<String>> {
    let mut tokens = tokenize(&doc.body, config);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.doc_id.clone()));
    }
    tokens.truncate(max_context_tokens);
    Ok(tokens)
}

/// Build the index by aggregating every document body through the
/// codebook. Bodies truncate to the leading `max_context_tokens`.
pub fn build_dense_index(
    documents: &[Document],
    codebook: &CodeBook,
    embedder: &ToyEmbedder,
    config: &TokenizerConfig,
    max_context_tokens: usize,
) -> Result<DenseIndex> {
    let mut entries = Vec::with_capacity(documents.len());
    for doc in documents {
        let tokens = context_tokens(doc, config, max_context_tokens)?;
        let embedded = embed_tokens(&tokens, embedder)?;
        let cv = extract_context_vectors(&embedded, codebook)?;
        entries.push((doc.doc_id.clone(), cv.vectors));
    }
    Ok(DenseIndex {
        entries,
        dim: embedder.config.dim,
        k: codebook.k(),
    })
}

/// Single-vector dual-encoder mode (the K=0 ablation baseline): each
/// document is its mean token embedding.
pub fn build_single_vector_index(
    documents: &[Document],
    embedder: &ToyEmbedder,
    config: &TokenizerConfig,
    max_context_tokens: usize,
) -> Result<DenseIndex> {
    let mut entries = Vec::with_capacity(documents.len());
    for doc in documents {
        let tokens = context_tokens(doc, config, max_context_tokens)?;
        let embedded = embed_tokens(&tokens, embedder)?;
        entries.push((doc.doc_id.clone(), vec![mean_pool(&embedded).vector]));
    }
    Ok(DenseIndex {
        entries,
        dim: embedder.config.dim,
        k: 1,
    })
}

/// Exact scan of the whole index under the chosen scoring strategy.
pub fn dense_topk(
    query_id: &str,
    query_text: &str,
    index: &DenseIndex,
    embedder: &ToyEmbedder,
    config: &TokenizerConfig,
    k: usize,
    scorer: &dyn ContextScorer,
) -> Result<RankedList> {
    let tokens = tokenize(query_text, config);
    if tokens.is_empty() {
        return Err(Error::EmptyTokens(format!(
            "query {query_id:?} is empty after tokenization"
        )));
    }
    let query = embed_query(&tokens, embedder)?;
    dense_topk_vector(query_id, &query, index, k, scorer)
}

/// Scan with an already-pooled query vector.
pub fn dense_topk_vector(
    query_id: &str,
    query: &QueryVector,
    index: &DenseIndex,
    k: usize,
    scorer: &dyn ContextScorer,
) -> Result<RankedList> {
    let mut scored = Vec::with_capacity(index.entries.len());
    for (doc_id, vectors) in &index.entries {
        scored.push((doc_id.clone(), scorer.score(query, vectors)?));
    }
    Ok(RankedList::from_scored(query_id, scored, k))
}

pub fn write_dense_index<P: AsRef<Path>>(path: P, index: &DenseIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DENSE_MAGIC)?;
    binio::write_u32(&mut w, DENSE_VERSION)?;
    binio::write_u32(&mut w, index.k as u32)?;
    binio::write_u32(&mut w, index.dim as u32)?;
    binio::write_u64(&mut w, index.entries.len() as u64)?;
    for (doc_id, vectors) in &index.entries {
        binio::write_str(&mut w, doc_id)?;
        for v in vectors {
            for &x in v {
                binio::write_f32(&mut w, x as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_index<P: AsRef<Path>>(path: P) -> Result<DenseIndex> {
    let mut r = BufReader::new(File::open(path)?);
    binio::check_magic(&mut r, DENSE_MAGIC)?;
    let version = binio::read_u32(&mut r, "version")?;
    if version != DENSE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = binio::read_u32(&mut r, "k")? as usize;
    let dim = binio::read_u32(&mut r, "dim")? as usize;
    let count = binio::read_u64(&mut r, "count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let doc_id = binio::read_str(&mut r, "entry id")?;
        let mut vectors = Vec::with_capacity(k);
        for _ in 0..k {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(binio::read_f32(&mut r, "entry value")? as f64);
            }
            vectors.push(v);
        }
        entries.push((doc_id, vectors));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Truncated("trailing bytes after dense index".into()));
    }
    Ok(DenseIndex { entries, dim, k })
}

pub fn write_codebook<P: AsRef<Path>>(path: P, codebook: &CodeBook, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CODEBOOK_MAGIC)?;
    binio::write_u32(&mut w, CODEBOOK_VERSION)?;
    binio::write_u32(&mut w, codebook.k() as u32)?;
    binio::write_u32(&mut w, codebook.dim() as u32)?;
    binio::write_u64(&mut w, seed)?;
    for code in &codebook.codes {
        for &x in code {
            binio::write_f32(&mut w, x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_codebook<P: AsRef<Path>>(path: P) -> Result<(CodeBook, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    binio::check_magic(&mut r, CODEBOOK_MAGIC)?;
    let version = binio::read_u32(&mut r, "version")?;
    if version != CODEBOOK_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = binio::read_u32(&mut r, "k")? as usize;
    let dim = binio::read_u32(&mut r, "dim")? as usize;
    let seed = binio::read_u64(&mut r, "seed")?;
    let mut codes = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(binio::read_f32(&mut r, "code value")? as f64);
        }
        codes.push(v);
    }
    Ok((CodeBook { codes }, seed))
}
