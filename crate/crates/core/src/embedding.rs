//! Token embeddings for the dense engine.
//!
//! The toy embedder is a deterministic stand-in for a learned encoder:
//! each token hashes to a seeded pseudo-random unit vector, so the same
//! (token, seed, dim) always yields the same row. Externally computed
//! embeddings import and export through the `PEMB` file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio;
use crate::error::{Error, Result};
use crate::math;

pub const EMBED_MAGIC: [u8; 4] = *b"PEMB";
const EMBED_VERSION: u32 = 1;

/// Per-token embedding rows for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    /// n x d, row i is the embedding of tokens[i].
    pub vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddings {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// Pooled query representation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ToyEmbedderConfig {
    pub dim: usize,
    pub seed: u64,
}

/// Deterministic hash-seeded random unit-vector embedder.
#[derive(Debug, Clone, Copy)]
pub struct ToyEmbedder {
    pub config: ToyEmbedderConfig,
}

/// FNV-1a, stable across platforms and runs.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ToyEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            config: ToyEmbedderConfig { dim, seed },
        }
    }

    /// Unit-norm vector for a token. Values are rounded to f32 so the
    /// PEMB round-trip is lossless.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ self.config.seed.rotate_left(17));
        let mut v: Vec<f64> = (0..self.config.dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let mut n = math::norm(&v);
        if n == 0.0 {
            // all-zero draw is practically impossible, but keep it total
            v[0] = 1.0;
            n = 1.0;
        }
        v.iter().map(|x| (x / n) as f32 as f64).collect()
    }
}

/// Embed each token. Errors on an empty token sequence: a context must
/// carry at least one token.
pub fn embed_tokens(tokens: &[String], embedder: &ToyEmbedder) -> Result<TokenEmbeddings> {
    if tokens.is_empty() {
        return Err(Error::EmptyTokens("cannot embed zero tokens".into()));
    }
    let vectors = tokens.iter().map(|t| embedder.token_vector(t)).collect();
    Ok(TokenEmbeddings {
        tokens: tokens.to_vec(),
        vectors,
    })
}

/// Mean pooling over token rows.
pub fn mean_pool(embeddings: &TokenEmbeddings) -> QueryVector {
    QueryVector {
        vector: math::mean_rows(&embeddings.vectors),
    }
}

/// Pooled query vector: mean of the token embedding rows.
pub fn embed_query(tokens: &[String], embedder: &ToyEmbedder) -> Result<QueryVector> {
    Ok(mean_pool(&embed_tokens(tokens, embedder)?))
}

/// Write `(id, vector)` items to the PEMB format.
pub fn write_embeddings<P: AsRef<Path>>(path: P, items: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = items.first().map_or(0, |(_, v)| v.len());
    for (id, v) in items {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        debug_assert!(!id.is_empty());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&EMBED_MAGIC)?;
    binio::write_u32(&mut w, EMBED_VERSION)?;
    binio::write_u32(&mut w, dim as u32)?;
    binio::write_u64(&mut w, items.len() as u64)?;
    for (id, v) in items {
        binio::write_str(&mut w, id)?;
        for &x in v {
            binio::write_f32(&mut w, x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<P: AsRef<Path>>(path: P) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = BufReader::new(File::open(path)?);
    binio::check_magic(&mut r, EMBED_MAGIC)?;
    let version = binio::read_u32(&mut r, "version")?;
    if version != EMBED_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = binio::read_u32(&mut r, "dim")? as usize;
    let count = binio::read_u64(&mut r, "count")? as usize;
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let id = binio::read_str(&mut r, "embedding id")?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(binio::read_f32(&mut r, "embedding value")? as f64);
        }
        items.push((id, v));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Truncated("trailing bytes after embeddings".into()));
    }
    Ok(items)
}
