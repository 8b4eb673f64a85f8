//! In-batch-negative codebook training with analytic gradients.
//!
//! For a batch of (query, positive context) pairs, every other context
//! in the batch acts as a negative. The loss is the mean negative
//! log-softmax of the matching score over all in-batch contexts, and
//! the gradient with respect to the code vectors is backpropagated
//! exactly through the context aggregation (and through the
//! query-specific attention when that mode is selected; max-pool routes
//! the subgradient through the argmax vector, lowest index on ties).

use crate::embedding::{mean_pool, TokenEmbeddings};
use crate::error::{Error, Result};
use crate::math::{dot, softmax};
use crate::polydense::{extract_context_vectors, CodeBook};
use crate::score::ScoreMode;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub score_mode: ScoreMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 4,
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            score_mode: ScoreMode::QuerySpecific,
        }
    }
}

/// One training pair: pooled-query tokens and positive-context tokens.
pub type TrainPair = (TokenEmbeddings, TokenEmbeddings);

struct ScoredPair {
    score: f64,
    /// maxpool: argmax index; query_specific: unused.
    argmax: usize,
    /// query_specific: ds/du_k for every k; maxpool: unused.
    dscore_ddot: Vec<f64>,
}

fn score_pair(
    query: &[f64],
    context_vectors: &[Vec<f64>],
    mode: ScoreMode,
) -> ScoredPair {
    let dots: Vec<f64> = context_vectors.iter().map(|v| dot(query, v)).collect();
    match mode {
        ScoreMode::MaxPool => {
            // lowest index wins ties
            let mut argmax = 0;
            for (k, &u) in dots.iter().enumerate() {
                if u > dots[argmax] {
                    argmax = k;
                }
            }
            ScoredPair {
                score: dots[argmax],
                argmax,
                dscore_ddot: Vec::new(),
            }
        }
        ScoreMode::QuerySpecific => {
            let weights = softmax(&dots);
            let score: f64 = weights.iter().zip(&dots).map(|(w, u)| w * u).sum();
            let dscore_ddot = weights
                .iter()
                .zip(&dots)
                .map(|(&w, &u)| w * (1.0 + u - score))
                .collect();
            ScoredPair {
                score,
                argmax: 0,
                dscore_ddot,
            }
        }
    }
}

/// In-batch-negative loss and its exact gradient with respect to the
/// code vectors.
pub fn loss_and_grad(
    batch: &[TrainPair],
    codebook: &CodeBook,
    mode: ScoreMode,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::InvalidParam(format!(
            "in-batch negatives need a batch of at least 2, got {b}"
        )));
    }
    let k = codebook.k();
    let d = codebook.dim();

    let queries: Vec<Vec<f64>> = batch
        .iter()
        .map(|(q, _)| mean_pool(q).vector)
        .collect();
    let contexts: Vec<_> = batch
        .iter()
        .map(|(_, c)| extract_context_vectors(c, codebook))
        .collect::<Result<Vec<_>>>()?;

    // Score matrix and per-pair backprop state.
    let mut scored: Vec<Vec<ScoredPair>> = Vec::with_capacity(b);
    for query in &queries {
        scored.push(
            contexts
                .iter()
                .map(|cv| score_pair(query, &cv.vectors, mode))
                .collect(),
        );
    }

    let mut loss = 0.0;
    // dL/dv_c^{jk}, one d-vector per (context, code).
    let mut grad_v = vec![vec![vec![0.0; d]; k]; b];
    for (i, row) in scored.iter().enumerate() {
        let logits: Vec<f64> = row.iter().map(|sp| sp.score).collect();
        let probs = softmax(&logits);
        loss += -probs[i].ln();
        for (j, sp) in row.iter().enumerate() {
            let coef = (probs[j] - if i == j { 1.0 } else { 0.0 }) / b as f64;
            if coef == 0.0 {
                continue;
            }
            match mode {
                ScoreMode::MaxPool => {
                    let gv = &mut grad_v[j][sp.argmax];
                    for (g, &q) in gv.iter_mut().zip(&queries[i]) {
                        *g += coef * q;
                    }
                }
                ScoreMode::QuerySpecific => {
                    for (kk, &ds) in sp.dscore_ddot.iter().enumerate() {
                        let gv = &mut grad_v[j][kk];
                        for (g, &q) in gv.iter_mut().zip(&queries[i]) {
                            *g += coef * ds * q;
                        }
                    }
                }
            }
        }
    }
    loss /= b as f64;

    // Backprop each dL/dv_c^{jk} through the code attention.
    let mut grad = vec![vec![0.0; d]; k];
    for (j, cv) in contexts.iter().enumerate() {
        let tokens = &batch[j].1.vectors;
        for kk in 0..k {
            let gv = &grad_v[j][kk];
            if gv.iter().all(|&x| x == 0.0) {
                continue;
            }
            let g_dot_v = dot(gv, &cv.vectors[kk]);
            let weights = &cv.attn[kk];
            for (n, h) in tokens.iter().enumerate() {
                let dl_dlogit = weights[n] * (dot(gv, h) - g_dot_v);
                for (g, &hx) in grad[kk].iter_mut().zip(h) {
                    *g += dl_dlogit * hx;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Plain gradient descent over consecutive batches of the pair list.
/// Deterministic given the seed; the per-epoch mean batch loss is the
/// returned trace.
pub fn train_codebook(
    pairs: &[TrainPair],
    dim: usize,
    config: &TrainConfig,
) -> Result<(CodeBook, Vec<f64>)> {
    if config.batch_size < 2 {
        return Err(Error::InvalidParam(
            "batch_size must be at least 2".into(),
        ));
    }
    if pairs.len() < config.batch_size {
        return Err(Error::InvalidParam(format!(
            "need at least batch_size ({}) pairs, got {}",
            config.batch_size,
            pairs.len()
        )));
    }
    let mut codebook = CodeBook::seeded(config.k, dim, config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for batch in pairs.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (loss, grad) = loss_and_grad(batch, &codebook, config.score_mode)?;
            epoch_loss += loss;
            n_batches += 1;
            for (code, g) in codebook.codes.iter_mut().zip(&grad) {
                for (c, &gx) in code.iter_mut().zip(g) {
                    *c -= config.learning_rate * gx;
                }
            }
        }
        trace.push(epoch_loss / n_batches as f64);
    }
    Ok((codebook, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed_tokens, ToyEmbedder};

    fn pair(emb: &ToyEmbedder, q: &[&str], c: &[&str]) -> TrainPair {
        let q: Vec<String> = q.iter().map(|s| s.to_string()).collect();
        let c: Vec<String> = c.iter().map(|s| s.to_string()).collect();
        (
            embed_tokens(&q, emb).unwrap(),
            embed_tokens(&c, emb).unwrap(),
        )
    }

    #[test]
    fn identical_contexts_give_log_batch_loss() {
        let emb = ToyEmbedder::new(8, 1);
        let batch = vec![
            pair(&emb, &["a"], &["same", "ctx"]),
            pair(&emb, &["b"], &["same", "ctx"]),
            pair(&emb, &["c"], &["same", "ctx"]),
        ];
        let cb = CodeBook::seeded(2, 8, 1);
        for mode in [ScoreMode::MaxPool, ScoreMode::QuerySpecific] {
            let (loss, grad) = loss_and_grad(&batch, &cb, mode).unwrap();
            assert!((loss - 3.0f64.ln()).abs() < 1e-9);
            // Uniform softmax over identical contexts: per-query
            // contributions cancel exactly.
            for g in grad.iter().flatten() {
                assert!(g.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_of_one_errors() {
        let emb = ToyEmbedder::new(8, 1);
        let batch = vec![pair(&emb, &["a"], &["x"])];
        let cb = CodeBook::seeded(2, 8, 1);
        assert!(matches!(
            loss_and_grad(&batch, &cb, ScoreMode::MaxPool).unwrap_err(),
            Error::InvalidParam(_)
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_codebook_unchanged() {
        let emb = ToyEmbedder::new(8, 2);
        let pairs: Vec<TrainPair> = (0..4)
            .map(|i| {
                let t = format!("tok{i}");
                pair(&emb, &[&t], &[&t, "filler"])
            })
            .collect();
        let config = TrainConfig {
            k: 3,
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 2,
            seed: 7,
            ..Default::default()
        };
        let (trained, _) = train_codebook(&pairs, 8, &config).unwrap();
        assert_eq!(trained, CodeBook::seeded(3, 8, 7));
    }

    #[test]
    fn same_seed_reproduces_codebook() {
        let emb = ToyEmbedder::new(8, 3);
        let pairs: Vec<TrainPair> = (0..6)
            .map(|i| {
                let t = format!("w{i}");
                pair(&emb, &[&t], &[&t, "pad", "pad2"])
            })
            .collect();
        let config = TrainConfig {
            k: 2,
            learning_rate: 0.2,
            epochs: 5,
            batch_size: 3,
            seed: 42,
            ..Default::default()
        };
        let (a, ta) = train_codebook(&pairs, 8, &config).unwrap();
        let (b, tb) = train_codebook(&pairs, 8, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn insufficient_pairs_error() {
        let emb = ToyEmbedder::new(8, 3);
        let pairs = vec![pair(&emb, &["a"], &["b"])];
        let config = TrainConfig {
            batch_size: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_codebook(&pairs, 8, &config).unwrap_err(),
            Error::InvalidParam(_)
        ));
    }
}
