//! Search orchestration: caption-composed multimodal queries and
//! two-stage coarse-then-rerank retrieval.

use crate::corpus::{tokenize, TokenizerConfig};
use crate::embedding::ToyEmbedder;
use crate::error::{Error, Result};
use crate::lexical::{bm25_topk, Bm25Params, InvertedIndex};
use crate::polydense::{dense_topk, DenseIndex};
use crate::rank::RankedList;
use crate::score::MaxPoolScorer;

/// A question with an image-caption surrogate for the visual content.
#[derive(Debug, Clone)]
pub struct MultimodalQuery {
    pub question: String,
    pub caption: String,
}

/// Question first, then the caption, joined by a single space. An
/// empty caption leaves the question untouched.
pub fn compose_multimodal_query(query: &MultimodalQuery) -> String {
    if query.caption.is_empty() {
        query.question.clone()
    } else {
        format!("{} {}", query.question, query.caption)
    }
}

/// Dense search over the composed question+caption text.
pub fn caption_dense_search(
    query_id: &str,
    query: &MultimodalQuery,
    index: &DenseIndex,
    embedder: &ToyEmbedder,
    config: &TokenizerConfig,
    k: usize,
    scorer: &dyn crate::score::ContextScorer,
) -> Result<RankedList> {
    let composed = compose_multimodal_query(query);
    dense_topk(query_id, &composed, index, embedder, config, k, scorer)
}

/// BM25 retrieves `n_coarse` candidates; dense max-pool scores re-rank
/// them; the top `k` are returned. Documents outside the coarse set
/// never appear.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_search(
    query_id: &str,
    query_text: &str,
    inverted: &InvertedIndex,
    dense: &DenseIndex,
    embedder: &ToyEmbedder,
    config: &TokenizerConfig,
    params: &Bm25Params,
    n_coarse: usize,
    k: usize,
) -> Result<RankedList> {
    if k < 1 || k > n_coarse {
        return Err(Error::InvalidParam(format!(
            "need 1 <= k <= n_coarse, got k={k}, n_coarse={n_coarse}"
        )));
    }
    let query_terms = tokenize(query_text, config);
    let coarse = bm25_topk(query_id, &query_terms, inverted, n_coarse, params);
    let candidates: std::collections::BTreeSet<&str> =
        coarse.hits.iter().map(|(d, _)| d.as_str()).collect();

    let tokens = tokenize(query_text, config);
    if tokens.is_empty() {
        return Err(Error::EmptyTokens(format!(
            "query {query_id:?} is empty after tokenization"
        )));
    }
    let query = crate::embedding::embed_query(&tokens, embedder)?;
    let scorer = MaxPoolScorer;
    let mut scored = Vec::with_capacity(candidates.len());
    for (doc_id, vectors) in &dense.entries {
        if candidates.contains(doc_id.as_str()) {
            scored.push((
                doc_id.clone(),
                crate::score::ContextScorer::score(&scorer, &query, vectors)?,
            ));
        }
    }
    Ok(RankedList::from_scored(query_id, scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::embedding::ToyEmbedder;
    use crate::lexical::build_inverted_index;
    use crate::polydense::{build_dense_index, CodeBook};
    use crate::score::MaxPoolScorer;

    #[test]
    fn compose_joins_with_space() {
        let q = MultimodalQuery {
            question: "where to buy this".into(),
            caption: "a milkshake".into(),
        };
        assert_eq!(compose_multimodal_query(&q), "where to buy this a milkshake");
    }

    #[test]
    fn empty_caption_is_identity() {
        let q = MultimodalQuery {
            question: "what is this".into(),
            caption: String::new(),
        };
        assert_eq!(compose_multimodal_query(&q), "what is this");
    }

    fn docs() -> Vec<Document> {
        [
            ("d1", "alpha beta gamma"),
            ("d2", "delta beta epsilon"),
            ("d3", "zeta eta theta"),
        ]
        .iter()
        .map(|(id, body)| Document {
            doc_id: id.to_string(),
            title: String::new(),
            body: body.to_string(),
            caption: None,
        })
        .collect()
    }

    #[test]
    fn empty_caption_matches_bare_dense_search() {
        let cfg = TokenizerConfig::default();
        let emb = ToyEmbedder::new(8, 1);
        let cb = CodeBook::seeded(2, 8, 1);
        let dense = build_dense_index(&docs(), &cb, &emb, &cfg, 128).unwrap();
        let mm = MultimodalQuery {
            question: "beta gamma".into(),
            caption: String::new(),
        };
        let a = caption_dense_search("q", &mm, &dense, &emb, &cfg, 3, &MaxPoolScorer).unwrap();
        let b = crate::polydense::dense_topk("q", "beta gamma", &dense, &emb, &cfg, 3, &MaxPoolScorer)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_stage_subset_of_coarse() {
        let cfg = TokenizerConfig::default();
        let emb = ToyEmbedder::new(8, 1);
        let cb = CodeBook::seeded(2, 8, 1);
        let inv = build_inverted_index(&docs(), &cfg);
        let dense = build_dense_index(&docs(), &cb, &emb, &cfg, 128).unwrap();
        let out = two_stage_search(
            "q",
            "beta",
            &inv,
            &dense,
            &emb,
            &cfg,
            &Bm25Params::default(),
            2,
            2,
        )
        .unwrap();
        let coarse = bm25_topk("q", &tokenize("beta", &cfg), &inv, 2, &Bm25Params::default());
        let coarse_ids: std::collections::BTreeSet<_> =
            coarse.hits.iter().map(|(d, _)| d).collect();
        for (d, _) in &out.hits {
            assert!(coarse_ids.contains(d));
        }
    }

    #[test]
    fn k_bounds_enforced() {
        let cfg = TokenizerConfig::default();
        let emb = ToyEmbedder::new(8, 1);
        let cb = CodeBook::seeded(2, 8, 1);
        let inv = build_inverted_index(&docs(), &cfg);
        let dense = build_dense_index(&docs(), &cb, &emb, &cfg, 128).unwrap();
        let err = two_stage_search(
            "q",
            "beta",
            &inv,
            &dense,
            &emb,
            &cfg,
            &Bm25Params::default(),
            1,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)));
    }
}
