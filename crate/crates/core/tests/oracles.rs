//! Independent-oracle checks: brute-force re-evaluations of the
//! scoring formulas, exhaustive retrieval scans, and a central
//! finite-difference check of the training gradient.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polyret::corpus::{CorpusStats, Document, TokenizerConfig};
use polyret::embedding::{embed_query, embed_tokens, QueryVector, TokenEmbeddings, ToyEmbedder};
use polyret::lexical::{bm25_score, bm25_topk, build_inverted_index, Bm25Params};
use polyret::polydense::train::loss_and_grad;
use polyret::polydense::{
    build_dense_index, dense_topk, extract_context_vectors, maxpool_score, query_specific_score,
    CodeBook,
};
use polyret::rank::RankedList;
use polyret::score::{MaxPoolScorer, QuerySpecificScorer, ScoreMode};

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| rand_vec(rng, d)).collect()
}

/// Naive scalar-by-scalar evaluation of the context aggregation:
/// weights = softmax(m_i . h_n over n), v_c^i = sum_n w_n h_n.
fn naive_context_vectors(tokens: &[Vec<f64>], codes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = tokens[0].len();
    let mut out = Vec::new();
    for code in codes {
        let mut logits = Vec::new();
        for h in tokens {
            let mut s = 0.0;
            for a in 0..d {
                s += code[a] * h[a];
            }
            logits.push(s);
        }
        let mut exps = Vec::new();
        let mut total = 0.0;
        for &l in &logits {
            let e = l.exp();
            exps.push(e);
            total += e;
        }
        let mut v = vec![0.0; d];
        for (e, h) in exps.iter().zip(tokens) {
            let w = e / total;
            for a in 0..d {
                v[a] += w * h[a];
            }
        }
        out.push(v);
    }
    out
}

fn naive_query_specific(query: &[f64], cvs: &[Vec<f64>]) -> f64 {
    let dots: Vec<f64> = cvs
        .iter()
        .map(|v| v.iter().zip(query).map(|(a, b)| a * b).sum())
        .collect();
    let total: f64 = dots.iter().map(|&u| u.exp()).sum();
    let mut score = 0.0;
    for (k, v) in cvs.iter().enumerate() {
        let w = dots[k].exp() / total;
        let d: f64 = v.iter().zip(query).map(|(a, b)| a * b).sum();
        score += w * d;
    }
    score
}

fn naive_maxpool(query: &[f64], cvs: &[Vec<f64>]) -> f64 {
    cvs.iter()
        .map(|v| v.iter().zip(query).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn context_aggregation_matches_naive_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let tokens = rand_matrix(&mut rng, n, d);
        let codes = rand_matrix(&mut rng, k, d);
        let ctx = TokenEmbeddings {
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            vectors: tokens.clone(),
        };
        let cb = CodeBook { codes: codes.clone() };
        let cv = extract_context_vectors(&ctx, &cb).unwrap();
        let expected = naive_context_vectors(&tokens, &codes);
        for (got, want) in cv.vectors.iter().zip(&expected) {
            for (g, w) in got.iter().zip(want) {
                assert!(rel_err(*g, *w) < 1e-6, "got {g}, want {w}");
            }
        }
        let query = QueryVector {
            vector: rand_vec(&mut rng, d),
        };
        let (qs, _) = query_specific_score(&query, &cv.vectors).unwrap();
        assert!(rel_err(qs, naive_query_specific(&query.vector, &cv.vectors)) < 1e-6);
        let mp = maxpool_score(&query, &cv.vectors).unwrap();
        assert!(rel_err(mp, naive_maxpool(&query.vector, &cv.vectors)) < 1e-6);
    }
}

/// Hand-picked d=2, n=3, K=2 instance evaluated by the naive route.
#[test]
fn hand_picked_instance_matches() {
    let tokens = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, -0.5]];
    let codes = vec![vec![0.2, -0.3], vec![-1.0, 0.8]];
    let ctx = TokenEmbeddings {
        tokens: vec!["a".into(), "b".into(), "c".into()],
        vectors: tokens.clone(),
    };
    let cv = extract_context_vectors(&ctx, &CodeBook { codes: codes.clone() }).unwrap();
    let expected = naive_context_vectors(&tokens, &codes);
    for (got, want) in cv.vectors.iter().zip(&expected) {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
    for row in &cv.attn {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

fn random_batch(rng: &mut ChaCha8Rng, batch: usize, d: usize) -> Vec<(TokenEmbeddings, TokenEmbeddings)> {
    (0..batch)
        .map(|_| {
            let nq = rng.random_range(1..=4);
            let nc = rng.random_range(1..=4);
            let q = TokenEmbeddings {
                tokens: (0..nq).map(|i| format!("q{i}")).collect(),
                vectors: rand_matrix(rng, nq, d),
            };
            let c = TokenEmbeddings {
                tokens: (0..nc).map(|i| format!("c{i}")).collect(),
                vectors: rand_matrix(rng, nc, d),
            };
            (q, c)
        })
        .collect()
}

#[allow(clippy::needless_range_loop)]
fn finite_difference_grad(
    batch: &[(TokenEmbeddings, TokenEmbeddings)],
    codebook: &CodeBook,
    mode: ScoreMode,
    step: f64,
) -> Vec<Vec<f64>> {
    let k = codebook.k();
    let d = codebook.dim();
    let mut grad = vec![vec![0.0; d]; k];
    for i in 0..k {
        for j in 0..d {
            let mut plus = codebook.clone();
            plus.codes[i][j] += step;
            let mut minus = codebook.clone();
            minus.codes[i][j] -= step;
            let (lp, _) = loss_and_grad(batch, &plus, mode).unwrap();
            let (lm, _) = loss_and_grad(batch, &minus, mode).unwrap();
            grad[i][j] = (lp - lm) / (2.0 * step);
        }
    }
    grad
}

fn grad_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (ra, rn) in analytic.iter().zip(numeric) {
        for (&a, &n) in ra.iter().zip(rn) {
            diff += (a - n) * (a - n);
            norm += n * n;
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for mode in [ScoreMode::QuerySpecific, ScoreMode::MaxPool] {
        for _ in 0..20 {
            let d = 3;
            let k = 2;
            let batch = random_batch(&mut rng, 3, d);
            let codebook = CodeBook {
                codes: rand_matrix(&mut rng, k, d),
            };
            let (_, analytic) = loss_and_grad(&batch, &codebook, mode).unwrap();
            let numeric = finite_difference_grad(&batch, &codebook, mode, 1e-5);
            let err = grad_rel_err(&analytic, &numeric);
            assert!(err < 1e-4, "mode {mode:?}: rel err {err}");
        }
    }
}

#[test]
fn adding_constant_to_scores_leaves_loss_unchanged() {
    // Shift every query vector's score by scaling is not constant, so
    // test softmax shift invariance directly on the loss definition:
    // appending a shared token to every context shifts all s(q_i, .)
    // identically only in degenerate setups, so instead verify via the
    // loss of a duplicated-context batch against ln(B).
    let emb = ToyEmbedder::new(8, 5);
    let ctx = embed_tokens(&["shared".to_string(), "ctx".to_string()], &emb).unwrap();
    let batch: Vec<_> = (0..4)
        .map(|i| {
            let q = embed_tokens(&[format!("q{i}")], &emb).unwrap();
            (q, ctx.clone())
        })
        .collect();
    let cb = CodeBook::seeded(3, 8, 1);
    for mode in [ScoreMode::MaxPool, ScoreMode::QuerySpecific] {
        let (loss, _) = loss_and_grad(&batch, &cb, mode).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-9);
    }
}

fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, vocab: usize) -> Vec<Document> {
    (0..n_docs)
        .map(|i| {
            let len = rng.random_range(3..12);
            let body: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..vocab)))
                .collect();
            Document {
                doc_id: format!("d{i:03}"),
                title: format!("title {i}"),
                body: body.join(" "),
                caption: None,
            }
        })
        .collect()
}

#[test]
fn bm25_topk_matches_scoring_every_document() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = TokenizerConfig::default();
    let docs = random_corpus(&mut rng, 100, 40);
    let index = build_inverted_index(&docs, &cfg);
    let params = Bm25Params::default();
    for q in 0..50 {
        let n_terms = rng.random_range(1..4);
        let terms: Vec<String> = (0..n_terms)
            .map(|_| format!("w{}", rng.random_range(0..40)))
            .collect();
        let got = bm25_topk(&format!("q{q}"), &terms, &index, 10, &params);
        // brute force: score all docs, keep nonzero-overlap candidates
        let scored: Vec<(String, f64)> = docs
            .iter()
            .filter_map(|d| {
                let s = bm25_score(&terms, &d.doc_id, &index, &params).unwrap();
                let overlap = terms.iter().any(|t| index.term_freq(t, &d.doc_id) > 0);
                overlap.then(|| (d.doc_id.clone(), s))
            })
            .collect();
        let want = RankedList::from_scored(format!("q{q}"), scored, 10);
        assert_eq!(got, want);
    }
}

#[test]
fn bm25_topk_prefix_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = TokenizerConfig::default();
    let docs = random_corpus(&mut rng, 60, 20);
    let index = build_inverted_index(&docs, &cfg);
    let params = Bm25Params::default();
    let terms = vec!["w1".to_string(), "w2".to_string()];
    let small = bm25_topk("q", &terms, &index, 3, &params);
    let large = bm25_topk("q", &terms, &index, 8, &params);
    assert_eq!(small.hits[..], large.hits[..3]);
}

#[test]
fn bm25_b_zero_ignores_document_length() {
    // identical tf, very different lengths
    let docs = vec![
        Document {
            doc_id: "short".into(),
            title: String::new(),
            body: "x".into(),
            caption: None,
        },
        Document {
            doc_id: "long".into(),
            title: String::new(),
            body: format!("x {}", vec!["pad"; 50].join(" ")),
            caption: None,
        },
    ];
    let cfg = TokenizerConfig::default();
    let index = build_inverted_index(&docs, &cfg);
    let params = Bm25Params { k1: 1.2, b: 0.0 };
    let terms = vec!["x".to_string()];
    let a = bm25_score(&terms, "short", &index, &params).unwrap();
    let b = bm25_score(&terms, "long", &index, &params).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn dense_topk_matches_per_document_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = TokenizerConfig::default();
    let docs = random_corpus(&mut rng, 50, 30);
    let emb = ToyEmbedder::new(8, 3);
    let cb = CodeBook::seeded(3, 8, 3);
    let index = build_dense_index(&docs, &cb, &emb, &cfg, 128).unwrap();
    let query_text = "w1 w5 w9";
    let scorers: [(&dyn polyret::score::ContextScorer, &str); 2] =
        [(&MaxPoolScorer, "maxpool"), (&QuerySpecificScorer, "qs")];
    for (scorer, name) in scorers {
        let got = dense_topk("q", query_text, &index, &emb, &cfg, 10, scorer).unwrap();
        let tokens = polyret::corpus::tokenize(query_text, &cfg);
        let query = embed_query(&tokens, &emb).unwrap();
        let scored: Vec<(String, f64)> = index
            .entries
            .iter()
            .map(|(id, cvs)| (id.clone(), scorer.score(&query, cvs).unwrap()))
            .collect();
        let want = RankedList::from_scored("q", scored, 10);
        assert_eq!(got, want, "scorer {name}");
    }
}

#[test]
fn k1_codebook_matches_dual_encoder_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = TokenizerConfig::default();
    let docs = random_corpus(&mut rng, 50, 30);
    let emb = ToyEmbedder::new(8, 4);
    let cb = CodeBook::seeded(1, 8, 4);
    let index = build_dense_index(&docs, &cb, &emb, &cfg, 128).unwrap();
    let query_text = "w2 w7";
    let tokens = polyret::corpus::tokenize(query_text, &cfg);
    let query = embed_query(&tokens, &emb).unwrap();
    // dual-encoder oracle: plain dot product against the single vector
    let scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|(id, cvs)| {
            let dot: f64 = cvs[0].iter().zip(&query.vector).map(|(a, b)| a * b).sum();
            (id.clone(), dot)
        })
        .collect();
    let want = RankedList::from_scored("q", scored, 10);
    for scorer in [&MaxPoolScorer as &dyn polyret::score::ContextScorer, &QuerySpecificScorer] {
        let got = dense_topk("q", query_text, &index, &emb, &cfg, 10, scorer).unwrap();
        let got_ids: Vec<&String> = got.hits.iter().map(|(d, _)| d).collect();
        let want_ids: Vec<&String> = want.hits.iter().map(|(d, _)| d).collect();
        assert_eq!(got_ids, want_ids);
    }
}

#[test]
fn self_similar_document_ranks_first() {
    let cfg = TokenizerConfig::default();
    let mut docs = vec![Document {
        doc_id: "target".into(),
        title: String::new(),
        body: "unique quaternion flux capacitor".into(),
        caption: None,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    docs.extend(random_corpus(&mut rng, 20, 30));
    let emb = ToyEmbedder::new(16, 6);
    let cb = CodeBook::seeded(2, 16, 6);
    let index = build_dense_index(&docs, &cb, &emb, &cfg, 128).unwrap();
    let got = dense_topk(
        "q",
        "unique quaternion flux capacitor",
        &index,
        &emb,
        &cfg,
        1,
        &MaxPoolScorer,
    )
    .unwrap();
    assert_eq!(got.hits[0].0, "target");
}

#[test]
fn keyword_ranking_matches_brute_force() {
    let cfg = TokenizerConfig::default();
    let docs = vec![
        Document {
            doc_id: "d1".into(),
            title: "t1".into(),
            body: "alpha alpha beta gamma shared".into(),
            caption: None,
        },
        Document {
            doc_id: "d2".into(),
            title: "t2".into(),
            body: "beta delta shared".into(),
            caption: None,
        },
        Document {
            doc_id: "d3".into(),
            title: "t3".into(),
            body: "shared epsilon epsilon epsilon".into(),
            caption: None,
        },
    ];
    let stats = CorpusStats::from_documents(&docs, &cfg);
    // brute force for d1: weight every distinct token by hand
    let tokens = ["alpha", "beta", "gamma", "shared"];
    let tf = [2usize, 1, 1, 1];
    let mut expected: Vec<(String, f64)> = tokens
        .iter()
        .zip(tf)
        .map(|(t, f)| {
            let df = stats.df(t) as f64;
            let w = f as f64 * (((3.0 + 1.0) / (df + 1.0)).ln() + 1.0);
            (t.to_string(), w)
        })
        .collect();
    expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let want: Vec<String> = expected.into_iter().take(2).map(|(t, _)| t).collect();
    let got = polyret::pretraingen::extract_keywords(&docs[0], 2, &stats, &cfg).unwrap();
    assert_eq!(got, want);
}
