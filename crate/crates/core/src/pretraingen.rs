//! Pretraining-pair generation from a titled corpus.
//!
//! Expanded Title Mapping (ETM) pairs an extended title (title plus the
//! body's top-m TF-IDF keywords) with its document. Reduced Sentence
//! Mapping (RSM) pairs a TF-IDF-weight-reduced sentence with its source
//! document, simulating short real-world queries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tfidf_weight, tokenize, CorpusStats, Document, TokenizerConfig};
use crate::error::{Error, Result};

/// Pretraining task tag carried on every generated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "ETM")]
    Etm,
    #[serde(rename = "RSM")]
    Rsm,
    #[serde(rename = "TQG")]
    Tqg,
}

/// A (query, positive document) training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainPair {
    pub query: String,
    pub positive_id: String,
    pub task: Task,
}

/// Title extended with the body's top keywords.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTitle {
    pub title: String,
    pub keywords: Vec<String>,
    pub rendered: String,
}

/// A sentence reduced to its top-m weighted word types.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSentence {
    pub source: String,
    /// Normalized TF-IDF weight of each word occurrence; sums to 1.
    pub weights: Vec<f64>,
    pub reduced: String,
}

/// Distinct body tokens ranked by descending TF-IDF weight
/// (lexicographic tie-break), truncated to `m`.
pub fn extract_keywords(
    doc: &Document,
    m: usize,
    stats: &CorpusStats,
    config: &TokenizerConfig,
) -> Result<Vec<String>> {
    let tokens = tokenize(&doc.body, config);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.doc_id.clone()));
    }
    Ok(rank_keywords(&tokens, m, stats, None))
}

fn rank_keywords(
    tokens: &[String],
    m: usize,
    stats: &CorpusStats,
    exclude: Option<&std::collections::BTreeSet<String>>,
) -> Vec<String> {
    let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for t in tokens {
        if exclude.is_some_and(|e| e.contains(t)) {
            continue;
        }
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, f64)> = counts
        .into_iter()
        .map(|(t, tf)| (t, tfidf_weight(t, tf, stats)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    ranked.truncate(m);
    ranked.into_iter().map(|(t, _)| t.to_string()).collect()
}

impl ExtendedTitle {
    /// Keywords exclude tokens already present in the title.
    pub fn new(
        doc: &Document,
        m: usize,
        stats: &CorpusStats,
        config: &TokenizerConfig,
    ) -> Result<Self> {
        if doc.title.is_empty() {
            return Err(Error::MissingTitle(doc.doc_id.clone()));
        }
        let body_tokens = tokenize(&doc.body, config);
        if body_tokens.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        let title_tokens: std::collections::BTreeSet<String> =
            tokenize(&doc.title, config).into_iter().collect();
        let keywords = rank_keywords(&body_tokens, m, stats, Some(&title_tokens));
        let rendered = if keywords.is_empty() {
            doc.title.clone()
        } else {
            format!("{} {}", doc.title, keywords.join(" "))
        };
        Ok(Self {
            title: doc.title.clone(),
            keywords,
            rendered,
        })
    }
}

/// One ETM pair per document, in corpus order.
pub fn gen_etm_pairs(
    documents: &[Document],
    m: usize,
    stats: &CorpusStats,
    config: &TokenizerConfig,
) -> Result<Vec<PretrainPair>> {
    documents
        .iter()
        .map(|doc| {
            let extended = ExtendedTitle::new(doc, m, stats, config)?;
            Ok(PretrainPair {
                query: extended.rendered,
                positive_id: doc.doc_id.clone(),
                task: Task::Etm,
            })
        })
        .collect()
}

/// Split on ". ", "? ", "! " boundaries after whitespace normalization.
pub fn split_sentences(text: &str) -> Vec<String> {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = normalized.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '?' | '!') && chars.peek() == Some(&' ') {
            chars.next();
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

impl ReducedSentence {
    /// Reduce `sentence` to its top-m weighted word types, preserving
    /// first-occurrence order. Returns None when the sentence has no
    /// tokens.
    pub fn new(
        sentence: &str,
        m: usize,
        stats: &CorpusStats,
        config: &TokenizerConfig,
    ) -> Option<Self> {
        let words = tokenize(sentence, config);
        if words.is_empty() {
            return None;
        }
        // Type-level TF-IDF with tf counted within the sentence.
        let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
        for w in &words {
            *counts.entry(w).or_insert(0) += 1;
        }
        let type_weight: std::collections::BTreeMap<&str, f64> = counts
            .iter()
            .map(|(&t, &tf)| (t, tfidf_weight(t, tf, stats)))
            .collect();
        let total: f64 = words.iter().map(|w| type_weight[w.as_str()]).sum();
        let weights: Vec<f64> = if total > 0.0 {
            words.iter().map(|w| type_weight[w.as_str()] / total).collect()
        } else {
            vec![1.0 / words.len() as f64; words.len()]
        };
        let mut ranked: Vec<(&str, f64)> = type_weight.iter().map(|(&t, &w)| (t, w)).collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        let selected: std::collections::BTreeSet<&str> =
            ranked.iter().take(m).map(|(t, _)| *t).collect();
        let mut emitted = std::collections::BTreeSet::new();
        let mut reduced_words = Vec::new();
        for w in &words {
            if selected.contains(w.as_str()) && emitted.insert(w.as_str()) {
                reduced_words.push(w.clone());
            }
        }
        Some(Self {
            source: sentence.to_string(),
            weights,
            reduced: reduced_words.join(" "),
        })
    }
}

/// One RSM pair per non-empty sentence of each document body, in
/// corpus then sentence order.
pub fn gen_rsm_pairs(
    documents: &[Document],
    m: usize,
    stats: &CorpusStats,
    config: &TokenizerConfig,
) -> Result<Vec<PretrainPair>> {
    if m < 1 {
        return Err(Error::InvalidParam("m must be at least 1".into()));
    }
    let mut pairs = Vec::new();
    for doc in documents {
        for sentence in split_sentences(&doc.body) {
            if let Some(reduced) = ReducedSentence::new(&sentence, m, stats, config) {
                pairs.push(PretrainPair {
                    query: reduced.reduced,
                    positive_id: doc.doc_id.clone(),
                    task: Task::Rsm,
                });
            }
        }
    }
    Ok(pairs)
}

/// Write pairs as JSON lines.
pub fn write_pairs<P: AsRef<Path>>(path: P, pairs: &[PretrainPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)
            .map_err(|e| Error::InvalidParam(format!("serialize pair: {e}")))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs<P: AsRef<Path>>(path: P) -> Result<Vec<PretrainPair>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}
