//! Corpus loading, tokenization and corpus-level statistics.
//!
//! A corpus file is UTF-8 JSON-lines: one object per line with required
//! keys `"id"`, `"title"`, `"text"` and an optional `"caption"`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One retrievable record: an identified text document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub caption: Option<String>,
}

/// Tokenizer settings. Rules apply in a fixed order: lowercase,
/// punctuation stripping, whitespace split, stopword removal,
/// minimum-length filter.
#[derive(Debug, Clone)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub stopwords: BTreeSet<String>,
    pub min_token_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            stopwords: BTreeSet::new(),
            min_token_len: 1,
        }
    }
}

/// Document-frequency and length statistics over tokenized bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub doc_freq: BTreeMap<String, usize>,
    pub avg_doc_len: f64,
    pub doc_len: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents(documents: &[Document], config: &TokenizerConfig) -> Self {
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut doc_len: BTreeMap<String, usize> = BTreeMap::new();
        for doc in documents {
            let tokens = tokenize(&doc.body, config);
            doc_len.insert(doc.doc_id.clone(), tokens.len());
            let distinct: BTreeSet<&String> = tokens.iter().collect();
            for term in distinct {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let n_docs = documents.len();
        let avg_doc_len = if n_docs == 0 {
            0.0
        } else {
            doc_len.values().sum::<usize>() as f64 / n_docs as f64
        };
        Self {
            n_docs,
            doc_freq,
            avg_doc_len,
            doc_len,
        }
    }

    pub fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Strip punctuation, keeping hyphens that sit between alphanumerics
/// ("il-6" stays one token).
fn strip_punct(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let internal_hyphen = c == '-'
            && i > 0
            && i + 1 < chars.len()
            && is_token_char(chars[i - 1])
            && is_token_char(chars[i + 1]);
        if is_token_char(c) || internal_hyphen {
            out.push(c);
        } else {
            out.push(' ');
        }
    }
    out
}

/// Tokenize `text` under `config`. Deterministic; empty input yields
/// an empty sequence.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let lowered = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let stripped = if config.strip_punctuation {
        strip_punct(&lowered)
    } else {
        lowered
    };
    stripped
        .split_whitespace()
        .filter(|t| !config.stopwords.contains(*t))
        .filter(|t| t.chars().count() >= config.min_token_len)
        .map(str::to_string)
        .collect()
}

/// Smoothed TF-IDF weight: `tf * (ln((N+1)/(df+1)) + 1)`. Unseen terms
/// use df = 0 and stay finite.
pub fn tfidf_weight(term: &str, tf: usize, stats: &CorpusStats) -> f64 {
    let n = stats.n_docs as f64;
    let df = stats.df(term) as f64;
    tf as f64 * (((n + 1.0) / (df + 1.0)).ln() + 1.0)
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    title: String,
    text: String,
    #[serde(default)]
    caption: Option<String>,
}

/// Load a JSON-lines corpus file, returning documents in file order
/// plus body statistics.
pub fn load_corpus<P: AsRef<Path>>(
    path: P,
    config: &TokenizerConfig,
) -> Result<(Vec<Document>, CorpusStats)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(Error::ParseLine {
                path: path.display().to_string(),
                line: i + 1,
                msg: "empty id".into(),
            });
        }
        if raw.text.is_empty() {
            return Err(Error::ParseLine {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("document {:?} has empty text", raw.id),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateDocId(raw.id));
        }
        documents.push(Document {
            doc_id: raw.id,
            title: raw.title,
            body: raw.text,
            caption: raw.caption,
        });
    }
    let stats = CorpusStats::from_documents(&documents, config);
    Ok((documents, stats))
}
