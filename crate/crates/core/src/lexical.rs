//! Inverted index with Okapi BM25 scoring and exact top-k retrieval.
//!
//! Candidate generation is the union of the query terms' posting lists;
//! every candidate is scored exactly. Only document bodies are indexed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::corpus::{CorpusStats, Document, TokenizerConfig};
use crate::error::{Error, Result};
use crate::rank::RankedList;

pub const INDEX_MAGIC: [u8; 4] = *b"PIDX";
const INDEX_VERSION: u32 = 1;

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Term -> postings map over tokenized document bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    /// Postings per term, sorted by doc_id; tf >= 1 always.
    pub postings: BTreeMap<String, Vec<(String, u32)>>,
    pub stats: CorpusStats,
}

/// Build the index over document bodies. Title and caption are not
/// indexed; they enter through query composition.
pub fn build_inverted_index(documents: &[Document], config: &TokenizerConfig) -> InvertedIndex {
    let stats = CorpusStats::from_documents(documents, config);
    let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    // Per-document term counts, merged in doc order then re-sorted by id.
    for doc in documents {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for tok in crate::corpus::tokenize(&doc.body, config) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push((doc.doc_id.clone(), tf));
        }
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
    }
    InvertedIndex { postings, stats }
}

fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl InvertedIndex {
    pub fn term_freq(&self, term: &str, doc_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by(|(d, _)| d.as_str().cmp(doc_id))
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0)
    }
}

/// Okapi BM25 score of one document against a sequence of query term
/// instances (duplicated terms contribute once per instance).
pub fn bm25_score(
    query_terms: &[String],
    doc_id: &str,
    index: &InvertedIndex,
    params: &Bm25Params,
) -> Result<f64> {
    let dl = *index
        .stats
        .doc_len
        .get(doc_id)
        .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))? as f64;
    let avgdl = index.stats.avg_doc_len;
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.term_freq(term, doc_id) as f64;
        if tf == 0.0 {
            continue;
        }
        let df = index.postings[term].len();
        let idf = bm25_idf(index.stats.n_docs, df);
        let len_norm = 1.0 - params.b + params.b * dl / avgdl;
        score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
    }
    Ok(score)
}

/// Exact BM25 top-k over the union of the query terms' posting lists.
pub fn bm25_topk(
    query_id: &str,
    query_terms: &[String],
    index: &InvertedIndex,
    k: usize,
    params: &Bm25Params,
) -> RankedList {
    let mut candidates: Vec<&String> = Vec::new();
    {
        let mut seen = std::collections::BTreeSet::new();
        for term in query_terms {
            if let Some(list) = index.postings.get(term) {
                for (doc_id, _) in list {
                    if seen.insert(doc_id.as_str()) {
                        candidates.push(doc_id);
                    }
                }
            }
        }
    }
    let scored: Vec<(String, f64)> = candidates
        .into_iter()
        .map(|doc_id| {
            let s = bm25_score(query_terms, doc_id, index, params)
                .expect("candidate came from the index");
            (doc_id.clone(), s)
        })
        .collect();
    RankedList::from_scored(query_id, scored, k)
}

/// Persist to the `PIDX` binary format. Deterministic: the same index
/// always serializes to the same bytes.
pub fn write_index<P: AsRef<Path>>(path: P, index: &InvertedIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&INDEX_MAGIC)?;
    binio::write_u32(&mut w, INDEX_VERSION)?;
    binio::write_u64(&mut w, index.stats.n_docs as u64)?;
    binio::write_f64(&mut w, index.stats.avg_doc_len)?;
    // Doc table, sorted by doc_id; postings reference entries by position.
    binio::write_u64(&mut w, index.stats.doc_len.len() as u64)?;
    let mut doc_pos: BTreeMap<&str, u64> = BTreeMap::new();
    for (i, (doc_id, len)) in index.stats.doc_len.iter().enumerate() {
        binio::write_str(&mut w, doc_id)?;
        binio::write_u64(&mut w, *len as u64)?;
        doc_pos.insert(doc_id, i as u64);
    }
    binio::write_u64(&mut w, index.postings.len() as u64)?;
    for (term, list) in &index.postings {
        binio::write_str(&mut w, term)?;
        binio::write_u64(&mut w, list.len() as u64)?;
        for (doc_id, tf) in list {
            binio::write_u64(&mut w, doc_pos[doc_id.as_str()])?;
            binio::write_u32(&mut w, *tf)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_index<P: AsRef<Path>>(path: P) -> Result<InvertedIndex> {
    let mut r = BufReader::new(File::open(path)?);
    binio::check_magic(&mut r, INDEX_MAGIC)?;
    let version = binio::read_u32(&mut r, "version")?;
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_docs = binio::read_u64(&mut r, "n_docs")? as usize;
    let avg_doc_len = binio::read_f64(&mut r, "avg_doc_len")?;
    let n_table = binio::read_u64(&mut r, "doc table")? as usize;
    let mut ids = Vec::with_capacity(n_table);
    let mut doc_len = BTreeMap::new();
    for _ in 0..n_table {
        let id = binio::read_str(&mut r, "doc id")?;
        let len = binio::read_u64(&mut r, "doc len")? as usize;
        doc_len.insert(id.clone(), len);
        ids.push(id);
    }
    let n_terms = binio::read_u64(&mut r, "term count")? as usize;
    let mut postings = BTreeMap::new();
    let mut doc_freq = BTreeMap::new();
    for _ in 0..n_terms {
        let term = binio::read_str(&mut r, "term")?;
        let n_post = binio::read_u64(&mut r, "posting count")? as usize;
        let mut list = Vec::with_capacity(n_post);
        for _ in 0..n_post {
            let pos = binio::read_u64(&mut r, "posting doc")? as usize;
            let tf = binio::read_u32(&mut r, "posting tf")?;
            let id = ids
                .get(pos)
                .ok_or_else(|| Error::Truncated("posting doc position out of range".into()))?;
            list.push((id.clone(), tf));
        }
        doc_freq.insert(term.clone(), list.len());
        postings.insert(term, list);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Truncated("trailing bytes after index".into()));
    }
    Ok(InvertedIndex {
        postings,
        stats: CorpusStats {
            n_docs,
            doc_freq,
            avg_doc_len,
            doc_len,
        },
    })
}
