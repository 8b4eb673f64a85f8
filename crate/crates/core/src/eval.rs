//! Retrieval evaluation: MRR, Precision@k, Recall@k over run files and
//! relevance judgments.
//!
//! Qrels lines are `qid 0 docid rel` (rel > 0 means relevant); run
//! lines are `qid Q0 docid rank score tag`. Readers are whitespace
//! tolerant. Queries present in the judgments but absent from a run
//! contribute 0 to every mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rank::RankedList;

pub const DEFAULT_MRR_CUTOFF: usize = 10;

/// Relevance labels per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Judgments {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

/// Aggregated metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl MetricsReport {
    /// Flat text table, one metric per line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_queries\t{}\n", self.n_queries));
        out.push_str(&format!("mrr\t{:.6}\n", self.mrr));
        for (k, v) in &self.precision_at {
            out.push_str(&format!("p@{k}\t{v:.6}\n"));
        }
        for (k, v) in &self.recall_at {
            out.push_str(&format!("r@{k}\t{v:.6}\n"));
        }
        out
    }
}

fn reciprocal_rank(run: &RankedList, relevant: &BTreeSet<String>, cutoff: usize) -> f64 {
    run.hits
        .iter()
        .take(cutoff)
        .position(|(doc_id, _)| relevant.contains(doc_id))
        .map_or(0.0, |idx| 1.0 / (idx + 1) as f64)
}

/// Mean reciprocal rank of the first relevant document within the top
/// `cutoff`. The mean runs over all judged queries; judged queries
/// missing from `runs` count 0.
pub fn mrr(runs: &[RankedList], judgments: &Judgments, cutoff: usize) -> Result<f64> {
    if judgments.relevant.is_empty() {
        return Err(Error::InvalidParam("no judged queries".into()));
    }
    let mut total = 0.0;
    for run in runs {
        let relevant = judgments
            .relevant
            .get(&run.query_id)
            .ok_or_else(|| Error::MissingJudgments(run.query_id.clone()))?;
        total += reciprocal_rank(run, relevant, cutoff);
    }
    Ok(total / judgments.relevant.len() as f64)
}

/// Mean P@k and R@k for each requested k. Runs shorter than k count
/// the missing tail as non-relevant.
pub fn precision_recall_at_k(
    runs: &[RankedList],
    judgments: &Judgments,
    ks: &[usize],
) -> Result<(BTreeMap<usize, f64>, BTreeMap<usize, f64>)> {
    if ks.is_empty() || ks.iter().any(|&k| k < 1) {
        return Err(Error::InvalidParam("ks must be non-empty, all >= 1".into()));
    }
    if judgments.relevant.is_empty() {
        return Err(Error::InvalidParam("no judged queries".into()));
    }
    let n = judgments.relevant.len() as f64;
    let mut precision = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for &k in ks {
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        for run in runs {
            let relevant = judgments
                .relevant
                .get(&run.query_id)
                .ok_or_else(|| Error::MissingJudgments(run.query_id.clone()))?;
            let hits = run
                .hits
                .iter()
                .take(k)
                .filter(|(doc_id, _)| relevant.contains(doc_id))
                .count();
            p_sum += hits as f64 / k as f64;
            r_sum += hits as f64 / relevant.len() as f64;
        }
        precision.insert(k, p_sum / n);
        recall.insert(k, r_sum / n);
    }
    Ok((precision, recall))
}

/// Parse a qrels file: `qid 0 docid rel`.
pub fn read_qrels<P: AsRef<Path>>(path: P) -> Result<Judgments> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut judgments = Judgments::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::ParseLine {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let rel: i64 = fields[3].parse().map_err(|_| Error::ParseLine {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad relevance {:?}", fields[3]),
        })?;
        if rel > 0 {
            judgments
                .relevant
                .entry(fields[0].to_string())
                .or_default()
                .insert(fields[2].to_string());
        }
    }
    Ok(judgments)
}

/// Write qrels lines, sorted by (qid, docid).
pub fn write_qrels<P: AsRef<Path>>(path: P, judgments: &Judgments) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for (qid, docs) in &judgments.relevant {
        for doc in docs {
            writeln!(w, "{qid} 0 {doc} 1")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a run file: `qid Q0 docid rank score tag`. Hits keep file
/// order per query.
pub fn read_run<P: AsRef<Path>>(path: P) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut by_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::ParseLine {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let score: f64 = fields[4].parse().map_err(|_| Error::ParseLine {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad score {:?}", fields[4]),
        })?;
        if !by_query.contains_key(fields[0]) {
            order.push(fields[0].to_string());
        }
        by_query
            .entry(fields[0].to_string())
            .or_default()
            .push((fields[2].to_string(), score));
    }
    Ok(order
        .into_iter()
        .map(|qid| {
            let hits = by_query.remove(&qid).unwrap();
            RankedList {
                query_id: qid,
                hits,
            }
        })
        .collect())
}

/// Evaluate a run file against a qrels file.
pub fn evaluate_run<P: AsRef<Path>, Q: AsRef<Path>>(
    run_path: P,
    qrels_path: Q,
    ks: &[usize],
    cutoff: usize,
) -> Result<MetricsReport> {
    let runs = read_run(&run_path)?;
    if runs.is_empty() {
        return Err(Error::InvalidParam(format!(
            "run file {} has no entries",
            run_path.as_ref().display()
        )));
    }
    let judgments = read_qrels(&qrels_path)?;
    let mrr_value = mrr(&runs, &judgments, cutoff)?;
    let (precision_at, recall_at) = precision_recall_at_k(&runs, &judgments, ks)?;
    Ok(MetricsReport {
        mrr: mrr_value,
        precision_at,
        recall_at,
        n_queries: judgments.relevant.len(),
    })
}
