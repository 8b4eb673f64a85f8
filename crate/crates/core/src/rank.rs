//! Ranked retrieval output shared by the lexical and dense engines.

/// Scored hits for one query, descending by score; ties broken by
/// ascending doc_id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort scored candidates, apply the tie-break, truncate to `k`.
    pub fn from_scored(query_id: impl Into<String>, mut scored: Vec<(String, f64)>, k: usize) -> Self {
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Self {
            query_id: query_id.into(),
            hits: scored,
        }
    }

    /// Render as TREC run-file lines: `qid Q0 docid rank score tag`.
    pub fn to_run_lines(&self, tag: &str) -> String {
        let mut out = String::new();
        for (rank, (doc_id, score)) in self.hits.iter().enumerate() {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                self.query_id,
                doc_id,
                rank + 1,
                score,
                tag
            ));
        }
        out
    }
}
