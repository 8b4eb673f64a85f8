use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use polyret::corpus::{load_corpus, tokenize, CorpusStats, Document, TokenizerConfig};
use polyret::embedding::{embed_tokens, ToyEmbedder};
use polyret::eval::evaluate_run;
use polyret::lexical::{bm25_topk, Bm25Params};
use polyret::pipeline::{compose_multimodal_query, two_stage_search, MultimodalQuery};
use polyret::polydense::train::{train_codebook, TrainConfig, TrainPair};
use polyret::polydense::{
    build_dense_index, build_single_vector_index, dense_topk, read_codebook, read_dense_index,
    write_codebook, write_dense_index, CodeBook, MAX_CONTEXT_TOKENS_LONG, MAX_CONTEXT_TOKENS_SHORT,
};
use polyret::pretraingen::{gen_etm_pairs, gen_rsm_pairs, read_pairs, write_pairs};
use polyret::score::{scorer, ScoreMode};
use polyret::templateqg::{
    extract_template, gen_qa_pairs, read_templates, write_templates, EntityLexicon,
};

#[derive(Parser)]
#[command(name = "polyret", version, about = "Lexical and multi-vector dense retrieval engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TokenizerArgs {
    /// Keep original casing instead of lowercasing.
    #[arg(long)]
    no_lowercase: bool,
    /// Keep punctuation instead of stripping it.
    #[arg(long)]
    keep_punctuation: bool,
    /// File with one stopword per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Minimum token length.
    #[arg(long, default_value_t = 1)]
    min_token_len: usize,
}

impl TokenizerArgs {
    fn build(&self) -> Result<TokenizerConfig> {
        let stopwords = match &self.stopwords {
            Some(path) => std::fs::read_to_string(path)
                .with_context(|| format!("reading stopwords {}", path.display()))?
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
            None => Default::default(),
        };
        Ok(TokenizerConfig {
            lowercase: !self.no_lowercase,
            strip_punctuation: !self.keep_punctuation,
            stopwords,
            min_token_len: self.min_token_len,
        })
    }

    fn record(&self, manifest: &mut Manifest) {
        manifest.set("lowercase", !self.no_lowercase);
        manifest.set("strip_punctuation", !self.keep_punctuation);
        manifest.set(
            "stopwords",
            self.stopwords
                .as_ref()
                .map_or("-".to_string(), |p| p.display().to_string()),
        );
        manifest.set("min_token_len", self.min_token_len);
    }
}

#[derive(Args, Clone, Copy)]
struct ContextLenArgs {
    /// Short contexts: truncate bodies to 128 tokens (default).
    #[arg(long, conflicts_with = "long")]
    short: bool,
    /// Long contexts: truncate bodies to 256 tokens.
    #[arg(long)]
    long: bool,
}

impl ContextLenArgs {
    fn max_tokens(&self) -> usize {
        if self.long {
            MAX_CONTEXT_TOKENS_LONG
        } else {
            MAX_CONTEXT_TOKENS_SHORT
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 inverted index over a corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
    },
    /// Build a multi-vector dense index.
    DenseIndex {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trained codebook file; omit to use a fresh seeded codebook.
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Number of code vectors; 0 selects single-vector mode.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Embedding dimension.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        context_len: ContextLenArgs,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        /// Upper bound on worker threads (outputs are unaffected).
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Search an index (BM25 for .pidx, dense for .pdns files).
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, conflicts_with = "queries")]
        query: Option<String>,
        /// Caption appended to --query for multimodal search.
        #[arg(long, requires = "query")]
        caption: Option<String>,
        /// Batch query file: JSON lines with qid, question, optional caption.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value = "q1")]
        qid: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Dense scoring strategy: maxpool or query_specific.
        #[arg(long, default_value = "maxpool")]
        mode: String,
        /// Seed of the embedder the dense index was built with.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "polyret")]
        tag: String,
        /// Write run lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// BM25 coarse search re-ranked by dense max-pool scores.
    TwoStage {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dense_index: PathBuf,
        #[arg(long, conflicts_with = "queries")]
        query: Option<String>,
        #[arg(long, requires = "query")]
        caption: Option<String>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value = "q1")]
        qid: String,
        #[arg(long, default_value_t = 100)]
        n_coarse: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "polyret-two-stage")]
        tag: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Generate ETM or RSM pretraining pairs.
    GenPretrain {
        /// etm or rsm.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
    },
    /// Generate template-based question/passage pairs.
    GenQuestions {
        #[arg(long)]
        corpus: PathBuf,
        /// Lexicon file: surface<TAB>TYPE per line.
        #[arg(long)]
        lexicon: PathBuf,
        /// Prebuilt template bank (JSON lines).
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Annotated questions to extract templates from: JSON lines
        /// with qid and question.
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Persist the extracted template bank here.
        #[arg(long)]
        save_templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
    },
    /// Train a codebook on (query, positive) pairs with in-batch negatives.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        /// Corpus resolving each pair's positive_id to its text.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value = "query_specific")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        context_len: ContextLenArgs,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Evaluate a run file against qrels: MRR, P@k, R@k.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated cutoffs for P@k / R@k.
        #[arg(long, default_value = "1,5,10")]
        ks: String,
        /// MRR rank cutoff.
        #[arg(long, default_value_t = 10)]
        cutoff: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved parameters written next to each output artifact.
struct Manifest {
    command: String,
    params: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &str) -> Self {
        let mut params = BTreeMap::new();
        params.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            command: command.to_string(),
            params,
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }

    fn write_for(&self, artifact: &Path) -> Result<()> {
        let path = artifact.with_file_name(format!(
            "{}.manifest",
            artifact
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        ));
        let mut out = String::new();
        out.push_str(&format!("command = {}\n", self.command));
        for (key, value) in &self.params {
            out.push_str(&format!("{key} = {value}\n"));
        }
        std::fs::write(&path, out)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

fn emit(text: &str, out: Option<&PathBuf>, manifest: &Manifest) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)
                .with_context(|| format!("writing {}", path.display()))?;
            manifest.write_for(path)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct QueryRecord {
    qid: String,
    question: String,
    #[serde(default)]
    caption: Option<String>,
}

fn load_query_file(path: &Path) -> Result<Vec<QueryRecord>> {
    let content =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        records.push(record);
    }
    Ok(records)
}

/// Single --query or batch --queries, normalized to (qid, composed text).
fn resolve_queries(
    query: Option<&String>,
    caption: Option<&String>,
    queries: Option<&PathBuf>,
    qid: &str,
) -> Result<Vec<(String, String)>> {
    match (query, queries) {
        (Some(q), None) => {
            let mm = MultimodalQuery {
                question: q.clone(),
                caption: caption.cloned().unwrap_or_default(),
            };
            Ok(vec![(qid.to_string(), compose_multimodal_query(&mm))])
        }
        (None, Some(path)) => load_query_file(path)?
            .into_iter()
            .map(|r| {
                let mm = MultimodalQuery {
                    question: r.question,
                    caption: r.caption.unwrap_or_default(),
                };
                Ok((r.qid, compose_multimodal_query(&mm)))
            })
            .collect(),
        _ => bail!("exactly one of --query or --queries is required"),
    }
}

#[derive(serde::Deserialize)]
struct QuestionRecord {
    qid: String,
    question: String,
}

fn corpus_for(path: &Path, cfg: &TokenizerConfig) -> Result<(Vec<Document>, CorpusStats)> {
    load_corpus(path, cfg).with_context(|| format!("loading corpus {}", path.display()))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Index { corpus, out, tokenizer } => {
            let cfg = tokenizer.build()?;
            let (docs, _) = corpus_for(&corpus, &cfg)?;
            let index = polyret::lexical::build_inverted_index(&docs, &cfg);
            polyret::lexical::write_index(&out, &index)?;
            let mut manifest = Manifest::new("index");
            manifest.set("corpus", corpus.display());
            manifest.set("out", out.display());
            tokenizer.record(&mut manifest);
            manifest.write_for(&out)?;
        }
        Command::DenseIndex {
            corpus,
            out,
            codebook,
            k,
            dim,
            seed,
            context_len,
            tokenizer,
            threads,
        } => {
            check_threads(threads)?;
            let cfg = tokenizer.build()?;
            let (docs, _) = corpus_for(&corpus, &cfg)?;
            let max_tokens = context_len.max_tokens();
            let mut manifest = Manifest::new("dense-index");
            manifest.set("corpus", corpus.display());
            manifest.set("out", out.display());
            manifest.set("seed", seed);
            manifest.set("max_context_tokens", max_tokens);
            manifest.set("threads", threads);
            tokenizer.record(&mut manifest);
            let index = match &codebook {
                Some(path) => {
                    let (cb, _) = read_codebook(path)?;
                    let embedder = ToyEmbedder::new(cb.dim(), seed);
                    manifest.set("codebook", path.display());
                    manifest.set("k", cb.k());
                    manifest.set("dim", cb.dim());
                    build_dense_index(&docs, &cb, &embedder, &cfg, max_tokens)?
                }
                None if k == 0 => {
                    let embedder = ToyEmbedder::new(dim, seed);
                    manifest.set("k", "0 (single-vector mode)");
                    manifest.set("dim", dim);
                    build_single_vector_index(&docs, &embedder, &cfg, max_tokens)?
                }
                None => {
                    let cb = CodeBook::seeded(k, dim, seed);
                    let embedder = ToyEmbedder::new(dim, seed);
                    manifest.set("k", k);
                    manifest.set("dim", dim);
                    build_dense_index(&docs, &cb, &embedder, &cfg, max_tokens)?
                }
            };
            write_dense_index(&out, &index)?;
            manifest.write_for(&out)?;
        }
        Command::Search {
            index,
            query,
            caption,
            queries,
            qid,
            k,
            mode,
            seed,
            tag,
            out,
            tokenizer,
            threads,
        } => {
            check_threads(threads)?;
            let cfg = tokenizer.build()?;
            let resolved = resolve_queries(query.as_ref(), caption.as_ref(), queries.as_ref(), &qid)?;
            let mut manifest = Manifest::new("search");
            manifest.set("index", index.display());
            manifest.set("k", k);
            manifest.set("mode", &mode);
            manifest.set("seed", seed);
            manifest.set("tag", &tag);
            manifest.set("threads", threads);
            tokenizer.record(&mut manifest);
            let mut output = String::new();
            match polyret::binio::file_magic(&index)? {
                m if m == polyret::lexical::INDEX_MAGIC => {
                    let idx = polyret::lexical::read_index(&index)?;
                    for (query_id, text) in &resolved {
                        let terms = tokenize(text, &cfg);
                        let ranked = bm25_topk(query_id, &terms, &idx, k, &Bm25Params::default());
                        output.push_str(&ranked.to_run_lines(&tag));
                    }
                }
                m if m == polyret::polydense::DENSE_MAGIC => {
                    let idx = read_dense_index(&index)?;
                    let embedder = ToyEmbedder::new(idx.dim, seed);
                    let strategy = scorer(&mode)?;
                    for (query_id, text) in &resolved {
                        let ranked = dense_topk(query_id, text, &idx, &embedder, &cfg, k, strategy)?;
                        output.push_str(&ranked.to_run_lines(&tag));
                    }
                }
                other => bail!(
                    "unrecognized index magic {:?} in {}",
                    String::from_utf8_lossy(&other),
                    index.display()
                ),
            }
            emit(&output, out.as_ref(), &manifest)?;
        }
        Command::TwoStage {
            index,
            dense_index,
            query,
            caption,
            queries,
            qid,
            n_coarse,
            k,
            seed,
            tag,
            out,
            tokenizer,
            threads,
        } => {
            check_threads(threads)?;
            let cfg = tokenizer.build()?;
            let resolved = resolve_queries(query.as_ref(), caption.as_ref(), queries.as_ref(), &qid)?;
            let inv = polyret::lexical::read_index(&index)?;
            let dense = read_dense_index(&dense_index)?;
            let embedder = ToyEmbedder::new(dense.dim, seed);
            let mut output = String::new();
            for (query_id, text) in &resolved {
                let ranked = two_stage_search(
                    query_id,
                    text,
                    &inv,
                    &dense,
                    &embedder,
                    &cfg,
                    &Bm25Params::default(),
                    n_coarse,
                    k,
                )?;
                output.push_str(&ranked.to_run_lines(&tag));
            }
            let mut manifest = Manifest::new("two-stage");
            manifest.set("index", index.display());
            manifest.set("dense_index", dense_index.display());
            manifest.set("n_coarse", n_coarse);
            manifest.set("k", k);
            manifest.set("seed", seed);
            manifest.set("tag", &tag);
            manifest.set("threads", threads);
            tokenizer.record(&mut manifest);
            emit(&output, out.as_ref(), &manifest)?;
        }
        Command::GenPretrain {
            task,
            m,
            corpus,
            out,
            tokenizer,
        } => {
            let cfg = tokenizer.build()?;
            let (docs, stats) = corpus_for(&corpus, &cfg)?;
            let pairs = match task.to_lowercase().as_str() {
                "etm" => gen_etm_pairs(&docs, m, &stats, &cfg)?,
                "rsm" => gen_rsm_pairs(&docs, m, &stats, &cfg)?,
                other => bail!("unknown pretraining task {other:?} (expected etm or rsm)"),
            };
            write_pairs(&out, &pairs)?;
            let mut manifest = Manifest::new("gen-pretrain");
            manifest.set("task", task.to_lowercase());
            manifest.set("m", m);
            manifest.set("corpus", corpus.display());
            manifest.set("out", out.display());
            tokenizer.record(&mut manifest);
            manifest.write_for(&out)?;
        }
        Command::GenQuestions {
            corpus,
            lexicon,
            templates,
            questions,
            save_templates,
            out,
            tokenizer,
        } => {
            let cfg = tokenizer.build()?;
            let (docs, stats) = corpus_for(&corpus, &cfg)?;
            let lex = EntityLexicon::load(&lexicon)?;
            let bank = match (&templates, &questions) {
                (Some(path), None) => read_templates(path)?,
                (None, Some(path)) => {
                    let content = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let mut bank = Vec::new();
                    for (i, line) in content.lines().enumerate() {
                        if line.trim().is_empty() {
                            continue;
                        }
                        let record: QuestionRecord = serde_json::from_str(line)
                            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
                        match extract_template(&record.qid, &record.question, &lex, &cfg) {
                            Ok(t) => bank.push(t),
                            // questions without entities yield no template
                            Err(polyret::Error::NoTemplate) => continue,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    bank
                }
                _ => bail!("exactly one of --templates or --questions is required"),
            };
            if let Some(path) = &save_templates {
                write_templates(path, &bank)?;
            }
            let pairs = gen_qa_pairs(&docs, &bank, &lex, &stats, &cfg)?;
            write_pairs(&out, &pairs)?;
            let mut manifest = Manifest::new("gen-questions");
            manifest.set("corpus", corpus.display());
            manifest.set("lexicon", lexicon.display());
            manifest.set(
                "templates",
                templates.as_ref().map_or("-".into(), |p| p.display().to_string()),
            );
            manifest.set(
                "questions",
                questions.as_ref().map_or("-".into(), |p| p.display().to_string()),
            );
            manifest.set("out", out.display());
            tokenizer.record(&mut manifest);
            manifest.write_for(&out)?;
            if let Some(path) = &save_templates {
                manifest.write_for(path)?;
            }
        }
        Command::Train {
            pairs,
            corpus,
            k,
            dim,
            seed,
            epochs,
            lr,
            batch_size,
            mode,
            out,
            context_len,
            tokenizer,
            threads,
        } => {
            check_threads(threads)?;
            let cfg = tokenizer.build()?;
            let (docs, _) = corpus_for(&corpus, &cfg)?;
            let by_id: BTreeMap<&str, &Document> =
                docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
            let records = read_pairs(&pairs)?;
            let embedder = ToyEmbedder::new(dim, seed);
            let max_tokens = context_len.max_tokens();
            let mut train_pairs: Vec<TrainPair> = Vec::with_capacity(records.len());
            for record in &records {
                let doc = by_id.get(record.positive_id.as_str()).with_context(|| {
                    format!("pair positive_id {:?} not in corpus", record.positive_id)
                })?;
                let q_tokens = tokenize(&record.query, &cfg);
                if q_tokens.is_empty() {
                    bail!("pair query {:?} is empty after tokenization", record.query);
                }
                let mut c_tokens = tokenize(&doc.body, &cfg);
                if c_tokens.is_empty() {
                    bail!("document {:?} is empty after tokenization", doc.doc_id);
                }
                c_tokens.truncate(max_tokens);
                train_pairs.push((
                    embed_tokens(&q_tokens, &embedder)?,
                    embed_tokens(&c_tokens, &embedder)?,
                ));
            }
            let config = TrainConfig {
                k,
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                score_mode: mode.parse::<ScoreMode>()?,
            };
            let (codebook, trace) = train_codebook(&train_pairs, dim, &config)?;
            write_codebook(&out, &codebook, seed)?;
            let loss_path = out.with_file_name(format!(
                "{}.loss",
                out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            ));
            let mut loss_text = String::new();
            for (epoch, loss) in trace.iter().enumerate() {
                loss_text.push_str(&format!("{}\t{:.6}\n", epoch + 1, loss));
            }
            std::fs::write(&loss_path, loss_text)?;
            let mut manifest = Manifest::new("train");
            manifest.set("pairs", pairs.display());
            manifest.set("corpus", corpus.display());
            manifest.set("k", k);
            manifest.set("dim", dim);
            manifest.set("seed", seed);
            manifest.set("epochs", epochs);
            manifest.set("lr", lr);
            manifest.set("batch_size", batch_size);
            manifest.set("mode", &mode);
            manifest.set("max_context_tokens", max_tokens);
            manifest.set("out", out.display());
            manifest.set("loss_trace", loss_path.display());
            manifest.set("threads", threads);
            tokenizer.record(&mut manifest);
            manifest.write_for(&out)?;
        }
        Command::Eval {
            run,
            qrels,
            ks,
            cutoff,
            out,
        } => {
            let parsed_ks: Vec<usize> = ks
                .split(',')
                .map(|s| s.trim().parse().with_context(|| format!("bad k {s:?}")))
                .collect::<Result<_>>()?;
            let report = evaluate_run(&run, &qrels, &parsed_ks, cutoff)?;
            let mut manifest = Manifest::new("eval");
            manifest.set("run", run.display());
            manifest.set("qrels", qrels.display());
            manifest.set("ks", &ks);
            manifest.set("cutoff", cutoff);
            emit(&report.to_table(), out.as_ref(), &manifest)?;
        }
    }
    Ok(())
}

fn check_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
