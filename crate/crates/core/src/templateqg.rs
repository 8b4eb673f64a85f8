//! Template-based question generation.
//!
//! Questions become templates by replacing lexicon entities with typed
//! slots; a template is selected for a new passage by TF-IDF cosine
//! similarity against the template's source-question terms; slots are
//! filled with the passage's own entities in passage order. All three
//! stages are deterministic substitutes for learned models and can be
//! swapped out behind the same contracts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tfidf_weight, tokenize, CorpusStats, Document, TokenizerConfig};
use crate::error::{Error, Result};
use crate::pretraingen::{PretrainPair, Task};

/// Surface form -> entity type label, matched case-insensitively.
#[derive(Debug, Clone, Default)]
pub struct EntityLexicon {
    /// Lowercased surface -> type label.
    entries: BTreeMap<String, String>,
}

impl EntityLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, entity_type: &str) {
        assert!(!surface.is_empty());
        self.entries
            .insert(surface.to_lowercase(), entity_type.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load "surface<TAB>TYPE" lines.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut lex = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (surface, entity_type) = line.split_once('\t').ok_or_else(|| Error::ParseLine {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected surface<TAB>TYPE".into(),
            })?;
            if surface.is_empty() || entity_type.is_empty() {
                return Err(Error::ParseLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "empty surface or type".into(),
                });
            }
            lex.insert(surface, entity_type.trim());
        }
        Ok(lex)
    }

    /// Longest-match left-to-right entity scan over raw text. Matches
    /// only at word boundaries; returns entities in text order with
    /// their byte spans.
    pub fn find_entities(&self, text: &str) -> Vec<EntityMatch> {
        let indexed: Vec<(usize, char)> = text.char_indices().collect();
        let chars: Vec<char> = indexed.iter().map(|&(_, c)| c).collect();
        let surfaces: Vec<(Vec<char>, &str, &str)> = {
            let mut s: Vec<_> = self
                .entries
                .iter()
                .map(|(surf, ty)| (surf.chars().collect::<Vec<char>>(), surf.as_str(), ty.as_str()))
                .collect();
            s.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(b.1)));
            s
        };
        let lower = |c: char| c.to_lowercase().next().unwrap_or(c);
        let mut found = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let at_word_start =
                chars[i].is_alphanumeric() && (i == 0 || !chars[i - 1].is_alphanumeric());
            if at_word_start {
                let mut matched = None;
                for (surf_chars, _, ty) in &surfaces {
                    let end = i + surf_chars.len();
                    if end > chars.len() {
                        continue;
                    }
                    let hit = chars[i..end]
                        .iter()
                        .zip(surf_chars)
                        .all(|(&a, &b)| lower(a) == b);
                    let boundary = end == chars.len() || !chars[end].is_alphanumeric();
                    if hit && boundary {
                        matched = Some((end, ty));
                        break;
                    }
                }
                if let Some((end, ty)) = matched {
                    let byte_start = indexed[i].0;
                    let byte_end = if end == chars.len() {
                        text.len()
                    } else {
                        indexed[end].0
                    };
                    found.push(EntityMatch {
                        start: byte_start,
                        end: byte_end,
                        surface: chars[i..end].iter().collect(),
                        entity_type: ty.to_string(),
                    });
                    i = end;
                    continue;
                }
            }
            i += 1;
        }
        found
    }
}

/// An entity occurrence in a text, with its byte span.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMatch {
    pub start: usize,
    pub end: usize,
    /// Surface form exactly as written in the text.
    pub surface: String,
    pub entity_type: String,
}

/// A question pattern with typed slots such as "[DISEASE]".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub pattern: String,
    pub slot_types: Vec<String>,
    pub source_question_id: String,
    /// Token multiset of the originating question.
    pub source_terms: Vec<String>,
}

/// A filled template.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuestion {
    pub text: String,
    pub template_id: String,
    pub fillers: Vec<String>,
}

/// Replace lexicon entities in `question` with their type slots.
/// Questions containing no entity yield no template.
pub fn extract_template(
    question_id: &str,
    question: &str,
    lexicon: &EntityLexicon,
    config: &TokenizerConfig,
) -> Result<Template> {
    let entities = lexicon.find_entities(question);
    if entities.is_empty() {
        return Err(Error::NoTemplate);
    }
    let mut pattern = String::new();
    let mut cursor = 0;
    let mut slot_types = Vec::new();
    for entity in &entities {
        pattern.push_str(&question[cursor..entity.start]);
        pattern.push('[');
        pattern.push_str(&entity.entity_type);
        pattern.push(']');
        cursor = entity.end;
        slot_types.push(entity.entity_type.clone());
    }
    pattern.push_str(&question[cursor..]);
    Ok(Template {
        pattern,
        slot_types,
        source_question_id: question_id.to_string(),
        source_terms: tokenize(question, config),
    })
}

fn tfidf_vector(terms: &[String], stats: &CorpusStats) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in terms {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(t, tf)| (t.to_string(), tfidf_weight(t, tf, stats)))
        .collect()
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(t, &x)| b.get(t).map(|&y| x * y))
        .sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn required_counts(template: &Template) -> BTreeMap<&str, usize> {
    let mut req: BTreeMap<&str, usize> = BTreeMap::new();
    for ty in &template.slot_types {
        *req.entry(ty).or_insert(0) += 1;
    }
    req
}

fn passage_satisfies(template: &Template, entities: &[EntityMatch]) -> bool {
    let mut have: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for e in entities {
        have.entry(e.entity_type.as_str())
            .or_default()
            .insert(e.surface.to_lowercase());
    }
    required_counts(template)
        .iter()
        .all(|(ty, &need)| have.get(*ty).is_some_and(|s| s.len() >= need))
}

/// Pick the bank template whose source-question TF-IDF vector is most
/// cosine-similar to the passage body, among templates whose slots the
/// passage can fill. Ties break on the lowest source question id.
pub fn select_template<'a>(
    passage: &Document,
    bank: &'a [Template],
    stats: &CorpusStats,
    lexicon: &EntityLexicon,
    config: &TokenizerConfig,
) -> Result<&'a Template> {
    let passage_vec = tfidf_vector(&tokenize(&passage.body, config), stats);
    let entities = lexicon.find_entities(&passage.body);
    let mut best: Option<(&Template, f64)> = None;
    for template in bank {
        if !passage_satisfies(template, &entities) {
            continue;
        }
        let sim = cosine(&passage_vec, &tfidf_vector(&template.source_terms, stats));
        let better = match best {
            None => true,
            Some((cur, cur_sim)) => {
                sim > cur_sim
                    || (sim == cur_sim
                        && template.source_question_id < cur.source_question_id)
            }
        };
        if better {
            best = Some((template, sim));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::NoCandidateTemplate(passage.doc_id.clone()))
}

/// Fill each slot with the first unused passage entity of the matching
/// type, in passage order.
pub fn generate_question(
    template: &Template,
    passage: &Document,
    lexicon: &EntityLexicon,
) -> Result<GeneratedQuestion> {
    let entities = lexicon.find_entities(&passage.body);
    let mut used: BTreeSet<(String, String)> = BTreeSet::new();
    let mut fillers = Vec::with_capacity(template.slot_types.len());
    for ty in &template.slot_types {
        let filler = entities
            .iter()
            .find(|e| {
                &e.entity_type == ty && !used.contains(&(ty.clone(), e.surface.to_lowercase()))
            })
            .ok_or_else(|| Error::UnsatisfiableSlot(ty.clone()))?;
        used.insert((ty.clone(), filler.surface.to_lowercase()));
        fillers.push(filler.surface.clone());
    }
    // Substitute slots left to right.
    let mut text = String::new();
    let mut rest = template.pattern.as_str();
    for (ty, filler) in template.slot_types.iter().zip(&fillers) {
        let slot = format!("[{ty}]");
        let pos = rest
            .find(&slot)
            .ok_or_else(|| Error::InvalidParam(format!("pattern missing slot {slot}")))?;
        text.push_str(&rest[..pos]);
        text.push_str(filler);
        rest = &rest[pos + slot.len()..];
    }
    text.push_str(rest);
    Ok(GeneratedQuestion {
        text,
        template_id: template.source_question_id.clone(),
        fillers,
    })
}

/// One generated question per document with a satisfiable template;
/// documents with none are skipped. Output order follows the corpus.
pub fn gen_qa_pairs(
    documents: &[Document],
    bank: &[Template],
    lexicon: &EntityLexicon,
    stats: &CorpusStats,
    config: &TokenizerConfig,
) -> Result<Vec<PretrainPair>> {
    if bank.is_empty() || lexicon.is_empty() {
        return Err(Error::InvalidParam(
            "template bank and lexicon must be non-empty".into(),
        ));
    }
    let mut pairs = Vec::new();
    for doc in documents {
        let template = match select_template(doc, bank, stats, lexicon, config) {
            Ok(t) => t,
            Err(Error::NoCandidateTemplate(_)) => continue,
            Err(e) => return Err(e),
        };
        match generate_question(template, doc, lexicon) {
            Ok(q) => pairs.push(PretrainPair {
                query: q.text,
                positive_id: doc.doc_id.clone(),
                task: Task::Tqg,
            }),
            Err(Error::UnsatisfiableSlot(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(pairs)
}

/// Template bank persistence: one JSON record per line.
pub fn write_templates<P: AsRef<Path>>(path: P, bank: &[Template]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in bank {
        serde_json::to_writer(&mut w, t)
            .map_err(|e| Error::InvalidParam(format!("serialize template: {e}")))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_templates<P: AsRef<Path>>(path: P) -> Result<Vec<Template>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut bank = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        bank.push(t);
    }
    Ok(bank)
}
