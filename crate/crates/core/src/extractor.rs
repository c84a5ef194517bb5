//! Links a confirmed interpretation to the corpus: query construction,
//! thresholded retrieval, and threshold calibration from labeled pairs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::{embed_one, embed_texts, EmbedError, Embedder};
use crate::interpreter::Interpretation;
use crate::vindex::{IndexError, SearchHit, VectorIndex};

pub const DEFAULT_THRESHOLD: f64 = 0.30;
pub const DEFAULT_K: usize = 8;
pub const EXCERPT_CHARS: usize = 400;
pub const THRESHOLDS_FILE: &str = "thresholds.json";

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("interpretation must be confirmed before retrieval")]
    NotConfirmed,
    #[error("interpretation has no slot values")]
    NoSlots,
    #[error("the vector index is empty; run indexing first")]
    EmptyIndex,
    #[error("chunk {0} is not in the corpus")]
    UnknownChunkId(String),
    #[error("labels need at least one relevant and one irrelevant pair (got {relevant} relevant, {irrelevant} irrelevant)")]
    DegenerateLabels { relevant: usize, irrelevant: usize },
    #[error("score {0} is not a finite number")]
    InvalidScore(f64),
    #[error("threshold {value} for {scope} is outside [-1, 1]")]
    InvalidThreshold { scope: String, value: f64 },
    #[error("labels file line {line}: {reason}")]
    BadLabel { line: usize, reason: String },
    #[error("corrupt thresholds file: {0}")]
    CorruptThresholds(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub default_threshold: f64,
    #[serde(default)]
    pub per_doc: BTreeMap<String, f64>,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self {
            default_threshold: DEFAULT_THRESHOLD,
            per_doc: BTreeMap::new(),
        }
    }
}

impl ThresholdTable {
    pub fn for_doc(&self, doc_id: &str) -> f64 {
        self.per_doc.get(doc_id).copied().unwrap_or(self.default_threshold)
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        let check = |scope: &str, value: f64| {
            if (-1.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(ExtractError::InvalidThreshold {
                    scope: scope.to_string(),
                    value,
                })
            }
        };
        check("default", self.default_threshold)?;
        for (doc, &t) in &self.per_doc {
            check(doc, t)?;
        }
        Ok(())
    }

    /// Reads `<data_dir>/thresholds.json`, or the defaults when absent.
    pub fn load(data_dir: &Path) -> Result<Self, ExtractError> {
        let path = data_dir.join(THRESHOLDS_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|source| ExtractError::Io {
            path: path.clone(),
            source,
        })?;
        let table: Self = serde_json::from_str(&text).map_err(|e| ExtractError::CorruptThresholds(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, data_dir: &Path) -> Result<(), ExtractError> {
        let path = data_dir.join(THRESHOLDS_FILE);
        let text = serde_json::to_string_pretty(self).expect("thresholds serialize");
        fs::write(&path, text + "\n").map_err(|source| ExtractError::Io { path, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFinding {
    pub chunk_id: String,
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub excerpt: String,
    pub score: f64,
    pub control_id: Option<String>,
}

/// Joins the non-empty slots as `policy subject standard`, single-spaced.
/// Text inside a slot is kept as is.
pub fn query_text_from_slots(policy: Option<&str>, subject: Option<&str>, standard: Option<&str>) -> Option<String> {
    let parts: Vec<&str> = [policy, subject, standard]
        .into_iter()
        .flatten()
        .filter(|s| !s.trim().is_empty())
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

pub fn build_query_text(interp: &Interpretation) -> Result<String, ExtractError> {
    if !interp.is_confirmed() {
        return Err(ExtractError::NotConfirmed);
    }
    query_text_from_slots(interp.policy.as_deref(), interp.subject.as_deref(), interp.standard.as_deref())
        .ok_or(ExtractError::NoSlots)
}

/// Leading section number of the deepest numbered heading, e.g. `5.1.2`.
pub fn control_id(heading_path: &[String]) -> Option<String> {
    heading_path.iter().rev().find_map(|h| {
        let h = h.trim_start();
        let end = h.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(h.len());
        let number = h[..end].trim_end_matches('.');
        let delimited = h[end..].chars().next().is_none_or(char::is_whitespace);
        (number.starts_with(|c: char| c.is_ascii_digit()) && !number.contains("..") && delimited)
            .then(|| number.to_string())
    })
}

pub fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

/// Documents the standard slot restricts retrieval to. `None` when the
/// slot is empty or names no known standard.
pub fn standard_filter(corpus: &Corpus, standard: Option<&str>) -> Option<HashSet<String>> {
    let ids = corpus.doc_ids_for_standard(standard?);
    (!ids.is_empty()).then_some(ids)
}

/// Top-`k` hits for a query before any threshold is applied.
pub fn search_candidates(
    query_text: &str,
    standard: Option<&str>,
    corpus: &Corpus,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<SearchHit>, ExtractError> {
    if index.is_empty() {
        return Err(ExtractError::EmptyIndex);
    }
    let query = embed_one(embedder, query_text)?;
    let filter = standard_filter(corpus, standard);
    Ok(index.search_topk(&query, k, filter.as_ref())?)
}

pub fn retrieve(
    interp: &Interpretation,
    corpus: &Corpus,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    thresholds: &ThresholdTable,
    k: usize,
) -> Result<Vec<PolicyFinding>, ExtractError> {
    let query = build_query_text(interp)?;
    let hits = search_candidates(&query, interp.standard.as_deref(), corpus, index, embedder, k)?;
    hits.into_iter()
        .filter(|h| h.score >= thresholds.for_doc(&h.doc_id))
        .map(|h| {
            let chunk = corpus
                .chunk(&h.chunk_id)
                .ok_or_else(|| ExtractError::UnknownChunkId(h.chunk_id.clone()))?;
            Ok(PolicyFinding {
                chunk_id: h.chunk_id,
                doc_id: h.doc_id,
                heading_path: chunk.heading_path.clone(),
                excerpt: excerpt(&chunk.text),
                score: h.score,
                control_id: control_id(&chunk.heading_path),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
}

/// F1 as the exact fraction `2tp / (2tp + fp + fn)`.
#[derive(Clone, Copy)]
struct F1 {
    num: u64,
    den: u64,
}

impl F1 {
    fn beats(self, other: F1) -> bool {
        (self.num as u128) * (other.den as u128) > (other.num as u128) * (self.den as u128)
    }

    fn ties(self, other: F1) -> bool {
        (self.num as u128) * (other.den as u128) == (other.num as u128) * (self.den as u128)
    }

    fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

/// Picks the threshold maximizing F1 of `score >= t` against the labels,
/// over the distinct observed scores. Ties go to the smallest threshold.
pub fn calibrate_threshold(labeled: &[(f64, bool)]) -> Result<Calibration, ExtractError> {
    if let Some(&(s, _)) = labeled.iter().find(|(s, _)| !s.is_finite()) {
        return Err(ExtractError::InvalidScore(s));
    }
    let relevant = labeled.iter().filter(|(_, r)| *r).count();
    let irrelevant = labeled.len() - relevant;
    if relevant == 0 || irrelevant == 0 {
        return Err(ExtractError::DegenerateLabels { relevant, irrelevant });
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<(f64, F1)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fn_ = relevant as u64 - tp;
        let f1 = F1 {
            num: 2 * tp,
            den: 2 * tp + fp + fn_,
        };
        // Walking downward, so a tie means a smaller threshold.
        if best.is_none_or(|(_, b)| f1.beats(b) || f1.ties(b)) {
            best = Some((t, f1));
        }
    }
    let (threshold, f1) = best.expect("at least one candidate");
    Ok(Calibration {
        threshold,
        f1: f1.value(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: String,
    pub chunk_id: String,
    pub relevant: bool,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledPair>, ExtractError> {
    let file = fs::File::open(path).map_err(|source| ExtractError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ExtractError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| ExtractError::BadLabel {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocCalibration {
    pub doc_id: String,
    pub n_pairs: usize,
    pub threshold: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub calibrated: Vec<DocCalibration>,
    /// Documents whose labels were all relevant or all irrelevant.
    pub skipped: Vec<String>,
    pub thresholds: ThresholdTable,
}

/// Scores each labeled pair with the active embedder and fits one
/// threshold per document. Documents with one-sided labels keep their
/// previous threshold.
pub fn calibrate_from_labels(
    labels: &[LabeledPair],
    corpus: &Corpus,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    base: &ThresholdTable,
) -> Result<CalibrationReport, ExtractError> {
    let queries: Vec<&str> = labels.iter().map(|l| l.query.as_str()).collect();
    let vectors = embed_texts(embedder, &queries)?;
    let mut by_doc: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    for (label, query) in labels.iter().zip(&vectors) {
        let chunk = corpus
            .chunk(&label.chunk_id)
            .ok_or_else(|| ExtractError::UnknownChunkId(label.chunk_id.clone()))?;
        let target = index
            .vector(&label.chunk_id)
            .ok_or_else(|| ExtractError::UnknownChunkId(label.chunk_id.clone()))?;
        by_doc
            .entry(chunk.doc_id.clone())
            .or_default()
            .push((query.dot(&target), label.relevant));
    }
    let mut thresholds = base.clone();
    let mut calibrated = Vec::new();
    let mut skipped = Vec::new();
    for (doc_id, pairs) in by_doc {
        match calibrate_threshold(&pairs) {
            Ok(c) => {
                thresholds.per_doc.insert(doc_id.clone(), c.threshold);
                calibrated.push(DocCalibration {
                    doc_id,
                    n_pairs: pairs.len(),
                    threshold: c.threshold,
                    f1: c.f1,
                });
            }
            Err(ExtractError::DegenerateLabels { .. }) => skipped.push(doc_id),
            Err(e) => return Err(e),
        }
    }
    Ok(CalibrationReport {
        calibrated,
        skipped,
        thresholds,
    })
}
