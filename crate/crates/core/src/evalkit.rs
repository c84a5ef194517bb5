//! Evaluation dataset construction (templates, expansion, paraphrase
//! augmentation) and metrics for slot extraction and retrieval.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::Embedder;
use crate::extractor::{query_text_from_slots, search_candidates, ExtractError};
use crate::interpreter::{interpret, InterpretError, Slot, SlotPromptSet};
use crate::llm::{ChatGateway, CompletionRequest, LlmError, ScriptedMock};
use crate::vindex::VectorIndex;

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("placeholder regex"));

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("template {template_id}: placeholder {{{placeholder}}} has no domain")]
    UnboundPlaceholder { template_id: String, placeholder: String },
    #[error("case {0} is not a base case")]
    NotBaseCase(String),
    #[error("paraphrase count must be positive")]
    ZeroParaphrases,
    #[error("paraphrases of {case_id} are not distinct: {duplicates:?}")]
    DuplicateParaphrase { case_id: String, duplicates: Vec<String> },
    #[error("malformed paraphrase response: {0}")]
    MalformedParaphrases(String),
    #[error("no evaluation cases")]
    EmptyDataset,
    #[error("gold chunk {0} is not in the corpus")]
    UnknownChunkId(String),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("{path} line {line}: {reason}")]
    BadRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSlots {
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub standard: Option<String>,
    #[serde(default)]
    pub subject: Option<String>,
}

impl GoldSlots {
    pub fn get(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::Policy => self.policy.as_deref(),
            Slot::Standard => self.standard.as_deref(),
            Slot::Subject => self.subject.as_deref(),
        }
    }

    fn map(&self, f: impl Fn(&str) -> String) -> Self {
        Self {
            policy: self.policy.as_deref().map(&f),
            standard: self.standard.as_deref().map(&f),
            subject: self.subject.as_deref().map(&f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub template_id: String,
    pub text: String,
    #[serde(default)]
    pub placeholder_domains: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub gold_slots: GoldSlots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseOrigin {
    Base,
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub question: String,
    pub gold: GoldSlots,
    pub origin: CaseOrigin,
    #[serde(default)]
    pub parent_id: Option<String>,
    /// Chunk expected among the top-k results, for retrieval evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chunk_id: Option<String>,
}

/// Placeholder names in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    PLACEHOLDER
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|name| seen.insert(name.clone()))
        .collect()
}

fn substitute(text: &str, binding: &BTreeMap<&str, &str>) -> String {
    PLACEHOLDER
        .replace_all(text, |c: &regex::Captures| {
            binding.get(&c[1]).map_or_else(|| c[0].to_string(), |v| v.to_string())
        })
        .into_owned()
}

/// Expands every template over the Cartesian product of its placeholder
/// domains. The first placeholder varies slowest. Case ids are
/// `<template_id>-<n>` counting from 1.
pub fn expand_templates(templates: &[QuestionTemplate]) -> Result<Vec<EvalCase>, EvalError> {
    let mut cases = Vec::new();
    for t in templates {
        let names = placeholders(&t.text);
        let unbound = |name: &str| EvalError::UnboundPlaceholder {
            template_id: t.template_id.clone(),
            placeholder: name.to_string(),
        };
        let mut domains = Vec::with_capacity(names.len());
        for name in &names {
            domains.push(t.placeholder_domains.get(name).ok_or_else(|| unbound(name))?);
        }
        for slot in Slot::ALL {
            if let Some(gold) = t.gold_slots.get(slot) {
                if let Some(name) = placeholders(gold).into_iter().find(|n| !names.contains(n)) {
                    return Err(unbound(&name));
                }
            }
        }
        if domains.iter().any(|d| d.is_empty()) {
            continue;
        }
        let mut counters = vec![0usize; names.len()];
        let mut n = 0;
        loop {
            let binding: BTreeMap<&str, &str> = names
                .iter()
                .zip(&counters)
                .zip(&domains)
                .map(|((name, &i), domain)| (name.as_str(), domain[i].as_str()))
                .collect();
            n += 1;
            cases.push(EvalCase {
                case_id: format!("{}-{n}", t.template_id),
                question: substitute(&t.text, &binding),
                gold: t.gold_slots.map(|g| substitute(g, &binding)),
                origin: CaseOrigin::Base,
                parent_id: None,
                gold_chunk_id: None,
            });
            // Odometer increment, last placeholder fastest.
            let mut pos = names.len();
            let exhausted = loop {
                if pos == 0 {
                    break true;
                }
                pos -= 1;
                counters[pos] += 1;
                if counters[pos] < domains[pos].len() {
                    break false;
                }
                counters[pos] = 0;
            };
            if exhausted {
                break;
            }
        }
    }
    Ok(cases)
}

pub trait Paraphraser {
    /// Returns `n` rewrites of `question`.
    fn paraphrase(&self, question: &str, n: usize) -> Result<Vec<String>, EvalError>;
}

fn lowercase_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The five fixed surface rewrites used by [`MockParaphraser`].
pub fn mock_transform(index: usize, text: &str) -> String {
    match index % 5 {
        0 => format!("Could you tell me: {}", lowercase_first(text)),
        1 => format!("{text} Please advise."),
        2 => match text.strip_prefix("Is ") {
            Some(rest) => format!("Would you say {rest}"),
            None => text.to_string(),
        },
        3 => text.replace("compliant with", "in compliance with"),
        _ => format!("Regarding our deployment — {text}"),
    }
}

/// Deterministic paraphraser. Pass `c` (from 0) applies transform `j`
/// `c + 1` times to the question, for `j` in 1..=5. Results equal to the
/// question or to an earlier result are skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockParaphraser;

impl Paraphraser for MockParaphraser {
    fn paraphrase(&self, question: &str, n: usize) -> Result<Vec<String>, EvalError> {
        let mut out: Vec<String> = Vec::with_capacity(n);
        let mut seen: HashSet<String> = HashSet::from([question.to_string()]);
        let mut current: Vec<String> = vec![question.to_string(); 5];
        for _pass in 0..=n {
            for (j, text) in current.iter_mut().enumerate() {
                *text = mock_transform(j, text);
                if out.len() < n && seen.insert(text.clone()) {
                    out.push(text.clone());
                }
            }
            if out.len() == n {
                break;
            }
        }
        Ok(out)
    }
}

/// Paraphrases through a chat model that answers with a JSON array.
pub struct LlmParaphraser<'a> {
    pub gateway: &'a dyn ChatGateway,
}

impl Paraphraser for LlmParaphraser<'_> {
    fn paraphrase(&self, question: &str, n: usize) -> Result<Vec<String>, EvalError> {
        let mut request = CompletionRequest::deterministic(
            format!(
                "You rewrite network-security compliance questions. Keep every device, policy and standard name unchanged. \
                 Answer ONLY with a JSON array of {n} distinct paraphrases."
            ),
            question,
        );
        request.temperature = 0.7;
        request.max_tokens = 64 * n.max(1) as u32;
        let raw = self.gateway.complete(&request)?;
        crate::tagger::parse_tag_response(&raw).ok_or_else(|| EvalError::MalformedParaphrases(crate::http::truncate(&raw, 120)))
    }
}

/// Adds `n` paraphrase cases with the parent's gold slots.
pub fn augment(case: &EvalCase, n: usize, paraphraser: &dyn Paraphraser) -> Result<Vec<EvalCase>, EvalError> {
    if case.origin != CaseOrigin::Base {
        return Err(EvalError::NotBaseCase(case.case_id.clone()));
    }
    if n == 0 {
        return Err(EvalError::ZeroParaphrases);
    }
    let texts = paraphraser.paraphrase(&case.question, n)?;
    let mut seen = HashSet::from([case.question.trim().to_string()]);
    let mut distinct = Vec::new();
    let mut duplicates = Vec::new();
    for text in texts {
        let text = text.trim().to_string();
        if seen.insert(text.clone()) {
            distinct.push(text);
        } else {
            duplicates.push(text);
        }
    }
    if distinct.len() < n {
        return Err(EvalError::DuplicateParaphrase {
            case_id: case.case_id.clone(),
            duplicates,
        });
    }
    Ok(distinct
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, question)| EvalCase {
            case_id: format!("{}-p{}", case.case_id, i + 1),
            question,
            gold: case.gold.clone(),
            origin: CaseOrigin::Paraphrase,
            parent_id: Some(case.case_id.clone()),
            gold_chunk_id: case.gold_chunk_id.clone(),
        })
        .collect())
}

/// Expands templates and follows each base case with its paraphrases.
pub fn build_dataset(
    templates: &[QuestionTemplate],
    n_paraphrases: usize,
    paraphraser: &dyn Paraphraser,
) -> Result<Vec<EvalCase>, EvalError> {
    let mut out = Vec::new();
    for base in expand_templates(templates)? {
        let extra = if n_paraphrases > 0 {
            augment(&base, n_paraphrases, paraphraser)?
        } else {
            Vec::new()
        };
        out.push(base);
        out.extend(extra);
    }
    Ok(out)
}

/// A scripted mock answering every slot prompt of every case with its gold
/// value.
pub fn gold_mock(cases: &[EvalCase], prompts: &SlotPromptSet) -> ScriptedMock {
    let mut mock = ScriptedMock::default();
    for case in cases {
        for slot in Slot::ALL {
            let prompt = prompts.render(slot, case.question.trim());
            let value = serde_json::json!({ "value": case.gold.get(slot) });
            mock.push(prompt, value.to_string());
        }
    }
    mock
}

/// Trim, lowercase, single spaces.
pub fn normalize_slot(value: &str) -> String {
    value
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn slot_matches(predicted: Option<&str>, gold: Option<&str>) -> bool {
    let norm = |v: Option<&str>| v.map(normalize_slot).filter(|s| !s.is_empty());
    norm(predicted) == norm(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAccuracy {
    pub policy: f64,
    pub standard: f64,
    pub subject: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub slot_accuracy: Option<SlotAccuracy>,
    pub overall_accuracy: Option<f64>,
    pub retrieval_hit_at_k: Option<f64>,
    pub k: Option<usize>,
}

impl MetricsReport {
    /// Combines a slot report and a retrieval report over the same cases.
    pub fn merge(self, retrieval: MetricsReport) -> MetricsReport {
        MetricsReport {
            retrieval_hit_at_k: retrieval.retrieval_hit_at_k,
            k: retrieval.k,
            ..self
        }
    }
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

pub fn evaluate_slots(
    cases: &[EvalCase],
    prompts: &SlotPromptSet,
    gateway: &dyn ChatGateway,
) -> Result<MetricsReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut per_slot = [0usize; 3];
    let mut all = 0;
    for case in cases {
        let interp = interpret(&case.question, prompts, gateway)?;
        let ok: Vec<bool> = Slot::ALL
            .iter()
            .map(|&s| slot_matches(interp.slot(s), case.gold.get(s)))
            .collect();
        for (count, hit) in per_slot.iter_mut().zip(&ok) {
            *count += usize::from(*hit);
        }
        if ok.iter().all(|&h| h) {
            all += 1;
        } else {
            tracing::debug!(case_id = %case.case_id, "slot mismatch");
        }
    }
    let n = cases.len();
    Ok(MetricsReport {
        n_cases: n,
        slot_accuracy: Some(SlotAccuracy {
            policy: fraction(per_slot[0], n),
            standard: fraction(per_slot[1], n),
            subject: fraction(per_slot[2], n),
        }),
        overall_accuracy: Some(fraction(all, n)),
        retrieval_hit_at_k: None,
        k: None,
    })
}

/// Fraction of cases whose gold chunk is among the top-`k` pre-threshold
/// hits. The query is built from the gold slots, or the question when no
/// slot is set.
pub fn evaluate_retrieval(
    cases: &[(EvalCase, String)],
    corpus: &Corpus,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<MetricsReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if let Some((_, missing)) = cases.iter().find(|(_, id)| corpus.chunk(id).is_none()) {
        return Err(EvalError::UnknownChunkId(missing.clone()));
    }
    let mut hits = 0;
    for (case, gold_chunk) in cases {
        let g = &case.gold;
        let query = query_text_from_slots(g.policy.as_deref(), g.subject.as_deref(), g.standard.as_deref())
            .unwrap_or_else(|| case.question.clone());
        let found = search_candidates(&query, g.standard.as_deref(), corpus, index, embedder, k)?;
        if found.iter().any(|h| &h.chunk_id == gold_chunk) {
            hits += 1;
        }
    }
    Ok(MetricsReport {
        n_cases: cases.len(),
        slot_accuracy: None,
        overall_accuracy: None,
        retrieval_hit_at_k: Some(fraction(hits, cases.len())),
        k: Some(k),
    })
}

pub fn read_templates(path: &Path) -> Result<Vec<QuestionTemplate>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EvalError::BadRecord {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, cases: &[EvalCase]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for case in cases {
        serde_json::to_writer(&mut out, case).expect("case serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}
