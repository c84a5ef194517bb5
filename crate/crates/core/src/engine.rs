//! The assembled pipeline over a data directory, shared by the HTTP server
//! and the command-line tool.
//!
//! ```text
//! <data_dir>/manifest.json, chunks.jsonl, docs/   corpus
//! <data_dir>/index.avix                           vector index
//! <data_dir>/thresholds.json                      similarity thresholds
//! <data_dir>/tags.json                            tag schema (optional)
//! <data_dir>/prompts.json                         slot prompts (optional)
//! <data_dir>/subjects.json                        subject lexicon (optional)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::composer::{compose, AnswerBundle, ComposeError};
use crate::corpus::{Corpus, CorpusError, CorpusManifest, DocFormat};
use crate::embed::{build_embedder, embed_texts, EmbedError, EmbedProviderConfig, Embedder, ProviderKind};
use crate::evalkit::{evaluate_retrieval, evaluate_slots, EvalCase, EvalError, MetricsReport};
use crate::extractor::{
    calibrate_from_labels, retrieve, CalibrationReport, ExtractError, LabeledPair, ThresholdTable, DEFAULT_K,
};
use crate::interpreter::{gazetteer_extract, interpret, Interpretation, InterpretError, PromptError, SlotPromptSet};
use crate::llm::{build_gateway, ChatGateway, LlmError, LlmProviderConfig, ScriptedMock};
use crate::splitter::{self, LengthHistogram, SplitError, SplitterConfig};
use crate::tagger::{tag_chunk, SchemaError, TagMode, TagResult, TagSchema};
use crate::vindex::{IndexError, VectorIndex};

pub const INDEX_FILE: &str = "index.avix";
pub const TAGS_FILE: &str = "tags.json";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const SUBJECTS_FILE: &str = "subjects.json";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("empty corpus: ingest documents first")]
    EmptyCorpus,
    #[error("no vector index: run indexing first")]
    NoIndex,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl EngineError {
    /// True when a model provider could not be reached or refused the call.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            EngineError::Embed(e) | EngineError::Extract(ExtractError::Embed(e)) => matches!(
                e,
                EmbedError::ProviderUnreachable(_) | EmbedError::ProviderRejected { .. }
            ),
            EngineError::Llm(e) | EngineError::Interpret(InterpretError::Provider(e)) => matches!(
                e,
                LlmError::ProviderUnreachable(_) | LlmError::ProviderRejected { .. }
            ),
            EngineError::Eval(EvalError::Provider(e) | EvalError::Interpret(InterpretError::Provider(e))) => {
                matches!(e, LlmError::ProviderUnreachable(_) | LlmError::ProviderRejected { .. })
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub splitter: SplitterConfig,
    pub embed: EmbedProviderConfig,
    pub llm: LlmProviderConfig,
    pub mock_script: Option<PathBuf>,
    pub k: usize,
    pub tag_mode: TagMode,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            splitter: SplitterConfig::default(),
            embed: EmbedProviderConfig::default(),
            llm: LlmProviderConfig::default(),
            mock_script: None,
            k: DEFAULT_K,
            tag_mode: TagMode::Paragraph,
        }
    }

    /// Reads provider settings from `AUDITNET_*` variables through `var`.
    ///
    /// `AUDITNET_PROVIDER` sets both providers; `AUDITNET_LLM_PROVIDER` and
    /// `AUDITNET_EMBED_PROVIDER` override it per provider.
    pub fn from_vars(data_dir: impl Into<PathBuf>, var: impl Fn(&str) -> Option<String>) -> Result<Self, EngineError> {
        let mut config = Self::new(data_dir);
        let kind = |name: &str| -> Result<Option<ProviderKind>, EngineError> {
            var(name)
                .filter(|v| !v.trim().is_empty())
                .map(|v| v.parse().map_err(|e: String| EngineError::InvalidConfig(format!("{name}: {e}"))))
                .transpose()
        };
        let both = kind("AUDITNET_PROVIDER")?;
        if let Some(k) = kind("AUDITNET_LLM_PROVIDER")?.or(both) {
            config.llm.kind = k;
        }
        if let Some(k) = kind("AUDITNET_EMBED_PROVIDER")?.or(both) {
            config.embed.kind = k;
        }
        config.llm.endpoint_url = var("AUDITNET_LLM_URL");
        config.embed.endpoint_url = var("AUDITNET_EMBED_URL");
        let key = var("AUDITNET_API_KEY");
        config.llm.api_key = key.clone();
        config.embed.api_key = key;
        if let Some(m) = var("AUDITNET_LLM_MODEL") {
            config.llm.model_name = m;
        }
        if let Some(m) = var("AUDITNET_EMBED_MODEL") {
            config.embed.model_name = m;
        }
        if let Some(d) = var("AUDITNET_EMBED_DIM") {
            config.embed.dim = d
                .parse()
                .map_err(|_| EngineError::InvalidConfig(format!("AUDITNET_EMBED_DIM: not a number: {d:?}")))?;
        }
        config.mock_script = var("AUDITNET_MOCK_SCRIPT").map(PathBuf::from);
        Ok(config)
    }

    pub fn from_env(data_dir: impl Into<PathBuf>) -> Result<Self, EngineError> {
        Self::from_vars(data_dir, |k| std::env::var(k).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestOutcome {
    pub doc_id: String,
    pub created: bool,
    pub n_sections: usize,
    pub n_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RebuildOutcome {
    pub chunks_indexed: usize,
    pub chunk_limit_per_doc: BTreeMap<String, usize>,
}

/// Where an interpretation came from when the model could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpreted {
    pub interpretation: Interpretation,
    /// Set when the model failed and the gazetteer answered instead.
    pub degraded_reason: Option<String>,
}

pub struct Engine {
    config: EngineConfig,
    corpus: Corpus,
    index: Option<VectorIndex>,
    thresholds: ThresholdTable,
    schema: TagSchema,
    prompts: SlotPromptSet,
    subjects: Vec<String>,
    embedder: Arc<dyn Embedder>,
    gateway: Arc<dyn ChatGateway>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, EngineError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::InvalidConfig(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| EngineError::InvalidConfig(format!("{}: {e}", path.display())))
}

impl Engine {
    /// Opens the data directory with providers built from the config.
    pub fn open(config: EngineConfig) -> Result<Self, EngineError> {
        let embedder = build_embedder(&config.embed)?;
        let script = match (&config.mock_script, config.llm.kind) {
            (Some(path), ProviderKind::Mock) => Some(ScriptedMock::from_json_file(path)?),
            _ => None,
        };
        let gateway = build_gateway(&config.llm, script)?;
        Self::with_providers(config, embedder, gateway)
    }

    pub fn with_providers(
        config: EngineConfig,
        embedder: Arc<dyn Embedder>,
        gateway: Arc<dyn ChatGateway>,
    ) -> Result<Self, EngineError> {
        config.splitter.validate()?;
        let dir = &config.data_dir;
        let corpus = Corpus::load(dir, &config.splitter)?;
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() {
            Some(VectorIndex::load(&index_path)?)
        } else {
            None
        };
        let thresholds = ThresholdTable::load(dir)?;
        let schema_path = dir.join(TAGS_FILE);
        let schema = if schema_path.exists() {
            TagSchema::from_json_file(&schema_path)?
        } else {
            TagSchema::default_schema()
        };
        let prompts_path = dir.join(PROMPTS_FILE);
        let prompts = if prompts_path.exists() {
            SlotPromptSet::from_json_file(&prompts_path)?
        } else {
            SlotPromptSet::default()
        };
        let subjects: Vec<String> = read_json(&dir.join(SUBJECTS_FILE))?.unwrap_or_default();
        let mut engine = Self {
            config,
            corpus,
            index,
            thresholds,
            schema,
            prompts,
            subjects,
            embedder,
            gateway,
        };
        engine.drop_stale_index();
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_tag_mode(&mut self, mode: TagMode) {
        self.config.tag_mode = mode;
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> Option<&VectorIndex> {
        self.index.as_ref()
    }

    pub fn manifest(&self) -> CorpusManifest {
        self.corpus.manifest()
    }

    pub fn thresholds(&self) -> &ThresholdTable {
        &self.thresholds
    }

    pub fn prompts(&self) -> &SlotPromptSet {
        &self.prompts
    }

    pub fn gateway(&self) -> &dyn ChatGateway {
        self.gateway.as_ref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// `"mock"` or `"remote"`, or `llm=<kind>,embed=<kind>` when they differ.
    pub fn provider_mode(&self) -> String {
        let (llm, embed) = (self.gateway.kind(), self.embedder.kind());
        if llm == embed {
            llm.to_string()
        } else {
            format!("llm={llm},embed={embed}")
        }
    }

    fn drop_stale_index(&mut self) {
        let stale = self
            .index
            .as_ref()
            .is_some_and(|idx| idx.records().any(|(chunk_id, _)| self.corpus.chunk(chunk_id).is_none()));
        if stale {
            tracing::warn!("vector index does not match the corpus; rebuild it");
            self.index = None;
        }
    }

    /// Registers a document, re-chunks the corpus and saves it. The index
    /// is not rebuilt.
    pub fn ingest(&mut self, title: &str, standard: &str, format: DocFormat, content: &str) -> Result<IngestOutcome, EngineError> {
        let reg = self.corpus.register_document(title, standard, format, content)?;
        self.corpus.rechunk(&self.config.splitter)?;
        self.corpus.save(&self.config.data_dir)?;
        self.drop_stale_index();
        Ok(IngestOutcome {
            n_sections: self.corpus.sections(&reg.doc_id).len(),
            n_chunks: self.corpus.chunks_of(&reg.doc_id).count(),
            doc_id: reg.doc_id,
            created: reg.created,
        })
    }

    /// Embeds every chunk and writes a fresh index.
    pub fn rebuild_index(&mut self) -> Result<RebuildOutcome, EngineError> {
        if self.corpus.is_empty() {
            return Err(EngineError::EmptyCorpus);
        }
        self.corpus.rechunk(&self.config.splitter)?;
        self.corpus.save(&self.config.data_dir)?;
        let chunks = self.corpus.chunks();
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let vectors = embed_texts(self.embedder.as_ref(), &texts)?;
        let dim = vectors.first().map_or(self.config.embed.dim, |v| v.dim());
        let mut index = VectorIndex::new(dim);
        for (chunk, vector) in chunks.iter().zip(&vectors) {
            index.add(&chunk.chunk_id, &chunk.doc_id, vector)?;
        }
        index.save(&self.config.data_dir.join(INDEX_FILE))?;
        let outcome = RebuildOutcome {
            chunks_indexed: index.len(),
            chunk_limit_per_doc: self.corpus.chunk_limits().clone(),
        };
        self.index = Some(index);
        Ok(outcome)
    }

    pub fn interpret(&self, query: &str) -> Result<Interpretation, EngineError> {
        Ok(interpret(query, &self.prompts, self.gateway.as_ref())?)
    }

    pub fn gazetteer(&self, query: &str) -> Interpretation {
        gazetteer_extract(query, &self.corpus.manifest().standard_names, &self.subjects)
    }

    /// Interprets with the model, falling back to the gazetteer when the
    /// model call fails for any reason.
    pub fn interpret_with_fallback(&self, query: &str) -> Result<Interpreted, EngineError> {
        if query.trim().is_empty() {
            return Err(InterpretError::EmptyQuery.into());
        }
        match self.interpret(query) {
            Ok(interpretation) => Ok(Interpreted {
                interpretation,
                degraded_reason: None,
            }),
            Err(e) => {
                tracing::warn!(error = %e, "model interpretation failed, using gazetteer");
                Ok(Interpreted {
                    interpretation: self.gazetteer(query),
                    degraded_reason: Some(e.to_string()),
                })
            }
        }
    }

    /// Tags each finding's chunk. After the first provider failure the
    /// remaining chunks are left untagged instead of waiting on retries.
    fn tag_findings(&self, chunk_ids: &[&str]) -> Vec<TagResult> {
        let mode = self.config.tag_mode;
        let mut provider_down = false;
        chunk_ids
            .iter()
            .map(|id| {
                let chunk = match self.corpus.chunk(id) {
                    Some(c) if !provider_down => c,
                    _ => return TagResult::empty(id, mode),
                };
                match tag_chunk(chunk, &self.schema, mode, self.gateway.as_ref()) {
                    Ok(r) => r,
                    Err(e) => {
                        tracing::warn!(chunk_id = id, error = %e, "tagging failed, continuing without tags");
                        provider_down = matches!(e, LlmError::ProviderUnreachable(_));
                        TagResult::empty(id, mode)
                    }
                }
            })
            .collect()
    }

    /// Retrieves, tags and composes the answer for a confirmed
    /// interpretation.
    pub fn answer(&self, interp: &Interpretation, created_at: DateTime<Utc>) -> Result<AnswerBundle, EngineError> {
        if !interp.is_confirmed() {
            return Err(ExtractError::NotConfirmed.into());
        }
        let index = self.index.as_ref().ok_or(EngineError::NoIndex)?;
        let findings = retrieve(
            interp,
            &self.corpus,
            index,
            self.embedder.as_ref(),
            &self.thresholds,
            self.config.k,
        )?;
        let ids: Vec<&str> = findings.iter().map(|f| f.chunk_id.as_str()).collect();
        let tags = self.tag_findings(&ids);
        let titles: HashMap<String, String> = self
            .corpus
            .documents()
            .iter()
            .map(|d| (d.meta.doc_id.clone(), d.meta.title.clone()))
            .collect();
        Ok(compose(&interp.query_text, interp, &findings, &tags, &titles, created_at)?)
    }

    /// Histogram of normalized section lengths, over one document or all.
    pub fn length_histogram(&self, doc_id: Option<&str>, buckets: usize) -> Result<LengthHistogram, EngineError> {
        let sep = self.config.splitter.paragraph_separator.as_str();
        let docs: Vec<&str> = match doc_id {
            Some(id) => {
                self.corpus
                    .document(id)
                    .ok_or_else(|| CorpusError::UnknownDocument(id.to_string()))?;
                vec![id]
            }
            None => self.corpus.documents().iter().map(|d| d.doc_id()).collect(),
        };
        let lengths: Vec<usize> = docs
            .iter()
            .flat_map(|id| splitter::section_lengths(self.corpus.sections(id), sep))
            .collect();
        if lengths.is_empty() {
            return Err(EngineError::EmptyCorpus);
        }
        Ok(splitter::length_histogram(&lengths, buckets)?)
    }

    /// Fits per-document thresholds and saves them.
    pub fn calibrate(&mut self, labels: &[LabeledPair]) -> Result<CalibrationReport, EngineError> {
        let index = self.index.as_ref().ok_or(EngineError::NoIndex)?;
        let report = calibrate_from_labels(labels, &self.corpus, index, self.embedder.as_ref(), &self.thresholds)?;
        report.thresholds.save(&self.config.data_dir)?;
        self.thresholds = report.thresholds.clone();
        Ok(report)
    }

    /// Slot accuracy over all cases, plus hit@k over cases that name a gold
    /// chunk when an index is available.
    pub fn evaluate(&self, cases: &[EvalCase], k: usize) -> Result<MetricsReport, EngineError> {
        let report = evaluate_slots(cases, &self.prompts, self.gateway.as_ref())?;
        let with_gold: Vec<(EvalCase, String)> = cases
            .iter()
            .filter_map(|c| c.gold_chunk_id.clone().map(|g| (c.clone(), g)))
            .collect();
        if with_gold.is_empty() {
            return Ok(report);
        }
        let index = self.index.as_ref().ok_or(EngineError::NoIndex)?;
        let retrieval = evaluate_retrieval(&with_gold, &self.corpus, index, self.embedder.as_ref(), k)?;
        Ok(report.merge(retrieval))
    }
}
