//! The document corpus: registered standards, their sections and chunks, and
//! the on-disk layout under a data directory.
//!
//! ```text
//! <data_dir>/manifest.json     document metadata, chunk count, standard names
//! <data_dir>/chunks.jsonl      one chunk record per line
//! <data_dir>/docs/<doc_id>.txt raw registered content
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;
use crate::splitter::{self, LimitScope, SplitError, SplitterConfig};
use crate::structparse::{self, RuleSet};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const DOCS_DIR: &str = "docs";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("document content is empty")]
    EmptyContent,
    #[error("standard name is empty")]
    EmptyStandard,
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("corrupt chunk store at line {line}: {reason}")]
    CorruptChunks { line: usize, reason: String },
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Plaintext,
    Markdown,
}

impl FromStr for DocFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Self::Markdown),
            "txt" | "text" | "plaintext" => Ok(Self::Plaintext),
            other => Err(format!("unknown format {other:?} (expected md or txt)")),
        }
    }
}

impl fmt::Display for DocFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plaintext => "plaintext",
            Self::Markdown => "markdown",
        })
    }
}

/// Metadata for a registered document; everything but the content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub title: String,
    pub standard_name: String,
    pub format: DocFormat,
    pub ingested_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDocument {
    pub meta: DocumentMeta,
    pub content: String,
}

impl SourceDocument {
    pub fn doc_id(&self) -> &str {
        &self.meta.doc_id
    }
}

/// A heading-addressed region of a document. `body` excludes the bodies of
/// child sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub depth: usize,
    pub body: String,
    /// Char offsets of `body` within the source content.
    pub char_span: (usize, usize),
    pub section_seq: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub part_index: usize,
    pub text: String,
    pub char_len: usize,
}

pub fn chunk_id(doc_id: &str, section_seq: usize, part_index: usize) -> String {
    format!("{doc_id}#{section_seq}#{part_index}")
}

impl Chunk {
    pub fn new(
        doc_id: &str,
        section_seq: usize,
        part_index: usize,
        heading_path: Vec<String>,
        text: String,
    ) -> Self {
        Self {
            chunk_id: chunk_id(doc_id, section_seq, part_index),
            doc_id: doc_id.to_string(),
            heading_path,
            part_index,
            char_len: text.chars().count(),
            text,
        }
    }

    /// The section index encoded in the chunk id.
    pub fn section_seq(&self) -> Option<usize> {
        self.chunk_id.rsplit('#').nth(1)?.parse().ok()
    }
}

/// Line format of `chunks.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct ChunkRecord {
    chunk_id: String,
    doc_id: String,
    heading_path: Vec<String>,
    part_index: usize,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub documents: Vec<DocumentMeta>,
    pub chunk_count: usize,
    pub standard_names: Vec<String>,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            documents: Vec::new(),
            chunk_count: 0,
            standard_names: Vec::new(),
        }
    }
}

fn dedup_standard_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .filter(|n| seen.insert(*n))
        .map(str::to_string)
        .collect()
}

impl CorpusManifest {
    fn check(&self, chunk_lines: Option<usize>) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::CorruptManifest(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        let mut ids = HashSet::new();
        for (i, doc) in self.documents.iter().enumerate() {
            if doc.doc_id.is_empty() {
                return bad(format!("documents[{i}].doc_id: empty"));
            }
            if !ids.insert(doc.doc_id.as_str()) {
                return bad(format!("documents[{i}].doc_id: duplicate {:?}", doc.doc_id));
            }
            if doc.standard_name.trim().is_empty() {
                return bad(format!("documents[{i}].standard_name: empty"));
            }
        }
        let expected = dedup_standard_names(self.documents.iter().map(|d| d.standard_name.as_str()));
        if expected != self.standard_names {
            return bad(format!(
                "standard_names: expected {expected:?}, found {:?}",
                self.standard_names
            ));
        }
        if let Some(lines) = chunk_lines {
            if lines != self.chunk_count {
                return bad(format!(
                    "chunk_count: manifest says {}, chunk store has {lines} records",
                    self.chunk_count
                ));
            }
        }
        Ok(())
    }
}

fn count_records(path: &Path) -> Result<usize, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        if !line.map_err(io_err(path))?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads and checks `<data_dir>/manifest.json`. A missing manifest is an
/// empty corpus.
pub fn load_manifest(data_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    let path = data_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(CorpusManifest::default());
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: CorpusManifest = serde_json::from_str(&text)
        .map_err(|e| CorpusError::CorruptManifest(format!("parse error: {e}")))?;
    let chunks_path = data_dir.join(CHUNKS_FILE);
    let lines = if chunks_path.exists() {
        count_records(&chunks_path)?
    } else {
        0
    };
    manifest.check(Some(lines))?;
    Ok(manifest)
}

/// Document id: the 64-bit FNV-1a hash of `title \x1f standard_name` as 16
/// lowercase hex digits.
pub fn base_doc_id(title: &str, standard_name: &str) -> String {
    let key = format!("{title}\u{1f}{standard_name}");
    format!("{:016x}", fnv1a64(key.as_bytes()))
}

/// Outcome of registering a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub doc_id: String,
    /// False when identical content was already registered under this id.
    pub created: bool,
}

/// In-memory corpus. Mutations are not synchronized; callers serialize them.
#[derive(Debug)]
pub struct Corpus {
    documents: Vec<SourceDocument>,
    sections: HashMap<String, Vec<Section>>,
    chunks: Vec<Chunk>,
    chunk_pos: HashMap<String, usize>,
    chunk_limits: BTreeMap<String, usize>,
    plaintext_rules: RuleSet,
    markdown_rules: RuleSet,
}

impl Default for Corpus {
    fn default() -> Self {
        Self::new()
    }
}

impl Corpus {
    pub fn new() -> Self {
        Self::with_rules(RuleSet::default_plaintext())
    }

    /// A corpus that structures plaintext documents with custom heading
    /// rules. Markdown documents always use `#` headings.
    pub fn with_rules(plaintext_rules: RuleSet) -> Self {
        Self {
            documents: Vec::new(),
            sections: HashMap::new(),
            chunks: Vec::new(),
            chunk_pos: HashMap::new(),
            chunk_limits: BTreeMap::new(),
            plaintext_rules,
            markdown_rules: RuleSet::markdown(),
        }
    }

    fn rules_for(&self, format: DocFormat) -> &RuleSet {
        match format {
            DocFormat::Plaintext => &self.plaintext_rules,
            DocFormat::Markdown => &self.markdown_rules,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[SourceDocument] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&SourceDocument> {
        self.documents.iter().find(|d| d.meta.doc_id == doc_id)
    }

    pub fn sections(&self, doc_id: &str) -> &[Section] {
        self.sections.get(doc_id).map_or(&[], Vec::as_slice)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunks_of<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| c.doc_id == doc_id)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_pos.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Chunk limit applied to each document at the last [`Corpus::rechunk`].
    pub fn chunk_limits(&self) -> &BTreeMap<String, usize> {
        &self.chunk_limits
    }

    pub fn manifest(&self) -> CorpusManifest {
        let documents: Vec<DocumentMeta> = self.documents.iter().map(|d| d.meta.clone()).collect();
        CorpusManifest {
            schema_version: SCHEMA_VERSION,
            standard_names: dedup_standard_names(documents.iter().map(|d| d.standard_name.as_str())),
            documents,
            chunk_count: self.chunks.len(),
        }
    }

    /// Doc ids of every document whose standard name equals `standard`,
    /// ignoring case.
    pub fn doc_ids_for_standard(&self, standard: &str) -> HashSet<String> {
        let wanted = standard.trim().to_lowercase();
        self.documents
            .iter()
            .filter(|d| d.meta.standard_name.to_lowercase() == wanted)
            .map(|d| d.meta.doc_id.clone())
            .collect()
    }

    pub fn register_document(
        &mut self,
        title: &str,
        standard_name: &str,
        format: DocFormat,
        content: &str,
    ) -> Result<Registration, CorpusError> {
        self.register_document_at(title, standard_name, format, content, Utc::now())
    }

    /// Registers a document and parses its sections. Re-registering
    /// byte-identical content under the same title and standard is a no-op;
    /// different content gets the smallest free `-<n>` suffix.
    ///
    /// Chunks are not rebuilt here; call [`Corpus::rechunk`] afterwards.
    pub fn register_document_at(
        &mut self,
        title: &str,
        standard_name: &str,
        format: DocFormat,
        content: &str,
        now: DateTime<Utc>,
    ) -> Result<Registration, CorpusError> {
        if content.trim().is_empty() {
            return Err(CorpusError::EmptyContent);
        }
        if standard_name.trim().is_empty() {
            return Err(CorpusError::EmptyStandard);
        }
        let base = base_doc_id(title, standard_name);
        let mut candidate = base.clone();
        let mut n = 0;
        loop {
            match self.document(&candidate) {
                None => break,
                Some(existing) if existing.content == content => {
                    return Ok(Registration {
                        doc_id: candidate,
                        created: false,
                    });
                }
                Some(_) => {
                    n += 1;
                    candidate = format!("{base}-{n}");
                }
            }
        }
        let sections = structparse::parse_structure(&candidate, content, self.rules_for(format));
        self.sections.insert(candidate.clone(), sections);
        self.documents.push(SourceDocument {
            meta: DocumentMeta {
                doc_id: candidate.clone(),
                title: title.to_string(),
                standard_name: standard_name.trim().to_string(),
                format,
                ingested_at: now,
            },
            content: content.to_string(),
        });
        Ok(Registration {
            doc_id: candidate,
            created: true,
        })
    }

    /// Recomputes chunk limits and chunks for every document.
    pub fn rechunk(&mut self, config: &SplitterConfig) -> Result<(), CorpusError> {
        config.validate()?;
        let sep = config.paragraph_separator.as_str();
        let global_limit = match config.limit_scope {
            LimitScope::PerDocument => None,
            LimitScope::Corpus => {
                let lengths: Vec<usize> = self
                    .documents
                    .iter()
                    .flat_map(|d| splitter::section_lengths(self.sections(d.doc_id()), sep))
                    .collect();
                if lengths.is_empty() {
                    None
                } else {
                    Some(splitter::chunk_limit(&lengths, config)?)
                }
            }
        };
        let mut chunks = Vec::new();
        let mut limits = BTreeMap::new();
        for doc in &self.documents {
            let sections = self.sections(doc.doc_id());
            let limit = match global_limit {
                Some(l) => l,
                None => splitter::chunk_limit(&splitter::section_lengths(sections, sep), config)?,
            };
            limits.insert(doc.doc_id().to_string(), limit);
            chunks.extend(splitter::split_document(sections, limit, config)?);
        }
        self.set_chunks(chunks);
        self.chunk_limits = limits;
        Ok(())
    }

    fn set_chunks(&mut self, chunks: Vec<Chunk>) {
        self.chunk_pos = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        self.chunks = chunks;
    }

    /// Writes manifest, chunk store and raw documents under `data_dir`.
    pub fn save(&self, data_dir: &Path) -> Result<(), CorpusError> {
        let docs_dir = data_dir.join(DOCS_DIR);
        fs::create_dir_all(&docs_dir).map_err(io_err(&docs_dir))?;
        for doc in &self.documents {
            let path = docs_dir.join(format!("{}.txt", doc.doc_id()));
            fs::write(&path, &doc.content).map_err(io_err(&path))?;
        }

        let chunks_path = data_dir.join(CHUNKS_FILE);
        let file = fs::File::create(&chunks_path).map_err(io_err(&chunks_path))?;
        let mut out = BufWriter::new(file);
        for c in &self.chunks {
            let record = ChunkRecord {
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                heading_path: c.heading_path.clone(),
                part_index: c.part_index,
                text: c.text.clone(),
            };
            let line = serde_json::to_string(&record).expect("chunk record serializes");
            writeln!(out, "{line}").map_err(io_err(&chunks_path))?;
        }
        out.flush().map_err(io_err(&chunks_path))?;

        let manifest_path = data_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
        Ok(())
    }

    /// Loads a corpus saved by [`Corpus::save`]. Sections are re-derived from
    /// the raw documents; chunks are read as stored.
    pub fn load(data_dir: &Path, config: &SplitterConfig) -> Result<Self, CorpusError> {
        Self::load_with_rules(data_dir, config, RuleSet::default_plaintext())
    }

    pub fn load_with_rules(
        data_dir: &Path,
        config: &SplitterConfig,
        plaintext_rules: RuleSet,
    ) -> Result<Self, CorpusError> {
        let manifest = load_manifest(data_dir)?;
        let mut corpus = Self::with_rules(plaintext_rules);
        for meta in manifest.documents {
            let path = data_dir.join(DOCS_DIR).join(format!("{}.txt", meta.doc_id));
            let content = fs::read_to_string(&path).map_err(io_err(&path))?;
            let sections =
                structparse::parse_structure(&meta.doc_id, &content, corpus.rules_for(meta.format));
            corpus.sections.insert(meta.doc_id.clone(), sections);
            corpus.documents.push(SourceDocument { meta, content });
        }

        let chunks_path = data_dir.join(CHUNKS_FILE);
        let mut chunks = Vec::new();
        if chunks_path.exists() {
            let text = fs::read_to_string(&chunks_path).map_err(io_err(&chunks_path))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let bad = |reason: String| CorpusError::CorruptChunks { line: i + 1, reason };
                let r: ChunkRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
                if corpus.document(&r.doc_id).is_none() {
                    return Err(bad(format!("unknown doc_id {:?}", r.doc_id)));
                }
                let chunk = Chunk {
                    char_len: r.text.chars().count(),
                    chunk_id: r.chunk_id,
                    doc_id: r.doc_id,
                    heading_path: r.heading_path,
                    part_index: r.part_index,
                    text: r.text,
                };
                if chunk.char_len == 0 {
                    return Err(bad("empty chunk text".into()));
                }
                chunks.push(chunk);
            }
        }
        corpus.set_chunks(chunks);
        if corpus.chunk_pos.len() != corpus.chunks.len() {
            return Err(CorpusError::CorruptChunks {
                line: 0,
                reason: "duplicate chunk_id".into(),
            });
        }

        let sep = config.paragraph_separator.as_str();
        let mut limits = BTreeMap::new();
        for doc in &corpus.documents {
            let lengths = splitter::section_lengths(corpus.sections(doc.doc_id()), sep);
            if let Ok(limit) = splitter::chunk_limit(&lengths, config) {
                limits.insert(doc.doc_id().to_string(), limit);
            }
        }
        corpus.chunk_limits = limits;
        Ok(corpus)
    }
}
