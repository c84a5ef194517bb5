//! Control tagging of policy text against a closed tag vocabulary, one LLM
//! call per sentence or one per chunk.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::llm::{ChatGateway, CompletionRequest, LlmError};

const ABBREVIATIONS: [&str; 6] = ["e.g.", "i.e.", "etc.", "cf.", "no.", "fig."];

/// Splits text into sentences after `.`, `!` or `?` when the next
/// non-space character is uppercase (or the text ends), skipping common
/// abbreviations. Sentences come back trimmed; the gaps between them are
/// exactly the whitespace of the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let rest = &text[end..];
        let after_ws = rest.trim_start();
        let boundary = if after_ws.is_empty() {
            true
        } else {
            after_ws.len() < rest.len() && after_ws.chars().next().is_some_and(char::is_uppercase)
        };
        if !boundary || (c == '.' && ends_with_abbreviation(&text[start..end])) {
            continue;
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            out.push(sentence);
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn ends_with_abbreviation(segment: &str) -> bool {
    let word = segment.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(['(', '[', '"', '\'']).to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("tag schema is empty")]
    Empty,
    #[error("canonical tag {0:?} is not in normalized form")]
    NotCanonical(String),
    #[error("duplicate canonical tag {0:?}")]
    Duplicate(String),
    #[error("alias {alias:?} of {owner:?} collides with tag {other:?}")]
    AliasCollision {
        alias: String,
        owner: String,
        other: String,
    },
    #[error("cannot read tag schema: {0}")]
    Read(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDef {
    pub canonical: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct TagSchema {
    pub schema_id: String,
    pub tags: Vec<TagDef>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawSchema {
    schema_id: String,
    tags: Vec<TagDef>,
}

impl TryFrom<RawSchema> for TagSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, SchemaError> {
        TagSchema::new(raw.schema_id, raw.tags)
    }
}

/// Trim, lowercase, and replace whitespace runs with single hyphens.
pub fn normalize_tag(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

impl TagSchema {
    pub fn new(schema_id: impl Into<String>, tags: Vec<TagDef>) -> Result<Self, SchemaError> {
        if tags.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut lookup = HashMap::new();
        for (i, tag) in tags.iter().enumerate() {
            if normalize_tag(&tag.canonical) != tag.canonical || tag.canonical.is_empty() {
                return Err(SchemaError::NotCanonical(tag.canonical.clone()));
            }
            if lookup.insert(tag.canonical.clone(), i).is_some() {
                return Err(SchemaError::Duplicate(tag.canonical.clone()));
            }
        }
        for (i, tag) in tags.iter().enumerate() {
            for alias in &tag.aliases {
                let key = normalize_tag(alias);
                match lookup.get(&key) {
                    Some(&j) if j != i => {
                        return Err(SchemaError::AliasCollision {
                            alias: alias.clone(),
                            owner: tag.canonical.clone(),
                            other: tags[j].canonical.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        lookup.insert(key, i);
                    }
                }
            }
        }
        Ok(Self {
            schema_id: schema_id.into(),
            tags,
            lookup,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        serde_json::from_str(text).map_err(|e| SchemaError::Read(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SchemaError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SchemaError::Read(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The eight-control schema shipped as fixture material.
    pub fn default_schema() -> Self {
        let tag = |canonical: &str, description: &str, aliases: &[&str]| TagDef {
            canonical: canonical.into(),
            description: description.into(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        };
        Self::new(
            "default-controls-v1",
            vec![
                tag("access-control", "who may reach which systems and data", &["access control", "authorization", "least privilege"]),
                tag("encryption", "protection of data with cryptography at rest or in transit", &["cryptography", "tls", "encryption at rest"]),
                tag("logging", "recording and review of security events", &["audit logging", "monitoring", "audit trail"]),
                tag("authentication", "verification of user or device identity", &["mfa", "multi-factor authentication", "identity verification"]),
                tag("password-policy", "password length, complexity, rotation and storage", &["password", "passwords", "password complexity"]),
                tag("network-segmentation", "separation of networks into zones with controlled flows", &["segmentation", "firewall zones", "vlan"]),
                tag("patching", "timely installation of security updates", &["patch management", "updates", "vulnerability remediation"]),
                tag("physical-security", "protection of premises and hardware", &["physical access", "facility security"]),
            ],
        )
        .expect("default schema is valid")
    }

    pub fn canonicals(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|t| t.canonical.as_str())
    }

    fn position(&self, raw: &str) -> Option<usize> {
        self.lookup.get(&normalize_tag(raw)).copied()
    }
}

/// Maps raw labels to canonical tags: unknown labels are dropped, duplicates
/// removed, and the result follows schema order.
pub fn normalize_tags<S: AsRef<str>>(raw: &[S], schema: &TagSchema) -> Vec<String> {
    let positions: BTreeSet<usize> = raw.iter().filter_map(|r| schema.position(r.as_ref())).collect();
    positions.into_iter().map(|i| schema.tags[i].canonical.clone()).collect()
}

/// Reads a JSON array of strings, optionally inside a code fence. Anything
/// else yields `None`.
pub fn parse_tag_response(raw: &str) -> Option<Vec<String>> {
    let body = crate::interpreter::strip_code_fence(raw);
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    let items = value.as_array()?;
    Some(items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagMode {
    Sentence,
    #[default]
    Paragraph,
}

impl std::str::FromStr for TagMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sentence" => Ok(Self::Sentence),
            "paragraph" => Ok(Self::Paragraph),
            other => Err(format!("unknown tag mode {other:?} (expected sentence or paragraph)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagResult {
    pub chunk_id: String,
    pub mode: TagMode,
    pub tags: Vec<String>,
    pub raw_responses: Vec<String>,
}

impl TagResult {
    pub fn empty(chunk_id: &str, mode: TagMode) -> Self {
        Self {
            chunk_id: chunk_id.to_string(),
            mode,
            tags: Vec::new(),
            raw_responses: Vec::new(),
        }
    }
}

pub fn tagging_system_prompt(schema: &TagSchema) -> String {
    let list = schema
        .tags
        .iter()
        .map(|t| {
            if t.description.is_empty() {
                t.canonical.clone()
            } else {
                format!("{} ({})", t.canonical, t.description)
            }
        })
        .collect::<Vec<_>>()
        .join("; ");
    format!(
        "You label network-security policy text with applicable control tags. \
         Answer ONLY with a JSON array of tags drawn from this list: {list}."
    )
}

/// Tags one chunk. Responses that are not a JSON array count as no tags.
pub fn tag_chunk(chunk: &Chunk, schema: &TagSchema, mode: TagMode, gateway: &dyn ChatGateway) -> Result<TagResult, LlmError> {
    let system = tagging_system_prompt(schema);
    let texts = match mode {
        TagMode::Sentence => split_sentences(&chunk.text),
        TagMode::Paragraph => vec![chunk.text.as_str()],
    };
    let mut raw_tags = Vec::new();
    let mut raw_responses = Vec::with_capacity(texts.len());
    for text in texts {
        let response = gateway.complete(&CompletionRequest::deterministic(system.as_str(), text))?;
        match parse_tag_response(&response) {
            Some(tags) => raw_tags.extend(tags),
            None => tracing::debug!(chunk_id = %chunk.chunk_id, "ignoring malformed tag response"),
        }
        raw_responses.push(response);
    }
    Ok(TagResult {
        chunk_id: chunk.chunk_id.clone(),
        mode,
        tags: normalize_tags(&raw_tags, schema),
        raw_responses,
    })
}
