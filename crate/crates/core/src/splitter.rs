//! Two-stage chunking: one block per section, then size-bounded re-packing of
//! any block longer than the document's chunk limit.
//!
//! The chunk limit is the nearest-rank percentile (default 75th) of the
//! normalized section lengths, clamped to `[MIN_CHUNK_LIMIT, hard_max_chars]`.
//! Oversized blocks are packed greedily by paragraph; paragraphs that alone
//! exceed the limit fall back to sentences, and sentences to whitespace or a
//! hard character cut, so every chunk is guaranteed to fit.

use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, Section};
use crate::tagger::split_sentences;

/// Floor applied to the percentile-derived chunk limit.
pub const MIN_CHUNK_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("empty corpus: no section lengths to summarize")]
    EmptyCorpus,
    #[error("invalid splitter config: {0}")]
    InvalidConfig(String),
    #[error("chunk limit {0} is below the minimum of {MIN_CHUNK_LIMIT}")]
    LimitTooSmall(usize),
}

/// Whether each document gets its own chunk limit or one limit is computed
/// over every section in the corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitScope {
    #[default]
    PerDocument,
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitterConfig {
    pub percentile: f64,
    pub hard_max_chars: usize,
    pub paragraph_separator: String,
    pub limit_scope: LimitScope,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            percentile: 0.75,
            hard_max_chars: 8000,
            paragraph_separator: "\n\n".to_string(),
            limit_scope: LimitScope::PerDocument,
        }
    }
}

impl SplitterConfig {
    pub fn validate(&self) -> Result<(), SplitError> {
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(SplitError::InvalidConfig(format!(
                "percentile must be in (0, 1], got {}",
                self.percentile
            )));
        }
        if self.hard_max_chars < MIN_CHUNK_LIMIT {
            return Err(SplitError::InvalidConfig(format!(
                "hard_max_chars must be at least {MIN_CHUNK_LIMIT}, got {}",
                self.hard_max_chars
            )));
        }
        if self.paragraph_separator.is_empty() || !self.paragraph_separator.trim().is_empty() {
            return Err(SplitError::InvalidConfig(
                "paragraph_separator must be non-empty whitespace".into(),
            ));
        }
        Ok(())
    }
}

/// Equal-width histogram of section lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bucket_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_sections: usize,
}

/// Paragraphs of `body` with internal whitespace collapsed to single spaces.
/// A paragraph break is any run of whitespace-only lines.
pub fn normalized_paragraphs(body: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    for line in body.split('\n') {
        if line.trim().is_empty() {
            if !words.is_empty() {
                paragraphs.push(words.join(" "));
                words.clear();
            }
        } else {
            words.extend(line.split_whitespace());
        }
    }
    if !words.is_empty() {
        paragraphs.push(words.join(" "));
    }
    paragraphs
}

/// Whitespace runs collapse to one space, paragraph breaks become
/// `separator`, and the ends are trimmed.
pub fn normalize_body(body: &str, separator: &str) -> String {
    normalized_paragraphs(body).join(separator)
}

/// Normalized character count of each section body.
pub fn section_lengths(sections: &[Section], separator: &str) -> Vec<usize> {
    sections
        .iter()
        .map(|s| normalize_body(&s.body, separator).chars().count())
        .collect()
}

/// Nearest-rank index `ceil(p * n) - 1`, guarded against `p * n` landing a
/// hair above an integer through floating-point error.
fn nearest_rank_index(percentile: f64, n: usize) -> usize {
    let rank = (percentile * n as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

/// Nearest-rank percentile of `lengths`, clamped to
/// `[MIN_CHUNK_LIMIT, hard_max_chars]`.
pub fn chunk_limit(lengths: &[usize], config: &SplitterConfig) -> Result<usize, SplitError> {
    config.validate()?;
    if lengths.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let value = sorted[nearest_rank_index(config.percentile, sorted.len())];
    Ok(value.clamp(MIN_CHUNK_LIMIT, config.hard_max_chars))
}

/// A piece of normalized text plus the separator that preceded it in the
/// normalized body.
struct Unit<'a> {
    text: String,
    joiner: &'a str,
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Cuts a sentence longer than `limit` at the last whitespace that keeps the
/// piece within `limit`, or exactly at `limit` when there is none.
fn split_long_sentence<'a>(sentence: &str, limit: usize, first_joiner: &'a str, out: &mut Vec<Unit<'a>>) {
    let mut rest: Vec<char> = sentence.chars().collect();
    let mut joiner = first_joiner;
    while rest.len() > limit {
        let cut = (1..=limit).rev().find(|&i| rest[i].is_whitespace());
        let (piece, next_start, next_joiner) = match cut {
            Some(i) => (rest[..i].iter().collect::<String>(), i + 1, " "),
            None => (rest[..limit].iter().collect::<String>(), limit, ""),
        };
        out.push(Unit {
            text: piece,
            joiner,
        });
        joiner = next_joiner;
        rest.drain(..next_start);
    }
    if !rest.is_empty() {
        out.push(Unit {
            text: rest.into_iter().collect(),
            joiner,
        });
    }
}

fn units_for_block<'a>(paragraphs: &[String], limit: usize, separator: &'a str) -> Vec<Unit<'a>> {
    let mut units = Vec::new();
    for (p_idx, paragraph) in paragraphs.iter().enumerate() {
        let para_joiner = if p_idx == 0 { "" } else { separator };
        if char_len(paragraph) <= limit {
            units.push(Unit {
                text: paragraph.clone(),
                joiner: para_joiner,
            });
            continue;
        }
        for (s_idx, sentence) in split_sentences(paragraph).into_iter().enumerate() {
            let joiner = if s_idx == 0 { para_joiner } else { " " };
            if char_len(sentence) <= limit {
                units.push(Unit {
                    text: sentence.to_string(),
                    joiner,
                });
            } else {
                split_long_sentence(sentence, limit, joiner, &mut units);
            }
        }
    }
    units
}

fn pack(units: Vec<Unit<'_>>, limit: usize) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for unit in units {
        let unit_len = char_len(&unit.text);
        if current.is_empty() {
            current = unit.text;
            current_len = unit_len;
        } else if current_len + char_len(unit.joiner) + unit_len <= limit {
            current.push_str(unit.joiner);
            current.push_str(&unit.text);
            current_len += char_len(unit.joiner) + unit_len;
        } else {
            chunks.push(std::mem::take(&mut current));
            current = unit.text;
            current_len = unit_len;
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Chunk texts for one section body. Empty bodies produce no chunks.
pub fn split_body(body: &str, limit: usize, config: &SplitterConfig) -> Vec<String> {
    let separator = config.paragraph_separator.as_str();
    let paragraphs = normalized_paragraphs(body);
    let normalized = paragraphs.join(separator);
    if normalized.is_empty() {
        return Vec::new();
    }
    if char_len(&normalized) <= limit {
        return vec![normalized];
    }
    pack(units_for_block(&paragraphs, limit, separator), limit)
}

/// Splits every section into chunks of at most `limit` characters.
pub fn split_document(
    sections: &[Section],
    limit: usize,
    config: &SplitterConfig,
) -> Result<Vec<Chunk>, SplitError> {
    config.validate()?;
    if limit < MIN_CHUNK_LIMIT {
        return Err(SplitError::LimitTooSmall(limit));
    }
    let mut chunks = Vec::new();
    for section in sections {
        for (part_index, text) in split_body(&section.body, limit, config).into_iter().enumerate() {
            chunks.push(Chunk::new(
                &section.doc_id,
                section.section_seq,
                part_index,
                section.heading_path.clone(),
                text,
            ));
        }
    }
    Ok(chunks)
}

/// Equal-width buckets over `[min, max]`; the maximum lands in the last
/// bucket. When every length is equal the buckets are one character wide.
pub fn length_histogram(lengths: &[usize], n_buckets: usize) -> Result<LengthHistogram, SplitError> {
    if lengths.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    if n_buckets == 0 {
        return Err(SplitError::InvalidConfig("n_buckets must be at least 1".into()));
    }
    let min = *lengths.iter().min().unwrap() as f64;
    let max = *lengths.iter().max().unwrap() as f64;
    let width = if max > min {
        (max - min) / n_buckets as f64
    } else {
        1.0
    };
    let bucket_edges = (0..=n_buckets)
        .map(|i| if i == n_buckets && max > min { max } else { min + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; n_buckets];
    for &len in lengths {
        let idx = (((len as f64) - min) / width).floor() as usize;
        counts[idx.min(n_buckets - 1)] += 1;
    }
    Ok(LengthHistogram {
        bucket_edges,
        counts,
        n_sections: lengths.len(),
    })
}
