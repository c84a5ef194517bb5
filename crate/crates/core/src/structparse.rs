//! Section structure recovery for pre-extracted standards text.
//!
//! Plain text coming out of a PDF extractor has lost its heading markup, so
//! headings are recognised line-by-line with a prioritised list of regex
//! rules. Markdown input only uses `#` headings. The result is a flat list
//! of [`Section`]s in document order, each carrying the chain of enclosing
//! headings, and [`to_markdown`] renders that list back to Markdown.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocFormat, Section};

/// Heading path entry used for text that precedes the first heading.
pub const PREAMBLE_HEADING: &str = "(preamble)";

/// Deepest heading level produced by the numbering rule.
pub const MAX_NUMBERED_DEPTH: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("rule {rule_id}: pattern must be anchored with ^ and $")]
    Unanchored { rule_id: String },
    #[error("rule {rule_id}: invalid pattern: {source}")]
    BadPattern {
        rule_id: String,
        #[source]
        source: regex::Error,
    },
    #[error("duplicate rule priority {0}")]
    DuplicatePriority(i32),
    #[error("rule {rule_id}: fixed depth must be between 1 and 6")]
    BadDepth { rule_id: String },
    #[error("reading rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing rule file: {0}")]
    Json(#[from] serde_json::Error),
}

/// How a matching line's heading depth is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    /// Dotted section number: `5.1.2` is depth 3.
    Numbering,
    Fixed(usize),
    /// Count of leading `#` characters.
    MarkdownHashes,
}

/// A single-line heading pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingRule {
    pub rule_id: String,
    pub pattern: String,
    pub depth_source: DepthSource,
    /// Lower wins when several rules match one line.
    pub priority: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_chars: Option<usize>,
    /// Matching lines longer than this stay in the body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chars: Option<usize>,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: HeadingRule,
    regex: Regex,
}

/// A validated, priority-ordered set of heading rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
    markdown_fences: bool,
}

impl RuleSet {
    pub fn new(mut rules: Vec<HeadingRule>) -> Result<Self, RuleError> {
        rules.sort_by_key(|r| r.priority);
        for pair in rules.windows(2) {
            if pair[0].priority == pair[1].priority {
                return Err(RuleError::DuplicatePriority(pair[0].priority));
            }
        }
        let mut compiled = Vec::with_capacity(rules.len());
        let mut markdown_fences = false;
        for rule in rules {
            if !(rule.pattern.starts_with('^') && rule.pattern.ends_with('$')) {
                return Err(RuleError::Unanchored {
                    rule_id: rule.rule_id,
                });
            }
            if let DepthSource::Fixed(k) = rule.depth_source {
                if !(1..=MAX_NUMBERED_DEPTH).contains(&k) {
                    return Err(RuleError::BadDepth {
                        rule_id: rule.rule_id,
                    });
                }
            }
            markdown_fences |= rule.depth_source == DepthSource::MarkdownHashes;
            let regex = Regex::new(&rule.pattern).map_err(|source| RuleError::BadPattern {
                rule_id: rule.rule_id.clone(),
                source,
            })?;
            compiled.push(CompiledRule { rule, regex });
        }
        Ok(Self {
            rules: compiled,
            markdown_fences,
        })
    }

    /// Numbered headings first, then ALL-CAPS title lines.
    pub fn default_plaintext() -> Self {
        Self::new(default_plaintext_rules()).expect("built-in rules are valid")
    }

    pub fn markdown() -> Self {
        Self::new(vec![markdown_rule()]).expect("built-in rules are valid")
    }

    /// The rule set that applies to a document format when no custom rules
    /// are configured.
    pub fn for_format(format: DocFormat) -> Self {
        match format {
            DocFormat::Plaintext => Self::default_plaintext(),
            DocFormat::Markdown => Self::markdown(),
        }
    }

    /// Loads a JSON array of [`HeadingRule`]s.
    pub fn from_json_file(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path)?;
        let rules: Vec<HeadingRule> = serde_json::from_str(&text)?;
        Self::new(rules)
    }

    pub fn rules(&self) -> impl Iterator<Item = &HeadingRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    /// Returns `(raw depth, heading text)` when `line` is a heading.
    fn classify(&self, line: &str) -> Option<(usize, String)> {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return None;
        }
        let n_chars = trimmed.chars().count();
        for CompiledRule { rule, regex } in &self.rules {
            if rule.min_chars.is_some_and(|min| n_chars < min)
                || rule.max_chars.is_some_and(|max| n_chars > max)
            {
                continue;
            }
            let Some(caps) = regex.captures(trimmed) else {
                continue;
            };
            let title = caps
                .name("title")
                .map_or(trimmed, |m| m.as_str())
                .trim()
                .to_string();
            if title.is_empty() {
                continue;
            }
            let depth = match rule.depth_source {
                DepthSource::Fixed(k) => k,
                DepthSource::Numbering => {
                    let number = trimmed.split_whitespace().next().unwrap_or("");
                    (number.matches('.').count() + 1).min(MAX_NUMBERED_DEPTH)
                }
                DepthSource::MarkdownHashes => {
                    trimmed.chars().take_while(|&c| c == '#').count().clamp(1, 6)
                }
            };
            return Some((depth, title));
        }
        None
    }
}

pub fn default_plaintext_rules() -> Vec<HeadingRule> {
    vec![
        HeadingRule {
            rule_id: "numbered".into(),
            pattern: r"^\d+(\.\d+)*\s+\S.*$".into(),
            depth_source: DepthSource::Numbering,
            priority: 10,
            min_chars: None,
            max_chars: Some(120),
        },
        HeadingRule {
            rule_id: "all-caps".into(),
            // No lowercase letters, at least one uppercase letter, and no
            // terminal period.
            pattern: r"^[^\p{Ll}]*\p{Lu}([^\p{Ll}]*[^\p{Ll}.])?$".into(),
            depth_source: DepthSource::Fixed(1),
            priority: 20,
            min_chars: Some(3),
            max_chars: Some(80),
        },
    ]
}

pub fn markdown_rule() -> HeadingRule {
    HeadingRule {
        rule_id: "markdown".into(),
        pattern: r"^#{1,6}\s+(?P<title>.*?)(\s+#+)?$".into(),
        depth_source: DepthSource::MarkdownHashes,
        priority: 0,
        min_chars: None,
        max_chars: None,
    }
}

struct Line<'a> {
    text: &'a str,
    /// Char offset of the first character.
    start: usize,
}

fn lines_with_offsets(content: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for text in content.split('\n') {
        out.push(Line {
            text,
            start: offset,
        });
        offset += text.chars().count() + 1;
    }
    out
}

fn is_fence(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("```") || t.starts_with("~~~")
}

struct OpenSection {
    heading_path: Vec<String>,
    body_lines: std::ops::Range<usize>,
}

/// Splits `content` into sections using `rules`.
///
/// Lines before the first heading form a `(preamble)` section when they
/// contain anything other than whitespace. A heading that skips levels is
/// attached one level below its nearest shallower ancestor.
pub fn parse_structure(doc_id: &str, content: &str, rules: &RuleSet) -> Vec<Section> {
    let lines = lines_with_offsets(content);
    // (raw depth, heading text) of the currently open headings.
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut open: Vec<OpenSection> = Vec::new();
    let mut current = OpenSection {
        heading_path: vec![PREAMBLE_HEADING.to_string()],
        body_lines: 0..0,
    };
    let mut in_fence = false;

    for (i, line) in lines.iter().enumerate() {
        if rules.markdown_fences && is_fence(line.text) {
            in_fence = !in_fence;
        }
        let heading = if in_fence || (rules.markdown_fences && is_fence(line.text)) {
            None
        } else {
            rules.classify(line.text)
        };
        match heading {
            Some((raw_depth, title)) => {
                let finished = std::mem::replace(
                    &mut current,
                    OpenSection {
                        heading_path: Vec::new(),
                        body_lines: i + 1..i + 1,
                    },
                );
                open.push(finished);
                while stack.last().is_some_and(|(d, _)| *d >= raw_depth) {
                    stack.pop();
                }
                stack.push((raw_depth, title));
                current.heading_path = stack.iter().map(|(_, t)| t.clone()).collect();
            }
            None => current.body_lines.end = i + 1,
        }
    }
    open.push(current);

    let mut sections = Vec::with_capacity(open.len());
    for (idx, sec) in open.into_iter().enumerate() {
        let body_lines = &lines[sec.body_lines.clone()];
        let is_preamble = idx == 0;
        if is_preamble && body_lines.iter().all(|l| l.text.trim().is_empty()) {
            continue;
        }
        let body = body_lines
            .iter()
            .map(|l| l.text)
            .collect::<Vec<_>>()
            .join("\n");
        let start = match body_lines.first() {
            Some(l) => l.start,
            // Heading with no body: an empty span right after the heading line.
            None => lines
                .get(sec.body_lines.start)
                .map_or_else(|| content.chars().count(), |l| l.start),
        };
        let end = start + body.chars().count();
        sections.push(Section {
            doc_id: doc_id.to_string(),
            depth: sec.heading_path.len(),
            heading_path: sec.heading_path,
            body,
            char_span: (start, end),
            section_seq: sections.len(),
        });
    }
    sections
}

/// Renders sections as Markdown: a `#`-heading per section followed by its
/// body.
pub fn to_markdown(sections: &[Section]) -> String {
    sections
        .iter()
        .map(|s| {
            let title = s.heading_path.last().map_or("", String::as_str);
            let mut out = format!("{} {}", "#".repeat(s.depth.max(1)), title);
            if !s.body.is_empty() {
                out.push('\n');
                out.push_str(&s.body);
            }
            out
        })
        .collect::<Vec<_>>()
        .join("\n")
}
