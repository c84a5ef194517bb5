//! Mechanical answer assembly: every statement in the rendered answer is an
//! excerpt of a retrieved chunk, cited by number.

use std::collections::HashMap;
use std::fmt::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::extractor::PolicyFinding;
use crate::interpreter::{Interpretation, Slot};
use crate::tagger::TagResult;

pub const NO_RESULTS: &str = "No relevant policy controls were found above the similarity threshold.";
pub const PATH_SEPARATOR: &str = " › ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ComposeError {
    #[error("interpretation must be confirmed before composing an answer")]
    NotConfirmed,
    #[error("tag results do not line up with findings: expected {expected:?}, got {found:?}")]
    Misalignment { expected: Vec<String>, found: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBundle {
    pub query_text: String,
    pub interpretation: Interpretation,
    pub findings: Vec<PolicyFinding>,
    pub tag_results: Vec<TagResult>,
    pub rendered_markdown: String,
    pub created_at: DateTime<Utc>,
}

impl AnswerBundle {
    /// One-line summary for session history.
    pub fn summary(&self) -> String {
        match self.findings.len() {
            0 => "no findings".to_string(),
            1 => "1 finding".to_string(),
            n => format!("{n} findings"),
        }
    }
}

/// Escapes square brackets so chunk text cannot forge citation markers.
fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn restatement(interp: &Interpretation) -> String {
    Slot::ALL
        .iter()
        .map(|&slot| {
            let label = match slot {
                Slot::Policy => "Policy",
                Slot::Standard => "Standard",
                Slot::Subject => "Subject",
            };
            let value = interp.slot(slot).map_or_else(|| "not specified".to_string(), escape);
            format!("**{label}:** {value}")
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Renders the answer. `titles` maps doc ids to document titles; unknown
/// ids are shown as themselves.
pub fn compose(
    query: &str,
    interp: &Interpretation,
    findings: &[PolicyFinding],
    tag_results: &[TagResult],
    titles: &HashMap<String, String>,
    created_at: DateTime<Utc>,
) -> Result<AnswerBundle, ComposeError> {
    if !interp.is_confirmed() {
        return Err(ComposeError::NotConfirmed);
    }
    let expected: Vec<&str> = findings.iter().map(|f| f.chunk_id.as_str()).collect();
    let found: Vec<&str> = tag_results.iter().map(|t| t.chunk_id.as_str()).collect();
    if expected != found {
        return Err(ComposeError::Misalignment {
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: found.iter().map(|s| s.to_string()).collect(),
        });
    }

    let mut md = String::new();
    let _ = writeln!(md, "{}", restatement(interp));
    md.push('\n');
    if findings.is_empty() {
        md.push_str(NO_RESULTS);
        md.push('\n');
    } else {
        for (i, (finding, tags)) in findings.iter().zip(tag_results).enumerate() {
            let _ = write!(md, "- {}", escape(&single_line(&finding.excerpt)));
            if !tags.tags.is_empty() {
                let _ = write!(md, " _Tags: {}_", tags.tags.join(", "));
            }
            let _ = writeln!(md, " [{}]", i + 1);
        }
        md.push_str("\n## References\n\n");
        for (i, finding) in findings.iter().enumerate() {
            let title = titles.get(&finding.doc_id).unwrap_or(&finding.doc_id);
            let path = finding.heading_path.join(PATH_SEPARATOR);
            let _ = write!(md, "{}. {}, {}", i + 1, escape(title), escape(&path));
            if let Some(control) = &finding.control_id {
                let _ = write!(md, ", control {control}");
            }
            let _ = writeln!(md, " (score {:.3})", finding.score);
        }
    }

    Ok(AnswerBundle {
        query_text: query.to_string(),
        interpretation: interp.clone(),
        findings: findings.to_vec(),
        tag_results: tag_results.to_vec(),
        rendered_markdown: md,
        created_at,
    })
}

/// Citation numbers appearing in rendered Markdown, in order of appearance.
/// Escaped brackets are skipped.
pub fn citation_markers(markdown: &str) -> Vec<usize> {
    let bytes = markdown.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'[' => {
                let digits = bytes[i + 1..].iter().take_while(|b| b.is_ascii_digit()).count();
                let close = i + 1 + digits;
                if digits > 0 && bytes.get(close) == Some(&b']') {
                    out.push(markdown[i + 1..close].parse().expect("ascii digits"));
                    i = close + 1;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpreter::{InterpretationSource, InterpretationStatus};
    use crate::tagger::TagMode;
    use chrono::TimeZone;

    fn interp() -> Interpretation {
        Interpretation {
            query_text: "Is device X compliant?".into(),
            policy: Some("password policy".into()),
            standard: None,
            subject: Some("device X".into()),
            source: InterpretationSource::Llm,
            status: InterpretationStatus::Confirmed,
        }
    }

    fn finding(n: usize, score: f64) -> PolicyFinding {
        PolicyFinding {
            chunk_id: format!("doc#{n}#0"),
            doc_id: "doc".into(),
            heading_path: vec!["5 Identity".into(), format!("5.{n} Rule")],
            excerpt: format!("Excerpt number {n}."),
            score,
            control_id: Some(format!("5.{n}")),
        }
    }

    fn tags_for(findings: &[PolicyFinding]) -> Vec<TagResult> {
        findings
            .iter()
            .map(|f| TagResult {
                chunk_id: f.chunk_id.clone(),
                mode: TagMode::Paragraph,
                tags: vec!["password-policy".into()],
                raw_responses: vec![],
            })
            .collect()
    }

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 2, 3, 4, 5).unwrap()
    }

    fn titles() -> HashMap<String, String> {
        [("doc".to_string(), "Password Standard".to_string())].into()
    }

    #[test]
    fn zero_findings() {
        let a = compose("q", &interp(), &[], &[], &titles(), at()).unwrap();
        assert!(a.rendered_markdown.contains(NO_RESULTS));
        assert!(a.rendered_markdown.contains("**Policy:** password policy"));
        assert!(a.rendered_markdown.contains("**Standard:** not specified"));
        assert!(citation_markers(&a.rendered_markdown).is_empty());
        assert!(!a.rendered_markdown.contains("References"));
    }

    #[test]
    fn one_finding_one_marker_one_reference() {
        let f = vec![finding(1, 0.8)];
        let a = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
        assert_eq!(citation_markers(&a.rendered_markdown), vec![1]);
        assert_eq!(a.rendered_markdown.matches("\n1. ").count(), 1);
        assert!(a
            .rendered_markdown
            .contains("1. Password Standard, 5 Identity › 5.1 Rule, control 5.1 (score 0.800)"));
        assert!(a.rendered_markdown.contains("_Tags: password-policy_ [1]"));
        assert_eq!(a.created_at, at());
    }

    #[test]
    fn markers_follow_finding_order() {
        let f = vec![finding(1, 0.9), finding(2, 0.8), finding(3, 0.7)];
        let a = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
        assert_eq!(citation_markers(&a.rendered_markdown), vec![1, 2, 3]);
        let body = &a.rendered_markdown;
        let pos = |s: &str| body.find(s).unwrap();
        assert!(pos("Excerpt number 1") < pos("Excerpt number 2"));
        assert!(pos("Excerpt number 2") < pos("Excerpt number 3"));
    }

    #[test]
    fn excerpts_cannot_forge_markers() {
        let mut f = vec![finding(1, 0.9)];
        f[0].excerpt = "See [7] and\n\n[8] elsewhere \\".into();
        f[0].heading_path = vec!["[9] Odd".into()];
        let a = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
        assert_eq!(citation_markers(&a.rendered_markdown), vec![1]);
        assert!(a.rendered_markdown.contains(r"See \[7\] and \[8\] elsewhere \\ "));
    }

    #[test]
    fn misalignment_and_pending_rejected() {
        let f = vec![finding(1, 0.9), finding(2, 0.8)];
        let mut t = tags_for(&f);
        t.reverse();
        assert!(matches!(
            compose("q", &interp(), &f, &t, &titles(), at()),
            Err(ComposeError::Misalignment { .. })
        ));
        let mut pending = interp();
        pending.status = InterpretationStatus::Pending;
        assert_eq!(
            compose("q", &pending, &[], &[], &titles(), at()),
            Err(ComposeError::NotConfirmed)
        );
    }

    #[test]
    fn compose_is_deterministic() {
        let f = vec![finding(1, 0.9), finding(2, 0.8)];
        let a = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
        let b = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marker_scanner() {
        assert_eq!(citation_markers("a [1] b [x] c \\[2\\] [10]"), vec![1, 10]);
        assert!(citation_markers("[").is_empty());
    }

    proptest::proptest! {
        #[test]
        fn marker_reference_bijection(n in 0usize..=8, noise in "[\\[\\]0-9a-z \\\\]{0,40}") {
            let mut f: Vec<_> = (1..=n).map(|i| finding(i, 1.0 - i as f64 / 10.0)).collect();
            for x in &mut f {
                x.excerpt = format!("{noise} {}", x.excerpt);
            }
            let a = compose("q", &interp(), &f, &tags_for(&f), &titles(), at()).unwrap();
            let expected: Vec<usize> = (1..=n).collect();
            proptest::prop_assert_eq!(citation_markers(&a.rendered_markdown), expected);
            for i in 1..=n {
                let prefix = format!("\n{i}. ");
                proptest::prop_assert_eq!(a.rendered_markdown.matches(prefix.as_str()).count(), 1);
            }
        }
    }
}
