//! Query interpretation: one LLM prompt per slot (policy, standard,
//! subject), an offline gazetteer fallback, and the confirmation step.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::llm::{ChatGateway, CompletionRequest, LlmError};

/// Longest bare reply accepted when the model ignores the JSON format.
pub const MAX_BARE_VALUE_CHARS: usize = 80;

pub const QUERY_PLACEHOLDER: &str = "{query}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Policy,
    Standard,
    Subject,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Policy, Slot::Standard, Slot::Subject];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Policy => "policy",
            Slot::Standard => "standard",
            Slot::Subject => "subject",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpretationSource {
    Llm,
    Gazetteer,
    UserEdited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpretationStatus {
    Pending,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpretation {
    pub query_text: String,
    pub policy: Option<String>,
    pub standard: Option<String>,
    pub subject: Option<String>,
    pub source: InterpretationSource,
    pub status: InterpretationStatus,
}

impl Interpretation {
    pub fn slot(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::Policy => self.policy.as_deref(),
            Slot::Standard => self.standard.as_deref(),
            Slot::Subject => self.subject.as_deref(),
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut Option<String> {
        match slot {
            Slot::Policy => &mut self.policy,
            Slot::Standard => &mut self.standard,
            Slot::Subject => &mut self.subject,
        }
    }

    pub fn is_empty(&self) -> bool {
        Slot::ALL.iter().all(|&s| self.slot(s).is_none())
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == InterpretationStatus::Confirmed
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfirmError {
    #[error("interpretation is already confirmed")]
    AlreadyConfirmed,
    #[error("at least one of policy, standard or subject must be set")]
    AllSlotsEmpty,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("{0} template must contain {{query}}")]
    MissingPlaceholder(&'static str),
    #[error("cannot read prompt templates: {0}")]
    Read(String),
}

const DEFAULT_SYSTEM_PROMPT: &str = "You extract one field from a user's network-security compliance question. \
     Answer ONLY with a JSON object {\"value\": <string or null>}.";

/// Per-slot prompt templates. Each user template contains `{query}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPromptSet {
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    pub policy_prompt: String,
    pub standard_prompt: String,
    pub subject_prompt: String,
}

fn default_system_prompt() -> String {
    DEFAULT_SYSTEM_PROMPT.to_string()
}

impl Default for SlotPromptSet {
    fn default() -> Self {
        let ask = |what: &str| format!("Question: {{query}}\nWhat is the name of {what} the question refers to? If none, use null.");
        Self {
            system_prompt: default_system_prompt(),
            policy_prompt: ask("the policy or security rule"),
            standard_prompt: ask("the Standard"),
            subject_prompt: ask("the network deployment, service, or device"),
        }
    }
}

impl SlotPromptSet {
    pub fn validate(&self) -> Result<(), PromptError> {
        for slot in Slot::ALL {
            if !self.template(slot).contains(QUERY_PLACEHOLDER) {
                return Err(PromptError::MissingPlaceholder(slot.name()));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, PromptError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PromptError::Read(format!("{}: {e}", path.display())))?;
        let prompts: Self = serde_json::from_str(&text).map_err(|e| PromptError::Read(e.to_string()))?;
        prompts.validate()?;
        Ok(prompts)
    }

    pub fn template(&self, slot: Slot) -> &str {
        match slot {
            Slot::Policy => &self.policy_prompt,
            Slot::Standard => &self.standard_prompt,
            Slot::Subject => &self.subject_prompt,
        }
    }

    pub fn render(&self, slot: Slot, query: &str) -> String {
        self.template(slot).replace(QUERY_PLACEHOLDER, query)
    }
}

/// Removes a surrounding Markdown code fence, with or without a language tag.
pub fn strip_code_fence(raw: &str) -> &str {
    let text = raw.trim();
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let inner = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    inner.trim_end().strip_suffix("```").unwrap_or(inner).trim()
}

/// Reads one slot value from a model reply. Never fails: anything
/// unusable is `None`.
pub fn parse_slot_response(raw: &str) -> Option<String> {
    let body = strip_code_fence(raw);
    match serde_json::from_str::<serde_json::Value>(body) {
        Ok(serde_json::Value::Object(map)) => map
            .get("value")
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(str::to_string),
        Ok(_) => None,
        Err(_) => {
            let looks_structured = body.starts_with('{') || body.starts_with('[');
            let placeholder = ["none", "null", "n/a"].iter().any(|p| body.eq_ignore_ascii_case(p));
            let bare = !body.is_empty()
                && !body.contains('\n')
                && body.chars().count() <= MAX_BARE_VALUE_CHARS;
            (bare && !looks_structured && !placeholder).then(|| body.to_string())
        }
    }
}

/// Asks the model for each slot separately. The three calls run
/// concurrently and are always all issued.
pub fn interpret(query: &str, prompts: &SlotPromptSet, gateway: &dyn ChatGateway) -> Result<Interpretation, InterpretError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(InterpretError::EmptyQuery);
    }
    let responses: Vec<Result<String, LlmError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = Slot::ALL
            .iter()
            .map(|&slot| {
                let request = CompletionRequest::deterministic(prompts.system_prompt.as_str(), prompts.render(slot, query));
                scope.spawn(move || gateway.complete(&request))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("slot call panicked"))
            .collect()
    });
    let mut interp = Interpretation {
        query_text: query.to_string(),
        policy: None,
        standard: None,
        subject: None,
        source: InterpretationSource::Llm,
        status: InterpretationStatus::Pending,
    };
    for (slot, response) in Slot::ALL.into_iter().zip(responses) {
        let raw = response?;
        let value = parse_slot_response(&raw);
        if value.is_none() && !raw.trim().is_empty() {
            tracing::debug!(slot = slot.name(), "slot response unusable, leaving it empty");
        }
        *interp.slot_mut(slot) = value;
    }
    Ok(interp)
}

fn longest_contained(query_lower: &str, names: &[String]) -> Option<String> {
    let mut best: Option<&String> = None;
    for name in names {
        let needle = name.trim().to_lowercase();
        if needle.is_empty() || !query_lower.contains(&needle) {
            continue;
        }
        if best.is_none_or(|b| name.trim().chars().count() > b.trim().chars().count()) {
            best = Some(name);
        }
    }
    best.map(|b| b.trim().to_string())
}

/// Offline slot extraction by longest case-insensitive name match. Policies
/// are open-vocabulary, so the policy slot stays empty.
pub fn gazetteer_extract(query: &str, standard_names: &[String], subject_lexicon: &[String]) -> Interpretation {
    let lower = query.to_lowercase();
    Interpretation {
        query_text: query.trim().to_string(),
        policy: None,
        standard: longest_contained(&lower, standard_names),
        subject: longest_contained(&lower, subject_lexicon),
        source: InterpretationSource::Gazetteer,
        status: InterpretationStatus::Pending,
    }
}

/// Slot edits sent with a confirmation. A missing field leaves the slot
/// alone; an explicit `null` (or blank string) clears it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEdits {
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub policy: Option<Option<String>>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub standard: Option<Option<String>>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub subject: Option<Option<String>>,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
    Option::<String>::deserialize(d).map(Some)
}

impl SlotEdits {
    pub fn set(mut self, slot: Slot, value: Option<&str>) -> Self {
        let v = Some(value.map(str::to_string));
        match slot {
            Slot::Policy => self.policy = v,
            Slot::Standard => self.standard = v,
            Slot::Subject => self.subject = v,
        }
        self
    }

    pub fn get(&self, slot: Slot) -> Option<Option<&str>> {
        let field = match slot {
            Slot::Policy => &self.policy,
            Slot::Standard => &self.standard,
            Slot::Subject => &self.subject,
        };
        field.as_ref().map(|v| v.as_deref())
    }

    pub fn is_empty(&self) -> bool {
        Slot::ALL.iter().all(|&s| self.get(s).is_none())
    }
}

/// Applies user edits and marks the interpretation confirmed. The source
/// becomes `user_edited` only when an edit actually changed a slot.
pub fn confirm(interp: &Interpretation, edits: &SlotEdits) -> Result<Interpretation, ConfirmError> {
    if interp.is_confirmed() {
        return Err(ConfirmError::AlreadyConfirmed);
    }
    let mut out = interp.clone();
    let mut changed = false;
    for slot in Slot::ALL {
        if let Some(edit) = edits.get(slot) {
            let value = edit.map(str::trim).filter(|v| !v.is_empty()).map(str::to_string);
            let current = out.slot_mut(slot);
            if *current != value {
                *current = value;
                changed = true;
            }
        }
    }
    if out.is_empty() {
        return Err(ConfirmError::AllSlotsEmpty);
    }
    if changed {
        out.source = InterpretationSource::UserEdited;
    }
    out.status = InterpretationStatus::Confirmed;
    Ok(out)
}
