//! In-memory query sessions and their confirmation state machine.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use auditnet_core::composer::AnswerBundle;
use auditnet_core::interpreter::Interpretation;
use chrono::{DateTime, Utc};
use serde::Serialize;

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    AwaitingConfirmation,
    Answered,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::AwaitingConfirmation => "awaiting_confirmation",
            SessionState::Answered => "answered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("session is {}, expected {expected}", state.as_str())]
pub struct WrongState {
    pub state: SessionState,
    pub expected: &'static str,
}

/// The pending interpretation lives inside the phase, so a session awaits
/// confirmation exactly when it holds one.
#[derive(Debug, Clone)]
enum Phase {
    Idle,
    Awaiting(Interpretation),
    Answered,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    pub query: String,
    pub summary: String,
}

#[derive(Debug)]
pub struct Session {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    phase: Phase,
    last_answer: Option<AnswerBundle>,
    history: Vec<HistoryEntry>,
}

impl Session {
    pub fn new(session_id: String) -> Self {
        Self {
            session_id,
            created_at: Utc::now(),
            phase: Phase::Idle,
            last_answer: None,
            history: Vec::new(),
        }
    }

    pub fn state(&self) -> SessionState {
        match self.phase {
            Phase::Idle => SessionState::Idle,
            Phase::Awaiting(_) => SessionState::AwaitingConfirmation,
            Phase::Answered => SessionState::Answered,
        }
    }

    pub fn pending(&self) -> Option<&Interpretation> {
        match &self.phase {
            Phase::Awaiting(interp) => Some(interp),
            _ => None,
        }
    }

    pub fn last_answer(&self) -> Option<&AnswerBundle> {
        self.last_answer.as_ref()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn check_can_query(&self) -> Result<(), WrongState> {
        match self.phase {
            Phase::Awaiting(_) => Err(WrongState {
                state: self.state(),
                expected: "idle or answered",
            }),
            _ => Ok(()),
        }
    }

    pub fn begin_confirmation(&mut self, interp: Interpretation) -> Result<(), WrongState> {
        self.check_can_query()?;
        self.phase = Phase::Awaiting(interp);
        Ok(())
    }

    /// The interpretation awaiting confirmation.
    pub fn require_pending(&self) -> Result<&Interpretation, WrongState> {
        self.pending().ok_or(WrongState {
            state: self.state(),
            expected: "awaiting_confirmation",
        })
    }

    pub fn complete(&mut self, answer: AnswerBundle) -> Result<(), WrongState> {
        self.require_pending()?;
        self.history.push(HistoryEntry {
            query: answer.query_text.clone(),
            summary: answer.summary(),
        });
        self.last_answer = Some(answer);
        self.phase = Phase::Answered;
        Ok(())
    }
}

pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

struct Entry {
    session: Arc<tokio::sync::Mutex<Session>>,
    last_access: Instant,
}

/// Sessions keyed by id. Expired sessions are swept whenever the store is
/// touched.
pub struct SessionStore {
    ttl: Duration,
    sessions: Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn sweep(&self, map: &mut HashMap<String, Entry>, now: Instant) {
        map.retain(|_, e| now.duration_since(e.last_access) < self.ttl);
    }

    pub fn create(&self) -> String {
        let now = Instant::now();
        let mut map = self.sessions.lock().expect("session map poisoned");
        self.sweep(&mut map, now);
        let mut id = new_session_id();
        while map.contains_key(&id) {
            id = new_session_id();
        }
        map.insert(
            id.clone(),
            Entry {
                session: Arc::new(tokio::sync::Mutex::new(Session::new(id.clone()))),
                last_access: now,
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        let now = Instant::now();
        let mut map = self.sessions.lock().expect("session map poisoned");
        self.sweep(&mut map, now);
        map.get_mut(id).map(|e| {
            e.last_access = now;
            e.session.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_TTL)
    }
}
