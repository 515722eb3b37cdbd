//! Ordered per-session event stream for live observers.
//!
//! Every turn append and every status change becomes one event. Sequence
//! numbers start at 1 and have no gaps, so a client that has seen up to `n`
//! can ask for everything after `n` and rebuild the session state exactly.

use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueSession, SessionStatus, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    Turn { turn: Turn },
    Status {
        status: SessionStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        abort_cause: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub sequence: u64,
    pub payload: EventPayload,
}

/// Event stream for one session.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    session_id: String,
    events: Vec<SessionEvent>,
    turns_seen: usize,
    last_status: Option<SessionStatus>,
}

impl EventLog {
    pub fn new(session_id: impl Into<String>) -> Self {
        EventLog { session_id: session_id.into(), ..Default::default() }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_sequence(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Events with `sequence > after`.
    pub fn after(&self, after: u64) -> &[SessionEvent] {
        let start = (after as usize).min(self.events.len());
        &self.events[start..]
    }

    fn push(&mut self, payload: EventPayload) -> u64 {
        let sequence = self.events.len() as u64 + 1;
        self.events.push(SessionEvent { session_id: self.session_id.clone(), sequence, payload });
        sequence
    }

    /// Emits events for whatever changed in `session` since the last sync:
    /// new turns first, then a status change. Returns the number emitted.
    pub fn sync(&mut self, session: &DialogueSession) -> usize {
        let before = self.events.len();
        for turn in session.turns.iter().skip(self.turns_seen) {
            self.push(EventPayload::Turn { turn: turn.clone() });
        }
        self.turns_seen = session.turns.len();
        if self.last_status != Some(session.status) {
            self.push(EventPayload::Status { status: session.status, abort_cause: session.abort_cause.clone() });
            self.last_status = Some(session.status);
        }
        self.events.len() - before
    }
}

/// Turns, latest status, and abort cause rebuilt from an event stream.
pub type Replay = (Vec<Turn>, Option<SessionStatus>, Option<String>);

/// Replays events into `(turns, latest status, abort cause)`.
///
/// Fails if sequences are not gapless from 1 or events belong to different sessions.
pub fn reconstruct(events: &[SessionEvent]) -> Result<Replay, String> {
    let mut turns = Vec::new();
    let mut status = None;
    let mut cause = None;
    for (i, event) in events.iter().enumerate() {
        if event.sequence != i as u64 + 1 {
            return Err(format!("expected sequence {}, found {}", i + 1, event.sequence));
        }
        if event.session_id != events[0].session_id {
            return Err("events from more than one session".into());
        }
        match &event.payload {
            EventPayload::Turn { turn } => turns.push(turn.clone()),
            EventPayload::Status { status: s, abort_cause } => {
                status = Some(*s);
                cause = abort_cause.clone();
            }
        }
    }
    Ok((turns, status, cause))
}
