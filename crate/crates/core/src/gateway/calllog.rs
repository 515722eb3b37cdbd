use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendBinding, CallTag, ChatMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPhase {
    Request,
    Response,
    Failure,
}

/// One line of the call log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub phase: CallPhase,
    pub backend_id: String,
    pub model: String,
    pub attempt: u32,
    #[serde(flatten)]
    pub tag: CallTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages: Option<Vec<ChatMessage>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CallRecord {
    fn base(tag: &CallTag, binding: &BackendBinding, attempt: u32, phase: CallPhase) -> Self {
        CallRecord {
            seq: 0,
            phase,
            backend_id: binding.backend_id.clone(),
            model: binding.model_name.clone(),
            attempt,
            tag: tag.clone(),
            messages: None,
            text_count: None,
            content: None,
            error: None,
        }
    }

    pub(super) fn request(
        tag: &CallTag,
        binding: &BackendBinding,
        attempt: u32,
        messages: Option<&[ChatMessage]>,
        text_count: Option<usize>,
    ) -> Self {
        CallRecord {
            messages: messages.map(<[ChatMessage]>::to_vec),
            text_count,
            ..Self::base(tag, binding, attempt, CallPhase::Request)
        }
    }

    pub(super) fn response(tag: &CallTag, binding: &BackendBinding, attempt: u32, content: String) -> Self {
        CallRecord { content: Some(content), ..Self::base(tag, binding, attempt, CallPhase::Response) }
    }

    pub(super) fn failure(tag: &CallTag, binding: &BackendBinding, attempt: u32, error: String) -> Self {
        CallRecord { error: Some(error), ..Self::base(tag, binding, attempt, CallPhase::Failure) }
    }
}

#[derive(Default)]
struct Inner {
    next_seq: u64,
    records: Vec<CallRecord>,
    sink: Option<BufWriter<File>>,
}

/// Append-only request/response log, kept in memory and optionally mirrored
/// to a line-delimited JSON file. Each record is flushed as it is appended,
/// so a request is on disk before its dispatch.
#[derive(Default)]
pub struct CallLog {
    inner: Mutex<Inner>,
}

impl CallLog {
    pub fn in_memory() -> Self {
        CallLog::default()
    }

    pub fn with_file(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let log = CallLog::default();
        log.inner.lock().expect("call log lock").sink = Some(BufWriter::new(file));
        Ok(log)
    }

    pub(super) fn record(&self, mut record: CallRecord) {
        let mut inner = self.inner.lock().expect("call log lock");
        inner.next_seq += 1;
        record.seq = inner.next_seq;
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("call record serializes");
            let written = writeln!(sink, "{line}").and_then(|_| sink.flush());
            if let Err(err) = written {
                log::error!("call log write failed: {err}");
            }
        }
        inner.records.push(record);
    }

    /// Snapshot of all records so far.
    pub fn records(&self) -> Vec<CallRecord> {
        self.inner.lock().expect("call log lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("call log lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
