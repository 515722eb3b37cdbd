//! Deterministic backends for tests and offline runs.
//!
//! Every mock here is a pure function of its script and the request, so the
//! same inputs give byte-identical outputs.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{
    BackendBinding, BackendFailure, ChatBackend, ChatMessage, EmbeddingBackend, GatewayBuilder, Gateway, RetryPolicy, Role,
};
use crate::util::stable_hash;
use crate::{analysis, dialogue, modbench, refinement, vsm};

pub const MOCK_CHAT: &str = "mock";
pub const MOCK_EMBEDDING: &str = "mock-embed";

/// Gateway with [`SyntheticChat`] and [`HashEmbedder`] registered under
/// [`MOCK_CHAT`] and [`MOCK_EMBEDDING`], retrying without delay.
pub fn synthetic_gateway() -> GatewayBuilder {
    Gateway::builder()
        .chat_backend(MOCK_CHAT, Arc::new(SyntheticChat::default()))
        .embedding_backend(MOCK_EMBEDDING, Arc::new(HashEmbedder::default()))
        .retry(RetryPolicy::immediate(3))
}

pub fn mock_chat_binding() -> BackendBinding {
    BackendBinding::chat(MOCK_CHAT, "mock://", "synthetic")
}

pub fn mock_embedding_binding() -> BackendBinding {
    BackendBinding::embedding(MOCK_EMBEDDING, "mock://", "hash")
}

pub type ReplyFn = dyn Fn(&[ChatMessage]) -> Result<String, BackendFailure> + Send + Sync;

/// What a scripted rule answers with.
#[derive(Clone)]
pub enum Reply {
    Fixed(String),
    /// Indexed by the number of assistant messages already in the history;
    /// the last entry repeats once the script runs out.
    ByStep(Vec<String>),
    Computed(Arc<ReplyFn>),
}

impl Reply {
    fn render(&self, history: &[ChatMessage]) -> Result<String, BackendFailure> {
        match self {
            Reply::Fixed(s) => Ok(s.clone()),
            Reply::ByStep(steps) => {
                let step = history.iter().filter(|m| m.role == Role::Assistant).count();
                steps
                    .get(step)
                    .or_else(|| steps.last())
                    .cloned()
                    .ok_or_else(|| BackendFailure::BadResponse("empty script".into()))
            }
            Reply::Computed(f) => f(history),
        }
    }
}

/// Scripted chat mock: the first rule whose needle occurs in the last message
/// wins, otherwise the fallback answers.
#[derive(Clone)]
pub struct ScriptedChat {
    rules: Vec<(String, Reply)>,
    fallback: Reply,
}

impl ScriptedChat {
    pub fn fixed(reply: impl Into<String>) -> Self {
        ScriptedChat { rules: Vec::new(), fallback: Reply::Fixed(reply.into()) }
    }

    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChat { rules: Vec::new(), fallback: Reply::ByStep(replies.into_iter().map(Into::into).collect()) }
    }

    pub fn computed<F>(f: F) -> Self
    where
        F: Fn(&[ChatMessage]) -> Result<String, BackendFailure> + Send + Sync + 'static,
    {
        ScriptedChat { rules: Vec::new(), fallback: Reply::Computed(Arc::new(f)) }
    }

    pub fn when(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push((needle.into(), Reply::Fixed(reply.into())));
        self
    }

    pub fn when_reply(mut self, needle: impl Into<String>, reply: Reply) -> Self {
        self.rules.push((needle.into(), reply));
        self
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, _binding: &BackendBinding, history: &[ChatMessage]) -> Result<String, BackendFailure> {
        let last = history.last().map(|m| m.content.as_str()).unwrap_or("");
        for (needle, reply) in &self.rules {
            if last.contains(needle.as_str()) {
                return reply.render(history);
            }
        }
        self.fallback.render(history)
    }
}

/// Hash-to-vector embedder: identical texts map to identical vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashEmbedder { dimension }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dimension);
        let mut block = 0u32;
        while out.len() < self.dimension {
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            hasher.update(block.to_le_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if out.len() == self.dimension {
                    break;
                }
                let word = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                out.push(f64::from(word) / f64::from(u32::MAX) * 2.0 - 1.0);
            }
            block += 1;
        }
        out
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(64)
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed(&self, _binding: &BackendBinding, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

const ASPECTS: [&str; 12] = [
    "respect for elders",
    "family honour",
    "hospitality toward guests",
    "religious observance",
    "patience in hardship",
    "community obligations",
    "modesty in public life",
    "loyalty to friends",
    "education as duty",
    "shared meals",
    "care for parents",
    "trust in tradition",
];

const TOPIC_LABELS: [&str; 9] = [
    "belief/religious",
    "belief/social",
    "belief/ethical",
    "norm/descriptive",
    "norm/prescriptive",
    "norm/traditional",
    "custom/social",
    "custom/family",
    "custom/community",
];

/// Offline stand-in for every prompt the engine sends.
///
/// Recognizes the engine's own prompt shapes (dialogue turns, opinion
/// extraction, yes/no judgments, topic labels, VSM items, moderation tasks)
/// and answers each with a well-formed, hash-derived reply.
#[derive(Debug, Clone)]
pub struct SyntheticChat {
    opinions_per_extraction: usize,
}

impl SyntheticChat {
    pub fn new(opinions_per_extraction: usize) -> Self {
        SyntheticChat { opinions_per_extraction }
    }
}

impl Default for SyntheticChat {
    fn default() -> Self {
        SyntheticChat::new(12)
    }
}

fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

impl ChatBackend for SyntheticChat {
    fn complete(&self, _binding: &BackendBinding, history: &[ChatMessage]) -> Result<String, BackendFailure> {
        let system = history.first().map(|m| m.content.as_str()).unwrap_or("");
        let last = history.last().map(|m| m.content.as_str()).unwrap_or("");
        let transcript: String = history.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let h = stable_hash(&transcript);

        if system.contains(dialogue::PERSONA_MARKER) {
            let name = line_value(system, dialogue::NAME_LINE_PREFIX).unwrap_or("Agent");
            let step = history.iter().filter(|m| m.role == Role::Assistant).count();
            let aspect = ASPECTS[(h % ASPECTS.len() as u64) as usize];
            return Ok(format!(
                "As {name}, I would point to {aspect} here; it shapes how we see this question (point {step}-{:06x}).",
                h & 0xff_ffff
            ));
        }
        if last.contains(refinement::EXTRACTION_MARKER) {
            let culture = line_value(last, refinement::TARGET_CULTURE_PREFIX).unwrap_or("local");
            let lines: Vec<String> = (0..self.opinions_per_extraction)
                .map(|i| {
                    let hi = stable_hash(&format!("{h}:{i}"));
                    let aspect = ASPECTS[(hi % ASPECTS.len() as u64) as usize];
                    format!("{}. The {culture} people value {aspect} in their daily life (note {:08x})", i + 1, hi as u32)
                })
                .collect();
            return Ok(lines.join("\n"));
        }
        if last.starts_with(analysis::SAME_TOPIC_PROMPT) {
            return Ok(if h.is_multiple_of(3) { "No" } else { "Yes" }.into());
        }
        if last.starts_with(analysis::UNDERSTANDING_PROMPT) {
            return Ok(if h.is_multiple_of(5) { "No" } else { "Yes" }.into());
        }
        if last.contains(analysis::TOPIC_CLASSIFY_MARKER) {
            return Ok(TOPIC_LABELS[(h % TOPIC_LABELS.len() as u64) as usize].into());
        }
        if last.contains(analysis::YES_NO_SUFFIX) {
            // Verification judgments.
            return Ok("Yes".into());
        }
        if last.contains(vsm::ANSWER_INSTRUCTION) {
            return Ok(format!("{}", h % 5 + 1));
        }
        if let Some(task) = modbench::Task::ALL.iter().find(|t| last.starts_with(t.instruction())) {
            let labels = task.labels();
            return Ok(labels[(h % labels.len() as u64) as usize].to_string());
        }
        Ok("OK".into())
    }
}
