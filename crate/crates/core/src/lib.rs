//! Cultural dialogue forge.
//!
//! Generates fine-tuning data for culture-specific chat models by running
//! two-agent dialogues (an English main contact and a cultural delegate),
//! refining the transcripts into deduplicated question/answer samples, and
//! evaluating models on Hofstede VSM-2013 alignment and zero-shot content
//! moderation.
//!
//! Module map:
//!
//! - [`registry`]: cultures, persona roster, seed survey corpora
//! - [`gateway`]: chat/embedding backends, retry, rate limiting, call log
//! - [`dialogue`]: session construction, turn scheduling, steering, transcripts
//! - [`refinement`]: opinion extraction, verification, k-means dedup, export
//! - [`analysis`]: extend rate, understanding ratio, topic mix, diversity gain
//! - [`vsm`]: VSM-2013 survey administration and dimension scoring
//! - [`modbench`]: moderation prompts, label parsing, F1 reports
//! - [`batch`]: resumable batch jobs tying the above together
//! - [`events`]: gapless per-session event log used by the session service

pub mod analysis;
pub mod batch;
pub mod dialogue;
pub mod events;
pub mod gateway;
pub mod modbench;
pub mod refinement;
pub mod registry;
pub mod util;
pub mod vsm;

pub use dialogue::{DialogueSession, Mode, SessionStatus, Turn, TurnKind};
pub use gateway::{BackendBinding, ChatMessage, EmbeddingVector, Gateway};
pub use registry::{AgentPersona, CultureId, CultureRegistry, Gender, SeedCorpus, SeedDatum};
