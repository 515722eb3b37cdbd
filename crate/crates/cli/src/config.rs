//! Backend configuration file (TOML).
//!
//! ```toml
//! seed = 7
//!
//! [retry]
//! max_attempts = 5
//! base_delay_ms = 500
//!
//! [backends.gpt]
//! endpoint = "https://api.example.com/v1"
//! model = "gpt-3.5-turbo"
//! auth_env = "EXAMPLE_API_KEY"
//! requests_per_minute = 60
//!
//! [backends.embed]
//! kind = "embedding"
//! endpoint = "https://api.example.com/v1"
//! model = "text-embedding-3-small"
//! auth_env = "EXAMPLE_API_KEY"
//!
//! [roles]
//! delegate = "gpt"
//! embedding = "embed"
//! ```
//!
//! Roles left unset use the built-in offline backends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use forge_core::gateway::mock::{synthetic_gateway, MOCK_CHAT, MOCK_EMBEDDING};
use forge_core::gateway::{BackendKind, CallLog, HttpChatBackend, HttpEmbeddingBackend, RetryPolicy};
use forge_core::{BackendBinding, Gateway};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    /// Seeds the gateway's retry jitter.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retry: Option<RetryConfig>,
    /// Appends every gateway call to this JSONL file.
    #[serde(default)]
    pub call_log: Option<PathBuf>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub roles: Roles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: u32,
    #[serde(default = "default_base_ms")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_ms")]
    pub max_delay_ms: u64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_base_ms() -> u64 {
    500
}
fn default_max_ms() -> u64 {
    30_000
}
fn default_jitter() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_kind")]
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_kind() -> BackendKind {
    BackendKind::Chat
}
fn default_timeout() -> u64 {
    120
}

/// Which backend each call site uses, by backend name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub contact: Option<String>,
    pub delegate: Option<String>,
    pub extraction: Option<String>,
    pub verification: Option<String>,
    pub embedding: Option<String>,
    pub judge: Option<String>,
    pub evaluated: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Contact,
    Delegate,
    Extraction,
    Verification,
    Embedding,
    Judge,
    Evaluated,
}

impl ForgeConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(ForgeConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ForgeConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for (name, b) in &config.backends {
            if name == MOCK_CHAT || name == MOCK_EMBEDDING {
                return Err(CliError::Config(format!("backend name {name:?} is reserved")));
            }
            if b.max_tokens == Some(0) {
                return Err(CliError::Config(format!("backend {name}: max_tokens must be positive")));
            }
        }
        Ok(config)
    }

    fn role_name(&self, role: Role) -> Option<&String> {
        let r = &self.roles;
        match role {
            Role::Contact => r.contact.as_ref(),
            Role::Delegate => r.delegate.as_ref(),
            Role::Extraction => r.extraction.as_ref(),
            Role::Verification => r.verification.as_ref(),
            Role::Embedding => r.embedding.as_ref(),
            Role::Judge => r.judge.as_ref(),
            Role::Evaluated => r.evaluated.as_ref(),
        }
    }

    /// The binding a role resolves to; offline mock when unassigned.
    pub fn binding(&self, role: Role) -> Result<BackendBinding, CliError> {
        let expected = if role == Role::Embedding { BackendKind::Embedding } else { BackendKind::Chat };
        let Some(name) = self.role_name(role) else {
            return Ok(match expected {
                BackendKind::Chat => forge_core::gateway::mock::mock_chat_binding(),
                BackendKind::Embedding => forge_core::gateway::mock::mock_embedding_binding(),
            });
        };
        let b = self
            .backends
            .get(name)
            .ok_or_else(|| CliError::Config(format!("role {role:?} names unknown backend {name:?}")))?;
        if b.kind != expected {
            return Err(CliError::Config(format!("role {role:?} needs a {expected:?} backend, {name} is {:?}", b.kind)));
        }
        let mut binding = match b.kind {
            BackendKind::Chat => BackendBinding::chat(name.clone(), b.endpoint.clone(), b.model.clone()),
            BackendKind::Embedding => BackendBinding::embedding(name.clone(), b.endpoint.clone(), b.model.clone()),
        };
        if let Some(t) = b.temperature {
            binding = binding.with_temperature(t);
        }
        if let Some(m) = b.max_tokens {
            binding.sampling.max_tokens = m;
        }
        if let Some(var) = &b.auth_env {
            binding = binding.with_auth(var.clone());
        }
        Ok(binding)
    }

    /// Gateway with the offline backends plus every configured backend.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let mut builder = synthetic_gateway().rng_seed(self.seed);
        if let Some(r) = &self.retry {
            builder = builder.retry(RetryPolicy {
                max_attempts: r.max_attempts.max(1),
                base_delay: Duration::from_millis(r.base_delay_ms),
                max_delay: Duration::from_millis(r.max_delay_ms),
                jitter: r.jitter,
            });
        }
        if let Some(path) = &self.call_log {
            let log = CallLog::with_file(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            builder = builder.call_log(log);
        }
        for (name, b) in &self.backends {
            let timeout = Duration::from_secs(b.timeout_secs);
            builder = match b.kind {
                BackendKind::Chat => builder.chat_backend(name.clone(), Arc::new(HttpChatBackend::new(timeout))),
                BackendKind::Embedding => {
                    builder.embedding_backend(name.clone(), Arc::new(HttpEmbeddingBackend::new(timeout)))
                }
            };
            if let Some(rpm) = b.requests_per_minute {
                builder = builder.rate_limit(name.clone(), rpm);
            }
        }
        Ok(builder.build())
    }
}
