//! Actor and thinker policies: prompt rendering, output parsing and the
//! backends that turn a prompt into raw text.
//!
//! A [`PolicyHandle`] pairs a role with a backend. Backends are either
//! scripted (deterministic fixture behaviours, see [`scripted`]) or a remote
//! chat-completions endpoint (see [`remote`]). Every call is single-turn: the
//! whole history travels inside the one rendered prompt.

mod parse;
pub mod prompt;
pub mod remote;
pub mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_actor_output, parse_reflection, parse_thinker_output, ActorOutput, ParseError, ParseErrorKind};
pub use prompt::{render_actor_prompt, render_reflection_prompt, render_thinker_prompt, PromptOptions};
pub use remote::{RemoteEndpoint, RemoteError};
pub use scripted::ScriptedRegistry;

/// Action substituted when the actor's output cannot be parsed twice.
pub const FALLBACK_ACTION: &str = "look around";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("policy configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Actor,
    Thinker,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Actor => "actor",
            Role::Thinker => "thinker",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeParams {
    /// 0.0 is greedy decoding.
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.0, max_output_tokens: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendDescriptor {
    Scripted { name: String },
    Remote(RemoteEndpoint),
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendDescriptor::Scripted { name } => write!(f, "scripted:{name}"),
            BackendDescriptor::Remote(e) => write!(f, "remote:{}@{}", e.model, e.base_url),
        }
    }
}

/// Anything that can turn a prompt into raw model text.
pub trait Completer: Send + Sync {
    fn complete(&self, prompt: &str, decode: &DecodeParams, seed: u64) -> Result<String, PolicyError>;

    /// Whether identical `(prompt, seed)` pairs always produce identical text.
    fn is_deterministic(&self) -> bool;
}

#[derive(Clone)]
pub struct PolicyHandle {
    pub role: Role,
    pub descriptor: BackendDescriptor,
    pub decode: DecodeParams,
    /// Frozen handles are never trained; the pipeline evaluates thoughts
    /// with one.
    pub trainable: bool,
    backend: Arc<dyn Completer>,
}

impl fmt::Debug for PolicyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyHandle")
            .field("role", &self.role)
            .field("backend", &self.descriptor.to_string())
            .field("decode", &self.decode)
            .field("trainable", &self.trainable)
            .finish()
    }
}

impl PolicyHandle {
    pub fn new(role: Role, descriptor: BackendDescriptor, decode: DecodeParams, backend: Arc<dyn Completer>) -> Self {
        PolicyHandle { role, descriptor, decode, trainable: false, backend }
    }

    /// Builds a handle from a descriptor, resolving scripted names through
    /// `registry`.
    pub fn build(
        role: Role,
        descriptor: BackendDescriptor,
        decode: DecodeParams,
        registry: &ScriptedRegistry,
    ) -> Result<Self, PolicyError> {
        if decode.temperature < 0.0 || !decode.temperature.is_finite() {
            return Err(PolicyError::Config(format!("temperature must be >= 0, got {}", decode.temperature)));
        }
        if decode.max_output_tokens == 0 {
            return Err(PolicyError::Config("max_output_tokens must be positive".into()));
        }
        let backend: Arc<dyn Completer> = match &descriptor {
            BackendDescriptor::Scripted { name } => registry.get(name, role)?,
            BackendDescriptor::Remote(endpoint) => Arc::new(remote::RemoteBackend::new(endpoint.clone())?),
        };
        Ok(PolicyHandle::new(role, descriptor, decode, backend))
    }

    pub fn scripted(role: Role, name: &str, registry: &ScriptedRegistry) -> Result<Self, PolicyError> {
        Self::build(role, BackendDescriptor::Scripted { name: name.to_string() }, DecodeParams::default(), registry)
    }

    pub fn trainable(mut self, yes: bool) -> Self {
        self.trainable = yes;
        self
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        let mut h = self.clone();
        h.decode.temperature = temperature;
        h
    }

    /// One backend call. Remote backends are not guaranteed to repeat
    /// themselves even at temperature 0.
    pub fn complete(&self, prompt: &str, seed: u64) -> Result<String, PolicyError> {
        self.backend.complete(prompt, &self.decode, seed)
    }

    pub fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    pub fn is_remote(&self) -> bool {
        matches!(self.descriptor, BackendDescriptor::Remote(_))
    }
}
