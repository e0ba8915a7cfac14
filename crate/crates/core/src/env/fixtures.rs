//! Built-in fixture worlds, embedded at compile time.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{fingerprint, EnvError, TaskSpec};

pub const MINIHOUSE_1: &str = include_str!("../../fixtures/envs/minihouse-1.toml");
pub const MINIHOUSE_2: &str = include_str!("../../fixtures/envs/minihouse-2.toml");
pub const KEYMAZE_1: &str = include_str!("../../fixtures/envs/keymaze-1.toml");

/// Source prefix used to reference a built-in world instead of a file.
pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "minihouse-1" => Some(MINIHOUSE_1),
        "minihouse-2" => Some(MINIHOUSE_2),
        "keymaze-1" => Some(KEYMAZE_1),
        _ => None,
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["minihouse-1", "minihouse-2", "keymaze-1"];

pub fn minihouse_1() -> TaskSpec {
    TaskSpec::from_toml(MINIHOUSE_1).expect("built-in fixture is valid")
}

pub fn minihouse_2() -> TaskSpec {
    TaskSpec::from_toml(MINIHOUSE_2).expect("built-in fixture is valid")
}

pub fn keymaze_1() -> TaskSpec {
    TaskSpec::from_toml(KEYMAZE_1).expect("built-in fixture is valid")
}

pub fn all() -> Vec<TaskSpec> {
    vec![minihouse_1(), minihouse_2(), keymaze_1()]
}

/// A loaded environment together with where it came from.
#[derive(Clone, Debug)]
pub struct LoadedTask {
    pub task: Arc<TaskSpec>,
    /// `builtin:<name>` or a filesystem path.
    pub source: String,
    /// The definition text the task was parsed from.
    pub text: String,
    pub fingerprint: String,
}

/// Loads `builtin:<name>` or a TOML file path.
pub fn load(source: &str) -> Result<LoadedTask, EnvError> {
    let text = match source.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_source(name)
            .ok_or_else(|| EnvError::Io {
                path: source.to_string(),
                message: "no such built-in environment".to_string(),
            })?
            .to_string(),
        None => std::fs::read_to_string(source)
            .map_err(|e| EnvError::Io { path: source.to_string(), message: e.to_string() })?,
    };
    Ok(LoadedTask {
        task: Arc::new(TaskSpec::from_toml(&text)?),
        source: source.to_string(),
        fingerprint: fingerprint(&text),
        text,
    })
}

/// Tasks indexed by instruction text. Scripted oracle policies use this to
/// find the world a prompt talks about.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    by_instruction: BTreeMap<String, Arc<TaskSpec>>,
}

impl Catalog {
    pub fn new<I: IntoIterator<Item = Arc<TaskSpec>>>(tasks: I) -> Catalog {
        let mut by_instruction = BTreeMap::new();
        for t in tasks {
            by_instruction.insert(t.instruction.trim().to_string(), t);
        }
        Catalog { by_instruction }
    }

    pub fn builtin() -> Catalog {
        Catalog::new(all().into_iter().map(Arc::new))
    }

    pub fn by_instruction(&self, instruction: &str) -> Option<&Arc<TaskSpec>> {
        self.by_instruction.get(instruction.trim())
    }

    pub fn len(&self) -> usize {
        self.by_instruction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_instruction.is_empty()
    }
}
