use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rules::{Rule, RuleSet};
use super::world::{Agent, Entity, EntityKind, Location, Room, WorldState};
use super::EnvError;

/// Predicate over a world state. Evaluation is total: references to unknown
/// entities are simply false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Open(String),
    Closed(String),
    Holding(String),
    /// `at` is a room id, a receptacle id, or `"hand"`.
    Located {
        entity: String,
        at: String,
    },
    AgentIn(String),
    Facing(String),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn holds(&self, s: &WorldState) -> bool {
        match self {
            Predicate::Open(id) => s.entity(id).is_some_and(|e| e.open == Some(true)),
            Predicate::Closed(id) => s.entity(id).is_some_and(|e| e.open == Some(false)),
            Predicate::Holding(id) => s.agent.hand.as_deref() == Some(id.as_str()),
            Predicate::Located { entity, at } => s.entity(entity).is_some_and(|e| match &e.location {
                Location::Hand => at == "hand",
                Location::Room(r) | Location::Inside(r) => r == at,
            }),
            Predicate::AgentIn(room) => s.agent.room == *room,
            Predicate::Facing(id) => s.agent.facing.as_deref() == Some(id.as_str()),
            Predicate::All(ps) => ps.iter().all(|p| p.holds(s)),
            Predicate::Any(ps) => ps.iter().any(|p| p.holds(s)),
            Predicate::Not(p) => !p.holds(s),
        }
    }

    fn referenced_ids<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::Open(id)
            | Predicate::Closed(id)
            | Predicate::Holding(id)
            | Predicate::AgentIn(id)
            | Predicate::Facing(id) => out.push(id),
            Predicate::Located { entity, at } => {
                out.push(entity);
                if at != "hand" {
                    out.push(at);
                }
            }
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.referenced_ids(out)),
            Predicate::Not(p) => p.referenced_ids(out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub description: String,
    pub predicate: Predicate,
    /// Irreversible subgoals stay satisfied once reached.
    #[serde(default)]
    pub sticky: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub initial_world: WorldState,
    pub subgoals: Vec<Subgoal>,
    pub rules: RuleSet,
    pub action_space_doc: String,
    pub examples: Vec<String>,
    pub max_steps_default: usize,
}

// ---- file schema ---------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    id: Option<String>,
    instruction: Option<String>,
    #[serde(default)]
    action_space: String,
    #[serde(default)]
    examples: Vec<String>,
    #[serde(default = "default_max_steps")]
    max_steps: usize,
    #[serde(default)]
    allow_initial_progress: bool,
    agent: Option<AgentDef>,
    #[serde(default)]
    rooms: Vec<RoomDef>,
    #[serde(default)]
    entities: Vec<EntityDef>,
    #[serde(default)]
    rules: Vec<Rule>,
    #[serde(default)]
    subgoals: Vec<SubgoalDef>,
}

fn default_max_steps() -> usize {
    50
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDef {
    room: String,
    #[serde(default)]
    facing: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomDef {
    id: String,
    #[serde(default)]
    exits: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityDef {
    id: String,
    kind: EntityKind,
    location: String,
    #[serde(default)]
    open: Option<bool>,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubgoalDef {
    #[serde(default)]
    description: String,
    predicate: Option<Predicate>,
    #[serde(default)]
    sticky: bool,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> EnvError {
    EnvError::Validation { field: field.into(), message: message.into() }
}

/// SHA-256 of an environment definition's bytes, hex encoded.
pub fn fingerprint(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

impl TaskSpec {
    /// Parses and validates an environment definition (TOML).
    pub fn from_toml(source: &str) -> Result<TaskSpec, EnvError> {
        let file: EnvFile = toml::from_str(source).map_err(|e| EnvError::Parse(e.to_string()))?;
        let id = file.id.filter(|s| !s.trim().is_empty()).ok_or_else(|| invalid("id", "missing task id"))?;
        let instruction = file
            .instruction
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| invalid("instruction", "missing instruction"))?;
        let agent_def = file.agent.ok_or_else(|| invalid("agent", "missing agent section"))?;

        let mut rooms = BTreeMap::new();
        for (i, r) in file.rooms.iter().enumerate() {
            if rooms.insert(r.id.clone(), Room { exits: r.exits.iter().cloned().collect() }).is_some() {
                return Err(invalid(format!("rooms[{i}].id"), format!("duplicate room `{}`", r.id)));
            }
        }
        let room_ids: BTreeSet<&String> = rooms.keys().collect();
        let entity_ids: HashSet<&str> = file.entities.iter().map(|e| e.id.as_str()).collect();

        let mut entities = BTreeMap::new();
        let mut hand = None;
        for (i, e) in file.entities.iter().enumerate() {
            let location = if e.location == "hand" {
                if hand.replace(e.id.clone()).is_some() {
                    return Err(invalid(format!("entities[{i}].location"), "more than one entity in hand"));
                }
                Location::Hand
            } else if room_ids.contains(&e.location) {
                Location::Room(e.location.clone())
            } else if entity_ids.contains(e.location.as_str()) {
                Location::Inside(e.location.clone())
            } else {
                return Err(invalid(
                    format!("entities[{i}].location"),
                    format!("`{}` is neither a room, an entity nor `hand`", e.location),
                ));
            };
            let entity =
                Entity { kind: e.kind, location, open: e.open, attributes: e.attributes.iter().cloned().collect() };
            if entities.insert(e.id.clone(), entity).is_some() {
                return Err(invalid(format!("entities[{i}].id"), format!("duplicate entity `{}`", e.id)));
            }
        }

        let mut subgoals = Vec::with_capacity(file.subgoals.len());
        for (i, sg) in file.subgoals.into_iter().enumerate() {
            let predicate =
                sg.predicate.ok_or_else(|| invalid(format!("subgoals[{i}].predicate"), "missing subgoal predicate"))?;
            subgoals.push(Subgoal { description: sg.description, predicate, sticky: sg.sticky });
        }

        let world = WorldState {
            rooms,
            entities,
            agent: Agent { room: agent_def.room, facing: agent_def.facing, hand },
            milestones: BTreeSet::new(),
            rng_seed: 0,
        };
        let task = TaskSpec {
            id,
            instruction,
            initial_world: world,
            subgoals,
            rules: RuleSet { rules: file.rules },
            action_space_doc: file.action_space,
            examples: file.examples,
            max_steps_default: file.max_steps,
        };
        task.validate(file.allow_initial_progress)?;
        Ok(task)
    }

    pub fn from_path(path: &Path) -> Result<(TaskSpec, String), EnvError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let task = TaskSpec::from_toml(&source)?;
        Ok((task, fingerprint(&source)))
    }

    /// Checks structural invariants. Called by the loaders; exposed for
    /// specs assembled in code.
    pub fn validate(&self, allow_initial_progress: bool) -> Result<(), EnvError> {
        if self.subgoals.is_empty() {
            return Err(invalid("subgoals", "a task needs at least one subgoal"));
        }
        if self.max_steps_default == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        let w = &self.initial_world;
        if !w.rooms.contains_key(&w.agent.room) {
            return Err(invalid("agent.room", format!("unknown room `{}`", w.agent.room)));
        }
        for (room, r) in &w.rooms {
            for exit in &r.exits {
                if !w.rooms.contains_key(exit) {
                    return Err(invalid(format!("rooms.{room}.exits"), format!("unknown room `{exit}`")));
                }
            }
        }
        if w.held_count() > 1 {
            return Err(invalid("entities", "more than one entity in hand"));
        }
        for (id, e) in &w.entities {
            if e.open.is_some() && e.kind != EntityKind::Receptacle {
                return Err(invalid(format!("entities.{id}.open"), "only receptacles can be opened"));
            }
            match (&e.kind, &e.location) {
                (EntityKind::Receptacle, Location::Room(_)) => {}
                (EntityKind::Receptacle, _) => {
                    return Err(invalid(format!("entities.{id}.location"), "receptacles must stand in a room"))
                }
                (EntityKind::Object, Location::Inside(p)) if w.receptacle(p).is_none() => {
                    return Err(invalid(format!("entities.{id}.location"), format!("`{p}` is not a receptacle")))
                }
                _ => {}
            }
        }
        if let Some(f) = &w.agent.facing {
            match w.receptacle(f) {
                Some(e) if matches!(&e.location, Location::Room(r) if *r == w.agent.room) => {}
                _ => return Err(invalid("agent.facing", format!("`{f}` is not a receptacle in the agent's room"))),
            }
        }
        let mut seen = HashSet::new();
        for (i, r) in self.rules.rules.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(invalid(format!("rules[{i}].id"), format!("duplicate rule id `{}`", r.id)));
            }
        }
        for (i, sg) in self.subgoals.iter().enumerate() {
            let mut ids = Vec::new();
            sg.predicate.referenced_ids(&mut ids);
            for id in ids {
                if !w.entities.contains_key(id) && !w.rooms.contains_key(id) {
                    return Err(invalid(format!("subgoals[{i}].predicate"), format!("unknown id `{id}`")));
                }
            }
        }
        if !allow_initial_progress {
            if let Some(i) = self.subgoals.iter().position(|sg| sg.predicate.holds(w)) {
                return Err(invalid(format!("subgoals[{i}]"), "satisfied by the initial world"));
            }
        }
        Ok(())
    }
}
