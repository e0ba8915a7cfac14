use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Object,
    Receptacle,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Room(String),
    Inside(String),
    Hand,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub location: Location,
    /// Only receptacles that can be opened carry this flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub attributes: BTreeSet<String>,
}

impl Entity {
    pub fn is_receptacle(&self) -> bool {
        self.kind == EntityKind::Receptacle
    }

    pub fn is_closed(&self) -> bool {
        self.open == Some(false)
    }

    /// Surfaces are described with "on", everything else with "in".
    pub fn is_surface(&self) -> bool {
        self.attributes.contains("surface")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Agent {
    pub room: String,
    #[serde(default)]
    pub facing: Option<String>,
    #[serde(default)]
    pub hand: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Room {
    pub exits: BTreeSet<String>,
}

/// Full simulator state. Agents never see this directly, only rendered
/// observations of it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub rooms: BTreeMap<String, Room>,
    pub entities: BTreeMap<String, Entity>,
    pub agent: Agent,
    /// Latched indices of subgoals declared irreversible.
    #[serde(default)]
    pub milestones: BTreeSet<usize>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl WorldState {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn receptacle(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id).filter(|e| e.is_receptacle())
    }

    /// Entities whose location is directly the given room, sorted by id.
    pub fn in_room<'a>(&'a self, room: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entities
            .iter()
            .filter(move |(_, e)| matches!(&e.location, Location::Room(r) if r == room))
            .map(|(id, _)| id.as_str())
    }

    pub fn contents<'a>(&'a self, receptacle: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entities
            .iter()
            .filter(move |(_, e)| matches!(&e.location, Location::Inside(r) if r == receptacle))
            .map(|(id, _)| id.as_str())
    }

    /// The room an entity ultimately sits in (following containment).
    pub fn room_of(&self, id: &str) -> Option<&str> {
        let mut cur = self.entities.get(id)?;
        for _ in 0..=self.entities.len() {
            match &cur.location {
                Location::Room(r) => return Some(r),
                Location::Hand => return Some(&self.agent.room),
                Location::Inside(parent) => cur = self.entities.get(parent)?,
            }
        }
        None
    }

    pub fn held_count(&self) -> usize {
        self.entities.values().filter(|e| e.location == Location::Hand).count()
    }
}
