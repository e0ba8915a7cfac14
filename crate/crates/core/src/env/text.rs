//! Observation text. Lists are shuffled by the episode seed; nothing else
//! about the text depends on it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::world::WorldState;
use crate::util::fnv1a;

fn shuffled<'a>(state: &WorldState, context: &str, mut items: Vec<&'a str>) -> Vec<&'a str> {
    let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed ^ fnv1a(context.as_bytes()));
    items.shuffle(&mut rng);
    items
}

fn article_list(items: &[&str]) -> String {
    if items.is_empty() {
        "nothing".to_string()
    } else {
        items.iter().map(|i| format!("a {i}")).collect::<Vec<_>>().join(", ")
    }
}

fn plain_list(items: &[&str]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join(", ")
    }
}

/// "In the kitchen, you see a fridge 1, a table 1. Exits: hallway."
pub fn room_listing(state: &WorldState, room: &str) -> String {
    let things = shuffled(state, &format!("room:{room}"), state.in_room(room).collect());
    let exits = state.rooms.get(room).map(|r| r.exits.iter().map(String::as_str).collect()).unwrap_or_default();
    let exits = shuffled(state, &format!("exits:{room}"), exits);
    format!("In the {room}, you see {}. Exits: {}.", article_list(&things), plain_list(&exits))
}

/// "On the table 1, you see a plate 1." or "The fridge 1 is closed."
pub fn receptacle_listing(state: &WorldState, id: &str) -> String {
    let Some(e) = state.entity(id) else {
        return String::new();
    };
    if e.is_closed() {
        return format!("The {id} is closed.");
    }
    let items = shuffled(state, &format!("in:{id}"), state.contents(id).collect());
    let prep = if e.is_surface() { "On" } else { "In" };
    format!("{prep} the {id}, you see {}.", article_list(&items))
}

pub fn look(state: &WorldState) -> String {
    let room = &state.agent.room;
    let mut text = format!("You are in the {room}. {}", room_listing(state, room));
    if let Some(f) = &state.agent.facing {
        text.push_str(&format!(" You are facing the {f}."));
    }
    if let Some(h) = &state.agent.hand {
        text.push_str(&format!(" You are carrying the {h}."));
    }
    text
}
