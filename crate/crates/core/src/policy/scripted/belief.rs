//! What a rule-ignorant agent can infer about the world from observation
//! text alone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::policy::prompt::PromptView;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Belief {
    pub room: Option<String>,
    pub facing: Option<String>,
    pub holding: Option<String>,
    /// Room → exits, from the latest listing of that room.
    pub exits: BTreeMap<String, BTreeSet<String>>,
    /// Room → things listed in it.
    pub room_things: BTreeMap<String, BTreeSet<String>>,
    /// Receptacle → objects last seen inside.
    pub contents: BTreeMap<String, BTreeSet<String>>,
    /// Receptacles last seen closed.
    pub closed: BTreeSet<String>,
    pub visited_rooms: BTreeSet<String>,
    pub visited_receptacles: BTreeSet<String>,
}

fn parse_list(list: &str) -> BTreeSet<String> {
    let list = list.trim();
    if list == "nothing" || list == "none" || list.is_empty() {
        return BTreeSet::new();
    }
    list.split(", ").map(|i| i.strip_prefix("a ").unwrap_or(i).trim().to_string()).collect()
}

fn strip_the(s: &str) -> &str {
    s.strip_prefix("the ").unwrap_or(s)
}

impl Belief {
    pub fn from_view(view: &PromptView) -> Belief {
        let mut b = Belief::default();
        b.observe(&view.initial_observation);
        for s in &view.steps {
            b.observe(&s.observation);
        }
        b
    }

    /// Folds one observation in. Unknown sentences are ignored.
    pub fn observe(&mut self, text: &str) {
        let body = text.trim().trim_end_matches('.');
        // Room listing subjects are rooms; anything else listed with
        // "In/On the X" is a receptacle.
        let mut listing_room: Option<String> = None;
        for sentence in body.split(". ") {
            let s = sentence.trim();
            if let Some(r) = s.strip_prefix("You are in the ") {
                self.enter(r);
                listing_room = Some(r.to_string());
            } else if let Some(r) = s.strip_prefix("You enter the ") {
                self.enter(r);
                self.facing = None;
                listing_room = Some(r.to_string());
            } else if let Some(rest) = s.strip_prefix("In the ").or_else(|| s.strip_prefix("On the ")) {
                let Some((subject, list)) = rest.split_once(", you see ") else { continue };
                let items = parse_list(list);
                if listing_room.as_deref() == Some(subject) {
                    self.room_things.insert(subject.to_string(), items);
                } else {
                    self.closed.remove(subject);
                    self.contents.insert(subject.to_string(), items);
                }
            } else if let Some(list) = s.strip_prefix("Exits: ") {
                if let Some(room) = &listing_room {
                    self.exits.insert(room.clone(), parse_list(list));
                }
            } else if let Some(f) = s.strip_prefix("You are facing the ") {
                self.facing = Some(f.to_string());
            } else if let Some(h) = s.strip_prefix("You are carrying the ") {
                self.holding = Some(h.to_string());
            } else if let Some(r) = s.strip_prefix("You arrive at the ") {
                self.facing = Some(r.to_string());
                self.visited_receptacles.insert(r.to_string());
            } else if let Some(r) = s.strip_prefix("The ").and_then(|r| r.strip_suffix(" is closed")) {
                self.closed.insert(r.to_string());
            } else if let Some(r) = s.strip_prefix("You open the ") {
                self.closed.remove(r);
            } else if let Some(r) = s.strip_prefix("You close the ") {
                self.closed.insert(r.to_string());
            } else if let Some(rest) = s.strip_prefix("You pick up the ") {
                if let Some((obj, src)) = rest.split_once(" from ") {
                    if let Some(c) = self.contents.get_mut(strip_the(src)) {
                        c.remove(obj);
                    }
                    self.holding = Some(obj.to_string());
                }
            } else if let Some(rest) = s.strip_prefix("You put the ") {
                let split = rest.split_once(" in the ").or_else(|| rest.split_once(" on the "));
                if let Some((obj, dest)) = split {
                    self.contents.entry(dest.to_string()).or_default().insert(obj.to_string());
                    self.holding = None;
                }
            }
        }
    }

    fn enter(&mut self, room: &str) {
        self.room = Some(room.to_string());
        self.visited_rooms.insert(room.to_string());
    }

    /// Room in which `thing` was listed.
    pub fn room_of(&self, thing: &str) -> Option<&str> {
        self.room_things.iter().find(|(_, t)| t.contains(thing)).map(|(r, _)| r.as_str())
    }

    /// Receptacle last seen holding `object`.
    pub fn container_of(&self, object: &str) -> Option<&str> {
        self.contents.iter().find(|(_, c)| c.contains(object)).map(|(r, _)| r.as_str())
    }

    /// Known rooms not yet entered.
    pub fn unvisited_rooms(&self) -> BTreeSet<&str> {
        self.exits
            .values()
            .flatten()
            .chain(self.exits.keys())
            .filter(|r| !self.visited_rooms.contains(*r))
            .map(String::as_str)
            .collect()
    }

    /// First exit to take from the current room towards `goal`, by
    /// breadth-first search over known exits (sorted neighbours).
    pub fn next_hop(&self, goal: &str) -> Option<String> {
        let start = self.room.as_deref()?;
        if start == goal {
            return None;
        }
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([start]);
        while let Some(r) = queue.pop_front() {
            for n in self.exits.get(r).into_iter().flatten() {
                let n = n.as_str();
                if n == start || prev.contains_key(n) {
                    continue;
                }
                prev.insert(n, r);
                if n == goal {
                    let mut cur = n;
                    while prev[cur] != start {
                        cur = prev[cur];
                    }
                    return Some(cur.to_string());
                }
                queue.push_back(n);
            }
        }
        None
    }

    /// First hop towards the nearest unvisited room (ties: sorted order).
    pub fn explore_hop(&self) -> Option<String> {
        let start = self.room.as_deref()?;
        let mut seen = BTreeSet::from([start]);
        let mut frontier = vec![(start, None::<&str>)];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for (r, first) in &frontier {
                for n in self.exits.get(*r).into_iter().flatten() {
                    let n = n.as_str();
                    if !seen.insert(n) {
                        continue;
                    }
                    let hop = first.unwrap_or(n);
                    if !self.visited_rooms.contains(n) {
                        return Some(hop.to_string());
                    }
                    next.push((n, Some(hop)));
                }
            }
            frontier = next;
        }
        None
    }
}
