//! Discrete-tick town: bodies on a plane, straight-line movement and
//! vicinity-based delivery of speech.
//!
//! One tick has three phases driven by the caller:
//! [`World::sense_phase`] moves bodies and delivers the utterances queued
//! during the previous tick, the caller then feeds each brain and applies
//! its action with [`World::apply_action`], and [`World::finish_tick`]
//! advances the clock.

mod map;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Action, Observation, WorldView};

pub use map::{move_toward, Location, Point, WorldMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("map: {0}")]
    Map(String),
    #[error("body `{0}` already exists")]
    DuplicateBody(String),
    #[error("no body `{0}`")]
    UnknownBody(String),
    #[error("unknown spawn location `{0}`")]
    UnknownSpawn(String),
    #[error("position ({x}, {y}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("live humans can only join a realtime world")]
    LiveHumanInDeterministicMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Agent,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "name", rename_all = "snake_case")]
pub enum Destination {
    Location(String),
    Body(String),
    /// A bare map coordinate; used by human players.
    Point(Point),
}

impl Destination {
    pub fn name(&self) -> String {
        match self {
            Destination::Location(n) | Destination::Body(n) => n.clone(),
            Destination::Point(p) => format!("({:.1}, {:.1})", p.x, p.y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: String,
    pub kind: BodyKind,
    pub position: Point,
    pub destination: Option<Destination>,
    pub speed: f64,
    arrived: bool,
    move_failed: bool,
    failed_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingUtterance {
    pub speaker: String,
    pub text: String,
    pub tick: u64,
}

/// One line of `world.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: WorldEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEventKind {
    BodyAdded { id: String, kind: BodyKind, x: f64, y: f64 },
    Destination { id: String, target: String },
    MoveFailed { id: String, target: String },
    Arrived { id: String, target: String },
    Utterance { speaker: String, text: String },
    Delivered { speaker: String, text: String, to: Vec<String> },
    Proximity { a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySnapshot {
    pub id: String,
    pub kind: BodyKind,
    pub x: f64,
    pub y: f64,
    pub destination: Option<String>,
    /// Nearest location within the vicinity radius.
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: u64,
    pub map: String,
    pub vicinity_radius: f64,
    pub locations: Vec<Location>,
    pub bodies: Vec<BodySnapshot>,
}

#[derive(Debug, Clone)]
pub struct World {
    map: WorldMap,
    mode: Mode,
    tick: u64,
    bodies: Vec<Body>,
    pending: Vec<PendingUtterance>,
    inbox: Vec<Vec<Observation>>,
    in_range: BTreeSet<(usize, usize)>,
    log: Vec<WorldEvent>,
}

impl World {
    pub fn new(map: WorldMap, mode: Mode) -> Self {
        Self {
            map,
            mode,
            tick: 0,
            bodies: Vec::new(),
            pending: Vec::new(),
            inbox: Vec::new(),
            in_range: BTreeSet::new(),
            log: Vec::new(),
        }
    }

    pub fn map(&self) -> &WorldMap {
        &self.map
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn pending(&self) -> &[PendingUtterance] {
        &self.pending
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id)
    }

    pub fn position(&self, id: &str) -> Option<Point> {
        self.index_of(id).map(|i| self.bodies[i].position)
    }

    pub fn log(&self) -> &[WorldEvent] {
        &self.log
    }

    pub fn drain_log(&mut self) -> Vec<WorldEvent> {
        std::mem::take(&mut self.log)
    }

    fn record(&mut self, kind: WorldEventKind) {
        self.log.push(WorldEvent { tick: self.tick, kind });
    }

    fn add_body(&mut self, id: &str, kind: BodyKind, position: Point) -> Result<usize, WorldError> {
        if self.index_of(id).is_some() {
            return Err(WorldError::DuplicateBody(id.to_string()));
        }
        if !self.map.contains(position) {
            return Err(WorldError::OutOfBounds {
                x: position.x,
                y: position.y,
            });
        }
        self.bodies.push(Body {
            id: id.to_string(),
            kind,
            position,
            destination: None,
            speed: self.map.speed,
            arrived: false,
            move_failed: false,
            failed_pending: false,
        });
        self.inbox.push(Vec::new());
        self.record(WorldEventKind::BodyAdded {
            id: id.to_string(),
            kind,
            x: position.x,
            y: position.y,
        });
        Ok(self.bodies.len() - 1)
    }

    /// Agents are processed in the order they are added.
    pub fn add_agent(&mut self, id: &str, position: Point) -> Result<usize, WorldError> {
        self.add_body(id, BodyKind::Agent, position)
    }

    pub fn spawn_point(&self, location: &str) -> Result<Point, WorldError> {
        self.map
            .location(location)
            .map(Location::point)
            .ok_or_else(|| WorldError::UnknownSpawn(location.to_string()))
    }

    /// A live human proxy. Rejected in deterministic mode.
    pub fn attach_human(&mut self, player_id: &str, position: Point) -> Result<usize, WorldError> {
        if self.mode == Mode::Deterministic {
            return Err(WorldError::LiveHumanInDeterministicMode);
        }
        self.add_body(player_id, BodyKind::Human, position)
    }

    /// A human whose lines come from a replayed script; allowed in both modes.
    pub fn add_scripted_human(&mut self, id: &str, position: Point) -> Result<usize, WorldError> {
        self.add_body(id, BodyKind::Human, position)
    }

    /// Queues speech for delivery at the start of the next tick.
    pub fn say(&mut self, id: &str, text: &str) -> Result<(), WorldError> {
        self.index_of(id).ok_or_else(|| WorldError::UnknownBody(id.to_string()))?;
        let text = text.trim();
        if text.is_empty() {
            return Ok(());
        }
        self.pending.push(PendingUtterance {
            speaker: id.to_string(),
            text: text.to_string(),
            tick: self.tick,
        });
        self.record(WorldEventKind::Utterance {
            speaker: id.to_string(),
            text: text.to_string(),
        });
        Ok(())
    }

    /// Sets a destination by location or body name. Unknown names leave the
    /// body idle and queue a system observation for it.
    pub fn set_destination(&mut self, id: &str, target: &str) -> Result<bool, WorldError> {
        let i = self.index_of(id).ok_or_else(|| WorldError::UnknownBody(id.to_string()))?;
        let resolved = if let Some(l) = self.map.location(target) {
            Some(Destination::Location(l.name.clone()))
        } else {
            self.bodies
                .iter()
                .find(|b| b.id != id && b.id.eq_ignore_ascii_case(target))
                .map(|b| Destination::Body(b.id.clone()))
        };
        match resolved {
            Some(dest) => {
                if self.bodies[i].destination.as_ref() != Some(&dest) {
                    self.record(WorldEventKind::Destination {
                        id: id.to_string(),
                        target: dest.name(),
                    });
                    self.bodies[i].destination = Some(dest);
                }
                Ok(true)
            }
            None => {
                self.bodies[i].destination = None;
                self.bodies[i].failed_pending = true;
                let tick = self.tick;
                self.inbox[i].push(Observation::system(format!("There is no place or person called {target}."), tick));
                self.record(WorldEventKind::MoveFailed {
                    id: id.to_string(),
                    target: target.to_string(),
                });
                Ok(false)
            }
        }
    }

    /// Walks a body toward a map coordinate.
    pub fn set_destination_point(&mut self, id: &str, target: Point) -> Result<(), WorldError> {
        let i = self.index_of(id).ok_or_else(|| WorldError::UnknownBody(id.to_string()))?;
        if !self.map.contains(target) {
            return Err(WorldError::OutOfBounds { x: target.x, y: target.y });
        }
        let dest = Destination::Point(target);
        self.record(WorldEventKind::Destination {
            id: id.to_string(),
            target: dest.name(),
        });
        self.bodies[i].destination = Some(dest);
        Ok(())
    }

    pub fn apply_action(&mut self, id: &str, action: &Action) -> Result<(), WorldError> {
        match action {
            Action::Idle => Ok(()),
            Action::Say { text } => self.say(id, text),
            Action::MoveTo { destination } => self.set_destination(id, destination).map(|_| ()),
        }
    }

    fn target_point(&self, dest: &Destination) -> Option<Point> {
        match dest {
            Destination::Location(name) => self.map.location(name).map(Location::point),
            Destination::Body(id) => self.position(id),
            Destination::Point(p) => Some(*p),
        }
    }

    /// Moves every body, then delivers the queued utterances. Returns the
    /// observations for each body, indexed like [`World::bodies`].
    pub fn sense_phase(&mut self) -> Vec<Vec<Observation>> {
        let tick = self.tick;
        let mut out: Vec<Vec<Observation>> = self.inbox.iter_mut().map(std::mem::take).collect();

        for i in 0..self.bodies.len() {
            let body = &mut self.bodies[i];
            body.arrived = false;
            body.move_failed = std::mem::take(&mut body.failed_pending);
            let Some(dest) = self.bodies[i].destination.clone() else {
                continue;
            };
            let Some(target) = self.target_point(&dest) else {
                self.bodies[i].destination = None;
                continue;
            };
            let target = self.map.clamp(target);
            let body = &mut self.bodies[i];
            body.position = self.map.clamp(move_toward(body.position, target, body.speed));
            if body.position == target {
                body.arrived = true;
                body.destination = None;
                let id = body.id.clone();
                out[i].push(Observation::arrival(format!("You arrived at {}.", dest.name()), tick));
                self.record(WorldEventKind::Arrived {
                    id,
                    target: dest.name(),
                });
            }
        }

        let radius = self.map.vicinity_radius;
        let mut now_in_range = BTreeSet::new();
        for a in 0..self.bodies.len() {
            for b in a + 1..self.bodies.len() {
                if self.bodies[a].position.distance(self.bodies[b].position) <= radius {
                    now_in_range.insert((a, b));
                    if !self.in_range.contains(&(a, b)) {
                        let (na, nb) = (self.bodies[a].id.clone(), self.bodies[b].id.clone());
                        out[a].push(Observation::proximity(format!("{nb} is nearby."), tick));
                        out[b].push(Observation::proximity(format!("{na} is nearby."), tick));
                        self.record(WorldEventKind::Proximity { a: na, b: nb });
                    }
                }
            }
        }
        self.in_range = now_in_range;

        for u in std::mem::take(&mut self.pending) {
            let Some(s) = self.index_of(&u.speaker) else {
                continue;
            };
            let origin = self.bodies[s].position;
            let mut to = Vec::new();
            for (j, body) in self.bodies.iter().enumerate() {
                if j != s && body.position.distance(origin) <= radius {
                    out[j].push(Observation::utterance(&u.speaker, &u.text, tick));
                    to.push(body.id.clone());
                }
            }
            self.record(WorldEventKind::Delivered {
                speaker: u.speaker,
                text: u.text,
                to,
            });
        }
        out
    }

    pub fn finish_tick(&mut self) {
        self.tick += 1;
    }

    /// Other bodies within the vicinity radius, in body order.
    pub fn nearby(&self, i: usize) -> Vec<String> {
        let p = self.bodies[i].position;
        self.bodies
            .iter()
            .enumerate()
            .filter(|(j, b)| *j != i && b.position.distance(p) <= self.map.vicinity_radius)
            .map(|(_, b)| b.id.clone())
            .collect()
    }

    pub fn view(&self, i: usize) -> WorldView {
        let body = &self.bodies[i];
        WorldView {
            tick: self.tick,
            nearby: self.nearby(i),
            locations: self.map.location_names(),
            agents: self
                .bodies
                .iter()
                .filter(|b| b.kind == BodyKind::Agent)
                .map(|b| b.id.clone())
                .collect(),
            arrived: body.arrived,
            move_failed: body.move_failed,
        }
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: self.tick,
            map: self.map.name.clone(),
            vicinity_radius: self.map.vicinity_radius,
            locations: self.map.locations.clone(),
            bodies: self
                .bodies
                .iter()
                .map(|b| BodySnapshot {
                    id: b.id.clone(),
                    kind: b.kind,
                    x: b.position.x,
                    y: b.position.y,
                    destination: b.destination.as_ref().map(Destination::name),
                    location: self.map.location_at(b.position).map(str::to_string),
                })
                .collect(),
        }
    }
}

/// Renders events as JSON lines.
pub fn events_to_jsonl<T: Serialize>(events: &[T]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("serializable event"));
        out.push('\n');
    }
    out
}
