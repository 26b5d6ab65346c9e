//! A small deterministic text adventure.
//!
//! Composite actions are `go <direction>` plus every `<verb> <object>` pair.
//! A rule engine decides validity from the world state; most pairs are
//! rejected in any given state. Observations are three bag-of-words count
//! vectors (last action result, room description, inventory) over the
//! game's fixed vocabulary.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, Feedback, FeedbackStep, ValidityOracle, DEFAULT_GAMMA};
use crate::nn::Tensor;

const BUILTIN_GAME: &str = include_str!("../../data/micro_text.json");
pub const MAX_VOCABULARY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Take,
    Drop,
    Open,
    Close,
    Unlock,
    Examine,
}

impl Verb {
    fn word(self) -> &'static str {
        match self {
            Verb::Take => "take",
            Verb::Drop => "drop",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Unlock => "unlock",
            Verb::Examine => "examine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitDef {
    pub direction: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub door: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomDef {
    pub name: String,
    pub description: String,
    pub exits: Vec<ExitDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub portable: bool,
    #[serde(default)]
    pub openable: bool,
    #[serde(default)]
    pub lockable: bool,
    #[serde(default)]
    pub container: bool,
    /// Initial state.
    #[serde(default)]
    pub locked: bool,
    #[serde(default)]
    pub open: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlocked_by: Option<String>,
    /// Room or container names; a reset picks one uniformly.
    pub placements: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also_visible_in: Vec<String>,
}

/// One quest stage; stages complete strictly in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestStep {
    Holding(String),
    Unlocked(String),
    Opened(String),
    InRoom(String),
}

/// The JSON game definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDef {
    pub name: String,
    pub max_steps: u32,
    pub start_room: String,
    pub directions: Vec<String>,
    pub verbs: Vec<Verb>,
    pub rooms: Vec<RoomDef>,
    pub objects: Vec<ObjectDef>,
    pub quest: Vec<QuestStep>,
    pub vocabulary: Vec<String>,
}

impl GameDef {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_GAME).expect("built-in game parses")
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EnvError::Game(format!("{}: {e}", path.display())))
    }

    pub fn action_count(&self) -> usize {
        self.directions.len() + self.verbs.len() * self.objects.len()
    }
}

/// Where an object is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Room(usize),
    Inventory,
    Inside(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectState {
    pub location: Location,
    pub open: bool,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MicroTextState {
    pub room: usize,
    pub objects: Vec<ObjectState>,
    pub progress: usize,
    pub steps: u32,
    pub done: bool,
    pub last_result: String,
}

/// Decoded composite action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextAction {
    Go(usize),
    Verb(Verb, usize),
}

/// Target room and the door object guarding the way, if any.
type Exit = (usize, Option<usize>);

#[derive(Debug)]
struct Compiled {
    def: GameDef,
    /// `exits[room][direction] = (target room, door object)`.
    exits: Vec<Vec<Option<Exit>>>,
    placements: Vec<Vec<Location>>,
    also_visible: Vec<Vec<usize>>,
    key_of: Vec<Option<usize>>,
    quest: Vec<CompiledStep>,
    vocab: HashMap<String, usize>,
    start_room: usize,
}

#[derive(Debug, Clone, Copy)]
enum CompiledStep {
    Holding(usize),
    Unlocked(usize),
    Opened(usize),
    InRoom(usize),
}

impl Compiled {
    fn new(def: GameDef) -> Result<Self, EnvError> {
        let err = |m: String| EnvError::Game(m);
        let room_idx: HashMap<&str, usize> = def.rooms.iter().enumerate().map(|(i, r)| (r.name.as_str(), i)).collect();
        let obj_idx: HashMap<&str, usize> = def.objects.iter().enumerate().map(|(i, o)| (o.name.as_str(), i)).collect();
        if room_idx.len() != def.rooms.len() || obj_idx.len() != def.objects.len() {
            return Err(err("room and object names must be unique".into()));
        }
        let dir_idx: HashMap<&str, usize> = def.directions.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let room = |n: &str| room_idx.get(n).copied().ok_or_else(|| err(format!("unknown room {n:?}")));
        let object = |n: &str| obj_idx.get(n).copied().ok_or_else(|| err(format!("unknown object {n:?}")));

        let mut exits = vec![vec![None; def.directions.len()]; def.rooms.len()];
        for (r, rd) in def.rooms.iter().enumerate() {
            for e in &rd.exits {
                let d = *dir_idx
                    .get(e.direction.as_str())
                    .ok_or_else(|| err(format!("unknown direction {:?}", e.direction)))?;
                let door = e.door.as_deref().map(object).transpose()?;
                if let Some(o) = door {
                    if !def.objects[o].openable {
                        return Err(err(format!("door {:?} must be openable", def.objects[o].name)));
                    }
                }
                exits[r][d] = Some((room(&e.to)?, door));
            }
        }

        let mut placements = Vec::new();
        let mut also_visible = Vec::new();
        let mut key_of = Vec::new();
        for od in &def.objects {
            if od.placements.is_empty() {
                return Err(err(format!("object {:?} has no placement", od.name)));
            }
            if od.container && od.portable {
                return Err(err(format!("container {:?} cannot be portable", od.name)));
            }
            let mut locs = Vec::new();
            for p in &od.placements {
                if let Some(&r) = room_idx.get(p.as_str()) {
                    locs.push(Location::Room(r));
                } else {
                    let c = object(p)?;
                    if !def.objects[c].container || c == obj_idx[od.name.as_str()] {
                        return Err(err(format!("{:?} is not a container for {:?}", p, od.name)));
                    }
                    if !def.objects[c].placements.iter().all(|q| room_idx.contains_key(q.as_str())) {
                        return Err(err(format!("container {p:?} must be placed in rooms")));
                    }
                    locs.push(Location::Inside(c));
                }
            }
            placements.push(locs);
            also_visible.push(od.also_visible_in.iter().map(|n| room(n)).collect::<Result<Vec<_>, _>>()?);
            key_of.push(od.unlocked_by.as_deref().map(object).transpose()?);
            if od.lockable && od.unlocked_by.is_none() {
                return Err(err(format!("lockable {:?} needs unlocked_by", od.name)));
            }
        }

        let quest = def
            .quest
            .iter()
            .map(|q| {
                Ok(match q {
                    QuestStep::Holding(o) => CompiledStep::Holding(object(o)?),
                    QuestStep::Unlocked(o) => CompiledStep::Unlocked(object(o)?),
                    QuestStep::Opened(o) => CompiledStep::Opened(object(o)?),
                    QuestStep::InRoom(r) => CompiledStep::InRoom(room(r)?),
                })
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        if quest.is_empty() {
            return Err(err("quest is empty".into()));
        }
        let final_room = match quest.last() {
            Some(CompiledStep::InRoom(r)) => Some(*r),
            _ => None,
        };
        for (r, rd) in def.rooms.iter().enumerate() {
            if Some(r) != final_room && !exits[r].iter().flatten().any(|(_, door)| door.is_none()) {
                return Err(err(format!("room {:?} needs an exit without a door", rd.name)));
            }
        }

        let mut vocab = HashMap::new();
        for w in &def.vocabulary {
            let n = vocab.len();
            vocab.entry(w.clone()).or_insert(n);
        }
        if vocab.len() != def.vocabulary.len() || vocab.is_empty() || vocab.len() > MAX_VOCABULARY {
            return Err(err(format!(
                "vocabulary must hold 1..={MAX_VOCABULARY} unique tokens, got {} ({} unique)",
                def.vocabulary.len(),
                vocab.len()
            )));
        }
        if def.max_steps == 0 {
            return Err(err("max_steps must be positive".into()));
        }
        let start_room = room(&def.start_room)?;
        Ok(Self {
            def,
            exits,
            placements,
            also_visible,
            key_of,
            quest,
            vocab,
            start_room,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MicroText {
    game: Arc<Compiled>,
    state: MicroTextState,
    rejections: u64,
}

impl MicroText {
    pub fn new(def: GameDef) -> Result<Self, EnvError> {
        let game = Arc::new(Compiled::new(def)?);
        let state = MicroTextState {
            room: game.start_room,
            objects: Vec::new(),
            progress: 0,
            steps: 0,
            done: false,
            last_result: String::new(),
        };
        let mut env = Self {
            game,
            state,
            rejections: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn builtin() -> Self {
        Self::new(GameDef::builtin()).expect("built-in game is valid")
    }

    pub fn def(&self) -> &GameDef {
        &self.game.def
    }

    pub fn state(&self) -> &MicroTextState {
        &self.state
    }

    pub fn vocabulary_size(&self) -> usize {
        self.game.vocab.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.game.def.objects.iter().position(|o| o.name == name)
    }

    pub fn decode(&self, action: usize) -> Option<TextAction> {
        let nd = self.game.def.directions.len();
        let no = self.game.def.objects.len();
        if action < nd {
            Some(TextAction::Go(action))
        } else if action < self.game.def.action_count() {
            let k = action - nd;
            Some(TextAction::Verb(self.game.def.verbs[k / no], k % no))
        } else {
            None
        }
    }

    pub fn encode(&self, action: TextAction) -> Option<usize> {
        let nd = self.game.def.directions.len();
        let no = self.game.def.objects.len();
        match action {
            TextAction::Go(d) if d < nd => Some(d),
            TextAction::Verb(v, o) if o < no => {
                let vi = self.game.def.verbs.iter().position(|x| *x == v)?;
                Some(nd + vi * no + o)
            }
            _ => None,
        }
    }

    /// Index of a composite action by its text, e.g. `"take key"`.
    pub fn action_by_name(&self, text: &str) -> Option<usize> {
        (0..self.game.def.action_count()).find(|&a| self.action_name(a) == text)
    }

    pub fn action_name(&self, action: usize) -> String {
        match self.decode(action) {
            Some(TextAction::Go(d)) => format!("go {}", self.game.def.directions[d]),
            Some(TextAction::Verb(v, o)) => format!("{} {}", v.word(), self.game.def.objects[o].name),
            None => format!("<invalid {action}>"),
        }
    }

    fn visible_in_room(&self, o: usize) -> bool {
        let placed_here = match self.state.objects[o].location {
            Location::Room(r) => r == self.state.room,
            Location::Inventory => false,
            Location::Inside(c) => self.state.objects[c].open && self.visible_in_room(c),
        };
        placed_here || self.game.also_visible[o].contains(&self.state.room)
    }

    fn held(&self, o: usize) -> bool {
        self.state.objects[o].location == Location::Inventory
    }

    fn is_valid(&self, action: TextAction) -> bool {
        let defs = &self.game.def.objects;
        match action {
            TextAction::Go(d) => match self.game.exits[self.state.room][d] {
                Some((_, Some(door))) => self.state.objects[door].open,
                Some((_, None)) => true,
                None => false,
            },
            TextAction::Verb(v, o) => {
                let s = &self.state.objects[o];
                let here = self.visible_in_room(o);
                match v {
                    Verb::Take => defs[o].portable && here,
                    Verb::Drop => self.held(o),
                    Verb::Open => defs[o].openable && here && !s.open && !s.locked,
                    Verb::Close => defs[o].openable && here && s.open,
                    Verb::Unlock => {
                        defs[o].lockable && here && s.locked && self.game.key_of[o].is_some_and(|k| self.held(k))
                    }
                    Verb::Examine => here || self.held(o),
                }
            }
        }
    }

    fn apply(&mut self, action: TextAction) -> String {
        let def = &self.game.def;
        match action {
            TextAction::Go(d) => {
                let (to, _) = self.game.exits[self.state.room][d].expect("validated exit");
                self.state.room = to;
                format!("you go {} to the {}", def.directions[d], def.rooms[to].name)
            }
            TextAction::Verb(v, o) => {
                let name = &def.objects[o].name;
                let s = &mut self.state.objects[o];
                match v {
                    Verb::Take => s.location = Location::Inventory,
                    Verb::Drop => s.location = Location::Room(self.state.room),
                    Verb::Open => s.open = true,
                    Verb::Close => s.open = false,
                    Verb::Unlock => s.locked = false,
                    Verb::Examine => {
                        return format!("you examine the {name} {}", def.objects[o].description);
                    }
                }
                format!("you {} the {name}", v.word())
            }
        }
    }

    fn step_done(&self, step: CompiledStep) -> bool {
        match step {
            CompiledStep::Holding(o) => self.held(o),
            CompiledStep::Unlocked(o) => !self.state.objects[o].locked,
            CompiledStep::Opened(o) => self.state.objects[o].open,
            CompiledStep::InRoom(r) => self.state.room == r,
        }
    }

    /// Room description as rendered into the observation.
    pub fn room_text(&self) -> String {
        let def = &self.game.def;
        let room = &def.rooms[self.state.room];
        let mut out = format!("you are in the {} {}", room.name, room.description);
        let visible: Vec<usize> = (0..def.objects.len()).filter(|&o| self.visible_in_room(o)).collect();
        if !visible.is_empty() {
            out.push_str(" you see");
            for o in visible {
                out.push_str(" the ");
                out.push_str(&def.objects[o].name);
                if def.objects[o].openable {
                    let s = &self.state.objects[o];
                    out.push_str(match (s.open, s.locked) {
                        (true, _) => " is open",
                        (false, true) => " is locked",
                        (false, false) => " is closed",
                    });
                }
            }
        }
        out.push_str(" exits");
        for (d, e) in self.game.exits[self.state.room].iter().enumerate() {
            if e.is_some() {
                out.push(' ');
                out.push_str(&def.directions[d]);
            }
        }
        out
    }

    /// Inventory text; empty when nothing is carried.
    pub fn inventory_text(&self) -> String {
        let def = &self.game.def;
        let held: Vec<&str> = (0..def.objects.len())
            .filter(|&o| self.held(o))
            .map(|o| def.objects[o].name.as_str())
            .collect();
        if held.is_empty() {
            String::new()
        } else {
            format!("you carry the {}", held.join(" the "))
        }
    }

    fn bag_of_words(&self, text: &str, out: &mut [f32]) {
        for tok in text.split_whitespace() {
            if let Some(&i) = self.game.vocab.get(tok) {
                out[i] += 1.0;
            }
        }
    }
}

impl Environment for MicroText {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            action_count: self.game.def.action_count(),
            observation_shape: vec![3 * self.game.vocab.len()],
            max_steps: self.game.def.max_steps,
            gamma: DEFAULT_GAMMA,
        }
    }

    /// Fixed world; the seed only chooses each object's placement.
    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let def = &self.game.def;
        let objects = def
            .objects
            .iter()
            .zip(&self.game.placements)
            .map(|(od, locs)| ObjectState {
                location: locs[rng.gen_range(0..locs.len())],
                open: od.open,
                locked: od.locked,
            })
            .collect();
        self.state = MicroTextState {
            room: self.game.start_room,
            objects,
            progress: 0,
            steps: 0,
            done: false,
            last_result: format!("you wake up in the {}", def.rooms[self.game.start_room].name),
        };
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<FeedbackStep, EnvError> {
        let decoded = self.decode(action).ok_or(EnvError::ActionOutOfRange {
            action,
            count: self.game.def.action_count(),
        })?;
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        self.state.steps += 1;
        let timeout = self.state.steps >= self.game.def.max_steps;
        if !self.is_valid(decoded) {
            self.rejections += 1;
            self.state.done = timeout;
            return Ok(FeedbackStep {
                observation: self.observation(),
                reward: 0.0,
                done: timeout,
                feedback: Feedback::Rejected,
            });
        }
        self.state.last_result = self.apply(decoded);
        while self.state.progress < self.game.quest.len() && self.step_done(self.game.quest[self.state.progress]) {
            self.state.progress += 1;
        }
        let solved = self.state.progress == self.game.quest.len();
        self.state.done = solved || timeout;
        Ok(FeedbackStep {
            observation: self.observation(),
            reward: if solved { 1.0 } else { 0.0 },
            done: self.state.done,
            feedback: Feedback::Valid,
        })
    }

    fn observation(&self) -> Tensor<f32> {
        let v = self.game.vocab.len();
        let mut data = vec![0.0f32; 3 * v];
        self.bag_of_words(&self.state.last_result, &mut data[..v]);
        self.bag_of_words(&self.room_text(), &mut data[v..2 * v]);
        self.bag_of_words(&self.inventory_text(), &mut data[2 * v..]);
        Tensor::new(vec![3 * v], data).expect("observation length matches vocabulary")
    }

    fn rejection_count(&self) -> u64 {
        self.rejections
    }
}

impl ValidityOracle for MicroText {
    fn valid_actions(&self) -> Vec<usize> {
        (0..self.game.def.action_count())
            .filter(|&a| self.decode(a).is_some_and(|d| self.is_valid(d)))
            .collect()
    }
}
