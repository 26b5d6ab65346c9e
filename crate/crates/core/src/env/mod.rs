//! Environments that can reject actions.
//!
//! Every step reports a feedback bit next to the usual reward. A rejected
//! action is a no-op: zero reward, the world and the observation stay as
//! they were, only the step counter advances.

mod grid_rooms;
mod micro_text;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

pub use grid_rooms::{
    Direction, GridLayout, GridRooms, GridRoomsState, Move, DEFAULT_GRID_MAX_STEPS, VIEW_SIZE,
};
pub use micro_text::{
    GameDef, Location, MicroText, MicroTextState, ObjectDef, ObjectState, QuestStep, RoomDef, ExitDef, TextAction, Verb,
    MAX_VOCABULARY,
};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub action_count: usize,
    pub observation_shape: Vec<usize>,
    pub max_steps: u32,
    pub gamma: f64,
}

/// Whether the environment accepted an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    Valid,
    Rejected,
}

impl Feedback {
    /// 0 for a valid action, 1 for a rejected one.
    pub fn bit(self) -> u8 {
        match self {
            Feedback::Valid => 0,
            Feedback::Rejected => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Feedback::Valid
        } else {
            Feedback::Rejected
        }
    }

    pub fn is_rejected(self) -> bool {
        self == Feedback::Rejected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackStep {
    pub observation: Tensor<f32>,
    /// Always 0.0 or 1.0.
    pub reward: f64,
    pub done: bool,
    pub feedback: Feedback,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("action {action} out of range (action space has {count} actions)")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("episode is over; call reset")]
    EpisodeDone,
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid game definition: {0}")]
    Game(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Interface the learning agent sees.
pub trait Environment {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, seed: u64) -> Tensor<f32>;
    fn step(&mut self, action: usize) -> Result<FeedbackStep, EnvError>;
    fn observation(&self) -> Tensor<f32>;
    /// Rejections since construction, counted inside the environment.
    fn rejection_count(&self) -> u64;
}

/// Ground-truth action validity. Only tests and the tabular oracle use it;
/// agents learn validity from feedback alone.
pub trait ValidityOracle {
    fn valid_actions(&self) -> Vec<usize>;
}

/// Environment selection as it appears in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    GridRooms {
        /// Map file; the built-in 8x8 five-room layout when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<PathBuf>,
        #[serde(default = "default_grid_steps")]
        max_steps: u32,
    },
    MicroText {
        /// Game definition; the built-in three-room game when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        game: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<u32>,
    },
}

fn default_grid_steps() -> u32 {
    DEFAULT_GRID_MAX_STEPS
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::GridRooms {
            map: None,
            max_steps: DEFAULT_GRID_MAX_STEPS,
        }
    }
}

impl EnvConfig {
    pub fn grid_map(map: impl Into<PathBuf>) -> Self {
        EnvConfig::GridRooms {
            map: Some(map.into()),
            max_steps: DEFAULT_GRID_MAX_STEPS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::GridRooms { .. } => "grid_rooms",
            EnvConfig::MicroText { .. } => "micro_text",
        }
    }

    /// Files this configuration refers to.
    pub fn referenced_files(&self) -> Vec<&PathBuf> {
        match self {
            EnvConfig::GridRooms { map, .. } => map.iter().collect(),
            EnvConfig::MicroText { game, .. } => game.iter().collect(),
        }
    }

    pub fn build(&self) -> Result<AnyEnv, EnvError> {
        Ok(match self {
            EnvConfig::GridRooms { map, max_steps } => {
                let layout = match map {
                    Some(path) => GridLayout::load(path)?,
                    None => GridLayout::default_8x8(),
                };
                AnyEnv::Grid(GridRooms::new(layout, *max_steps)?)
            }
            EnvConfig::MicroText { game, max_steps } => {
                let mut def = match game {
                    Some(path) => GameDef::load(path)?,
                    None => GameDef::builtin(),
                };
                if let Some(m) = max_steps {
                    def.max_steps = *m;
                }
                AnyEnv::Text(MicroText::new(def)?)
            }
        })
    }
}

/// Either concrete environment, behind one type.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Grid(GridRooms),
    Text(MicroText),
}

impl AnyEnv {
    pub fn as_grid(&self) -> Option<&GridRooms> {
        match self {
            AnyEnv::Grid(g) => Some(g),
            AnyEnv::Text(_) => None,
        }
    }
}

impl Environment for AnyEnv {
    fn spec(&self) -> EnvSpec {
        match self {
            AnyEnv::Grid(e) => e.spec(),
            AnyEnv::Text(e) => e.spec(),
        }
    }
    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        match self {
            AnyEnv::Grid(e) => e.reset(seed),
            AnyEnv::Text(e) => e.reset(seed),
        }
    }
    fn step(&mut self, action: usize) -> Result<FeedbackStep, EnvError> {
        match self {
            AnyEnv::Grid(e) => e.step(action),
            AnyEnv::Text(e) => e.step(action),
        }
    }
    fn observation(&self) -> Tensor<f32> {
        match self {
            AnyEnv::Grid(e) => e.observation(),
            AnyEnv::Text(e) => e.observation(),
        }
    }
    fn rejection_count(&self) -> u64 {
        match self {
            AnyEnv::Grid(e) => e.rejection_count(),
            AnyEnv::Text(e) => e.rejection_count(),
        }
    }
}

impl ValidityOracle for AnyEnv {
    fn valid_actions(&self) -> Vec<usize> {
        match self {
            AnyEnv::Grid(e) => e.valid_actions(),
            AnyEnv::Text(e) => e.valid_actions(),
        }
    }
}

/// Discount factor shared by the environments.
pub const DEFAULT_GAMMA: f64 = 0.99;
