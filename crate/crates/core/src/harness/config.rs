use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::frontier::FrontierConfig;
use crate::nn::Precision;

/// Greedy-ish evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Training episodes between evaluations.
    pub every_episodes: u64,
    /// Episodes per evaluation.
    pub episodes: u64,
    pub epsilon: f64,
    /// Trailing fraction of the training budget that counts as the final
    /// window for the success summary.
    pub final_window: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every_episodes: 20,
            episodes: 10,
            epsilon: 0.05,
            final_window: 0.1,
        }
    }
}

/// One experiment: an environment, a learner and a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    /// `null` or absent trains vanilla DQN.
    #[serde(default)]
    pub frontier: Option<FrontierConfig>,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Fresh rollout samples used to score the classifier after training.
    #[serde(default = "default_holdout")]
    pub holdout_samples: usize,
    /// On-policy states in the final Q-separation report.
    #[serde(default = "default_separation")]
    pub separation_states: usize,
}

fn default_holdout() -> usize {
    2000
}

fn default_separation() -> usize {
    200
}

impl RunConfig {
    /// Parses a config file. Relative environment file paths are taken
    /// relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.env = resolve_env_paths(config.env, base);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seed list contains duplicates".into());
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        for file in self.env.referenced_files() {
            if !file.is_file() {
                return bad(format!("referenced file {} does not exist", file.display()));
            }
        }
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(f) = &self.frontier {
            f.validate().map_err(|e| HarnessError::Config(format!("frontier: {e}")))?;
        }
        let e = &self.eval;
        if e.every_episodes == 0 || e.episodes == 0 {
            return bad("eval.every_episodes and eval.episodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.epsilon) || !(e.final_window > 0.0 && e.final_window <= 1.0) {
            return bad("eval.epsilon must lie in [0, 1] and eval.final_window in (0, 1]".into());
        }
        Ok(())
    }

    /// Directory holding the outputs of one seed.
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }
}

fn resolve_env_paths(env: EnvConfig, base: &Path) -> EnvConfig {
    let fix = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
    match env {
        EnvConfig::GridRooms { map, max_steps } => EnvConfig::GridRooms {
            map: fix(map),
            max_steps,
        },
        EnvConfig::MicroText { game, max_steps } => EnvConfig::MicroText {
            game: fix(game),
            max_steps,
        },
    }
}

/// Reads an environment description from a file: a JSON environment
/// config, a MicroText game definition, or a GridRooms map.
pub fn load_env_file(path: &Path) -> Result<EnvConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        if let Ok(env) = serde_json::from_str::<EnvConfig>(&text) {
            let base = path.parent().unwrap_or(Path::new(""));
            return Ok(resolve_env_paths(env, base));
        }
        return match serde_json::from_str::<crate::env::GameDef>(&text) {
            Ok(_) => Ok(EnvConfig::MicroText {
                game: Some(path.to_path_buf()),
                max_steps: None,
            }),
            Err(e) => Err(HarnessError::Config(format!(
                "{}: neither an environment config nor a game definition: {e}",
                path.display()
            ))),
        };
    }
    Ok(EnvConfig::grid_map(path))
}
