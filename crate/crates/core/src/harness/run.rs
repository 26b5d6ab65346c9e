use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::q_separation_report;
use super::{HarnessError, RunConfig};
use crate::agent::{select_action, Agent, AgentError, Transition};
use crate::env::{AnyEnv, Environment, FeedbackStep};
use crate::frontier::ValidityClassifier;
use crate::nn::{Checkpoint, Network, Precision, Real, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const QNET_FILE: &str = "qnet.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const SEPARATION_FILE: &str = "separation.csv";

const RESET_STREAM: u64 = 0x1319_8a2e_0370_7344;
const EVAL_STREAM: u64 = 0xa409_3822_299f_31d0;
const HOLDOUT_STREAM: u64 = 0x082e_fa98_ec4e_6c89;
const SEPARATION_STREAM: u64 = 0x4528_21e6_38d0_1377;

/// One row of `metrics.csv`, written after every training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub env_steps: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: u8,
    pub forbidden_count: u64,
    pub dqn_loss: Option<f64>,
    pub frontier_loss: Option<f64>,
    pub classifier_acc: Option<f64>,
    pub epsilon: f64,
    pub lr: f64,
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: u64,
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub forbidden_per_episode: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutAccuracy {
    pub samples: usize,
    pub accuracy: f64,
    pub valid_samples: usize,
    pub valid_accuracy: Option<f64>,
    pub rejected_samples: usize,
    pub rejected_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: u64,
    pub env_steps: u64,
    pub grad_steps: u64,
    /// Sum of per-episode forbidden counts.
    pub cumulative_forbidden: u64,
    /// The environment's own rejection counter.
    pub env_rejections: u64,
    /// Mean evaluation success over the final window.
    pub final_window_success: Option<f64>,
    pub holdout_classifier: Option<HoldoutAccuracy>,
    /// Fraction of on-policy states whose forbidden Q-values all sit below
    /// every valid one.
    pub q_separation: Option<f64>,
}

/// `manifest.json`: the configuration echo plus the outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_secs: f64,
    pub summary: RunSummary,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.manifest.status == RunStatus::Diverged
    }
}

/// Trains every seed of `config` (in parallel) and writes per-seed
/// metrics, checkpoints and manifests under `config.output_dir`.
/// A diverging seed is recorded as such; the others still run.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<RunOutcome>, HarnessError> {
    config.validate()?;
    config.env.build()?;
    config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect()
}

/// Trains a single seed.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<RunOutcome, HarnessError> {
    let dir = config.seed_dir(seed);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let manifest = match config.precision {
        Precision::F32 => train::<f32>(config, seed, &dir)?,
        Precision::F64 => train::<f64>(config, seed, &dir)?,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Schema(e.to_string()))?;
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(RunOutcome { seed, dir, manifest })
}

#[derive(Default)]
struct EpisodeStats {
    steps: u64,
    ret: f64,
    success: bool,
    forbidden: u64,
    dqn: Vec<f64>,
    frontier: Vec<f64>,
    acc: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Whether a `done` step is a real termination rather than the step cap.
fn is_terminal(step: &FeedbackStep, episode_len: u64, max_steps: u32) -> bool {
    step.done && !(episode_len >= max_steps as u64 && step.reward == 0.0)
}

fn train<T: Real>(config: &RunConfig, seed: u64, dir: &Path) -> Result<Manifest, HarnessError> {
    let started = Instant::now();
    let mut env = config.env.build()?;
    let eval_env = env.clone();
    let spec = env.spec();
    let mut agent = Agent::<T>::new(config.agent.clone(), config.frontier.clone(), &spec, config.total_steps, seed)?;
    let mut metrics = CsvOut::create(&dir.join(METRICS_FILE))?;
    let mut evals = CsvOut::create(&dir.join(EVAL_FILE))?;
    let mut reset_rng = ChaCha8Rng::seed_from_u64(seed ^ RESET_STREAM);

    let mut episodes = 0u64;
    let mut cumulative_forbidden = 0u64;
    let mut eval_rows = Vec::new();
    let mut failure: Option<AgentError> = None;

    'training: while agent.env_steps() < config.total_steps {
        let mut obs = env.reset(reset_rng.gen());
        let mut ep = EpisodeStats::default();
        loop {
            let action = match agent.act(&obs) {
                Ok(a) => a,
                Err(e) => {
                    failure = Some(e);
                    break 'training;
                }
            };
            let step = env.step(action)?;
            ep.steps += 1;
            ep.ret += step.reward;
            if step.feedback.is_rejected() {
                ep.forbidden += 1;
            }
            if step.done && step.reward > 0.0 {
                ep.success = true;
            }
            let transition = Transition {
                observation: obs,
                action,
                reward: step.reward,
                next_observation: step.observation.clone(),
                done: is_terminal(&step, ep.steps, spec.max_steps),
                feedback: step.feedback,
            };
            match agent.observe(transition) {
                Ok(Some(report)) => {
                    ep.dqn.push(report.dqn_loss);
                    if let Some(f) = report.frontier_loss {
                        ep.frontier.push(f);
                    }
                    if let Some(c) = report.classifier {
                        ep.acc.push(c.accuracy);
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    failure = Some(e);
                    break 'training;
                }
            }
            obs = step.observation;
            if step.done || agent.env_steps() >= config.total_steps {
                break;
            }
        }
        episodes += 1;
        cumulative_forbidden += ep.forbidden;
        metrics.write(&MetricsRow {
            episode: episodes,
            env_steps: agent.env_steps(),
            episode_return: ep.ret,
            success: ep.success as u8,
            forbidden_count: ep.forbidden,
            dqn_loss: mean(&ep.dqn),
            frontier_loss: mean(&ep.frontier),
            classifier_acc: mean(&ep.acc),
            epsilon: agent.epsilon(),
            lr: agent.lr(),
        })?;
        let last = agent.env_steps() >= config.total_steps;
        if episodes.is_multiple_of(config.eval.every_episodes) || last {
            let mut e_env = eval_env.clone();
            let index = eval_rows.len() as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM ^ index.wrapping_mul(0x9e37_79b9));
            let result = match evaluate(agent.online(), &mut e_env, config.eval.episodes, config.eval.epsilon, &mut rng) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(e);
                    break 'training;
                }
            };
            let row = EvalRow {
                episode: episodes,
                env_steps: agent.env_steps(),
                success_rate: result.success_rate,
                mean_return: result.mean_return,
                mean_length: result.mean_length,
                forbidden_per_episode: result.forbidden_per_episode,
            };
            evals.write(&row)?;
            eval_rows.push(row);
        }
    }
    metrics.flush()?;
    evals.flush()?;

    if let Some(e) = &failure {
        if !e.is_divergence() {
            return Err(failure.unwrap().into());
        }
    }

    let window_start = ((1.0 - config.eval.final_window) * config.total_steps as f64).floor() as u64;
    let window: Vec<f64> = eval_rows
        .iter()
        .filter(|r| r.env_steps >= window_start)
        .map(|r| r.success_rate)
        .collect();
    let mut summary = RunSummary {
        episodes,
        env_steps: agent.env_steps(),
        grad_steps: agent.grad_steps(),
        cumulative_forbidden,
        env_rejections: env.rejection_count(),
        final_window_success: mean(&window),
        holdout_classifier: None,
        q_separation: None,
    };

    if failure.is_none() {
        let eps = config.eval.epsilon;
        if let Some(classifier) = agent.classifier() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ HOLDOUT_STREAM);
            let mut h_env = eval_env.clone();
            summary.holdout_classifier = Some(holdout_accuracy(
                agent.online(),
                classifier,
                &mut h_env,
                config.holdout_samples,
                eps,
                &mut rng,
            )?);
        }
        if config.separation_states > 0 {
            let mut s_env = eval_env.clone();
            let report = q_separation_report(
                agent.online(),
                &mut s_env,
                config.separation_states,
                eps,
                seed ^ SEPARATION_STREAM,
            )?;
            report.write_csv(&dir.join(SEPARATION_FILE))?;
            summary.q_separation = Some(report.fraction);
        }
        save_checkpoints(&agent, config, &spec.observation_shape, seed, dir)?;
    }

    Ok(Manifest {
        config: config.clone(),
        seed,
        status: if failure.is_some() { RunStatus::Diverged } else { RunStatus::Completed },
        error: failure.map(|e| e.to_string()),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        summary,
    })
}

fn save_checkpoints<T: Real>(
    agent: &Agent<T>,
    config: &RunConfig,
    observation_shape: &[usize],
    seed: u64,
    dir: &Path,
) -> Result<(), HarnessError> {
    let metadata = serde_json::json!({
        "env": config.env,
        "observation_shape": observation_shape,
        "precision": config.precision,
        "seed": seed,
        "env_steps": agent.env_steps(),
        "threshold": agent.frontier().map(|f| f.threshold),
    });
    let mut q = Checkpoint::from_network(agent.online(), "online");
    q.push_params("target", agent.target().params());
    q.metadata = Some(metadata.clone());
    q.save(&dir.join(QNET_FILE))?;
    if let Some(c) = agent.classifier() {
        let mut ck = Checkpoint::from_network(c.network(), "classifier");
        ck.metadata = Some(metadata);
        ck.save(&dir.join(CLASSIFIER_FILE))?;
    }
    Ok(())
}

/// Aggregate of a batch of evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub forbidden_per_episode: f64,
}

/// Runs `episodes` ε-greedy episodes without learning. Reset seeds and
/// exploration both come from `rng`.
pub fn evaluate<T: Real, E: Environment, R: Rng>(
    qnet: &Network<T>,
    env: &mut E,
    episodes: u64,
    epsilon: f64,
    rng: &mut R,
) -> Result<EvalResult, AgentError> {
    let (mut successes, mut ret, mut len, mut forbidden) = (0u64, 0.0, 0u64, 0u64);
    for _ in 0..episodes {
        let mut obs = env.reset(rng.gen());
        loop {
            let a = select_action(qnet, &obs.to_precision::<T>(), epsilon, rng)?;
            let step = env
                .step(a)
                .map_err(|e| AgentError::Transition(format!("evaluation step failed: {e}")))?;
            len += 1;
            ret += step.reward;
            forbidden += step.feedback.bit() as u64;
            if step.done {
                successes += (step.reward > 0.0) as u64;
                break;
            }
            obs = step.observation;
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalResult {
        episodes,
        success_rate: successes as f64 / n,
        mean_return: ret / n,
        mean_length: len as f64 / n,
        forbidden_per_episode: forbidden as f64 / n,
    })
}

/// Scores the classifier's taken-action predictions on transitions from
/// fresh ε-greedy rollouts that never entered the replay buffer.
pub fn holdout_accuracy<T: Real, R: Rng>(
    qnet: &Network<T>,
    classifier: &ValidityClassifier<T>,
    env: &mut AnyEnv,
    samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<HoldoutAccuracy, HarnessError> {
    let mut observations: Vec<Tensor<f32>> = Vec::with_capacity(samples);
    let mut actions = Vec::with_capacity(samples);
    let mut valid = Vec::with_capacity(samples);
    let mut obs = env.reset(rng.gen());
    while observations.len() < samples {
        let a = select_action(qnet, &obs.to_precision::<T>(), epsilon, rng)?;
        let step = env.step(a)?;
        observations.push(obs);
        actions.push(a);
        valid.push(!step.feedback.is_rejected());
        obs = if step.done { env.reset(rng.gen()) } else { step.observation };
    }
    let (mut ok_valid, mut n_valid, mut ok_rej, mut n_rej) = (0usize, 0usize, 0usize, 0usize);
    for start in (0..samples).step_by(256) {
        let end = (start + 256).min(samples);
        let batch = Tensor::stack(observations[start..end].iter())?.to_precision::<T>();
        let probs = classifier.predict(&batch)?;
        for i in start..end {
            let predicted_valid = probs.row(i - start)[actions[i]].as_f64() > classifier.threshold();
            if valid[i] {
                n_valid += 1;
                ok_valid += (predicted_valid) as usize;
            } else {
                n_rej += 1;
                ok_rej += (!predicted_valid) as usize;
            }
        }
    }
    let ratio = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    Ok(HoldoutAccuracy {
        samples,
        accuracy: ratio(ok_valid + ok_rej, samples).unwrap_or(0.0),
        valid_samples: n_valid,
        valid_accuracy: ratio(ok_valid, n_valid),
        rejected_samples: n_rej,
        rejected_accuracy: ratio(ok_rej, n_rej),
    })
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(path: &Path) -> Result<Self, HarnessError> {
        let writer = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    fn write<S: Serialize>(&mut self, row: &S) -> Result<(), HarnessError> {
        self.writer.serialize(row).map_err(|e| HarnessError::csv(&self.path, e))
    }

    fn flush(&mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

/// Reads every row of a `metrics.csv` file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    read_rows(path)
}

/// Reads every row of an `eval.csv` file.
pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>, HarnessError> {
    read_rows(path)
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))
}
