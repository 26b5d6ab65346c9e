//! Double DQN with uniform replay and ε-greedy exploration, optionally
//! extended with the frontier loss and a validity classifier.

mod replay;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::frontier::{composite_loss, frontier_loss, predict_valid_set, ClassifierStep, FrontierConfig, ValidityClassifier};
use crate::nn::{
    conv_q_chain, layers::TEXT_FC_HIDDEN, lr_schedule, mlp_q_chain, rmsprop_step, LayerSpec, Network, NnError, OptState,
    Real, Tensor,
};

pub use replay::{ReplayBuffer, Transition};

/// Added to the run seed to initialise the classifier.
pub const CLASSIFIER_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;
/// Mixed into the run seed for exploration and replay sampling.
const AGENT_STREAM: u64 = 0x243f_6a88_85a3_08d3;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid transition: {0}")]
    Transition(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

impl AgentError {
    /// True when training produced NaN or infinite values.
    pub fn is_divergence(&self) -> bool {
        matches!(self, AgentError::NonFinite(_) | AgentError::Nn(NnError::NonFinite(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Gradient steps between online-to-target copies.
    pub target_update: u64,
    /// Transitions stored before the first gradient step.
    pub learn_start: usize,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub replay_capacity: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training budget over which ε decays linearly.
    pub epsilon_fraction: f64,
    /// Layer chain overriding the default for the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<Vec<LayerSpec>>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            target_update: 2000,
            learn_start: 1000,
            train_every: 1,
            replay_capacity: 10_000,
            lr_start: 1e-5,
            lr_end: 1e-7,
            weight_decay: 1e-4,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.1,
            network: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.target_update == 0 || self.train_every == 0 || self.replay_capacity == 0 {
            return bad("batch_size, target_update, train_every and replay_capacity must be positive");
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return bad("learning rates need lr_start >= lr_end > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) || !unit.contains(&self.epsilon_fraction)
        {
            return bad("epsilon settings must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start");
        }
        Ok(())
    }

    pub fn exploration(&self, total_steps: u64) -> ExplorationSchedule {
        ExplorationSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            horizon: (self.epsilon_fraction * total_steps as f64).round() as u64,
        }
    }

    /// The configured chain, or the default one for `spec`: the convnet for
    /// image-like observations and a one-hidden-layer MLP for flat ones.
    pub fn chain_for(&self, spec: &EnvSpec) -> Result<Vec<LayerSpec>, AgentError> {
        if let Some(chain) = &self.network {
            return Ok(chain.clone());
        }
        match spec.observation_shape.as_slice() {
            [_, _, _] => Ok(conv_q_chain(&spec.observation_shape, spec.action_count)?),
            [n] => Ok(mlp_q_chain(*n, TEXT_FC_HIDDEN, spec.action_count)),
            other => Err(AgentError::Config(format!("no default network for observations of shape {other:?}"))),
        }
    }
}

/// Linear ε decay from `start` to `end` over `horizon` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl ExplorationSchedule {
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.horizon as f64
    }
}

/// Index of the largest value, lowest index on ties.
pub fn greedy_action<T: Real>(q: &[T]) -> Result<usize, AgentError> {
    if q.is_empty() {
        return Err(AgentError::Config("empty Q-vector".into()));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite("Q-values".into()));
    }
    let mut best = 0;
    for (a, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = a;
        }
    }
    Ok(best)
}

/// ε-greedy choice for a single observation (no batch dimension).
pub fn select_action<T: Real, R: Rng>(
    qnet: &Network<T>,
    observation: &Tensor<T>,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    if rng.gen::<f64>() < epsilon {
        let actions = qnet.output_shape(observation.shape())?[0];
        return Ok(rng.gen_range(0..actions));
    }
    let q = qnet.predict(&observation.unsqueeze())?;
    greedy_action(q.row(0))
}

/// Stacks the (next) observations of a batch into one tensor.
pub fn stack_observations<T: Real>(batch: &[&Transition], next: bool) -> Result<Tensor<T>, AgentError> {
    let first = batch.first().ok_or(NnError::EmptyBatch)?;
    let sample = first.observation.shape().to_vec();
    let size: usize = sample.iter().product();
    let mut data = Vec::with_capacity(size * batch.len());
    for t in batch {
        let obs = if next { &t.next_observation } else { &t.observation };
        if obs.shape() != sample.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: None,
                expected: sample,
                found: obs.shape().to_vec(),
            }
            .into());
        }
        data.extend(obs.data().iter().map(|v| T::from_f32(*v)));
    }
    let mut shape = vec![batch.len()];
    shape.extend(sample);
    Ok(Tensor::new(shape, data)?)
}

/// `y = r` on terminal transitions, otherwise
/// `r + γ · Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_dqn_targets<T: Real>(
    batch: &[&Transition],
    online: &Network<T>,
    target: &Network<T>,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let next = stack_observations::<T>(batch, true)?;
    let q_online = online.predict(&next)?;
    let q_target = target.predict(&next)?;
    targets_from_outputs(batch, &q_online, &q_target, gamma)
}

fn targets_from_outputs<T: Real>(
    batch: &[&Transition],
    q_online: &Tensor<T>,
    q_target: &Tensor<T>,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                return Ok(t.reward);
            }
            let a_star = greedy_action(q_online.row(i))?;
            Ok(t.reward + gamma * q_target.row(i)[a_star].as_f64())
        })
        .collect()
}

/// Mean squared TD error and its gradient with respect to the Q outputs
/// (non-zero only at the taken actions).
#[derive(Debug, Clone, PartialEq)]
pub struct TdLoss<T> {
    pub loss: f64,
    pub gradient: Tensor<T>,
}

pub fn td_loss<T: Real>(q: &Tensor<T>, actions: &[usize], targets: &[f64]) -> Result<TdLoss<T>, AgentError> {
    let batch = q.rows();
    if batch == 0 || actions.len() != batch || targets.len() != batch {
        return Err(NnError::ShapeMismatch {
            layer: None,
            expected: vec![batch],
            found: vec![actions.len(), targets.len()],
        }
        .into());
    }
    let mut gradient = Tensor::zeros(q.shape());
    let mut loss = 0.0;
    for i in 0..batch {
        let residual = q.row(i)[actions[i]].as_f64() - targets[i];
        loss += residual * residual;
        gradient.row_mut(i)[actions[i]] = T::from_f64(2.0 * residual / batch as f64);
    }
    let loss = loss / batch as f64;
    if !loss.is_finite() {
        return Err(AgentError::NonFinite("TD loss".into()));
    }
    Ok(TdLoss { loss, gradient })
}

/// What one gradient step did.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub dqn_loss: f64,
    /// Mean frontier loss over the batch; `None` for vanilla DQN.
    pub frontier_loss: Option<f64>,
    pub total_loss: f64,
    pub classifier: Option<ClassifierStep>,
    /// Rejected transitions in the batch.
    pub rejected_in_batch: usize,
    /// Rejected transitions whose hinge was active.
    pub frontier_active: usize,
    pub lr: f64,
    pub target_synced: bool,
}

/// Learner state for one run.
#[derive(Debug, Clone)]
pub struct Agent<T> {
    config: AgentConfig,
    frontier: Option<FrontierConfig>,
    online: Network<T>,
    target: Network<T>,
    opt: OptState<T>,
    classifier: Option<ValidityClassifier<T>>,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    schedule: ExplorationSchedule,
    total_steps: u64,
    env_steps: u64,
    grad_steps: u64,
}

impl<T: Real> Agent<T> {
    /// Fresh networks for `spec`, all seeded from `seed`.
    pub fn new(
        config: AgentConfig,
        frontier: Option<FrontierConfig>,
        spec: &EnvSpec,
        total_steps: u64,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let chain = config.chain_for(spec)?;
        let online = Network::new(chain.clone(), seed);
        let out = online.output_shape(&spec.observation_shape)?;
        if out != [spec.action_count] {
            return Err(AgentError::Config(format!(
                "network produces {out:?} but the environment has {} actions",
                spec.action_count
            )));
        }
        let classifier = frontier
            .as_ref()
            .map(|f| ValidityClassifier::new(&chain, seed.wrapping_add(CLASSIFIER_SEED_OFFSET), f.threshold));
        Self::with_networks(config, frontier, online, classifier, total_steps, seed)
    }

    /// Uses the given networks; the target starts as a copy of `online`.
    pub fn with_networks(
        config: AgentConfig,
        frontier: Option<FrontierConfig>,
        online: Network<T>,
        classifier: Option<ValidityClassifier<T>>,
        total_steps: u64,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if let Some(f) = &frontier {
            f.validate().map_err(AgentError::Config)?;
            if classifier.is_none() {
                return Err(AgentError::Config("frontier loss needs a classifier".into()));
            }
        }
        let opt = OptState::new(online.params());
        Ok(Self {
            schedule: config.exploration(total_steps),
            replay: ReplayBuffer::new(config.replay_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed ^ AGENT_STREAM),
            target: online.clone(),
            online,
            opt,
            classifier: if frontier.is_some() { classifier } else { None },
            frontier,
            config,
            total_steps,
            env_steps: 0,
            grad_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn frontier(&self) -> Option<&FrontierConfig> {
        self.frontier.as_ref()
    }

    pub fn online(&self) -> &Network<T> {
        &self.online
    }

    pub fn target(&self) -> &Network<T> {
        &self.target
    }

    pub fn classifier(&self) -> Option<&ValidityClassifier<T>> {
        self.classifier.as_ref()
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.epsilon(self.env_steps)
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(
            self.env_steps.min(self.total_steps),
            self.total_steps,
            self.config.lr_start,
            self.config.lr_end,
        )
    }

    /// ε-greedy action at the current exploration rate.
    pub fn act(&mut self, observation: &Tensor<f32>) -> Result<usize, AgentError> {
        let eps = self.epsilon();
        self.act_with_epsilon(observation, eps)
    }

    pub fn act_with_epsilon(&mut self, observation: &Tensor<f32>, epsilon: f64) -> Result<usize, AgentError> {
        select_action(&self.online, &observation.to_precision::<T>(), epsilon, &mut self.rng)
    }

    /// Greedy Q-values for one observation.
    pub fn q_values(&self, observation: &Tensor<f32>) -> Result<Vec<T>, AgentError> {
        Ok(self.online.predict(&observation.to_precision::<T>().unsqueeze())?.into_data())
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Stores `transition` and, once warm-up is over, runs a gradient step
    /// every `train_every` environment steps.
    pub fn observe(&mut self, transition: Transition) -> Result<Option<TrainReport>, AgentError> {
        self.replay.push(transition)?;
        self.env_steps += 1;
        if self.replay.len() < self.config.learn_start || !self.env_steps.is_multiple_of(self.config.train_every) {
            return Ok(None);
        }
        self.train_step().map(Some)
    }

    /// One gradient step on a uniformly sampled batch.
    pub fn train_step(&mut self) -> Result<TrainReport, AgentError> {
        let indices = self.replay.sample_indices(&mut self.rng, self.config.batch_size);
        let batch: Vec<&Transition> = indices.iter().map(|&i| self.replay.get(i).expect("sampled index")).collect();
        let n = batch.len();
        if n == 0 {
            return Err(NnError::EmptyBatch.into());
        }
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let bits: Vec<u8> = batch.iter().map(|t| t.feedback.bit()).collect();

        let obs = stack_observations::<T>(&batch, false)?;
        let next = stack_observations::<T>(&batch, true)?;
        let (q, trace) = self.online.forward(&obs)?;
        let q_next_online = self.online.predict(&next)?;
        let q_next_target = self.target.predict(&next)?;
        let targets = targets_from_outputs(&batch, &q_next_online, &q_next_target, self.config.gamma)?;
        let td = td_loss(&q, &actions, &targets)?;

        let mut gradient = td.gradient;
        let mut frontier_value = None;
        let mut classifier_pass = None;
        let mut active = 0;
        let rejected = bits.iter().filter(|&&b| b == 1).count();
        if let (Some(f), Some(classifier)) = (&self.frontier, &self.classifier) {
            let (probs, ctrace) = classifier.forward(&obs)?;
            let lambda_dqn = T::from_f64(f.lambda_dqn);
            gradient.data_mut().iter_mut().for_each(|g| *g *= lambda_dqn);
            let mut sum = 0.0;
            for i in (0..n).filter(|&i| bits[i] == 1) {
                let valid = predict_valid_set(probs.row(i), f.threshold, actions[i]);
                let fl = frontier_loss(q.row(i), actions[i], &valid, f.margin);
                if fl.loss > 0.0 {
                    active += 1;
                }
                sum += fl.loss;
                for (a, g) in fl.gradient {
                    gradient.row_mut(i)[a] += T::from_f64(f.lambda_f * g / n as f64);
                }
            }
            frontier_value = Some(sum / n as f64);
            classifier_pass = Some((probs, ctrace));
        }
        let total_loss = match (&self.frontier, frontier_value) {
            (Some(f), Some(jf)) => composite_loss(td.loss, jf, f.lambda_dqn, f.lambda_f),
            _ => td.loss,
        };
        if !total_loss.is_finite() {
            return Err(AgentError::NonFinite("composite loss".into()));
        }

        let grads = self.online.backward(&trace, &gradient)?;
        let lr = self.lr();
        rmsprop_step(self.online.params_mut(), &grads, &mut self.opt, lr, self.config.weight_decay)?;

        let classifier_step = match (&self.frontier, &mut self.classifier, classifier_pass) {
            (Some(f), Some(c), Some((probs, ctrace))) => Some(c.train_from_forward(
                &probs,
                &ctrace,
                &actions,
                &bits,
                f.classifier_lr,
                f.classifier_weight_decay,
            )?),
            _ => None,
        };

        self.grad_steps += 1;
        let target_synced = self.grad_steps.is_multiple_of(self.config.target_update);
        if target_synced {
            self.sync_target();
        }
        Ok(TrainReport {
            dqn_loss: td.loss,
            frontier_loss: frontier_value,
            total_loss,
            classifier: classifier_step,
            rejected_in_batch: rejected,
            frontier_active: active,
            lr,
            target_synced,
        })
    }
}
