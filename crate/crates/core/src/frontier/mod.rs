//! Frontier margin loss, the action-validity classifier and the combined
//! DQN-F objective.
//!
//! After a rejected action `a⁻` the Q-value of `a⁻` is pushed below the
//! smallest Q-value among the actions the classifier believes are valid,
//! by at least the margin `m`:
//!
//! ```text
//! J_F = max(0, Q(s, a⁻) - (min_{a in V} Q(s, a) - m))^2
//! ```

use serde::{Deserialize, Serialize};

use crate::nn::{rmsprop_step, with_sigmoid_heads, LayerSpec, Network, NnError, OptState, Real, Tensor, Trace};

pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_LAMBDA_DQN: f64 = 1.0;
pub const DEFAULT_LAMBDA_F: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CLASSIFIER_LR: f64 = 1e-4;
pub const DEFAULT_CLASSIFIER_WEIGHT_DECAY: f64 = 1e-4;

/// Probabilities are kept this far away from 0 and 1 inside the log.
const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierConfig {
    pub margin: f64,
    pub lambda_dqn: f64,
    pub lambda_f: f64,
    /// Sigmoid output above which an action counts as valid.
    pub threshold: f64,
    pub classifier_lr: f64,
    pub classifier_weight_decay: f64,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            lambda_dqn: DEFAULT_LAMBDA_DQN,
            lambda_f: DEFAULT_LAMBDA_F,
            threshold: DEFAULT_THRESHOLD,
            classifier_lr: DEFAULT_CLASSIFIER_LR,
            classifier_weight_decay: DEFAULT_CLASSIFIER_WEIGHT_DECAY,
        }
    }
}

impl FrontierConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.margin > 0.0) {
            return Err(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.lambda_dqn >= 0.0 && self.lambda_f >= 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(self.classifier_lr > 0.0) || !(self.classifier_weight_decay >= 0.0) {
            return Err("classifier learning rate must be positive and weight decay non-negative".into());
        }
        Ok(())
    }
}

/// Loss value plus its gradient with respect to the Q-vector, given as
/// sparse `(action, dJ/dQ)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierLoss {
    pub loss: f64,
    pub gradient: Vec<(usize, f64)>,
}

/// Squared hinge for one state. Only `a⁻` and the arg-min valid action
/// (lowest index on ties) receive gradient. An empty valid set gives zero.
pub fn frontier_loss<T: Real>(q: &[T], forbidden: usize, valid: &[usize], margin: f64) -> FrontierLoss {
    let zero = FrontierLoss {
        loss: 0.0,
        gradient: Vec::new(),
    };
    let Some(&first) = valid.first() else {
        return zero;
    };
    let mut arg_min = first;
    for &a in valid {
        let (qa, qm) = (q[a].as_f64(), q[arg_min].as_f64());
        if qa < qm || (qa == qm && a < arg_min) {
            arg_min = a;
        }
    }
    let violation = q[forbidden].as_f64() - (q[arg_min].as_f64() - margin);
    if violation <= 0.0 {
        return zero;
    }
    FrontierLoss {
        loss: violation * violation,
        gradient: vec![(forbidden, 2.0 * violation), (arg_min, -2.0 * violation)],
    }
}

/// `λ_DQN · J_DQN + λ_F · J_F`.
pub fn composite_loss(j_dqn: f64, j_f: f64, lambda_dqn: f64, lambda_f: f64) -> f64 {
    lambda_dqn * j_dqn + lambda_f * j_f
}

/// Actions whose validity probability exceeds `threshold`, never including
/// the rejected action itself. May be empty.
pub fn predict_valid_set<T: Real>(probabilities: &[T], threshold: f64, forbidden: usize) -> Vec<usize> {
    probabilities
        .iter()
        .enumerate()
        .filter(|&(a, p)| a != forbidden && p.as_f64() > threshold)
        .map(|(a, _)| a)
        .collect()
}

/// Binary cross-entropy on the taken heads only. Returns the mean loss and
/// the gradient with respect to the sigmoid outputs (zero on every other
/// head).
pub fn masked_bce<T: Real>(probabilities: &Tensor<T>, actions: &[usize], targets: &[f64]) -> (f64, Tensor<T>) {
    let batch = probabilities.rows();
    let mut grad = Tensor::zeros(probabilities.shape());
    let mut loss = 0.0;
    for i in 0..batch {
        let p = probabilities.row(i)[actions[i]].as_f64();
        let y = targets[i];
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        // dBCE/dp; the sigmoid backward multiplies by p(1-p), giving p - y
        // at the logit.
        let denom = (p * (1.0 - p)).max(PROB_FLOOR * PROB_FLOOR);
        grad.row_mut(i)[actions[i]] = T::from_f64((p - y) / denom / batch as f64);
    }
    (loss / batch as f64, grad)
}

/// Outcome of one classifier update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierStep {
    pub loss: f64,
    /// Fraction of taken heads classified correctly before the update.
    pub accuracy: f64,
}

/// Per-action validity network: the Q-network's chain followed by sigmoid
/// heads, with its own parameters and optimiser state.
#[derive(Debug, Clone)]
pub struct ValidityClassifier<T> {
    net: Network<T>,
    opt: OptState<T>,
    threshold: f64,
}

impl<T: Real> ValidityClassifier<T> {
    pub fn new(q_chain: &[LayerSpec], seed: u64, threshold: f64) -> Self {
        Self::from_network(Network::new(with_sigmoid_heads(q_chain), seed), threshold)
    }

    pub fn from_network(net: Network<T>, threshold: f64) -> Self {
        let opt = OptState::new(net.params());
        Self { net, opt, threshold }
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Validity probabilities `[batch, actions]`.
    pub fn predict(&self, observations: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.net.predict(observations)
    }

    pub fn forward(&self, observations: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), NnError> {
        self.net.forward(observations)
    }

    pub fn valid_set(&self, observation: &Tensor<T>, forbidden: usize) -> Result<Vec<usize>, NnError> {
        let p = self.predict(&observation.unsqueeze())?;
        Ok(predict_valid_set(p.row(0), self.threshold, forbidden))
    }

    /// One masked-BCE RMSprop step on `(s, a, f)` samples, target `1 - f`.
    pub fn train_step(
        &mut self,
        observations: &Tensor<T>,
        actions: &[usize],
        feedback_bits: &[u8],
        lr: f64,
        weight_decay: f64,
    ) -> Result<ClassifierStep, NnError> {
        let (probs, trace) = self.net.forward(observations)?;
        self.train_from_forward(&probs, &trace, actions, feedback_bits, lr, weight_decay)
    }

    /// Same as [`ValidityClassifier::train_step`] reusing an existing
    /// forward pass over the batch.
    pub fn train_from_forward(
        &mut self,
        probabilities: &Tensor<T>,
        trace: &Trace<T>,
        actions: &[usize],
        feedback_bits: &[u8],
        lr: f64,
        weight_decay: f64,
    ) -> Result<ClassifierStep, NnError> {
        if actions.len() != probabilities.rows() || feedback_bits.len() != actions.len() {
            return Err(NnError::ShapeMismatch {
                layer: None,
                expected: vec![probabilities.rows()],
                found: vec![actions.len(), feedback_bits.len()],
            });
        }
        let targets: Vec<f64> = feedback_bits.iter().map(|&f| 1.0 - f as f64).collect();
        let accuracy = taken_accuracy(probabilities, actions, &targets, self.threshold);
        let (loss, grad) = masked_bce(probabilities, actions, &targets);
        if !loss.is_finite() {
            return Err(NnError::NonFinite("classifier loss".into()));
        }
        let grads = self.net.backward(trace, &grad)?;
        rmsprop_step(self.net.params_mut(), &grads, &mut self.opt, lr, weight_decay)?;
        Ok(ClassifierStep { loss, accuracy })
    }
}

/// Fraction of samples whose taken head lands on the right side of the
/// threshold.
pub fn taken_accuracy<T: Real>(probabilities: &Tensor<T>, actions: &[usize], targets: &[f64], threshold: f64) -> f64 {
    let n = actions.len();
    if n == 0 {
        return 0.0;
    }
    let correct = (0..n)
        .filter(|&i| (probabilities.row(i)[actions[i]].as_f64() > threshold) == (targets[i] > 0.5))
        .count();
    correct as f64 / n as f64
}
