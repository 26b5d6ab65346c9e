use serde::{Deserialize, Serialize};

use super::{NetworkParams, NnError, Real, Tensor};

pub const RMSPROP_ALPHA: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

/// RMSprop running state (no momentum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState<T> {
    pub sq_avg: Vec<Tensor<T>>,
    pub step: u64,
    pub alpha: f64,
    pub eps: f64,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        Self::with_constants(params, RMSPROP_ALPHA, RMSPROP_EPS)
    }

    pub fn with_constants(params: &NetworkParams<T>, alpha: f64, eps: f64) -> Self {
        Self {
            sq_avg: params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            alpha,
            eps,
        }
    }
}

/// One RMSprop update:
///
/// ```text
/// g' = g + weight_decay * theta
/// v  = alpha * v + (1 - alpha) * g'^2
/// theta -= lr * g' / sqrt(v + eps)
/// ```
///
/// Nothing is modified if any gradient entry is non-finite.
pub fn rmsprop_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    opt: &mut OptState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), NnError> {
    if grads.tensors.len() != params.tensors.len() || opt.sq_avg.len() != params.tensors.len() {
        return Err(NnError::ParamsMismatch(format!(
            "{} parameter tensors, {} gradients, {} optimiser slots",
            params.tensors.len(),
            grads.tensors.len(),
            opt.sq_avg.len()
        )));
    }
    for (i, ((p, g), v)) in params.tensors.iter().zip(&grads.tensors).zip(&opt.sq_avg).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(NnError::ParamsMismatch(format!(
                "tensor {i}: parameter {:?}, gradient {:?}, state {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    if let Some(i) = grads.tensors.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFinite(format!("gradient tensor {i}")));
    }

    let alpha = T::from_f64(opt.alpha);
    let one_minus = T::from_f64(1.0 - opt.alpha);
    let eps = T::from_f64(opt.eps);
    let lr = T::from_f64(lr);
    let wd = T::from_f64(weight_decay);
    for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(opt.sq_avg.iter_mut()) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gd = *gv + wd * *pv;
            *vv = alpha * *vv + one_minus * gd * gd;
            *pv -= lr * gd / (*vv + eps).sqrt();
        }
    }
    opt.step += 1;
    Ok(())
}

/// Exponential interpolation `lr_start * (lr_end / lr_start)^(step / total_steps)`.
/// `step` is clamped to `[0, total_steps]`; `total_steps == 0` yields `lr_start`.
pub fn lr_schedule(step: u64, total_steps: u64, lr_start: f64, lr_end: f64) -> f64 {
    if total_steps == 0 || step == 0 {
        return lr_start;
    }
    if step >= total_steps {
        return lr_end;
    }
    let frac = step as f64 / total_steps as f64;
    lr_start * (lr_end / lr_start).powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network};

    fn scalar_params(v: f64) -> NetworkParams<f64> {
        NetworkParams {
            seed: 0,
            tensors: vec![Tensor::scalar(v)],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let net = Network::<f64>::new(vec![LayerSpec::dense(4, 3)], 5);
        let mut params = net.params().clone();
        let grads = params.zeros_like();
        let mut opt = OptState::new(&params);
        for _ in 0..10 {
            rmsprop_step(&mut params, &grads, &mut opt, 0.1, 0.0).unwrap();
        }
        assert_eq!(&params, net.params());
        assert_eq!(opt.step, 10);
    }

    #[test]
    fn single_step_matches_recurrence() {
        let mut p = scalar_params(0.5);
        let g = scalar_params(1.0);
        let mut opt = OptState::new(&p);
        rmsprop_step(&mut p, &g, &mut opt, 0.1, 0.0).unwrap();
        // v = 0.01; theta = 0.5 - 0.1 / sqrt(0.01 + 1e-8)
        let expected = 0.5 - 0.1 / (0.01f64 + 1e-8).sqrt();
        assert!((p.tensors[0].data()[0] - expected).abs() < 1e-12);
        assert!((opt.sq_avg[0].data()[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_as_gradient_term() {
        let mut p = scalar_params(2.0);
        let g = scalar_params(0.0);
        let mut opt = OptState::new(&p);
        rmsprop_step(&mut p, &g, &mut opt, 0.1, 0.5).unwrap();
        let gd = 1.0f64;
        let expected = 2.0 - 0.1 * gd / (0.01 * gd * gd + 1e-8f64).sqrt();
        assert!((p.tensors[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let t = Tensor::<f64>::from_slice(&[3], &[0.1, -0.2, 0.3]).unwrap();
        let mut p = NetworkParams {
            seed: 0,
            tensors: vec![t.clone(), t.clone()],
        };
        let gt = Tensor::<f64>::from_slice(&[3], &[1.0, 0.5, -2.0]).unwrap();
        let g = NetworkParams {
            seed: 0,
            tensors: vec![gt.clone(), gt],
        };
        let mut opt = OptState::new(&p);
        rmsprop_step(&mut p, &g, &mut opt, 0.01, 1e-4).unwrap();
        assert_eq!(p.tensors[0], p.tensors[1]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(f64::NAN);
        let mut opt = OptState::new(&p);
        assert!(matches!(
            rmsprop_step(&mut p, &g, &mut opt, 0.1, 0.0),
            Err(NnError::NonFinite(_))
        ));
        assert_eq!(p.tensors[0].data()[0], 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0, 1000, 1e-5, 1e-7), 1e-5);
        assert_eq!(lr_schedule(1000, 1000, 1e-5, 1e-7), 1e-7);
        assert!((lr_schedule(500, 1000, 1e-5, 1e-7) - 1e-6).abs() < 1e-18);
        assert_eq!(lr_schedule(7, 0, 1e-5, 1e-7), 1e-5);
    }
}
