use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{Cache, Trace};
use super::{LayerSpec, Network, NnError, Tensor};

pub const FD_STEP: f64 = 1e-3;
/// Absolute floor on the relative-error denominator, so coordinates with
/// vanishing gradients are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates redrawn because a ReLU or max-pool switched inside
    /// `[theta - h, theta + h]`, where the function is not differentiable.
    pub coords_redrawn: usize,
}

impl<T> Trace<T>
where
    T: super::Real,
{
    /// ReLU on/off bits and max-pool winners; identical patterns mean the
    /// network is a single smooth piece between two parameter settings.
    pub(crate) fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for c in &self.caches {
            match c {
                Cache::Relu { output } => out.extend(output.iter().map(|v| u32::from(*v > T::zero()))),
                Cache::Pool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }
}

/// Compares [`Network::backward`] with central finite differences (step
/// [`FD_STEP`]) on `n_coords` randomly drawn parameter coordinates of a
/// 64-bit network built from `chain` and `seed`.
///
/// The scalar objective is `sum(r * f(x))` for a fixed random input batch
/// `x` and random projection `r`, all drawn from `seed`.
pub fn grad_check(chain: &[LayerSpec], input_shape: &[usize], seed: u64, n_coords: usize) -> Result<GradCheckReport, NnError> {
    let mut net = Network::<f64>::new(chain.to_vec(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch = 2;
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let len: usize = shape.iter().product();
    let input = Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (out, trace) = net.forward(&input)?;
    let proj = Tensor::new(
        out.shape().to_vec(),
        (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let grads = net.backward(&trace, &proj)?;

    let objective = |net: &Network<f64>| -> Result<(f64, Vec<u32>), NnError> {
        let (o, tr) = net.forward(&input)?;
        let v = o.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
        Ok((v, tr.activation_pattern()))
    };
    let base_pattern = trace.activation_pattern();

    let sizes: Vec<usize> = net.params().tensors.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        coords_redrawn: 0,
    };
    let max_draws = n_coords * 20;
    let mut draws = 0;
    while report.coords_checked < n_coords && draws < max_draws {
        draws += 1;
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let orig = net.params().tensors[ti].data()[flat];
        net.params_mut().tensors[ti].data_mut()[flat] = orig + FD_STEP;
        let (plus, pat_plus) = objective(&net)?;
        net.params_mut().tensors[ti].data_mut()[flat] = orig - FD_STEP;
        let (minus, pat_minus) = objective(&net)?;
        net.params_mut().tensors[ti].data_mut()[flat] = orig;
        if pat_plus != base_pattern || pat_minus != base_pattern {
            report.coords_redrawn += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.tensors[ti].data()[flat];
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.coords_checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{conv_q_chain, with_sigmoid_heads};

    #[test]
    fn linear_network_is_exact() {
        let chain = vec![LayerSpec::dense(5, 3), LayerSpec::dense(3, 2)];
        let r = grad_check(&chain, &[5], 4, 50).unwrap();
        assert_eq!(r.coords_checked, 50);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn small_conv_chain() {
        let chain = conv_q_chain(&[3, 7, 7], 4).unwrap();
        let r = grad_check(&chain, &[3, 7, 7], 9, 60).unwrap();
        assert_eq!(r.coords_checked, 60);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn sigmoid_heads() {
        let chain = with_sigmoid_heads(&conv_q_chain(&[3, 7, 7], 4).unwrap());
        let r = grad_check(&chain, &[3, 7, 7], 2, 60).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
