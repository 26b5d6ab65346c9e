use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{chain_output_shape, parameter_count, LayerSpec};
use super::{NnError, Real, Tensor};

/// Weight and bias tensors of every parametric layer, in chain order.
///
/// Gradients share this structure: `backward` returns a `NetworkParams`
/// holding one gradient tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams<T> {
    pub seed: u64,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn init(chain: &[LayerSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for layer in chain {
            if let Some(shapes) = layer.param_shapes() {
                let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                for shape in shapes {
                    let mut t = Tensor::zeros(&shape);
                    for v in t.data_mut() {
                        *v = T::from_f64(rng.gen_range(-bound..bound));
                    }
                    tensors.push(t);
                }
            }
        }
        Self { seed, tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            seed: self.seed,
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(scale, b.data(), a.data_mut());
        }
    }
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub(crate) batch: usize,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    pub(crate) caches: Vec<Cache<T>>,
}

impl<T> Trace<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
    pub fn len(&self) -> usize {
        self.caches.len()
    }
    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    Dense {
        input: Vec<T>,
    },
    Conv {
        in_shape: [usize; 3],
        out_hw: [usize; 2],
        /// im2col patches, `[batch, positions, fan_in]`.
        cols: Vec<T>,
    },
    Pool {
        in_shape: [usize; 3],
        argmax: Vec<u32>,
    },
    Relu {
        output: Vec<T>,
    },
    Sigmoid {
        output: Vec<T>,
    },
    Flatten,
}

impl<T> Cache<T> {
    fn matches(&self, layer: &LayerSpec) -> bool {
        matches!(
            (self, layer),
            (Cache::Dense { .. }, LayerSpec::Dense { .. })
                | (Cache::Conv { .. }, LayerSpec::Conv2d { .. })
                | (Cache::Pool { .. }, LayerSpec::MaxPool2d { .. })
                | (Cache::Relu { .. }, LayerSpec::Relu)
                | (Cache::Sigmoid { .. }, LayerSpec::Sigmoid)
                | (Cache::Flatten, LayerSpec::Flatten)
        )
    }
}

/// A feed-forward network: layer chain plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    chain: Vec<LayerSpec>,
    params: NetworkParams<T>,
    /// Index into `params.tensors` of each layer's weight, if it has one.
    slots: Vec<Option<usize>>,
}

fn param_slots(chain: &[LayerSpec]) -> Vec<Option<usize>> {
    let mut next = 0;
    chain
        .iter()
        .map(|l| {
            l.param_shapes().map(|_| {
                let s = next;
                next += 2;
                s
            })
        })
        .collect()
}

impl<T: Real> Network<T> {
    pub fn new(chain: Vec<LayerSpec>, seed: u64) -> Self {
        let params = NetworkParams::init(&chain, seed);
        let slots = param_slots(&chain);
        Self {
            chain,
            params,
            slots,
        }
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_params(chain: Vec<LayerSpec>, params: NetworkParams<T>) -> Result<Self, NnError> {
        let expected: Vec<Vec<usize>> = chain
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .flatten()
            .collect();
        if expected.len() != params.tensors.len() {
            return Err(NnError::ParamsMismatch(format!(
                "chain needs {} parameter tensors, got {}",
                expected.len(),
                params.tensors.len()
            )));
        }
        for (i, (shape, t)) in expected.iter().zip(&params.tensors).enumerate() {
            if shape.as_slice() != t.shape() {
                return Err(NnError::ParamsMismatch(format!(
                    "tensor {i}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let slots = param_slots(&chain);
        Ok(Self {
            chain,
            params,
            slots,
        })
    }

    pub fn chain(&self) -> &[LayerSpec] {
        &self.chain
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: NetworkParams<T>) -> Result<(), NnError> {
        *self = Self::from_params(self.chain.clone(), params)?;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.chain)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        chain_output_shape(&self.chain, input)
    }

    /// Forward pass over a batch `[batch, ...sample_shape]`, keeping the
    /// activations needed by [`Network::backward`].
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), NnError> {
        let (out, caches) = self.run(input, true)?;
        let trace = Trace {
            batch: input.rows(),
            input_shape: input.shape()[1..].to_vec(),
            output_shape: out.shape()[1..].to_vec(),
            caches,
        };
        Ok((out, trace))
    }

    /// Forward pass without a trace.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.run(input, false)?.0)
    }

    fn run(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<Cache<T>>), NnError> {
        if input.shape().len() < 2 {
            return Err(NnError::ShapeMismatch {
                layer: Some(0),
                expected: vec![0, 0],
                found: input.shape().to_vec(),
            });
        }
        let batch = input.rows();
        let mut shape = input.shape()[1..].to_vec();
        // Validate the whole chain before touching any data.
        chain_output_shape(&self.chain, &shape)?;

        let mut caches = Vec::with_capacity(if keep { self.chain.len() } else { 0 });
        let mut x: Vec<T> = input.data().to_vec();
        for (i, layer) in self.chain.iter().enumerate() {
            let out_shape = layer.output_shape(i, &shape)?;
            let (y, cache) = match *layer {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let s = self.slots[i].expect("dense layer has parameters");
                    let w = self.params.tensors[s].data();
                    let b = self.params.tensors[s + 1].data();
                    let y = dense_forward(&x, w, b, batch, in_features, out_features);
                    (y, Cache::Dense { input: x })
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    let s = self.slots[i].expect("conv layer has parameters");
                    let w = self.params.tensors[s].data();
                    let b = self.params.tensors[s + 1].data();
                    let in_shape = [shape[0], shape[1], shape[2]];
                    let out_hw = [out_shape[1], out_shape[2]];
                    let geo = ConvGeometry {
                        in_shape,
                        out_hw,
                        kernel,
                        stride,
                        out_channels,
                    };
                    let (y, cols) = conv_forward(&x, w, b, batch, &geo);
                    (
                        y,
                        Cache::Conv {
                            in_shape,
                            out_hw,
                            cols,
                        },
                    )
                }
                LayerSpec::MaxPool2d { size } => {
                    let in_shape = [shape[0], shape[1], shape[2]];
                    let (y, argmax) = pool_forward(&x, batch, in_shape, size);
                    (y, Cache::Pool { in_shape, argmax })
                }
                LayerSpec::Relu => {
                    let y: Vec<T> = x.iter().map(|v| v.max(T::zero())).collect();
                    let cache = if keep {
                        Cache::Relu { output: y.clone() }
                    } else {
                        Cache::Flatten
                    };
                    (y, cache)
                }
                LayerSpec::Sigmoid => {
                    let y: Vec<T> = x.iter().map(|v| sigmoid(*v)).collect();
                    let cache = if keep {
                        Cache::Sigmoid { output: y.clone() }
                    } else {
                        Cache::Flatten
                    };
                    (y, cache)
                }
                LayerSpec::Flatten => (x, Cache::Flatten),
            };
            if keep {
                caches.push(cache);
            }
            x = y;
            shape = out_shape;
        }
        let mut full = vec![batch];
        full.extend_from_slice(&shape);
        Ok((Tensor::new(full, x)?, caches))
    }

    /// Gradients of `sum(output * output_gradient)` with respect to every
    /// parameter.
    pub fn backward(&self, trace: &Trace<T>, output_gradient: &Tensor<T>) -> Result<NetworkParams<T>, NnError> {
        Ok(self.backward_full(trace, output_gradient, false)?.0)
    }

    /// Like [`Network::backward`], optionally also returning the gradient
    /// with respect to the network input.
    pub fn backward_full(
        &self,
        trace: &Trace<T>,
        output_gradient: &Tensor<T>,
        input_gradient: bool,
    ) -> Result<(NetworkParams<T>, Option<Tensor<T>>), NnError> {
        if trace.caches.len() != self.chain.len() {
            return Err(NnError::TraceMismatch(format!(
                "trace has {} layers, network has {}",
                trace.caches.len(),
                self.chain.len()
            )));
        }
        if let Some((i, _)) = trace
            .caches
            .iter()
            .zip(&self.chain)
            .enumerate()
            .find(|(_, (c, l))| !c.matches(l))
        {
            return Err(NnError::TraceMismatch(format!("layer {i} kind differs from trace")));
        }
        let mut expected = vec![trace.batch];
        expected.extend_from_slice(&trace.output_shape);
        if output_gradient.shape() != expected.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: None,
                expected,
                found: output_gradient.shape().to_vec(),
            });
        }

        let batch = trace.batch;
        let mut grads = self.params.zeros_like();
        let mut g: Vec<T> = output_gradient.data().to_vec();
        for i in (0..self.chain.len()).rev() {
            let need_dx = i > 0 || input_gradient;
            let layer = self.chain[i];
            g = match (&trace.caches[i], layer) {
                (
                    Cache::Dense { input },
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                    },
                ) => {
                    let s = self.slots[i].expect("dense layer has parameters");
                    let w = self.params.tensors[s].data();
                    let (gw, rest) = grads.tensors.split_at_mut(s + 1);
                    dense_backward(
                        input,
                        w,
                        &g,
                        batch,
                        in_features,
                        out_features,
                        gw[s].data_mut(),
                        rest[0].data_mut(),
                        need_dx,
                    )
                }
                (
                    Cache::Conv {
                        in_shape,
                        out_hw,
                        cols,
                    },
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        ..
                    },
                ) => {
                    let s = self.slots[i].expect("conv layer has parameters");
                    let w = self.params.tensors[s].data();
                    let (gw, rest) = grads.tensors.split_at_mut(s + 1);
                    let geo = ConvGeometry {
                        in_shape: *in_shape,
                        out_hw: *out_hw,
                        kernel,
                        stride,
                        out_channels,
                    };
                    conv_backward(cols, w, &g, batch, &geo, gw[s].data_mut(), rest[0].data_mut(), need_dx)
                }
                (Cache::Pool { in_shape, argmax }, LayerSpec::MaxPool2d { .. }) => {
                    let len = batch * in_shape.iter().product::<usize>();
                    let mut dx = vec![T::zero(); len];
                    for (gv, &idx) in g.iter().zip(argmax) {
                        dx[idx as usize] += *gv;
                    }
                    dx
                }
                (Cache::Relu { output }, LayerSpec::Relu) => g
                    .iter()
                    .zip(output)
                    .map(|(gv, y)| if *y > T::zero() { *gv } else { T::zero() })
                    .collect(),
                (Cache::Sigmoid { output }, LayerSpec::Sigmoid) => g
                    .iter()
                    .zip(output)
                    .map(|(gv, y)| *gv * *y * (T::one() - *y))
                    .collect(),
                (Cache::Flatten, LayerSpec::Flatten) => g,
                _ => {
                    return Err(NnError::TraceMismatch(format!(
                        "layer {i} cache does not carry activations"
                    )))
                }
            };
        }
        let dx = if input_gradient {
            let mut shape = vec![batch];
            shape.extend_from_slice(&trace.input_shape);
            Some(Tensor::new(shape, g)?)
        } else {
            None
        };
        Ok((grads, dx))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * *xv;
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn dense_forward<T: Real>(x: &[T], w: &[T], b: &[T], batch: usize, nin: usize, nout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * nout];
    for n in 0..batch {
        let yr = &mut y[n * nout..(n + 1) * nout];
        yr.copy_from_slice(b);
        for (i, &xv) in x[n * nin..(n + 1) * nin].iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, &w[i * nout..(i + 1) * nout], yr);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    batch: usize,
    nin: usize,
    nout: usize,
    gw: &mut [T],
    gb: &mut [T],
    need_dx: bool,
) -> Vec<T> {
    let mut dx = if need_dx { vec![T::zero(); batch * nin] } else { Vec::new() };
    for n in 0..batch {
        let gr = &g[n * nout..(n + 1) * nout];
        axpy(T::one(), gr, gb);
        for (i, &xv) in x[n * nin..(n + 1) * nin].iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, gr, &mut gw[i * nout..(i + 1) * nout]);
            }
        }
        if need_dx {
            for i in 0..nin {
                dx[n * nin + i] = dot(&w[i * nout..(i + 1) * nout], gr);
            }
        }
    }
    dx
}

struct ConvGeometry {
    in_shape: [usize; 3],
    out_hw: [usize; 2],
    kernel: usize,
    stride: usize,
    out_channels: usize,
}

impl ConvGeometry {
    fn positions(&self) -> usize {
        self.out_hw[0] * self.out_hw[1]
    }
    fn fan_in(&self) -> usize {
        self.in_shape[0] * self.kernel * self.kernel
    }
    fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }
    /// Input offsets (within one sample) of every patch element at
    /// position `p`, in `(channel, ky, kx)` order.
    fn patch_offsets(&self, p: usize, out: &mut Vec<usize>) {
        let [c, h, w] = self.in_shape;
        let k = self.kernel;
        let (oy, ox) = (p / self.out_hw[1], p % self.out_hw[1]);
        out.clear();
        for ci in 0..c {
            for ky in 0..k {
                let row = (ci * h + oy * self.stride + ky) * w + ox * self.stride;
                out.extend(row..row + k);
            }
        }
    }
}

fn conv_forward<T: Real>(x: &[T], w: &[T], b: &[T], batch: usize, geo: &ConvGeometry) -> (Vec<T>, Vec<T>) {
    let (np, nk, co) = (geo.positions(), geo.fan_in(), geo.out_channels);
    let in_len = geo.in_len();
    let mut cols = vec![T::zero(); batch * np * nk];
    let mut y = vec![T::zero(); batch * co * np];
    let mut row = vec![T::zero(); co];
    let offsets: Vec<Vec<usize>> = (0..np)
        .map(|p| {
            let mut o = Vec::with_capacity(nk);
            geo.patch_offsets(p, &mut o);
            o
        })
        .collect();
    for n in 0..batch {
        let xs = &x[n * in_len..(n + 1) * in_len];
        let cs = &mut cols[n * np * nk..(n + 1) * np * nk];
        for p in 0..np {
            let patch = &mut cs[p * nk..(p + 1) * nk];
            for (v, &o) in patch.iter_mut().zip(&offsets[p]) {
                *v = xs[o];
            }
            row.copy_from_slice(b);
            for (kk, &v) in patch.iter().enumerate() {
                if v != T::zero() {
                    axpy(v, &w[kk * co..(kk + 1) * co], &mut row);
                }
            }
            let ys = &mut y[n * co * np..(n + 1) * co * np];
            for (c, &v) in row.iter().enumerate() {
                ys[c * np + p] = v;
            }
        }
    }
    (y, cols)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    cols: &[T],
    w: &[T],
    g: &[T],
    batch: usize,
    geo: &ConvGeometry,
    gw: &mut [T],
    gb: &mut [T],
    need_dx: bool,
) -> Vec<T> {
    let (np, nk, co) = (geo.positions(), geo.fan_in(), geo.out_channels);
    let in_len = geo.in_len();
    let mut dx = if need_dx { vec![T::zero(); batch * in_len] } else { Vec::new() };
    let mut grow = vec![T::zero(); co];
    let mut offsets = Vec::with_capacity(nk);
    for n in 0..batch {
        let gs = &g[n * co * np..(n + 1) * co * np];
        let cs = &cols[n * np * nk..(n + 1) * np * nk];
        for p in 0..np {
            for (c, v) in grow.iter_mut().enumerate() {
                *v = gs[c * np + p];
            }
            axpy(T::one(), &grow, gb);
            let patch = &cs[p * nk..(p + 1) * nk];
            for (kk, &v) in patch.iter().enumerate() {
                if v != T::zero() {
                    axpy(v, &grow, &mut gw[kk * co..(kk + 1) * co]);
                }
            }
            if need_dx {
                geo.patch_offsets(p, &mut offsets);
                let dxs = &mut dx[n * in_len..(n + 1) * in_len];
                for (kk, &o) in offsets.iter().enumerate() {
                    dxs[o] += dot(&w[kk * co..(kk + 1) * co], &grow);
                }
            }
        }
    }
    dx
}

fn pool_forward<T: Real>(x: &[T], batch: usize, in_shape: [usize; 3], size: usize) -> (Vec<T>, Vec<u32>) {
    let [c, h, w] = in_shape;
    let (oh, ow) = (h / size, w / size);
    let in_len = c * h * w;
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    for n in 0..batch {
        for ch in 0..c {
            let base = n * in_len + ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (oy * size) * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * w + ox * size + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    (y, argmax)
}
