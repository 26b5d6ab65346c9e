use serde::{Deserialize, Serialize};

use super::NnError;

/// One layer of a feed-forward chain.
///
/// Parameter layouts are chosen for the kernels in [`super::network`]:
/// dense weights are `[in_features, out_features]`, convolution weights are
/// `[in_channels, kernel, kernel, out_channels]`. Biases are `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d { size: usize },
    Relu,
    Sigmoid,
    Flatten,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Weight and bias shapes, or `None` for parameter-free layers.
    pub fn param_shapes(&self) -> Option<[Vec<usize>; 2]> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some([vec![in_features, out_features], vec![out_features]]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some([
                vec![in_channels, kernel, kernel, out_channels],
                vec![out_channels],
            ]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_features, .. } => in_features,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: Vec<usize>| NnError::ShapeMismatch {
            layer: Some(index),
            expected,
            found: input.to_vec(),
        };
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(mismatch(vec![in_features]));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if kernel == 0 || stride == 0 {
                    return Err(NnError::InvalidLayer {
                        layer: index,
                        reason: "kernel and stride must be >= 1".into(),
                    });
                }
                match input {
                    [c, h, w] if *c == in_channels && *h >= kernel && *w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(mismatch(vec![in_channels, kernel, kernel])),
                }
            }
            LayerSpec::MaxPool2d { size } => {
                if size == 0 {
                    return Err(NnError::InvalidLayer {
                        layer: index,
                        reason: "pool size must be >= 1".into(),
                    });
                }
                match input {
                    [c, h, w] if *h >= size && *w >= size => Ok(vec![*c, h / size, w / size]),
                    _ => Err(mismatch(vec![0, size, size])),
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Runs shape inference through a whole chain.
pub fn chain_output_shape(chain: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>, NnError> {
    chain
        .iter()
        .enumerate()
        .try_fold(input.to_vec(), |shape, (i, layer)| layer.output_shape(i, &shape))
}

/// Number of trainable scalars in a chain. Independent of input size.
pub fn parameter_count(chain: &[LayerSpec]) -> usize {
    chain
        .iter()
        .filter_map(LayerSpec::param_shapes)
        .map(|[w, b]| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum()
}

pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
pub const CONV_KERNEL: usize = 2;
pub const POOL_SIZE: usize = 2;
pub const FC_HIDDEN: usize = 64;
pub const TEXT_FC_HIDDEN: usize = 400;

/// Q-network for image-like observations `[channels, height, width]`:
/// three 2x2 convolutions (16, 32, 64 channels) with a single 2x2 max-pool
/// after the first, then a 64-unit hidden layer and one linear output per
/// action.
pub fn conv_q_chain(input: &[usize], actions: usize) -> Result<Vec<LayerSpec>, NnError> {
    let channels = *input.first().ok_or(NnError::InvalidShape(input.to_vec()))?;
    let mut chain = vec![
        LayerSpec::conv(channels, CONV_CHANNELS[0], CONV_KERNEL),
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: POOL_SIZE },
        LayerSpec::conv(CONV_CHANNELS[0], CONV_CHANNELS[1], CONV_KERNEL),
        LayerSpec::Relu,
        LayerSpec::conv(CONV_CHANNELS[1], CONV_CHANNELS[2], CONV_KERNEL),
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ];
    let flat = chain_output_shape(&chain, input)?[0];
    chain.extend([
        LayerSpec::dense(flat, FC_HIDDEN),
        LayerSpec::Relu,
        LayerSpec::dense(FC_HIDDEN, actions),
    ]);
    Ok(chain)
}

/// Q-network for flat (bag-of-words) observations.
pub fn mlp_q_chain(features: usize, hidden: usize, actions: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(features, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, actions),
    ]
}

/// The same chain with an independent sigmoid on every output.
pub fn with_sigmoid_heads(chain: &[LayerSpec]) -> Vec<LayerSpec> {
    let mut out = chain.to_vec();
    out.push(LayerSpec::Sigmoid);
    out
}
