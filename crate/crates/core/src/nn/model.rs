use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Pooled};
use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::tensor::{Tensor, TensorFile};

/// Output channels of each convolution branch.
pub const CONV_CHANNELS: usize = 16;
/// Kernel size of the fine branch.
pub const KERNEL_A: usize = 3;
/// Kernel size of the coarse branch.
pub const KERNEL_B: usize = 9;

/// Input geometry the network is built for: `T` time bins (input channels)
/// over an `N x N` spatial grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    #[serde(rename = "T")]
    pub time_bins: usize,
    #[serde(rename = "N")]
    pub grid: usize,
}

impl Arch {
    pub fn new(time_bins: usize, grid: usize) -> Result<Self> {
        if time_bins == 0 || grid < 2 {
            return Err(Error::Config(format!(
                "network needs T >= 1 and N >= 2, got T={time_bins} N={grid}"
            )));
        }
        Ok(Arch { time_bins, grid })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.time_bins, self.grid, self.grid]
    }

    pub fn pooled_side(&self) -> usize {
        self.grid / 2
    }

    /// Length of the concatenated, flattened pooled features of both branches.
    pub fn feature_len(&self) -> usize {
        2 * self.branch_len()
    }

    fn branch_len(&self) -> usize {
        CONV_CHANNELS * self.pooled_side() * self.pooled_side()
    }
}

/// Weights of the two convolution branches and the linear head.
///
/// The same type also carries gradients, which have identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    pub conv_a_weights: Tensor,
    pub conv_a_bias: Tensor,
    pub conv_b_weights: Tensor,
    pub conv_b_bias: Tensor,
    pub linear_weights: Tensor,
    pub linear_bias: Tensor,
}

pub(crate) const PARAM_NAMES: [&str; 6] = [
    "conv_a.weight",
    "conv_a.bias",
    "conv_b.weight",
    "conv_b.bias",
    "linear.weight",
    "linear.bias",
];

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        let t = arch.time_bins;
        ModelParams {
            arch,
            conv_a_weights: Tensor::zeros(&[CONV_CHANNELS, t, KERNEL_A, KERNEL_A]),
            conv_a_bias: Tensor::zeros(&[CONV_CHANNELS]),
            conv_b_weights: Tensor::zeros(&[CONV_CHANNELS, t, KERNEL_B, KERNEL_B]),
            conv_b_bias: Tensor::zeros(&[CONV_CHANNELS]),
            linear_weights: Tensor::zeros(&[NUM_CLASSES, arch.feature_len()]),
            linear_bias: Tensor::zeros(&[NUM_CLASSES]),
        }
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        let fan_a = (arch.time_bins * KERNEL_A * KERNEL_A) as f64;
        let fan_b = (arch.time_bins * KERNEL_B * KERNEL_B) as f64;
        let fan_l = arch.feature_len() as f64;
        for (tensor, fan_in) in [
            (&mut params.conv_a_weights, fan_a),
            (&mut params.conv_b_weights, fan_b),
            (&mut params.linear_weights, fan_l),
        ] {
            let bound = (6.0 / fan_in).sqrt();
            for v in tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            (PARAM_NAMES[0], &self.conv_a_weights),
            (PARAM_NAMES[1], &self.conv_a_bias),
            (PARAM_NAMES[2], &self.conv_b_weights),
            (PARAM_NAMES[3], &self.conv_b_bias),
            (PARAM_NAMES[4], &self.linear_weights),
            (PARAM_NAMES[5], &self.linear_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            (PARAM_NAMES[0], &mut self.conv_a_weights),
            (PARAM_NAMES[1], &mut self.conv_a_bias),
            (PARAM_NAMES[2], &mut self.conv_b_weights),
            (PARAM_NAMES[3], &mut self.conv_b_bias),
            (PARAM_NAMES[4], &mut self.linear_weights),
            (PARAM_NAMES[5], &mut self.linear_bias),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks every tensor against the shapes implied by `arch`.
    pub fn validate(&self) -> Result<()> {
        let expected = ModelParams::zeros(self.arch);
        for ((_, have), (_, want)) in self.tensors().iter().zip(expected.tensors().iter()) {
            have.expect_shape("model parameters", want.shape())?;
        }
        Ok(())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors().into_iter().find(|(_, t)| !t.is_finite()).map(|(name, _)| name)
    }

    pub fn to_file(&self) -> TensorFile<Arch> {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, t)| (name.to_string(), t.clone()))
            .collect::<BTreeMap<_, _>>();
        TensorFile {
            config: self.arch,
            tensors,
        }
    }

    pub fn from_file(mut file: TensorFile<Arch>) -> Result<Self> {
        let mut params = ModelParams::zeros(file.config);
        for (name, slot) in params.tensors_mut() {
            *slot = file
                .tensors
                .remove(name)
                .ok_or_else(|| Error::Config(format!("weights file lacks tensor `{name}`")))?;
        }
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(TensorFile::read(path)?)
    }
}

/// Intermediate activations of one forward pass, kept for backprop and for
/// activation-map capture.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Tensor,
    /// Post-ReLU, pre-pooling outputs of the 3x3 branch, `[16, N, N]`.
    pub relu_a: Tensor,
    /// Post-ReLU, pre-pooling outputs of the 9x9 branch, `[16, N, N]`.
    pub relu_b: Tensor,
    pub(crate) argmax_a: Vec<usize>,
    pub(crate) argmax_b: Vec<usize>,
    /// Concatenated pooled features fed to the linear head.
    pub features: Vec<f64>,
}

impl Forward {
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.data())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn linear(weights: &Tensor, bias: &Tensor, features: &[f64]) -> Tensor {
    let f = features.len();
    let mut logits = bias.clone();
    for (k, out) in logits.data_mut().iter_mut().enumerate() {
        let row = &weights.data()[k * f..(k + 1) * f];
        *out += row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
    }
    logits
}

/// Runs both branches and the linear head on one `[T, N, N]` input.
pub fn forward(params: &ModelParams, input: &Tensor) -> Result<Forward> {
    input.expect_shape("forward input", &params.arch.input_shape())?;
    let relu_a = ops::relu(&ops::conv2d(input, &params.conv_a_weights, &params.conv_a_bias)?);
    let relu_b = ops::relu(&ops::conv2d(input, &params.conv_b_weights, &params.conv_b_bias)?);
    let Pooled { output: pool_a, argmax: argmax_a } = ops::maxpool2d(&relu_a)?;
    let Pooled { output: pool_b, argmax: argmax_b } = ops::maxpool2d(&relu_b)?;

    let mut features = pool_a.into_data();
    features.extend_from_slice(pool_b.data());
    let logits = linear(&params.linear_weights, &params.linear_bias, &features);
    Ok(Forward {
        logits,
        relu_a,
        relu_b,
        argmax_a,
        argmax_b,
        features,
    })
}

pub fn predict(params: &ModelParams, input: &Tensor) -> Result<usize> {
    Ok(forward(params, input)?.predicted_class())
}
