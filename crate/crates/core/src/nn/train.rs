use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use super::model::{forward, ModelParams};
use super::ops;
use crate::error::{Error, Result};
use crate::featurize::Normalization;
use crate::tensor::Tensor;

/// Hyperparameters for SGD training of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub rng_seed: u64,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 8,
            momentum: 0.0,
            rng_seed: 0,
            normalization: Normalization::Total,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.momentum.is_finite() && self.momentum >= 0.0) {
            return Err(Error::Config(format!("momentum must be >= 0, got {}", self.momentum)));
        }
        Ok(())
    }
}

/// One labeled network input.
pub type Example = (Tensor, usize);

/// Mean loss over `batch` and the gradient of that mean with respect to
/// every parameter. The returned gradient has the same layout as the model.
pub fn loss_and_gradients(params: &ModelParams, batch: &[Example]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let arch = params.arch();
    let branch_len = arch.feature_len() / 2;
    let relu_shape = [super::model::CONV_CHANNELS, arch.grid, arch.grid];
    let mut grads = ModelParams::zeros(arch);
    let mut total_loss = 0.0;

    for (input, label) in batch {
        let fwd = forward(params, input)?;
        let (loss, dlogits) = softmax_cross_entropy(&fwd.logits, *label)?;
        total_loss += loss;

        let f = fwd.features.len();
        let mut dfeat = vec![0.0; f];
        {
            let gw = grads.linear_weights.data_mut();
            let w = params.linear_weights.data();
            for (k, &dk) in dlogits.data().iter().enumerate() {
                let g_row = &mut gw[k * f..(k + 1) * f];
                for (g, &x) in g_row.iter_mut().zip(&fwd.features) {
                    *g += dk * x;
                }
                for (d, &wk) in dfeat.iter_mut().zip(&w[k * f..(k + 1) * f]) {
                    *d += dk * wk;
                }
            }
        }
        for (g, d) in grads.linear_bias.data_mut().iter_mut().zip(dlogits.data()) {
            *g += d;
        }

        let branches = [
            (&dfeat[..branch_len], &fwd.argmax_a, &fwd.relu_a, params.conv_a_weights.shape()),
            (&dfeat[branch_len..], &fwd.argmax_b, &fwd.relu_b, params.conv_b_weights.shape()),
        ];
        for (which, (dpool, argmax, relu_out, w_shape)) in branches.into_iter().enumerate() {
            let mut drelu = ops::maxpool2d_backward(dpool, argmax, &relu_shape);
            ops::relu_backward(relu_out, &mut drelu);
            let (gw, gb) = ops::conv2d_backward(input, w_shape, &drelu)?;
            let (acc_w, acc_b) = if which == 0 {
                (&mut grads.conv_a_weights, &mut grads.conv_a_bias)
            } else {
                (&mut grads.conv_b_weights, &mut grads.conv_b_bias)
            };
            add_assign(acc_w, &gw);
            add_assign(acc_b, &gb);
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for (_, t) in grads.tensors_mut() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    let mean_loss = total_loss * scale;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into() });
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            layer: format!("{name} gradient"),
        });
    }
    Ok((mean_loss, grads))
}

fn add_assign(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

/// Plain SGD with optional heavy-ball momentum:
/// `v <- momentum * v + grad; p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<ModelParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Self::new(config.learning_rate, config.momentum)
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let lr = self.learning_rate;
        if self.momentum > 0.0 {
            let velocity = self.velocity.get_or_insert_with(|| ModelParams::zeros(params.arch()));
            for ((_, v), (_, g)) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
                for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                    *vi = self.momentum * *vi + gi;
                }
            }
            apply(params, velocity, lr);
        } else {
            apply(params, grads, lr);
        }
    }
}

fn apply(params: &mut ModelParams, update: &ModelParams, lr: f64) {
    for ((_, p), (_, u)) in params.tensors_mut().into_iter().zip(update.tensors()) {
        for (pi, ui) in p.data_mut().iter_mut().zip(u.data()) {
            *pi -= lr * ui;
        }
    }
}

/// One SGD step on `batch`. Returns the mean batch loss measured before the
/// update.
pub fn backprop_batch(params: &mut ModelParams, batch: &[Example], optimizer: &mut Sgd) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(params, batch)?;
    optimizer.step(params, &grads);
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite {
            layer: format!("{name} after update"),
        });
    }
    Ok(loss)
}
