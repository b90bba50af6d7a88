//! Central finite-difference verification of the analytic gradients.
//!
//! With `h = 1e-6`, a loss evaluated in plain `f64` carries roundoff of
//! about `1e-16`, which turns into ~`1e-10` of noise in every difference
//! quotient and swamps small gradients. The checker therefore evaluates
//! perturbed networks in double-double arithmetic (about 32 significant
//! digits) with its own gather-form convolution, and forms
//! `L(p + h) - L(p - h)` from an algebraically exact expression instead of
//! subtracting two rounded losses.

use super::model::{ModelParams, CONV_CHANNELS};
use super::train::{loss_and_gradients, Example};
use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::tensor::Tensor;

/// Worst relative error between the analytic gradient and
/// `(L(p + h) - L(p - h)) / 2h`, over every parameter.
pub fn grad_check(params: &ModelParams, batch: &[Example], h: f64) -> Result<f64> {
    let (_, analytic) = loss_and_gradients(params, batch)?;
    compare_gradients(params, batch, &analytic, h)
}

/// Same as [`grad_check`] but against a caller-supplied gradient.
///
/// Relative error per parameter is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn compare_gradients(params: &ModelParams, batch: &[Example], analytic: &ModelParams, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    if batch.is_empty() {
        return Err(Error::Empty("gradient-check batch"));
    }
    analytic.validate()?;
    let probe = Probe::new(params, batch)?;
    let mut worst = 0.0_f64;
    let mut record = |a: f64, n: f64| {
        let denom = a.abs().max(n.abs()).max(1e-12);
        worst = worst.max((a - n).abs() / denom);
    };

    for branch in [Branch::A, Branch::B] {
        let (weights, bias, grad_w, grad_b) = match branch {
            Branch::A => (&params.conv_a_weights, &params.conv_a_bias, &analytic.conv_a_weights, &analytic.conv_a_bias),
            Branch::B => (&params.conv_b_weights, &params.conv_b_bias, &analytic.conv_b_weights, &analytic.conv_b_bias),
        };
        let &[_, c_in, k, _] = weights.shape() else { unreachable!() };
        for idx in 0..weights.len() {
            let (o, rest) = (idx / (c_in * k * k), idx % (c_in * k * k));
            let (c, u, v) = (rest / (k * k), rest % (k * k) / k, rest % k);
            let numeric = probe.difference_quotient(weights.data()[idx], h, |sample, step| {
                probe.conv_logits(sample, branch, o, |pre| pre.add_shifted(&probe.batch[sample].0, c, u, v, k, step))
            });
            record(grad_w.data()[idx], numeric);
        }
        for o in 0..CONV_CHANNELS {
            let numeric = probe.difference_quotient(bias.data()[o], h, |sample, step| {
                probe.conv_logits(sample, branch, o, |pre| pre.add_constant(step))
            });
            record(grad_b.data()[o], numeric);
        }
    }

    let f = params.arch().feature_len();
    for idx in 0..params.linear_weights.len() {
        let (k, j) = (idx / f, idx % f);
        let numeric = probe.difference_quotient(params.linear_weights.data()[idx], h, |sample, step| {
            let mut z = probe.base_logits[sample];
            let x = probe.features[sample][j];
            z[k] = z[k].add_prod(step.hi, x.hi).add_prod(step.hi, x.lo).add_prod(step.lo, x.hi);
            z
        });
        record(analytic.linear_weights.data()[idx], numeric);
    }
    for k in 0..NUM_CLASSES {
        let numeric = probe.difference_quotient(params.linear_bias.data()[k], h, |sample, step| {
            let mut z = probe.base_logits[sample];
            z[k] = z[k].add(step);
            z
        });
        record(analytic.linear_bias.data()[k], numeric);
    }
    Ok(worst)
}

#[derive(Clone, Copy)]
enum Branch {
    A,
    B,
}

/// Unperturbed network state for every sample, in double-double.
struct Probe<'a> {
    params: &'a ModelParams,
    batch: &'a [Example],
    grid: usize,
    /// Pre-activation planes per sample, branch A channels then branch B.
    pre: Vec<Vec<Plane>>,
    /// Pooled features per sample, same layout as the network's.
    features: Vec<Vec<Dd>>,
    base_logits: Vec<[Dd; NUM_CLASSES]>,
}

impl<'a> Probe<'a> {
    fn new(params: &'a ModelParams, batch: &'a [Example]) -> Result<Self> {
        let arch = params.arch();
        let grid = arch.grid;
        let mut pre = Vec::with_capacity(batch.len());
        let mut features = Vec::with_capacity(batch.len());
        let mut base_logits = Vec::with_capacity(batch.len());
        for (input, label) in batch {
            input.expect_shape("gradient check input", &arch.input_shape())?;
            if *label >= NUM_CLASSES {
                return Err(Error::Label(*label));
            }
            let mut planes = Vec::with_capacity(2 * CONV_CHANNELS);
            for (w, b) in [
                (&params.conv_a_weights, &params.conv_a_bias),
                (&params.conv_b_weights, &params.conv_b_bias),
            ] {
                for o in 0..CONV_CHANNELS {
                    planes.push(Plane::convolve(input, w, b.data()[o], o));
                }
            }
            let feats: Vec<Dd> = planes.iter().flat_map(|p| p.relu_pool()).collect();
            base_logits.push(logits(params, &feats));
            features.push(feats);
            pre.push(planes);
        }
        Ok(Probe {
            params,
            batch,
            grid,
            pre,
            features,
            base_logits,
        })
    }

    /// Logits of `sample` after editing one pre-activation plane.
    fn conv_logits(&self, sample: usize, branch: Branch, o: usize, edit: impl FnOnce(&mut Plane)) -> [Dd; NUM_CLASSES] {
        let plane_idx = match branch {
            Branch::A => o,
            Branch::B => CONV_CHANNELS + o,
        };
        let mut plane = self.pre[sample][plane_idx].clone();
        edit(&mut plane);
        let side = self.grid / 2;
        let offset = plane_idx * side * side;
        let old = &self.features[sample][offset..offset + side * side];
        let f = self.features[sample].len();
        let w = self.params.linear_weights.data();
        let mut z = self.base_logits[sample];
        for (j, (new, old)) in plane.relu_pool().into_iter().zip(old).enumerate() {
            let diff = new.sub(*old);
            for (k, zk) in z.iter_mut().enumerate() {
                let wk = w[k * f + offset + j];
                *zk = zk.add_prod(wk, diff.hi).add_prod(wk, diff.lo);
            }
        }
        z
    }

    /// `(L(p + h) - L(p - h)) / (actual step)`, averaged over the batch.
    /// `logits_at(sample, step)` returns the logits with the parameter moved
    /// by `step` (exact, in double-double).
    fn difference_quotient(&self, p: f64, h: f64, logits_at: impl Fn(usize, Dd) -> [Dd; NUM_CLASSES]) -> f64 {
        // The perturbed parameter must be representable; measure the step
        // actually taken rather than assuming it is exactly h.
        let up = Dd::from(p + h).sub(Dd::from(p));
        let down = Dd::from(p - h).sub(Dd::from(p));
        let span = up.sub(down).to_f64();
        let mut total = 0.0;
        for (sample, (_, label)) in self.batch.iter().enumerate() {
            total += loss_difference(&logits_at(sample, up), &logits_at(sample, down), *label);
        }
        total / self.batch.len() as f64 / span
    }
}

fn logits(params: &ModelParams, features: &[Dd]) -> [Dd; NUM_CLASSES] {
    let f = features.len();
    let w = params.linear_weights.data();
    std::array::from_fn(|k| {
        let mut z = Dd::from(params.linear_bias.data()[k]);
        for (j, x) in features.iter().enumerate() {
            z = z.add_prod(w[k * f + j], x.hi).add_prod(w[k * f + j], x.lo);
        }
        z
    })
}

/// `CE(z_plus, y) - CE(z_minus, y)` without cancellation:
/// with `d = z_plus - z_minus` and `q = softmax(z_minus)`,
/// the difference equals `ln(1 + sum_k q_k expm1(d_k) / sum_k q_k) - d_y`.
fn loss_difference(z_plus: &[Dd; NUM_CLASSES], z_minus: &[Dd; NUM_CLASSES], label: usize) -> f64 {
    let d: Vec<f64> = z_plus.iter().zip(z_minus).map(|(a, b)| a.sub(*b).to_f64()).collect();
    let base: Vec<f64> = z_minus.iter().map(|z| z.to_f64()).collect();
    let m = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q: Vec<f64> = base.iter().map(|z| (z - m).exp()).collect();
    let q_sum: f64 = q.iter().sum();
    let r: f64 = q.iter().zip(&d).map(|(qk, dk)| qk * dk.exp_m1()).sum::<f64>() / q_sum;
    r.ln_1p() - d[label]
}

/// One `N x N` pre-activation plane in double-double.
#[derive(Clone)]
struct Plane {
    n: usize,
    values: Vec<Dd>,
}

impl Plane {
    /// Gather-form same-padded convolution of output channel `o`.
    fn convolve(input: &Tensor, weights: &Tensor, bias: f64, o: usize) -> Plane {
        let &[c_in, n, _] = input.shape() else { unreachable!() };
        let k = weights.shape()[2];
        let p = (k - 1) as isize / 2;
        let mut values = vec![Dd::from(bias); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = values[i * n + j];
                for c in 0..c_in {
                    for u in 0..k {
                        let y = i as isize + u as isize - p;
                        if y < 0 || y >= n as isize {
                            continue;
                        }
                        for v in 0..k {
                            let x = j as isize + v as isize - p;
                            if x < 0 || x >= n as isize {
                                continue;
                            }
                            let w = weights.get(&[o, c, u, v]);
                            acc = acc.add_prod(w, input.get(&[c, y as usize, x as usize]));
                        }
                    }
                }
                values[i * n + j] = acc;
            }
        }
        Plane { n, values }
    }

    /// Adds `step * input[c]` shifted as kernel tap `(u, v)` would read it.
    fn add_shifted(&mut self, input: &Tensor, c: usize, u: usize, v: usize, k: usize, step: Dd) {
        let n = self.n as isize;
        let p = (k - 1) as isize / 2;
        for i in 0..n {
            let y = i + u as isize - p;
            if y < 0 || y >= n {
                continue;
            }
            for j in 0..n {
                let x = j + v as isize - p;
                if x < 0 || x >= n {
                    continue;
                }
                let val = input.get(&[c, y as usize, x as usize]);
                let cell = &mut self.values[(i * n + j) as usize];
                *cell = cell.add_prod(step.hi, val).add_prod(step.lo, val);
            }
        }
    }

    fn add_constant(&mut self, step: Dd) {
        for cell in &mut self.values {
            *cell = cell.add(step);
        }
    }

    fn relu_pool(&self) -> Vec<Dd> {
        let (n, side) = (self.n, self.n / 2);
        let relu = |d: Dd| if d.gt(Dd::ZERO) { d } else { Dd::ZERO };
        let mut out = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let mut best = relu(self.values[2 * i * n + 2 * j]);
                for off in [(0, 1), (1, 0), (1, 1)] {
                    let cand = relu(self.values[(2 * i + off.0) * n + 2 * j + off.1]);
                    if cand.gt(best) {
                        best = cand;
                    }
                }
                out.push(best);
            }
        }
        out
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let (t, f) = two_sum(self.lo, other.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    fn sub(self, other: Dd) -> Dd {
        self.add(Dd {
            hi: -other.hi,
            lo: -other.lo,
        })
    }

    /// `self + a * b`, with the product formed exactly.
    fn add_prod(self, a: f64, b: f64) -> Dd {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(Dd { hi: p, lo: e })
    }

    fn gt(self, other: Dd) -> bool {
        self.hi > other.hi || (self.hi == other.hi && self.lo > other.lo)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}
