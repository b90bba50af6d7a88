use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::nn::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmHyper {
    /// L2 regularisation strength.
    pub lambda: f64,
    /// Scale of the decaying step `step / (lambda * t)` at epoch `t`.
    pub step: f64,
    pub epochs: usize,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper { lambda: 0.01, step: 1.0, epochs: 1000 }
    }
}

impl SvmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("svm lambda must be positive, got {}", self.lambda)));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("svm step must be non-negative, got {}", self.step)));
        }
        Ok(())
    }
}

/// One-vs-rest linear SVM over standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Per-class weights, in standardised feature units.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub hyper: SvmHyper,
    /// Per-class objective of the kept iterate after each epoch.
    pub objective_trace: Vec<Vec<f64>>,
}

impl SvmModel {
    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_mean).zip(&self.feature_scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn decision_values(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.feature_mean.len() {
            return Err(Error::Shape { op: "svm_classify", expected: vec![self.feature_mean.len()], got: vec![query.len()] });
        }
        let z = self.standardise(query);
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, &z) + b).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `lambda / 2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`.
fn objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0)).sum();
    0.5 * lambda * dot(w, w) + hinge / xs.len() as f64
}

/// Full-batch subgradient descent on one binary problem. The subgradient
/// method is not monotone, so the best iterate seen so far is kept.
fn train_binary(xs: &[Vec<f64>], ys: &[f64], hyper: &SvmHyper) -> (Vec<f64>, f64, Vec<f64>) {
    let d = xs[0].len();
    let m = xs.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut best = (w.clone(), b, objective(&w, b, xs, ys, hyper.lambda));
    let mut trace = Vec::with_capacity(hyper.epochs);
    for t in 1..=hyper.epochs {
        let eta = hyper.step / (hyper.lambda * t as f64);
        let mut gw: Vec<f64> = w.iter().map(|wi| hyper.lambda * wi).collect();
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            if y * (dot(&w, x) + b) < 1.0 {
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi / m;
                }
                gb -= y / m;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let obj = objective(&w, b, xs, ys, hyper.lambda);
        if obj < best.2 {
            best = (w.clone(), b, obj);
        }
        trace.push(best.2);
    }
    (best.0, best.1, trace)
}

pub fn svm_train(train: &[(Vec<f64>, usize)], hyper: &SvmHyper) -> Result<SvmModel> {
    hyper.validate()?;
    let d = train.first().ok_or(Error::Empty("SVM training set"))?.0.len();
    let mut present = [false; NUM_CLASSES];
    for (x, c) in train {
        if x.len() != d {
            return Err(Error::Shape { op: "svm_train", expected: vec![d], got: vec![x.len()] });
        }
        *present.get_mut(*c).ok_or(Error::Label(*c))? = true;
    }

    let m = train.len() as f64;
    let mut feature_mean = vec![0.0; d];
    for (x, _) in train {
        feature_mean.iter_mut().zip(x).for_each(|(mu, v)| *mu += v / m);
    }
    let mut feature_scale = vec![0.0; d];
    for (x, _) in train {
        feature_scale.iter_mut().zip(x).zip(&feature_mean).for_each(|((s, v), mu)| *s += (v - mu) * (v - mu) / m);
    }
    feature_scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

    let mut model = SvmModel {
        weights: vec![vec![0.0; d]; NUM_CLASSES],
        biases: vec![0.0; NUM_CLASSES],
        feature_mean,
        feature_scale,
        hyper: hyper.clone(),
        objective_trace: vec![Vec::new(); NUM_CLASSES],
    };
    if present.iter().filter(|&&p| p).count() < 2 {
        let only = present.iter().position(|&p| p).expect("non-empty");
        log::warn!("SVM training data holds a single class; predicting class {only} for every query");
        model.biases = (0..NUM_CLASSES).map(|c| if c == only { 1.0 } else { -1.0 }).collect();
        return Ok(model);
    }
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| model.standardise(x)).collect();
    for class in 0..NUM_CLASSES {
        let ys: Vec<f64> = train.iter().map(|(_, c)| if *c == class { 1.0 } else { -1.0 }).collect();
        let (w, b, trace) = train_binary(&xs, &ys, hyper);
        model.weights[class] = w;
        model.biases[class] = b;
        model.objective_trace[class] = trace;
    }
    if model.weights.iter().flatten().chain(&model.biases).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: "svm weights".into() });
    }
    Ok(model)
}

/// Class with the largest decision value, lowest index on ties.
pub fn svm_classify(model: &SvmModel, query: &[f64]) -> Result<usize> {
    Ok(argmax(&model.decision_values(query)?))
}
