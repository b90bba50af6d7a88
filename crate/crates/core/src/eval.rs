//! Leave-one-cage-out training and evaluation of the network, and the
//! confusion-matrix metrics.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, split_by_group, Fold, Recording};
use crate::error::{Error, RecordError, Result};
use crate::featurize::{featurize, normalize_stack, FeaturizeConfig, HistogramStack, Normalization};
use crate::label::{Sex, Stereotype, NUM_CLASSES};
use crate::tensor::TensorFile;
use crate::nn::{backprop_batch, predict, Arch, Example, ModelParams, Sgd, TrainConfig};

/// A featurized recording with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStack {
    pub recording_id: String,
    pub cage_id: String,
    pub class: Stereotype,
    pub stack: HistogramStack,
}

/// Featurizes every recording in parallel, keeping input order.
pub fn featurize_recordings(recordings: &[Recording], config: &FeaturizeConfig) -> Result<Vec<LabeledStack>> {
    config.validate()?;
    recordings
        .par_iter()
        .map(|r| {
            let stack = featurize(&r.samples, config).map_err(|e| Error::Fold {
                cage_id: format!("{} (recording {})", r.cage_id, r.recording_id),
                source: Box::new(e),
            })?;
            Ok(LabeledStack {
                recording_id: r.recording_id.clone(),
                cage_id: r.cage_id.clone(),
                class: r.class(),
                stack,
            })
        })
        .collect()
}

/// Label metadata for one cached stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedStack {
    pub recording_id: String,
    pub cage_id: String,
    pub class: Stereotype,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCacheMeta {
    pub featurize: FeaturizeConfig,
    /// Stacks in dataset order; tensors are keyed by recording id.
    pub recordings: Vec<CachedStack>,
}

/// Writes featurized recordings in the model-weights JSON format.
pub fn save_feature_cache(path: &Path, stacks: &[LabeledStack], config: &FeaturizeConfig) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut recordings = Vec::with_capacity(stacks.len());
    for s in stacks {
        if tensors.insert(s.recording_id.clone(), s.stack.counts.clone()).is_some() {
            return Err(Error::Config(format!("duplicate recording id {}", s.recording_id)));
        }
        recordings.push(CachedStack {
            recording_id: s.recording_id.clone(),
            cage_id: s.cage_id.clone(),
            class: s.class,
            discarded: s.stack.discarded,
        });
    }
    TensorFile { config: FeatureCacheMeta { featurize: config.clone(), recordings }, tensors }.write(path)
}

pub fn load_feature_cache(path: &Path) -> Result<(FeaturizeConfig, Vec<LabeledStack>)> {
    let mut file = TensorFile::<FeatureCacheMeta>::read(path)?;
    let cfg = file.config.featurize;
    cfg.validate()?;
    let expected = [cfg.intervals_t, cfg.grid_n, cfg.grid_n];
    let mut stacks = Vec::with_capacity(file.config.recordings.len());
    for r in file.config.recordings {
        let counts = file.tensors.remove(&r.recording_id).ok_or_else(|| Error::Record {
            path: path.to_path_buf(),
            line: 0,
            kind: RecordError::Malformed(format!("no tensor for recording {}", r.recording_id)),
        })?;
        counts.expect_shape("load_feature_cache", &expected)?;
        stacks.push(LabeledStack {
            recording_id: r.recording_id,
            cage_id: r.cage_id,
            class: r.class,
            stack: HistogramStack { t_bins: cfg.intervals_t, n: cfg.grid_n, counts, discarded: r.discarded },
        });
    }
    Ok((cfg, stacks))
}

/// Rows are true classes, columns predictions, both in `[AM, JM, AF, JF]` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Stereotype, predicted: Stereotype) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: Stereotype) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
    }
}

/// Accuracies of a confusion matrix. A group with no samples is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: Option<f64>,
    pub male: Option<f64>,
    pub female: Option<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let group = |sex: Sex| {
        let classes = Stereotype::ALL.into_iter().filter(|c| c.sex() == sex);
        let (hit, all) = classes.fold((0, 0), |(h, a), c| (h + cm.counts[c.index()][c.index()], a + cm.row_total(c)));
        ratio(hit, all)
    };
    Metrics { overall: ratio(cm.correct(), cm.total()), male: group(Sex::M), female: group(Sex::F) }
}

/// Final parameters and the mean training loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
}

fn examples(set: &[(&HistogramStack, Stereotype)], mode: Normalization) -> Result<(Arch, Vec<Example>)> {
    let first = set.first().ok_or(Error::Empty("training set"))?.0;
    let arch = Arch::new(first.t_bins, first.n)?;
    let examples = set
        .iter()
        .map(|(stack, class)| {
            if (stack.t_bins, stack.n) != (arch.time_bins, arch.grid) {
                return Err(Error::Shape {
                    op: "training set",
                    expected: arch.input_shape().to_vec(),
                    got: stack.counts.shape().to_vec(),
                });
            }
            Ok((normalize_stack(stack, mode), class.index()))
        })
        .collect::<Result<_>>()?;
    Ok((arch, examples))
}

/// Trains a freshly initialised network with shuffled mini-batch SGD.
pub fn train(train_set: &[(&HistogramStack, Stereotype)], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (arch, data) = examples(train_set, config.normalization)?;
    let mut params = ModelParams::init(arch, config.rng_seed);
    let mut sgd = Sgd::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &[1]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| data[i].clone()).collect();
            let loss = backprop_batch(&mut params, &batch, &mut sgd).map_err(|e| match e {
                Error::NonFinite { layer } => Error::NonFinite { layer: format!("{layer} (epoch {epoch}, batch {b})") },
                other => other,
            })?;
            sum += loss * batch.len() as f64;
        }
        loss_trace.push(sum / data.len() as f64);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Predicted class of one stack under the given input normalization.
pub fn classify(params: &ModelParams, stack: &HistogramStack, mode: Normalization) -> Result<Stereotype> {
    Stereotype::from_index(predict(params, &normalize_stack(stack, mode))?)
}

pub fn evaluate(
    params: &ModelParams,
    test_set: &[(&HistogramStack, Stereotype)],
    mode: Normalization,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for (stack, truth) in test_set {
        cm.record(*truth, classify(params, stack, mode)?);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub recording_id: String,
    pub truth: Stereotype,
    pub predicted: Stereotype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub cage_id: String,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Prediction>,
    /// Mean loss of the last training epoch; absent for non-network methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub featurize: FeaturizeConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
    pub male_accuracy: Option<f64>,
    pub female_accuracy: Option<f64>,
    pub config: ConfigEcho,
    pub wall_time_secs: f64,
}

impl EvalReport {
    pub fn from_folds(folds: Vec<FoldReport>, config: ConfigEcho, wall_time_secs: f64) -> Self {
        let mut aggregate = ConfusionMatrix::default();
        for f in &folds {
            aggregate.merge(&f.confusion);
        }
        let m = metrics(&aggregate);
        EvalReport {
            folds,
            aggregate,
            overall_accuracy: m.overall,
            male_accuracy: m.male,
            female_accuracy: m.female,
            config,
            wall_time_secs,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { overall: self.overall_accuracy, male: self.male_accuracy, female: self.female_accuracy }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::tensor::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::tensor::read_json(path)
    }
}

/// Result of a LOCO run: the report and one trained model per fold.
#[derive(Debug, Clone)]
pub struct LocoRun {
    pub report: EvalReport,
    pub models: Vec<(String, ModelParams)>,
}

/// Runs `f` on a pool of `jobs` threads (0 means rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn loco_folds(stacks: &[LabeledStack]) -> Result<Vec<Fold>> {
    let cages: Vec<&str> = stacks.iter().map(|s| s.cage_id.as_str()).collect();
    split_by_group(&cages)
}

pub(crate) fn subset<'a>(stacks: &'a [LabeledStack], idx: &[usize]) -> Vec<(&'a HistogramStack, Stereotype)> {
    idx.iter().map(|&i| (&stacks[i].stack, stacks[i].class)).collect()
}

/// LOCO over already featurized recordings. Fold `i` trains with seed
/// `derive_seed(config.rng_seed, [i])`.
pub fn run_loco_stacks(
    stacks: &[LabeledStack],
    featurize_cfg: &FeaturizeConfig,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<LocoRun> {
    let start = Instant::now();
    train_cfg.validate()?;
    let folds = loco_folds(stacks)?;
    let results: Vec<Result<(FoldReport, ModelParams)>> = with_jobs(jobs, || {
        folds
            .par_iter()
            .enumerate()
            .map(|(i, fold)| {
                let cfg = TrainConfig { rng_seed: derive_seed(train_cfg.rng_seed, &[i as u64]), ..train_cfg.clone() };
                let wrap = |e| Error::Fold { cage_id: fold.cage_id.clone(), source: Box::new(e) };
                let outcome = train(&subset(stacks, &fold.train), &cfg).map_err(wrap)?;
                let mut confusion = ConfusionMatrix::default();
                let mut predictions = Vec::with_capacity(fold.test.len());
                for &t in &fold.test {
                    let s = &stacks[t];
                    let predicted = classify(&outcome.params, &s.stack, cfg.normalization).map_err(wrap)?;
                    confusion.record(s.class, predicted);
                    predictions.push(Prediction { recording_id: s.recording_id.clone(), truth: s.class, predicted });
                }
                log::info!("fold {} ({}): {}/{} correct", i, fold.cage_id, confusion.correct(), confusion.total());
                let report = FoldReport {
                    cage_id: fold.cage_id.clone(),
                    confusion,
                    predictions,
                    final_loss: outcome.loss_trace.last().copied(),
                };
                Ok((report, outcome.params))
            })
            .collect()
    })?;
    let mut fold_reports = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    for r in results {
        let (report, params) = r?;
        models.push((report.cage_id.clone(), params));
        fold_reports.push(report);
    }
    let echo = ConfigEcho { featurize: featurize_cfg.clone(), train: train_cfg.clone() };
    Ok(LocoRun { report: EvalReport::from_folds(fold_reports, echo, start.elapsed().as_secs_f64()), models })
}

/// Featurizes all recordings once, then runs [`run_loco_stacks`].
pub fn run_loco(
    recordings: &[Recording],
    featurize_cfg: &FeaturizeConfig,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<LocoRun> {
    let start = Instant::now();
    let stacks = with_jobs(jobs, || featurize_recordings(recordings, featurize_cfg))??;
    let mut run = run_loco_stacks(&stacks, featurize_cfg, train_cfg, jobs)?;
    run.report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(run)
}
