//! Classical comparison pipeline: PCA over flattened histogram stacks,
//! followed by nearest-neighbour and linear SVM classifiers, evaluated on
//! the same leave-one-cage-out folds as the network.

mod knn;
mod pca;
mod svm;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use knn::knn_classify;
pub use pca::{centered_gram, jacobi_eigen, pca_fit, pca_project, PcaModel};
pub use svm::{svm_classify, svm_train, SvmHyper, SvmModel};

use crate::error::{Error, Result};
use crate::eval::{loco_folds, metrics, with_jobs, ConfusionMatrix, FoldReport, LabeledStack, Prediction};
use crate::featurize::{normalize_stack, FeaturizeConfig, Normalization};
use crate::label::Stereotype;

/// Feature space the SVM is trained in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvmSpace {
    /// The PCA projection shared with the nearest-neighbour classifier.
    #[default]
    Pca,
    /// The flattened stack itself.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub components: usize,
    pub knn_k: usize,
    pub svm: SvmHyper,
    pub svm_space: SvmSpace,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { components: 3, knn_k: 1, svm: SvmHyper::default(), svm_space: SvmSpace::Pca }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
    pub male_accuracy: Option<f64>,
    pub female_accuracy: Option<f64>,
}

impl MethodReport {
    fn from_folds(folds: Vec<FoldReport>) -> Self {
        let mut aggregate = ConfusionMatrix::default();
        for f in &folds {
            aggregate.merge(&f.confusion);
        }
        let m = metrics(&aggregate);
        MethodReport {
            folds,
            aggregate,
            overall_accuracy: m.overall,
            male_accuracy: m.male,
            female_accuracy: m.female,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEcho {
    pub featurize: FeaturizeConfig,
    pub normalization: Normalization,
    pub baselines: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub knn: MethodReport,
    pub svm: MethodReport,
    pub config: BaselineEcho,
    pub wall_time_secs: f64,
}

impl BaselineReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::tensor::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::tensor::read_json(path)
    }
}

/// Runs both baselines on every LOCO fold. PCA is fitted on the training
/// part of each fold only.
pub fn run_baselines(
    stacks: &[LabeledStack],
    featurize_cfg: &FeaturizeConfig,
    normalization: Normalization,
    config: &BaselineConfig,
    jobs: usize,
) -> Result<BaselineReport> {
    let start = Instant::now();
    config.svm.validate()?;
    let folds = loco_folds(stacks)?;
    let flat: Vec<Vec<f64>> = stacks.iter().map(|s| normalize_stack(&s.stack, normalization).into_data()).collect();

    let results: Vec<Result<(FoldReport, FoldReport)>> = with_jobs(jobs, || {
        folds
            .par_iter()
            .map(|fold| {
                let wrap = |e| Error::Fold { cage_id: fold.cage_id.clone(), source: Box::new(e) };
                let train_rows: Vec<Vec<f64>> = fold.train.iter().map(|&i| flat[i].clone()).collect();
                let pca = pca_fit(&train_rows, config.components).map_err(wrap)?;
                let project = |i: usize| pca_project(&pca, &flat[i]);
                let label = |i: usize| stacks[i].class.index();
                let pca_train: Vec<(Vec<f64>, usize)> =
                    fold.train.iter().map(|&i| Ok((project(i)?, label(i)))).collect::<Result<_>>().map_err(wrap)?;
                let svm = match config.svm_space {
                    SvmSpace::Pca => svm_train(&pca_train, &config.svm),
                    SvmSpace::Full => {
                        let rows: Vec<_> = fold.train.iter().map(|&i| (flat[i].clone(), label(i))).collect();
                        svm_train(&rows, &config.svm)
                    }
                }
                .map_err(wrap)?;

                let (mut knn_cm, mut svm_cm) = (ConfusionMatrix::default(), ConfusionMatrix::default());
                let (mut knn_pred, mut svm_pred) = (Vec::new(), Vec::new());
                for &t in &fold.test {
                    let q = project(t).map_err(wrap)?;
                    let truth = stacks[t].class;
                    let k = Stereotype::from_index(knn_classify(&pca_train, &q, config.knn_k).map_err(wrap)?)?;
                    let svm_query = if config.svm_space == SvmSpace::Pca { &q } else { &flat[t] };
                    let s = Stereotype::from_index(svm_classify(&svm, svm_query).map_err(wrap)?)?;
                    knn_cm.record(truth, k);
                    svm_cm.record(truth, s);
                    let id = stacks[t].recording_id.clone();
                    knn_pred.push(Prediction { recording_id: id.clone(), truth, predicted: k });
                    svm_pred.push(Prediction { recording_id: id, truth, predicted: s });
                }
                let report = |confusion, predictions| FoldReport {
                    cage_id: fold.cage_id.clone(),
                    confusion,
                    predictions,
                    final_loss: None,
                };
                Ok((report(knn_cm, knn_pred), report(svm_cm, svm_pred)))
            })
            .collect()
    })?;

    let (mut knn_folds, mut svm_folds) = (Vec::new(), Vec::new());
    for r in results {
        let (k, s) = r?;
        knn_folds.push(k);
        svm_folds.push(s);
    }
    Ok(BaselineReport {
        knn: MethodReport::from_folds(knn_folds),
        svm: MethodReport::from_folds(svm_folds),
        config: BaselineEcho { featurize: featurize_cfg.clone(), normalization, baselines: config.clone() },
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
