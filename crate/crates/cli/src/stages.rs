use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stopmap::baselines::{run_baselines, BaselineReport};
use stopmap::dataset::{load_layout, load_manifest, simulate, write_dataset, CageLayout};
use stopmap::error::ErrorClass;
use stopmap::eval::{
    featurize_recordings, load_feature_cache, metrics, run_loco_stacks, save_feature_cache, train, with_jobs,
    ConfusionMatrix, EvalReport, LabeledStack,
};
use stopmap::explain::{capture_all, class_average, export_class_maps};
use stopmap::featurize::FeaturizeConfig;
use stopmap::nn::ModelParams;
use stopmap::Stereotype;

use crate::config::PipelineConfig;

/// A stage failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<stopmap::Error> for Failure {
    fn from(e: stopmap::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

type StageResult = Result<(), Failure>;

pub struct Paths {
    pub data_dir: PathBuf,
    pub features: PathBuf,
    pub eval_report: PathBuf,
    pub models: PathBuf,
    pub baseline_report: PathBuf,
    pub model: PathBuf,
    pub heatmaps: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Self {
        Paths {
            data_dir: out.join("data"),
            features: out.join("features.json"),
            eval_report: out.join("eval_report.json"),
            models: out.join("models"),
            baseline_report: out.join("baseline_report.json"),
            model: out.join("model.json"),
            heatmaps: out.join("heatmaps"),
        }
    }
}

fn layout_for(cfg: &PipelineConfig, manifest: Option<&Path>) -> Result<CageLayout, Failure> {
    if let Some(p) = &cfg.layout {
        return Ok(load_layout(p)?);
    }
    let beside = manifest.and_then(Path::parent).map(|d| d.join("layout.json"));
    match beside {
        Some(p) if p.is_file() => Ok(load_layout(&p)?),
        _ => Ok(CageLayout::default()),
    }
}

pub fn simulate_stage(cfg: &PipelineConfig, jobs: usize) -> StageResult {
    let sim = cfg.simulate.as_ref().ok_or_else(|| Failure::config("config has no simulate section"))?;
    let layout = layout_for(cfg, None)?;
    let recordings = with_jobs(jobs, || simulate(sim, &layout))??;
    let paths = Paths::new(&cfg.out_dir);
    let manifest = write_dataset(&paths.data_dir, &recordings, &layout)?;
    println!("wrote {} recordings, manifest {}", recordings.len(), manifest.display());
    Ok(())
}

pub fn featurize_stage(cfg: &PipelineConfig, jobs: usize) -> StageResult {
    let paths = Paths::new(&cfg.out_dir);
    let manifest = cfg.manifest.clone().unwrap_or_else(|| paths.data_dir.join("manifest.json"));
    if !manifest.is_file() {
        return Err(Failure::config(format!("manifest {} does not exist", manifest.display())));
    }
    let layout = layout_for(cfg, Some(&manifest))?;
    if layout.width != cfg.featurize.cage_w || layout.height != cfg.featurize.cage_h {
        return Err(Failure::config(format!(
            "layout is {} x {} cm but featurize.cage_w/cage_h are {} x {}",
            layout.width, layout.height, cfg.featurize.cage_w, cfg.featurize.cage_h
        )));
    }
    let recordings = load_manifest(&manifest, &layout)?;
    let stacks = with_jobs(jobs, || featurize_recordings(&recordings, &cfg.featurize))??;
    save_feature_cache(&paths.features, &stacks, &cfg.featurize)?;
    let counted: f64 = stacks.iter().map(|s| s.stack.total()).sum();
    let discarded: usize = stacks.iter().map(|s| s.stack.discarded).sum();
    println!(
        "featurized {} recordings ({counted} stops binned, {discarded} past the horizon), cache {}",
        stacks.len(),
        paths.features.display()
    );
    Ok(())
}

/// Loads the feature cache and checks it was built with the configured
/// featurize settings.
fn load_features(cfg: &PipelineConfig, paths: &Paths) -> Result<(FeaturizeConfig, Vec<LabeledStack>), Failure> {
    if !paths.features.is_file() {
        return Err(Failure::config(format!(
            "feature cache {} does not exist; run featurize first",
            paths.features.display()
        )));
    }
    let (fcfg, stacks) = load_feature_cache(&paths.features)?;
    if fcfg != cfg.featurize {
        return Err(Failure::config(format!(
            "feature cache {} was built with different featurize settings; run featurize again",
            paths.features.display()
        )));
    }
    Ok((fcfg, stacks))
}

pub fn train_loco_stage(cfg: &PipelineConfig, jobs: usize) -> StageResult {
    let paths = Paths::new(&cfg.out_dir);
    let (fcfg, stacks) = load_features(cfg, &paths)?;
    let run = run_loco_stacks(&stacks, &fcfg, &cfg.train, jobs)?;
    run.report.save(&paths.eval_report)?;
    for (cage, params) in &run.models {
        params.save(&paths.models.join(format!("{cage}.json")))?;
    }
    print!("{}", format_report(&run.report.aggregate));
    println!("report {}", paths.eval_report.display());
    Ok(())
}

pub fn baselines_stage(cfg: &PipelineConfig, jobs: usize) -> StageResult {
    let paths = Paths::new(&cfg.out_dir);
    let (fcfg, stacks) = load_features(cfg, &paths)?;
    let report = run_baselines(&stacks, &fcfg, cfg.train.normalization, &cfg.baselines, jobs)?;
    report.save(&paths.baseline_report)?;
    print!("{}", format_baselines(&report));
    println!("report {}", paths.baseline_report.display());
    Ok(())
}

pub fn explain_stage(cfg: &PipelineConfig, jobs: usize) -> StageResult {
    let paths = Paths::new(&cfg.out_dir);
    let (_, stacks) = load_features(cfg, &paths)?;
    let params = match &cfg.explain.model {
        Some(p) => ModelParams::load(p)?,
        None => {
            let all: Vec<_> = stacks.iter().map(|s| (&s.stack, s.class)).collect();
            let params = with_jobs(jobs, || train(&all, &cfg.train))??.params;
            params.save(&paths.model)?;
            params
        }
    };
    let sets = with_jobs(jobs, || capture_all(&params, &stacks, cfg.train.normalization))??;
    let maps = class_average(&sets)?;
    let index = export_class_maps(&maps, &paths.heatmaps, cfg.explain.format)?;
    let classes = index.classes.values().flatten().count();
    println!("wrote heatmaps for {classes} classes to {}", paths.heatmaps.display());
    Ok(())
}

pub fn report_stage(cfg: &PipelineConfig) -> StageResult {
    let paths = Paths::new(&cfg.out_dir);
    if !paths.eval_report.is_file() {
        return Err(Failure::config(format!(
            "evaluation report {} does not exist; run train-loco first",
            paths.eval_report.display()
        )));
    }
    let report = EvalReport::load(&paths.eval_report)?;
    print!("{}", format_report(&report.aggregate));
    if paths.baseline_report.is_file() {
        print!("{}", format_baselines(&BaselineReport::load(&paths.baseline_report)?));
    }
    Ok(())
}

fn percent(value: Option<f64>, hits: u64, total: u64) -> String {
    match value {
        Some(v) => format!("{:.1}% ({hits}/{total})", 100.0 * v),
        None => "n/a".to_string(),
    }
}

/// Confusion matrix (rows true, columns predicted) and accuracies.
pub fn format_report(cm: &ConfusionMatrix) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "");
    for c in Stereotype::ALL {
        let _ = write!(s, "{:>6}", c.code());
    }
    s.push('\n');
    for (truth, row) in Stereotype::ALL.iter().zip(&cm.counts) {
        let _ = write!(s, "{:>8}", truth.code());
        for v in row {
            let _ = write!(s, "{v:>6}");
        }
        s.push('\n');
    }
    let m = metrics(cm);
    let group = |classes: [Stereotype; 2]| -> (u64, u64) {
        let hits = classes.iter().map(|c| cm.counts[c.index()][c.index()]).sum();
        (hits, classes.iter().map(|&c| cm.row_total(c)).sum())
    };
    let (fh, ft) = group([Stereotype::AF, Stereotype::JF]);
    let (mh, mt) = group([Stereotype::AM, Stereotype::JM]);
    let _ = writeln!(s, "overall {}", percent(m.overall, cm.correct(), cm.total()));
    let _ = writeln!(s, "female  {}", percent(m.female, fh, ft));
    let _ = writeln!(s, "male    {}", percent(m.male, mh, mt));
    s
}

fn format_baselines(report: &BaselineReport) -> String {
    let acc = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    format!(
        "baselines: {}-nn {}, svm {}\n",
        report.config.baselines.knn_k,
        acc(report.knn.overall_accuracy),
        acc(report.svm.overall_accuracy)
    )
}
