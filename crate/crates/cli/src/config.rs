use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use stopmap::baselines::BaselineConfig;
use stopmap::dataset::SimConfig;
use stopmap::explain::HeatmapFormat;
use stopmap::featurize::FeaturizeConfig;
use stopmap::nn::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub format: HeatmapFormat,
    /// Weights to explain. When absent, a model is trained on every
    /// featurized recording with the `train` settings.
    pub model: Option<PathBuf>,
}

/// Everything one pipeline run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When set, replaces `simulate.rng_seed` and `train.rng_seed`.
    pub rng_seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Cage layout JSON. Defaults to `layout.json` beside the manifest, then
    /// to the built-in 50 x 50 cm layout.
    pub layout: Option<PathBuf>,
    /// Input manifest for `featurize`. Defaults to the one `simulate` writes.
    pub manifest: Option<PathBuf>,
    pub simulate: Option<SimConfig>,
    pub featurize: FeaturizeConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub explain: ExplainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rng_seed: None,
            out_dir: PathBuf::from("out"),
            layout: None,
            manifest: None,
            simulate: None,
            featurize: FeaturizeConfig::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

/// Parses `key=value` and writes `value` at the dotted `key` path,
/// creating objects along the way. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| format!("override '{assignment}' is not key=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key '{key}' has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| format!("override '{key}': '{}' is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one segment")
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    /// Reads, overrides, resolves and validates a config file.
    pub fn load(path: &Path, overrides: &[String], out: Option<&Path>) -> Result<PipelineConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))?;

        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.layout);
        resolve(base, &mut cfg.manifest);
        resolve(base, &mut cfg.explain.model);
        cfg.out_dir = match out {
            Some(o) => o.to_path_buf(),
            None if cfg.out_dir.is_relative() => base.join(&cfg.out_dir),
            None => cfg.out_dir,
        };
        if let Some(seed) = cfg.rng_seed {
            cfg.train.rng_seed = seed;
            if let Some(sim) = &mut cfg.simulate {
                sim.rng_seed = seed;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let err = |e: stopmap::Error| e.to_string();
        if let Some(sim) = &self.simulate {
            sim.validate().map_err(err)?;
        }
        self.featurize.validate().map_err(err)?;
        self.train.validate().map_err(err)?;
        self.baselines.svm.validate().map_err(err)?;
        if self.baselines.components == 0 || self.baselines.knn_k == 0 {
            return Err("baselines.components and baselines.knn_k must be >= 1".into());
        }
        for (name, p) in [("layout", &self.layout), ("explain.model", &self.explain.model)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
