//! Activation maps of the two convolution branches, their per-class
//! averages, and heatmap export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabeledStack;
use crate::featurize::{normalize_stack, Normalization};
use crate::label::{Stereotype, NUM_CLASSES};
use crate::nn::{forward, ModelParams};
use crate::tensor::{write_json, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// 3x3 kernels.
    BranchA,
    /// 9x9 kernels.
    BranchB,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::BranchA, Branch::BranchB];

    pub fn name(self) -> &'static str {
        match self {
            Branch::BranchA => "branch_a",
            Branch::BranchB => "branch_b",
        }
    }
}

/// Post-ReLU, pre-pooling maps of one recording, `[16, N, N]` per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub recording_id: String,
    pub class: Stereotype,
    pub branch_a: Tensor,
    pub branch_b: Tensor,
    /// Logits of the same forward pass.
    pub logits: Tensor,
}

impl ActivationSet {
    pub fn branch(&self, b: Branch) -> &Tensor {
        match b {
            Branch::BranchA => &self.branch_a,
            Branch::BranchB => &self.branch_b,
        }
    }
}

pub fn capture_activations(
    params: &ModelParams,
    features: &Tensor,
    recording_id: &str,
    class: Stereotype,
) -> Result<ActivationSet> {
    let f = forward(params, features)?;
    Ok(ActivationSet {
        recording_id: recording_id.to_string(),
        class,
        branch_a: f.relu_a,
        branch_b: f.relu_b,
        logits: f.logits,
    })
}

/// Captures every stack in parallel, keeping input order.
pub fn capture_all(params: &ModelParams, stacks: &[LabeledStack], mode: Normalization) -> Result<Vec<ActivationSet>> {
    stacks
        .par_iter()
        .map(|s| capture_activations(params, &normalize_stack(&s.stack, mode), &s.recording_id, s.class))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMaps {
    pub count: usize,
    pub branch_a: Tensor,
    pub branch_b: Tensor,
}

impl ClassMaps {
    pub fn branch(&self, b: Branch) -> &Tensor {
        match b {
            Branch::BranchA => &self.branch_a,
            Branch::BranchB => &self.branch_b,
        }
    }
}

/// Per-class means, indexed by class index. Absent classes are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverageMaps {
    pub classes: [Option<ClassMaps>; NUM_CLASSES],
}

impl ClassAverageMaps {
    pub fn get(&self, class: Stereotype) -> Option<&ClassMaps> {
        self.classes[class.index()].as_ref()
    }

    pub fn total_count(&self) -> usize {
        self.classes.iter().flatten().map(|m| m.count).sum()
    }
}

pub fn class_average(sets: &[ActivationSet]) -> Result<ClassAverageMaps> {
    let first = sets.first().ok_or(Error::Empty("activation sets"))?;
    let (shape_a, shape_b) = (first.branch_a.shape().to_vec(), first.branch_b.shape().to_vec());
    let mut sums: [Option<(usize, Vec<f64>, Vec<f64>)>; NUM_CLASSES] = Default::default();
    for s in sets {
        s.branch_a.expect_shape("class_average", &shape_a)?;
        s.branch_b.expect_shape("class_average", &shape_b)?;
        let slot = sums[s.class.index()].get_or_insert_with(|| (0, vec![0.0; s.branch_a.len()], vec![0.0; s.branch_b.len()]));
        slot.0 += 1;
        slot.1.iter_mut().zip(s.branch_a.data()).for_each(|(acc, v)| *acc += v);
        slot.2.iter_mut().zip(s.branch_b.data()).for_each(|(acc, v)| *acc += v);
    }
    let classes = sums.map(|slot| {
        slot.map(|(count, a, b)| {
            let mean = |v: Vec<f64>, shape: &[usize]| {
                Tensor::from_vec(shape.to_vec(), v.into_iter().map(|x| x / count as f64).collect()).expect("length preserved")
            };
            ClassMaps { count, branch_a: mean(a, &shape_a), branch_b: mean(b, &shape_b) }
        })
    });
    Ok(ClassAverageMaps { classes })
}

/// Row, column and value of the largest entry of a 2-D map; the first in
/// row-major order wins ties.
pub fn map_peak(map: &Tensor) -> Result<(usize, usize, f64)> {
    let &[_, cols] = map.shape() else {
        return Err(Error::Shape { op: "map_peak", expected: vec![0, 0], got: map.shape().to_vec() });
    };
    let i = crate::nn::argmax(map.data());
    let v = *map.data().get(i).ok_or(Error::Empty("heatmap"))?;
    Ok((i / cols, i % cols, v))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    #[default]
    Pgm,
    Csv,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Pgm => "pgm",
            HeatmapFormat::Csv => "csv",
        }
    }
}

/// Writes an `[N, N]` map. PGM pixels scale min to 0 and max to 255; a
/// constant map renders all zeros. CSV keeps full precision.
pub fn export_heatmap(map: &Tensor, path: &Path, format: HeatmapFormat) -> Result<()> {
    let &[rows, cols] = map.shape() else {
        return Err(Error::Shape { op: "export_heatmap", expected: vec![0, 0], got: map.shape().to_vec() });
    };
    if !map.is_finite() {
        return Err(Error::NonFinite { layer: format!("heatmap {}", path.display()) });
    }
    let mut out = String::new();
    match format {
        HeatmapFormat::Pgm => {
            let (lo, hi) = (map.min().unwrap_or(0.0), map.max().unwrap_or(0.0));
            let range = hi - lo;
            writeln!(out, "P2\n{cols} {rows}\n255").unwrap();
            for row in map.data().chunks(cols.max(1)) {
                let pixels: Vec<String> = row
                    .iter()
                    .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
                    .map(|p| p.to_string())
                    .collect();
                writeln!(out, "{}", pixels.join(" ")).unwrap();
            }
        }
        HeatmapFormat::Csv => {
            for row in map.data().chunks(cols.max(1)) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", cells.join(",")).unwrap();
            }
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a map written by [`export_heatmap`] in CSV form.
pub fn read_heatmap_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (i, line) in text.lines().enumerate() {
        let malformed = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            kind: crate::error::RecordError::Malformed(msg),
        };
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| malformed(e.to_string())))
            .collect::<Result<_>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(malformed(format!("expected {} values, got {}", cols.unwrap(), row.len())));
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::from_vec(vec![rows, cols.unwrap_or(0)], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub channel: usize,
    pub file: PathBuf,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub count: usize,
    pub branches: BTreeMap<String, Vec<ChannelEntry>>,
}

/// Contents of `index.json`. Absent classes map to `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapIndex {
    pub format: HeatmapFormat,
    pub classes: BTreeMap<String, Option<ClassEntry>>,
}

/// Writes `<out>/<class>/<branch>/<channel>.<ext>` for every present class
/// plus `<out>/index.json`.
pub fn export_class_maps(maps: &ClassAverageMaps, out: &Path, format: HeatmapFormat) -> Result<HeatmapIndex> {
    let mut classes = BTreeMap::new();
    for class in Stereotype::ALL {
        let entry = match maps.get(class) {
            None => None,
            Some(m) => {
                let mut branches = BTreeMap::new();
                for b in Branch::ALL {
                    let stack = m.branch(b);
                    let channels = stack.shape()[0];
                    let mut entries = Vec::with_capacity(channels);
                    for ch in 0..channels {
                        let map = stack.slice_outer(ch);
                        let rel = PathBuf::from(class.code()).join(b.name()).join(format!("{ch}.{}", format.extension()));
                        export_heatmap(&map, &out.join(&rel), format)?;
                        entries.push(ChannelEntry {
                            channel: ch,
                            file: rel,
                            min: map.min().unwrap_or(0.0),
                            max: map.max().unwrap_or(0.0),
                        });
                    }
                    branches.insert(b.name().to_string(), entries);
                }
                Some(ClassEntry { count: m.count, branches })
            }
        };
        classes.insert(class.code().to_string(), entry);
    }
    let index = HeatmapIndex { format, classes };
    write_json(&out.join("index.json"), &index)?;
    Ok(index)
}
