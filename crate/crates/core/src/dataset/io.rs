use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CageLayout, Recording};
use crate::error::{Error, RecordError, Result};
use crate::featurize::TrajectorySample;
use crate::label::{Age, Sex};
use crate::tensor::{read_json, write_json};

/// One manifest row. Relative trajectory paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub cage_id: String,
    pub mouse_id: String,
    pub sex: Sex,
    pub age: Age,
    pub trajectory_path: PathBuf,
}

pub fn load_layout(path: &Path) -> Result<CageLayout> {
    let layout: CageLayout = read_json(path)?;
    layout.validate()?;
    Ok(layout)
}

/// Reads a `t,x,y` CSV, checking bounds and strictly increasing time.
pub fn read_trajectory(path: &Path, layout: &CageLayout) -> Result<Vec<TrajectorySample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let record_err = |line: u64, kind| Error::Record { path: path.to_path_buf(), line, kind };

    let header = reader.headers().map_err(|e| record_err(1, RecordError::Malformed(e.to_string())))?;
    if header.iter().collect::<Vec<_>>() != ["t", "x", "y"] {
        return Err(record_err(1, RecordError::Malformed(format!("expected header t,x,y, got {header:?}"))));
    }

    let mut samples: Vec<TrajectorySample> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            record_err(line, RecordError::Malformed(e.to_string()))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            let raw = row.get(i).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(record_err(line, RecordError::Malformed(format!("field {} is not a finite number: {raw:?}", i + 1)))),
            }
        };
        let (t, x, y) = (field(0)?, field(1)?, field(2)?);
        if !layout.contains(x, y) {
            return Err(record_err(line, RecordError::OutOfBounds { x, y }));
        }
        if let Some(prev) = samples.last() {
            if !(t > prev.t) {
                return Err(record_err(line, RecordError::NonMonotonic { prev: prev.t, t }));
            }
        }
        samples.push(TrajectorySample { t, x, y });
    }
    Ok(samples)
}

pub fn write_trajectory(path: &Path, samples: &[TrajectorySample]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "t,x,y").map_err(io)?;
    for s in samples {
        writeln!(out, "{:.6},{:.6},{:.6}", s.t, s.x, s.y).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_manifest(path: &Path, layout: &CageLayout) -> Result<Vec<Recording>> {
    let entries: Vec<ManifestEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let samples = read_trajectory(&base.join(&e.trajectory_path), layout)?;
            Ok(Recording {
                recording_id: e.recording_id,
                cage_id: e.cage_id,
                mouse_id: e.mouse_id,
                sex: e.sex,
                age: e.age,
                samples,
            })
        })
        .collect()
}

/// Writes `layout.json`, `manifest.json` and one CSV per recording under
/// `trajectories/`. Returns the manifest path.
pub fn write_dataset(dir: &Path, recordings: &[Recording], layout: &CageLayout) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(recordings.len());
    for r in recordings {
        let rel = PathBuf::from("trajectories").join(format!("{}.csv", r.recording_id));
        write_trajectory(&dir.join(&rel), &r.samples)?;
        entries.push(ManifestEntry {
            recording_id: r.recording_id.clone(),
            cage_id: r.cage_id.clone(),
            mouse_id: r.mouse_id.clone(),
            sex: r.sex,
            age: r.age,
            trajectory_path: rel,
        });
    }
    write_json(&dir.join("layout.json"), layout)?;
    let manifest = dir.join("manifest.json");
    write_json(&manifest, &entries)?;
    Ok(manifest)
}
