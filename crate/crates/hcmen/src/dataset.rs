//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.jsonl          one {"id", "label", "split"} record per line
//! <root>/text/<id>.csv           rows = timesteps, columns = feature dims,
//! <root>/vision/<id>.csv         comma-separated decimal floats, no header
//! <root>/audio/<id>.csv
//! ```
//!
//! All utterances of one modality share a feature dimension; lengths may vary
//! per utterance.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hcmen_core::encoder::{Modality, ModalityBatch, ModalitySeq, Sample};
use hcmen_core::tensor::Tensor;

use crate::{HcmenError, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub label: f64,
    pub split: Split,
}

/// A dataset root directory with its parsed manifest.
pub struct Dataset {
    root: PathBuf,
    records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = root.join(MANIFEST_NAME);
        let file = fs::File::open(&manifest).map_err(|e| HcmenError::io(&manifest, e))?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| HcmenError::io(&manifest, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                HcmenError::Format(format!("{}:{}: {e}", manifest.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(HcmenError::Format(format!("{}: empty manifest", manifest.display())));
        }
        Ok(Self { root, records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s: Split| self.records.iter().filter(|r| r.split == s).count();
        (count(Split::Train), count(Split::Valid), count(Split::Test))
    }

    fn feature_path(&self, modality: Modality, id: &str) -> PathBuf {
        self.root.join(modality.dir_name()).join(format!("{id}.csv"))
    }

    /// Loads every utterance of a split, enforcing one feature dimension per
    /// modality across the split.
    pub fn load_split(&self, split: Split) -> Result<ModalityBatch<f32>> {
        let mut samples = Vec::new();
        let mut dims: [Option<usize>; 3] = [None; 3];
        for rec in self.records.iter().filter(|r| r.split == split) {
            let mut seqs = Vec::with_capacity(3);
            for (slot, modality) in Modality::ALL.into_iter().enumerate() {
                let path = self.feature_path(modality, &rec.id);
                let feats = read_feature_csv(&path)?;
                let d = feats.shape()[1];
                match dims[slot] {
                    None => dims[slot] = Some(d),
                    Some(expect) if expect != d => {
                        return Err(HcmenError::Format(format!(
                            "{}: {} feature dim {d} differs from {expect} elsewhere in split",
                            path.display(),
                            modality.dir_name()
                        )))
                    }
                    _ => {}
                }
                seqs.push(ModalitySeq::new(feats)?);
            }
            let audio = seqs.pop().expect("three modalities");
            let vision = seqs.pop().expect("three modalities");
            let text = seqs.pop().expect("three modalities");
            samples.push(Sample {
                id: rec.id.clone(),
                label: rec.label as f32,
                text,
                vision,
                audio,
            });
        }
        if samples.is_empty() {
            return Err(HcmenError::Format(format!("split '{split}' is empty")));
        }
        Ok(ModalityBatch::new(samples)?)
    }

    /// Per-modality feature dimensions (text, vision, audio), read from the
    /// first utterance.
    pub fn feature_dims(&self) -> Result<(usize, usize, usize)> {
        let first = &self.records[0];
        let mut out = [0usize; 3];
        for (slot, modality) in Modality::ALL.into_iter().enumerate() {
            let path = self.feature_path(modality, &first.id);
            out[slot] = read_feature_csv(&path)?.shape()[1];
        }
        Ok((out[0], out[1], out[2]))
    }
}

/// Headerless CSV of decimal floats -> `[T, D]` tensor.
pub fn read_feature_csv(path: &Path) -> Result<Tensor<f32>> {
    let file = fs::File::open(path).map_err(|e| HcmenError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: std::result::Result<Vec<f32>, _> =
            record.iter().map(|v| v.trim().parse::<f32>()).collect();
        let row = row.map_err(|e| {
            HcmenError::Format(format!("{}: bad float: {e}", path.display()))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(HcmenError::Format(format!("{}: empty feature file", path.display())));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(HcmenError::Format(format!("{}: ragged rows", path.display())));
    }
    let t = rows.len();
    Ok(Tensor::new(vec![t, d], rows.concat())?)
}

/// Writes a `[T, D]` feature matrix as headerless CSV with `Display` float
/// formatting (shortest round-trip representation, deterministic).
pub fn write_feature_csv(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| HcmenError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| HcmenError::io(path, e))
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| HcmenError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| HcmenError::io(path, e))
}
