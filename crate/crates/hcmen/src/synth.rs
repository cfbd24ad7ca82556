//! Synthetic dataset generation: a scalar latent sentiment per utterance is
//! embedded into all three modality streams with a zero-mean temporal carrier,
//! modality-specific nuisance structure, and Gaussian noise (text cleanest,
//! vision/audio noisier). Labels equal the latent, so the task is solvable
//! from any single clean modality.

use std::fs;
use std::path::Path;

use hcmen_core::rng::{self, Rng};

use crate::dataset::{write_feature_csv, write_manifest, ManifestRecord, Split, MANIFEST_NAME};
use crate::{HcmenError, Result};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n: usize,
    /// Base sequence lengths (text, vision, audio); actual lengths jitter
    /// ±20% per utterance.
    pub lengths: (usize, usize, usize),
    /// Feature dimensions (text, vision, audio).
    pub dims: (usize, usize, usize),
    /// Global noise multiplier.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 100,
            lengths: (20, 24, 28),
            dims: (12, 8, 6),
            noise: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthSummary {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

const NOISE_TEXT: f64 = 0.1;
const NOISE_VISION: f64 = 0.6;
const NOISE_AUDIO: f64 = 0.8;
/// Weight of the fundamental temporal carrier in the text stream.
const TEXT_CARRIER_WEIGHT: f64 = 0.5;
/// Vision/audio encode the latent mostly through the carriers; their direct
/// embedding is weak, so extracting them requires temporal demodulation.
const WEAK_DIRECT_WEIGHT: f64 = 0.25;
const CARRIER1_WEIGHT: f64 = 1.0;
const CARRIER2_WEIGHT: f64 = 0.7;

/// Fixed per-dataset directions for one modality.
struct ModalityPlan {
    embed: Vec<f64>,
    /// Fundamental (one cycle per sequence) carrier direction.
    carrier1: Vec<f64>,
    /// Second-harmonic (two cycles) carrier direction; zero for text.
    carrier2: Vec<f64>,
    carrier1_weight: f64,
    carrier2_weight: f64,
    nuisance: Vec<f64>,
    base_len: usize,
    dim: usize,
    sigma: f64,
}

fn jittered_len(rng: &mut Rng, base: usize) -> usize {
    let jitter = (base as f64 / 5.0).floor() as i64;
    let offset = if jitter > 0 {
        (rng::uniform(rng, 0.0, (2 * jitter + 1) as f64) as i64) - jitter
    } else {
        0
    };
    ((base as i64 + offset).max(1)) as usize
}

/// Zero-mean temporal carrier: `sin(2πk(t + 0.5)/T)` sums to exactly zero
/// over full periods, so time-averaging recovers the direct embedding alone.
fn carrier(t: usize, len: usize, cycles: f64) -> f64 {
    (2.0 * std::f64::consts::PI * cycles * (t as f64 + 0.5) / len as f64).sin()
}

fn stream(plan: &ModalityPlan, latent: f64, nuisance_coef: f64, rng: &mut Rng) -> Vec<Vec<f32>> {
    let len = jittered_len(rng, plan.base_len);
    (0..len)
        .map(|t| {
            let g1 = carrier(t, len, 1.0);
            let g2 = carrier(t, len, 2.0);
            (0..plan.dim)
                .map(|d| {
                    let clean = plan.embed[d] * latent
                        + plan.carrier1_weight * plan.carrier1[d] * g1 * latent
                        + plan.carrier2_weight * plan.carrier2[d] * g2 * latent
                        + plan.nuisance[d] * nuisance_coef;
                    (clean + plan.sigma * rng::normal01(rng)) as f32
                })
                .collect()
        })
        .collect()
}

/// Generates the dataset under `out_dir` in the standard layout with a
/// 70/10/20 split by index. Refuses a non-empty directory unless `force`.
pub fn generate(spec: &SynthSpec, out_dir: &Path, force: bool) -> Result<SynthSummary> {
    if spec.n == 0 {
        return Err(HcmenError::Format("synth: n must be >= 1".into()));
    }
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| HcmenError::io(out_dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(HcmenError::Format(format!(
                "{}: directory not empty (use --force to overwrite)",
                out_dir.display()
            )));
        }
    }
    for sub in ["text", "vision", "audio"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| HcmenError::io(&dir, e))?;
    }

    let mut rng = rng::seeded(spec.seed);
    let (d_t, d_v, d_a) = spec.dims;
    let (l_t, l_v, l_a) = spec.lengths;
    // Text embeds the latent directly (all-ones direction, no nuisance), so a
    // zero-noise single-dim text stream time-averages back to the latent
    // exactly. Vision/audio carry the latent mostly through the zero-mean
    // carriers with only a weak direct component plus nuisance, so their
    // signal must be demodulated temporally rather than pooled.
    let weak = |rng: &mut Rng, d: usize| -> Vec<f64> {
        (0..d)
            .map(|_| WEAK_DIRECT_WEIGHT * (1.0 + 0.5 * rng::normal01(rng)))
            .collect()
    };
    let plans = [
        ModalityPlan {
            embed: vec![1.0; d_t],
            carrier1: (0..d_t).map(|_| rng::normal01(&mut rng)).collect(),
            carrier2: vec![0.0; d_t],
            carrier1_weight: TEXT_CARRIER_WEIGHT,
            carrier2_weight: 0.0,
            nuisance: vec![0.0; d_t],
            base_len: l_t,
            dim: d_t,
            sigma: NOISE_TEXT * spec.noise,
        },
        ModalityPlan {
            embed: weak(&mut rng, d_v),
            carrier1: (0..d_v).map(|_| rng::normal01(&mut rng)).collect(),
            carrier2: (0..d_v).map(|_| rng::normal01(&mut rng)).collect(),
            carrier1_weight: CARRIER1_WEIGHT,
            carrier2_weight: CARRIER2_WEIGHT,
            nuisance: (0..d_v).map(|_| rng::normal01(&mut rng)).collect(),
            base_len: l_v,
            dim: d_v,
            sigma: NOISE_VISION * spec.noise,
        },
        ModalityPlan {
            embed: weak(&mut rng, d_a),
            carrier1: (0..d_a).map(|_| rng::normal01(&mut rng)).collect(),
            carrier2: (0..d_a).map(|_| rng::normal01(&mut rng)).collect(),
            carrier1_weight: CARRIER1_WEIGHT,
            carrier2_weight: CARRIER2_WEIGHT,
            nuisance: (0..d_a).map(|_| rng::normal01(&mut rng)).collect(),
            base_len: l_a,
            dim: d_a,
            sigma: NOISE_AUDIO * spec.noise,
        },
    ];

    let n_train = (spec.n * 7) / 10;
    let n_valid = spec.n / 10;
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let id = format!("utt{i:05}");
        let latent = rng::uniform(&mut rng, -3.0, 3.0);
        let nuisance_coef = rng::normal01(&mut rng);
        for (plan, sub) in plans.iter().zip(["text", "vision", "audio"]) {
            let rows = stream(plan, latent, nuisance_coef, &mut rng);
            write_feature_csv(&out_dir.join(sub).join(format!("{id}.csv")), &rows)?;
        }
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        records.push(ManifestRecord { id, label: latent, split });
    }
    write_manifest(&out_dir.join(MANIFEST_NAME), &records)?;
    Ok(SynthSummary {
        train: n_train,
        valid: n_valid,
        test: spec.n - n_train - n_valid,
    })
}

/// In-memory variant of the per-utterance construction for tests: returns the
/// text stream of one utterance with zero noise.
pub fn noiseless_text_stream(dim: usize, len: usize, latent: f64, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = rng::seeded(seed);
    let plan = ModalityPlan {
        embed: vec![1.0; dim],
        carrier1: (0..dim).map(|_| rng::normal01(&mut rng)).collect(),
        carrier2: vec![0.0; dim],
        carrier1_weight: TEXT_CARRIER_WEIGHT,
        carrier2_weight: 0.0,
        nuisance: vec![0.0; dim],
        base_len: len,
        dim,
        sigma: 0.0,
    };
    stream(&plan, latent, 0.0, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_dim_text_mean_recovers_latent() {
        let latent = 1.7f64;
        let rows = noiseless_text_stream(1, 16, latent, 3);
        let mean: f64 = rows.iter().map(|r| r[0] as f64).sum::<f64>() / rows.len() as f64;
        assert!((mean - latent).abs() < 1e-5, "mean {mean} vs latent {latent}");
    }

    #[test]
    fn split_arithmetic_70_10_20() {
        let spec = SynthSpec { n: 100, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let summary = generate(&spec, dir.path(), false).unwrap();
        assert_eq!((summary.train, summary.valid, summary.test), (70, 10, 20));
    }

    #[test]
    fn refuses_non_empty_dir_without_force() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stale"), "x").unwrap();
        let spec = SynthSpec { n: 5, ..Default::default() };
        assert!(generate(&spec, dir.path(), false).is_err());
        assert!(generate(&spec, dir.path(), true).is_ok());
    }

    #[test]
    fn labels_bounded() {
        let spec = SynthSpec { n: 40, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        generate(&spec, dir.path(), false).unwrap();
        let ds = crate::dataset::Dataset::open(dir.path()).unwrap();
        for rec in ds.records() {
            assert!((-3.0..=3.0).contains(&rec.label));
        }
    }
}
