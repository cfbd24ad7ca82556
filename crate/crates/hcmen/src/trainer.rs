//! Training loop and evaluation. Each epoch corrupts the training split with
//! a fresh derived seed, shuffles, steps Adam over batches, then scores the
//! validation split (corrupted at the same rate with a fixed seed). The
//! checkpoint with the best validation MAE wins.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use hcmen_core::encoder::{corrupt, ModalityBatch, Sample};
use hcmen_core::metrics::{compute_metrics, MetricsReport};
use hcmen_core::optim::Adam;
use hcmen_core::rng;
use hcmen_core::{Error as CoreError, HcmenModel, ModelConfig, ParamStore};

use crate::checkpoint;
use crate::dataset::{Dataset, Split};
use crate::{HcmenError, Result};

// Derived-seed stream tags; keeps corruption, shuffling, mixing and
// evaluation on independent reproducible streams.
const STREAM_CORRUPT: u64 = 1 << 32;
const STREAM_MIX: u64 = 2 << 32;
const STREAM_SHUFFLE: u64 = 3 << 32;
const STREAM_EVAL: u64 = 4 << 32;

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_p: f64,
    pub loss_c: f64,
    pub loss_total: f64,
    pub val: MetricsReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub ckpt_path: PathBuf,
}

pub const METRICS_CSV_HEADER: &str = "epoch,loss_p,loss_c,loss_total,val_mae,val_acc7,\
val_acc5,val_acc2_has0,val_acc2_non0,val_f1_has0,val_f1_non0,val_corr";

/// Full training run over a dataset directory; writes the best-validation-MAE
/// checkpoint to `out_ckpt` and the per-epoch log to `metrics_csv`.
pub fn train(
    config: &ModelConfig,
    data_dir: &Path,
    out_ckpt: &Path,
    metrics_csv: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = Dataset::open(data_dir)?;
    let (d_text, d_vision, d_audio) = dataset.feature_dims()?;
    for (field, want, got) in [
        ("text_dim", config.text_dim, d_text),
        ("vision_dim", config.vision_dim, d_vision),
        ("audio_dim", config.audio_dim, d_audio),
    ] {
        if want != got {
            return Err(HcmenError::Core(CoreError::Config(format!(
                "field '{field}' is {want} but the dataset features have dimension {got}"
            ))));
        }
    }

    let model = HcmenModel::new(config.clone())?;
    let mut store: ParamStore<f32> = model.init_params()?;
    let mut adam = Adam::new(config.learning_rate as f32);
    let train_raw = dataset.load_split(Split::Train)?;
    let valid_raw = dataset.load_split(Split::Valid)?;

    let mut logs: Vec<EpochLog> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut step_counter = 0u64;
    for epoch in 0..config.epochs {
        // fresh corruption pattern per epoch
        let corrupt_seed = rng::derive_seed(config.seed, STREAM_CORRUPT | epoch as u64);
        let corrupted = corrupt(
            &train_raw,
            config.missing_rate,
            corrupt_seed,
            config.corruption,
            config.substitution,
        )?;
        let mut order: Vec<usize> = (0..corrupted.len()).collect();
        let mut shuffle_rng =
            rng::seeded(rng::derive_seed(config.seed, STREAM_SHUFFLE | epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0f64; 3];
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample<f32>> =
                chunk.iter().map(|&i| corrupted.samples[i].clone()).collect();
            let mix_seed = rng::derive_seed(config.seed, STREAM_MIX | step_counter);
            step_counter += 1;
            let stats = model
                .train_step(&mut store, &mut adam, &batch, mix_seed)
                .map_err(|e| {
                    HcmenError::Format(format!(
                        "aborting at epoch {epoch}, step {}: {e}",
                        step_counter - 1
                    ))
                })?;
            let w = batch.len() as f64;
            sums[0] += stats.loss_p * w;
            sums[1] += stats.loss_c * w;
            sums[2] += stats.loss_total * w;
            seen += batch.len();
        }
        let inv = 1.0 / seen.max(1) as f64;
        let val = eval_metrics(
            &model,
            &store,
            &valid_raw,
            config.missing_rate,
            rng::derive_seed(config.seed, STREAM_EVAL),
        )?;
        logs.push(EpochLog {
            epoch,
            loss_p: sums[0] * inv,
            loss_c: sums[1] * inv,
            loss_total: sums[2] * inv,
            val,
        });
        if best.map_or(true, |(_, mae)| val.mae < mae) {
            best = Some((epoch, val.mae));
            checkpoint::save(out_ckpt, config, &store)?;
        }
    }

    write_metrics_csv(metrics_csv, &logs)?;
    let (best_epoch, best_val_mae) = best.expect("at least one epoch");
    Ok(TrainOutcome { logs, best_epoch, best_val_mae, ckpt_path: out_ckpt.to_path_buf() })
}

fn write_metrics_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for log in logs {
        let v = &log.val;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            log.epoch,
            log.loss_p,
            log.loss_c,
            log.loss_total,
            v.mae,
            v.acc7,
            v.acc5,
            v.acc2_has0,
            v.acc2_non0,
            v.f1_has0,
            v.f1_non0,
            v.corr
        ));
    }
    let mut file = fs::File::create(path).map_err(|e| HcmenError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| HcmenError::io(path, e))
}

/// Corrupts a raw split at `rate` (deterministic in `seed`), predicts, and
/// scores.
pub fn eval_metrics(
    model: &HcmenModel,
    store: &ParamStore<f32>,
    raw: &ModalityBatch<f32>,
    rate: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let corrupted = corrupt(
        raw,
        rate,
        seed,
        model.config.corruption,
        model.config.substitution,
    )?;
    let preds = model.predict(store, &corrupted.samples)?;
    Ok(compute_metrics(&preds, &corrupted.labels())?)
}

/// Loads a checkpoint and scores the test split under the given missing rate.
pub fn evaluate(
    ckpt: &Path,
    data_dir: &Path,
    missing_rate: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let (config, store) = checkpoint::load(ckpt)?;
    let model = HcmenModel::new(config)?;
    let dataset = Dataset::open(data_dir)?;
    let test = dataset.load_split(Split::Test)?;
    eval_metrics(&model, &store, &test, missing_rate, seed)
}
