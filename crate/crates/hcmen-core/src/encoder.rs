//! Modality pipeline: batches of raw per-modality sequences, missing-data
//! corruption, temporal resampling to the shared length, projection into the
//! shared embedding space, and the hierarchical CNN → Bi-Mamba encoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Var;
use crate::blocks::{self, ConvStageVars, MambaStageVars};
use crate::config::{CorruptionMode, ModelConfig, SubstitutionMode};
use crate::error::{Error, Result};
use crate::params::{glorot_init, Binder, ParamStore};
use crate::rng::{self, Rng};
use crate::ssm::MambaDims;
use crate::tensor::{Element, Tensor};

pub use crate::tensor::resample_time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Vision,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Vision, Modality::Audio];

    pub fn dir_name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Vision => "vision",
            Modality::Audio => "audio",
        }
    }
}

/// One modality stream of one utterance: features `[T, D_m]` plus a per-token
/// availability mask (cleared bits mark corrupted/missing tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySeq<E: Element = f32> {
    pub feats: Tensor<E>,
    pub mask: Vec<bool>,
}

impl<E: Element> ModalitySeq<E> {
    pub fn new(feats: Tensor<E>) -> Result<Self> {
        if feats.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "modality sequence must be [T, D], got {:?}",
                feats.shape()
            )));
        }
        let t = feats.shape()[0];
        Ok(Self { feats, mask: vec![true; t] })
    }

    pub fn len(&self) -> usize {
        self.feats.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feat_dim(&self) -> usize {
        self.feats.shape()[1]
    }
}

/// One labelled utterance with all three modality streams present
/// (possibly fully masked).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<E: Element = f32> {
    pub id: String,
    pub label: E,
    pub text: ModalitySeq<E>,
    pub vision: ModalitySeq<E>,
    pub audio: ModalitySeq<E>,
}

impl<E: Element> Sample<E> {
    pub fn modality(&self, m: Modality) -> &ModalitySeq<E> {
        match m {
            Modality::Text => &self.text,
            Modality::Vision => &self.vision,
            Modality::Audio => &self.audio,
        }
    }
}

/// A batch of utterances. Labels are sentiment scores in `[-3, 3]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModalityBatch<E: Element = f32> {
    pub samples: Vec<Sample<E>>,
}

impl<E: Element> ModalityBatch<E> {
    pub fn new(samples: Vec<Sample<E>>) -> Result<Self> {
        let lo = E::from_f64(-3.0);
        let hi = E::from_f64(3.0);
        for s in &samples {
            if s.label < lo || s.label > hi || !s.label.is_finite() {
                return Err(Error::Contract(format!(
                    "sample '{}': label {:?} outside [-3, 3]",
                    s.id,
                    s.label.as_f64()
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<E> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Simulates missing data: with probability `rate` a token (or a whole
/// modality stream, in [`CorruptionMode::Modality`]) is replaced and its mask
/// bit cleared. Replacement is zeros by default, or a standard-normal vector
/// in [`SubstitutionMode::Random`]. Deterministic given `seed`.
pub fn corrupt<E: Element>(
    batch: &ModalityBatch<E>,
    rate: f64,
    seed: u64,
    mode: CorruptionMode,
    substitution: SubstitutionMode,
) -> Result<ModalityBatch<E>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("corrupt: rate {rate} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let mut out = batch.clone();
    for sample in &mut out.samples {
        for m in Modality::ALL {
            let seq = match m {
                Modality::Text => &mut sample.text,
                Modality::Vision => &mut sample.vision,
                Modality::Audio => &mut sample.audio,
            };
            match mode {
                CorruptionMode::Token => {
                    let t_len = seq.len();
                    for t in 0..t_len {
                        if rng::uniform01(&mut rng) < rate {
                            corrupt_token(seq, t, substitution, &mut rng);
                        }
                    }
                }
                CorruptionMode::Modality => {
                    if rng::uniform01(&mut rng) < rate {
                        for t in 0..seq.len() {
                            corrupt_token(seq, t, substitution, &mut rng);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn corrupt_token<E: Element>(
    seq: &mut ModalitySeq<E>,
    t: usize,
    substitution: SubstitutionMode,
    rng: &mut Rng,
) {
    let d = seq.feat_dim();
    let row = &mut seq.feats.data_mut()[t * d..(t + 1) * d];
    match substitution {
        SubstitutionMode::Zeros => row.fill(E::zero()),
        SubstitutionMode::Random => {
            for v in row.iter_mut() {
                *v = E::from_f64(rng::normal01(rng));
            }
        }
    }
    seq.mask[t] = false;
}

// ── encoder parameters and forward ──────────────────────────────────────────

/// Registers the per-modality encoder: the projection conv (width `K_p`,
/// `D_m -> D`) and the hierarchical block stages under `enc.<modality>`.
pub fn init_encoder<E: Element>(
    store: &mut ParamStore<E>,
    config: &ModelConfig,
    modality: Modality,
    in_dim: usize,
    rng: &mut Rng,
) -> Result<()> {
    let prefix = format!("enc.{}", modality.dir_name());
    let (d, kp) = (config.dim, config.proj_conv_width);
    store.insert(
        &format!("{prefix}.proj.weight"),
        glorot_init(rng, vec![kp, in_dim, d], kp * in_dim, d),
    )?;
    store.insert(&format!("{prefix}.proj.bias"), Tensor::zeros(vec![d]))?;
    if !config.disable_cnn {
        blocks::init_conv_stage(store, &format!("{prefix}.conv"), d, rng)?;
    }
    if !config.disable_mamba {
        let dims = MambaDims {
            model_dim: d,
            inner_dim: config.inner_dim,
            state_dim: config.state_dim,
            conv_width: config.mamba_conv_width,
        };
        blocks::init_mamba_stage(store, &format!("{prefix}.mamba"), &dims, rng)?;
    }
    Ok(())
}

/// Tape-bound encoder of one modality.
pub struct EncoderVars<'t, E: Element> {
    pub proj_weight: Var<'t, E>,
    pub proj_bias: Var<'t, E>,
    pub conv: Option<ConvStageVars<'t, E>>,
    pub mamba: Option<MambaStageVars<'t, E>>,
}

impl<'t, E: Element> EncoderVars<'t, E> {
    pub fn bind(
        binder: &mut Binder<'_, 't, E>,
        config: &ModelConfig,
        modality: Modality,
    ) -> Result<Self> {
        let prefix = format!("enc.{}", modality.dir_name());
        Ok(Self {
            proj_weight: binder.leaf(&format!("{prefix}.proj.weight"))?,
            proj_bias: binder.leaf(&format!("{prefix}.proj.bias"))?,
            conv: if config.disable_cnn {
                None
            } else {
                Some(ConvStageVars::bind(binder, &format!("{prefix}.conv"))?)
            },
            mamba: if config.disable_mamba {
                None
            } else {
                Some(MambaStageVars::bind(binder, &format!("{prefix}.mamba"))?)
            },
        })
    }
}

/// Projection conv mapping a resampled `[L, D_m]` sequence to `[L, D]`.
pub fn embed<'t, E: Element>(vars: &EncoderVars<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
    x.conv1d(vars.proj_weight, vars.proj_bias)
}

/// Hierarchical unimodal encoding: a local conv stage then a global Bi-Mamba
/// stage, each residual. Ablation toggles skip the corresponding stage.
pub fn hierarchical_encode<'t, E: Element>(
    vars: &EncoderVars<'t, E>,
    h: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let local = match &vars.conv {
        Some(stage) => blocks::conv_stage(stage, h)?,
        None => h,
    };
    match &vars.mamba {
        Some(stage) => blocks::mamba_stage(stage, local),
        None => Ok(local),
    }
}
