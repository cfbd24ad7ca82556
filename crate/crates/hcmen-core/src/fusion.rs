//! Mix-up fusion: per-time-step interleaving of the three modality streams
//! into one `[3L, D]` sequence, stacked hybrid conv→Bi-Mamba blocks over it,
//! mean pooling, the prediction head, and the total training objective.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Var;
use crate::blocks::{self, ConvStageVars, MambaStageVars};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{glorot_init, Binder, ParamStore};
use crate::rng::Rng;
use crate::ssm::MambaDims;
use crate::tensor::{Element, Tensor};

/// Interleaves three `[L, D]` sequences token-by-token in the fixed order
/// (vision, text, audio): `[v_1, t_1, a_1, ..., v_L, t_L, a_L]`.
pub fn interleave3<'t, E: Element>(
    vision: Var<'t, E>,
    text: Var<'t, E>,
    audio: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let tape = vision.tape;
    let sv = tape.shape_of(vision);
    let st = tape.shape_of(text);
    let sa = tape.shape_of(audio);
    if sv != st || st != sa || sv.len() != 2 {
        return Err(Error::Shape(format!(
            "interleave3: shapes differ ({sv:?}, {st:?}, {sa:?})"
        )));
    }
    let (l, d) = (sv[0], sv[1]);
    let ids = [vision.id, text.id, audio.id];
    let value = tape.with_values(&ids, |vs| {
        let mut out = Vec::with_capacity(3 * l * d);
        for i in 0..l {
            for src in vs {
                out.extend_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        out
    });
    Ok(tape.push_op(
        "interleave3",
        vec![3 * l, d],
        value,
        ids.to_vec(),
        Box::new(move |args| {
            let mut grads = vec![vec![E::zero(); l * d]; 3];
            for i in 0..l {
                for (k, g) in grads.iter_mut().enumerate() {
                    let row = &args.upstream[(3 * i + k) * d..(3 * i + k + 1) * d];
                    g[i * d..(i + 1) * d].copy_from_slice(row);
                }
            }
            grads
        }),
    ))
}

/// Recovers the three `[L, D]` streams from an interleaved `[3L, D]` tensor;
/// modality provenance is the fused row index mod 3 (0 = vision, 1 = text,
/// 2 = audio).
pub fn de_interleave3<E: Element>(fused: &Tensor<E>) -> Result<[Tensor<E>; 3]> {
    let shape = fused.shape();
    if shape.len() != 2 || shape[0] % 3 != 0 {
        return Err(Error::Shape(format!("de_interleave3: bad shape {shape:?}")));
    }
    let (l, d) = (shape[0] / 3, shape[1]);
    let src = fused.data();
    let mut parts = [Vec::with_capacity(l * d), Vec::with_capacity(l * d), Vec::with_capacity(l * d)];
    for i in 0..l {
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&src[(3 * i + k) * d..(3 * i + k + 1) * d]);
        }
    }
    let [v, t, a] = parts;
    Ok([
        Tensor::new(vec![l, d], v)?,
        Tensor::new(vec![l, d], t)?,
        Tensor::new(vec![l, d], a)?,
    ])
}

/// Registers one fusion block (conv stage + Bi-Mamba stage over `[3L, D]`)
/// under `fusion.<index>`. Blocks hold distinct parameters.
pub fn init_fusion_block<E: Element>(
    store: &mut ParamStore<E>,
    index: usize,
    config: &ModelConfig,
    rng: &mut Rng,
) -> Result<()> {
    let prefix = format!("fusion.{index}");
    if !config.disable_cnn {
        blocks::init_conv_stage(store, &format!("{prefix}.conv"), config.dim, rng)?;
    }
    if !config.disable_mamba {
        let dims = MambaDims {
            model_dim: config.dim,
            inner_dim: config.inner_dim,
            state_dim: config.state_dim,
            conv_width: config.mamba_conv_width,
        };
        blocks::init_mamba_stage(store, &format!("{prefix}.mamba"), &dims, rng)?;
    }
    Ok(())
}

pub struct FusionBlockVars<'t, E: Element> {
    pub conv: Option<ConvStageVars<'t, E>>,
    pub mamba: Option<MambaStageVars<'t, E>>,
}

impl<'t, E: Element> FusionBlockVars<'t, E> {
    pub fn bind(
        binder: &mut Binder<'_, 't, E>,
        index: usize,
        config: &ModelConfig,
    ) -> Result<Self> {
        let prefix = format!("fusion.{index}");
        Ok(Self {
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

/// One hybrid fusion block: local conv stage then global Bi-Mamba stage, both
/// residual; shape `[3L, D]` preserved.
pub fn fusion_block<'t, E: Element>(
    vars: &FusionBlockVars<'t, E>,
    fused: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let local = match &vars.conv {
        Some(stage) => blocks::conv_stage(stage, fused)?,
        None => fused,
    };
    match &vars.mamba {
        Some(stage) => blocks::mamba_stage(stage, local),
        None => Ok(local),
    }
}

/// Registers the prediction head (`D -> 1`).
pub fn init_head<E: Element>(
    store: &mut ParamStore<E>,
    dim: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.insert("head.weight", glorot_init(rng, vec![dim, 1], dim, 1))?;
    store.insert("head.bias", Tensor::zeros(vec![1]))?;
    Ok(())
}

pub struct HeadVars<'t, E: Element> {
    pub weight: Var<'t, E>,
    pub bias: Var<'t, E>,
}

impl<'t, E: Element> HeadVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>) -> Result<Self> {
        Ok(Self { weight: binder.leaf("head.weight")?, bias: binder.leaf("head.bias")? })
    }
}

/// Mean-pools the fused sequence over time and applies the linear head;
/// returns a scalar prediction.
pub fn pool_predict<'t, E: Element>(
    head: &HeadVars<'t, E>,
    fused: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let d = fused.tape.shape_of(fused)[1];
    let pooled = fused.mean_axis(0)?.reshape(&[1, d])?;
    pooled.matmul(head.weight)?.reshape(&[1])?.add(head.bias)
}

/// `L_total = mean((ŷ − y)²) + α·L_c`. `alignment` is `None` when CMEA is
/// ablated (α is then forced to zero by the caller).
pub fn total_loss<'t, E: Element>(
    preds: Var<'t, E>,
    labels: Var<'t, E>,
    alignment: Option<Var<'t, E>>,
    alpha: f64,
) -> Result<Var<'t, E>> {
    if alpha < 0.0 {
        return Err(Error::Contract(format!("total_loss: alpha {alpha} must be >= 0")));
    }
    let mse = preds.sub(labels)?.square().mean_all();
    match alignment {
        Some(l_c) => mse.add(l_c.scale(E::from_f64(alpha))),
        None => Ok(mse),
    }
}
