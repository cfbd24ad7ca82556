//! Shared residual stages: `x + Conv1D(LN(x))` for local patterns and
//! `x + BiMamba(LN(x))` for global context. Both the per-modality encoder and
//! the fusion backbone stack these two stages.

use alloc::format;
use alloc::vec;

#[allow(unused_imports)] // inherent f64 methods cover std; Float is needed for no_std
use num_traits::Float;

use crate::autograd::Var;
use crate::error::Result;
use crate::params::{uniform_init, Binder, ParamStore};
use crate::rng::Rng;
use crate::ssm::{self, BiMambaVars, MambaDims};
use crate::tensor::{Element, Tensor};

pub const LN_EPS: f64 = 1e-5;
/// Depthwise conv width of the local stages (odd, "same" padding).
pub const BLOCK_CONV_WIDTH: usize = 3;

/// LN + depthwise conv, applied residually.
pub struct ConvStageVars<'t, E: Element> {
    pub ln_gamma: Var<'t, E>,
    pub ln_beta: Var<'t, E>,
    pub kernel: Var<'t, E>,
    pub bias: Var<'t, E>,
}

pub fn init_conv_stage<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    dim: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.insert(&format!("{prefix}.ln.gamma"), Tensor::filled(vec![dim], E::one()))?;
    store.insert(&format!("{prefix}.ln.beta"), Tensor::zeros(vec![dim]))?;
    let bound = (1.0 / BLOCK_CONV_WIDTH as f64).sqrt();
    store.insert(
        &format!("{prefix}.kernel"),
        uniform_init(rng, vec![BLOCK_CONV_WIDTH, dim], bound),
    )?;
    store.insert(&format!("{prefix}.bias"), uniform_init(rng, vec![dim], bound))?;
    Ok(())
}

impl<'t, E: Element> ConvStageVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>, prefix: &str) -> Result<Self> {
        Ok(Self {
            ln_gamma: binder.leaf(&format!("{prefix}.ln.gamma"))?,
            ln_beta: binder.leaf(&format!("{prefix}.ln.beta"))?,
            kernel: binder.leaf(&format!("{prefix}.kernel"))?,
            bias: binder.leaf(&format!("{prefix}.bias"))?,
        })
    }
}

/// `x + Conv1D(LN(x))`
pub fn conv_stage<'t, E: Element>(
    vars: &ConvStageVars<'t, E>,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let normed = x.layer_norm(vars.ln_gamma, vars.ln_beta, E::from_f64(LN_EPS))?;
    x.add(normed.depthwise_conv1d(vars.kernel, vars.bias)?)
}

/// LN + Bi-Mamba, applied residually.
pub struct MambaStageVars<'t, E: Element> {
    pub ln_gamma: Var<'t, E>,
    pub ln_beta: Var<'t, E>,
    pub bi: BiMambaVars<'t, E>,
}

pub fn init_mamba_stage<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    dims: &MambaDims,
    rng: &mut Rng,
) -> Result<()> {
    store.insert(
        &format!("{prefix}.ln.gamma"),
        Tensor::filled(vec![dims.model_dim], E::one()),
    )?;
    store.insert(&format!("{prefix}.ln.beta"), Tensor::zeros(vec![dims.model_dim]))?;
    ssm::init_bi_mamba(store, prefix, dims, rng)
}

impl<'t, E: Element> MambaStageVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>, prefix: &str) -> Result<Self> {
        Ok(Self {
            ln_gamma: binder.leaf(&format!("{prefix}.ln.gamma"))?,
            ln_beta: binder.leaf(&format!("{prefix}.ln.beta"))?,
            bi: BiMambaVars::bind(binder, prefix)?,
        })
    }
}

/// `x + BiMamba(LN(x))`
pub fn mamba_stage<'t, E: Element>(
    vars: &MambaStageVars<'t, E>,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let normed = x.layer_norm(vars.ln_gamma, vars.ln_beta, E::from_f64(LN_EPS))?;
    x.add(ssm::bi_mamba(&vars.bi, normed)?)
}
