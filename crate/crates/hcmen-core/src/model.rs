//! Full HCMEN assembly: parameter initialization, tape binding, the batched
//! forward pass producing predictions and losses, and the single training
//! step (forward, backward, Adam).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;


use crate::autograd::{stack_scalars, Tape, Var};
use crate::cmea::{self, ProxyVars};
use crate::config::ModelConfig;
use crate::encoder::{self, EncoderVars, Modality, ModalitySeq, Sample};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionBlockVars, HeadVars};
use crate::optim::Adam;
use crate::params::{self, Binder, ParamStore};
use crate::rng;
use crate::tensor::{resample_time, Element, Tensor};

/// Forward mode. Token mixing is active only during training; evaluation
/// feeds unmixed tokens to the proxies.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Train { mix_seed: u64 },
    Eval,
}

pub struct HcmenModel {
    pub config: ModelConfig,
}

/// Everything a forward pass needs, bound to one tape.
pub struct ModelVars<'t, E: Element> {
    pub leaves: BTreeMap<String, Var<'t, E>>,
    pub text_enc: EncoderVars<'t, E>,
    pub vision_enc: EncoderVars<'t, E>,
    pub audio_enc: EncoderVars<'t, E>,
    pub proxy_vision: Option<ProxyVars<'t, E>>,
    pub proxy_audio: Option<ProxyVars<'t, E>>,
    pub fusion_blocks: Vec<FusionBlockVars<'t, E>>,
    pub head: HeadVars<'t, E>,
}

pub struct BatchOutput<'t, E: Element> {
    /// `[B]` vector of predictions.
    pub preds: Var<'t, E>,
    pub loss_p: Var<'t, E>,
    pub loss_c: Option<Var<'t, E>>,
    pub loss_total: Var<'t, E>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub loss_p: f64,
    pub loss_c: f64,
    pub loss_total: f64,
}

impl HcmenModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Fresh parameters, seeded from `config.seed`. The registration order is
    /// fixed, so identical configs yield identical parameters.
    pub fn init_params<E: Element>(&self) -> Result<ParamStore<E>> {
        let c = &self.config;
        let mut rng = rng::seeded(c.seed);
        let mut store = ParamStore::new();
        for (m, in_dim) in [
            (Modality::Text, c.text_dim),
            (Modality::Vision, c.vision_dim),
            (Modality::Audio, c.audio_dim),
        ] {
            encoder::init_encoder(&mut store, c, m, in_dim, &mut rng)?;
        }
        if !c.disable_cmea {
            let hidden = 2 * c.dim;
            cmea::init_proxy(&mut store, "cmea.vision", c.dim, hidden, &mut rng)?;
            cmea::init_proxy(&mut store, "cmea.audio", c.dim, hidden, &mut rng)?;
        }
        for z in 0..c.fusion_blocks {
            fusion::init_fusion_block(&mut store, z, c, &mut rng)?;
        }
        fusion::init_head(&mut store, c.dim, &mut rng)?;
        Ok(store)
    }

    /// Expected parameter shapes for this configuration.
    pub fn param_shapes(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let store: ParamStore<f32> = self.init_params()?;
        Ok(store
            .iter()
            .map(|(name, t)| (name.clone(), t.shape().to_vec()))
            .collect())
    }

    pub fn bind<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        store: &ParamStore<E>,
    ) -> Result<ModelVars<'t, E>> {
        let c = &self.config;
        let mut binder = Binder::new(tape, store);
        let text_enc = EncoderVars::bind(&mut binder, c, Modality::Text)?;
        let vision_enc = EncoderVars::bind(&mut binder, c, Modality::Vision)?;
        let audio_enc = EncoderVars::bind(&mut binder, c, Modality::Audio)?;
        let (proxy_vision, proxy_audio) = if c.disable_cmea {
            (None, None)
        } else {
            (
                Some(ProxyVars::bind(&mut binder, "cmea.vision")?),
                Some(ProxyVars::bind(&mut binder, "cmea.audio")?),
            )
        };
        let mut fusion_blocks = Vec::with_capacity(c.fusion_blocks);
        for z in 0..c.fusion_blocks {
            fusion_blocks.push(FusionBlockVars::bind(&mut binder, z, c)?);
        }
        let head = HeadVars::bind(&mut binder)?;
        Ok(ModelVars {
            text_enc,
            vision_enc,
            audio_enc,
            proxy_vision,
            proxy_audio,
            fusion_blocks,
            head,
            leaves: binder.into_leaves(),
        })
    }

    fn encode_modality<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        enc: &EncoderVars<'t, E>,
        seq: &ModalitySeq<E>,
    ) -> Result<Var<'t, E>> {
        let resampled = resample_time(&seq.feats, self.config.seq_len)?;
        let x = tape.constant(&resampled);
        let h = encoder::embed(enc, x)?;
        encoder::hierarchical_encode(enc, h)
    }

    /// Runs the whole network over a batch of (already corrupted) samples.
    pub fn forward_batch<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        vars: &ModelVars<'t, E>,
        samples: &[Sample<E>],
        mode: Mode,
    ) -> Result<BatchOutput<'t, E>> {
        if samples.is_empty() {
            return Err(Error::Contract("forward_batch: empty batch".into()));
        }
        let c = &self.config;
        let mut mix_rng = match mode {
            Mode::Train { mix_seed } => Some(rng::seeded(mix_seed)),
            Mode::Eval => None,
        };
        let train_mode = mix_rng.is_some();
        let mut predictions = Vec::with_capacity(samples.len());
        let mut text_tokens = Vec::with_capacity(samples.len());
        let mut vision_proxies = Vec::with_capacity(samples.len());
        let mut audio_proxies = Vec::with_capacity(samples.len());

        for sample in samples {
            let u_t = self.encode_modality(tape, &vars.text_enc, &sample.text)?;
            let u_v = self.encode_modality(tape, &vars.vision_enc, &sample.vision)?;
            let u_a = self.encode_modality(tape, &vars.audio_enc, &sample.audio)?;

            let (e_v, e_a) = match (&vars.proxy_vision, &vars.proxy_audio) {
                (Some(pv), Some(pa)) => {
                    let (in_v, in_a) = if let Some(rng) = mix_rng.as_mut() {
                        (
                            cmea::mix_tokens(u_v, u_t, c.mix_threshold, rng)?,
                            cmea::mix_tokens(u_a, u_t, c.mix_threshold, rng)?,
                        )
                    } else {
                        (u_v, u_a)
                    };
                    (cmea::proxy_forward(pv, in_v)?, cmea::proxy_forward(pa, in_a)?)
                }
                _ => (u_v, u_a),
            };

            let mut fused = fusion::interleave3(e_v, u_t, e_a)?;
            for block in &vars.fusion_blocks {
                fused = fusion::fusion_block(block, fused)?;
            }
            predictions.push(fusion::pool_predict(&vars.head, fused)?);
            text_tokens.push(u_t);
            vision_proxies.push(e_v);
            audio_proxies.push(e_a);
        }

        let preds = stack_scalars(tape, &predictions)?;
        let labels = tape.constant(&Tensor::new(
            alloc::vec![samples.len()],
            samples.iter().map(|s| s.label).collect(),
        )?);
        let loss_p = preds.sub(labels)?.square().mean_all();
        let loss_c = if !c.disable_cmea && train_mode {
            Some(cmea::infonce_loss(
                &vision_proxies,
                &audio_proxies,
                &text_tokens,
                c.temperature,
            )?)
        } else {
            None
        };
        let loss_total = fusion::total_loss(preds, labels, loss_c, c.effective_alpha())?;
        Ok(BatchOutput { preds, loss_p, loss_c, loss_total })
    }

    /// Predictions for a slice of samples (evaluation mode, chunked by the
    /// configured batch size).
    pub fn predict<E: Element>(
        &self,
        store: &ParamStore<E>,
        samples: &[Sample<E>],
    ) -> Result<Vec<E>> {
        let mut preds = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let tape = Tape::new();
            let vars = self.bind(&tape, store)?;
            let out = self.forward_batch(&tape, &vars, chunk, Mode::Eval)?;
            preds.extend(tape.value(out.preds).data().iter().copied());
        }
        Ok(preds)
    }

    /// Total loss on a batch (training mode with a fixed mixing seed);
    /// deterministic, used by the finite-difference oracle.
    pub fn batch_loss<E: Element>(
        &self,
        store: &ParamStore<E>,
        samples: &[Sample<E>],
        mix_seed: u64,
    ) -> Result<E> {
        let tape = Tape::new();
        let vars = self.bind(&tape, store)?;
        let out = self.forward_batch(&tape, &vars, samples, Mode::Train { mix_seed })?;
        Ok(tape.scalar_value(out.loss_total))
    }

    /// Analytic gradients of the total batch loss for every parameter.
    pub fn batch_grads<E: Element>(
        &self,
        store: &ParamStore<E>,
        samples: &[Sample<E>],
        mix_seed: u64,
    ) -> Result<BTreeMap<String, Vec<E>>> {
        let tape = Tape::new();
        let vars = self.bind(&tape, store)?;
        let out = self.forward_batch(&tape, &vars, samples, Mode::Train { mix_seed })?;
        let grads = tape.backward(out.loss_total)?;
        let mut by_name = BTreeMap::new();
        for (name, var) in &vars.leaves {
            let g = grads.get(*var).ok_or_else(|| {
                Error::Contract(format!("parameter '{name}' received no gradient"))
            })?;
            by_name.insert(name.clone(), g.to_vec());
        }
        Ok(by_name)
    }

    /// One optimization step on a batch. Fails with a diagnostic naming the
    /// first non-finite tensor if the forward pass degenerates.
    pub fn train_step<E: Element>(
        &self,
        store: &mut ParamStore<E>,
        adam: &mut Adam<E>,
        samples: &[Sample<E>],
        mix_seed: u64,
    ) -> Result<StepStats> {
        let tape = Tape::new();
        let vars = self.bind(&tape, store)?;
        let out = self.forward_batch(&tape, &vars, samples, Mode::Train { mix_seed })?;
        let stats = self.stats_of(&tape, &out);
        if !stats.loss_total.is_finite() {
            let diag = tape
                .first_non_finite()
                .map(|(idx, op, shape)| format!("node #{idx} (op '{op}', shape {shape:?})"))
                .unwrap_or_else(|| String::from("loss only"));
            return Err(Error::Numeric(format!(
                "non-finite loss {}; first non-finite tensor: {diag}",
                stats.loss_total
            )));
        }
        let grads = tape.backward(out.loss_total)?;
        store.zero_grads();
        params::write_grads(&vars.leaves, &grads, store)?;
        adam.step(store)?;
        Ok(stats)
    }

    pub fn stats_of<E: Element>(&self, tape: &Tape<E>, out: &BatchOutput<'_, E>) -> StepStats {
        StepStats {
            loss_p: tape.scalar_value(out.loss_p).as_f64(),
            loss_c: out.loss_c.map_or(0.0, |l| tape.scalar_value(l).as_f64()),
            loss_total: tape.scalar_value(out.loss_total).as_f64(),
        }
    }
}
