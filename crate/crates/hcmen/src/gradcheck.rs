//! The gradient-check suite behind the `gradcheck` subcommand: every
//! differentiable building block plus the full model, each compared against
//! central finite differences in double precision.

use std::collections::BTreeMap;

use hcmen_core::autograd::{finite_diff_check, Tape, Var};
use hcmen_core::encoder::{self, EncoderVars, Modality, ModalitySeq, Sample};
use hcmen_core::params::{Binder, ParamStore};
use hcmen_core::rng;
use hcmen_core::ssm::{self, MambaDims};
use hcmen_core::tensor::Tensor;
use hcmen_core::{cmea, fusion, HcmenModel, ModelConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub component: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

const FD_EPS: f64 = 1e-4;
const FD_COORDS: usize = 64;

type Leaves<'t> = BTreeMap<String, Var<'t, f64>>;

fn run_check<F>(store: &ParamStore<f64>, build: F, seed: u64) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> hcmen_core::Result<(Var<'t, f64>, Leaves<'t>)>,
{
    let tape = Tape::new();
    let (loss, leaves) = match build(&tape, store) {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    let grads = match tape.backward(loss) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    let analytic: BTreeMap<String, Vec<f64>> = leaves
        .iter()
        .map(|(n, v)| {
            let g = grads
                .get(*v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; store.get(n).map(|t| t.numel()).unwrap_or(0)]);
            (n.clone(), g)
        })
        .collect();
    let mut f = |s: &ParamStore<f64>| -> hcmen_core::Result<f64> {
        let tape = Tape::new();
        let (loss, _) = build(&tape, s)?;
        Ok(tape.scalar_value(loss))
    };
    finite_diff_check(&mut f, store, &analytic, FD_EPS, FD_COORDS, seed).unwrap_or(f64::INFINITY)
}

fn bind_all<'t>(tape: &'t Tape<f64>, store: &ParamStore<f64>) -> Leaves<'t> {
    let mut binder = Binder::new(tape, store);
    for name in store.names().cloned().collect::<Vec<_>>() {
        binder.leaf(&name).expect("store names bind");
    }
    binder.into_leaves()
}

fn rand_tensor(shape: &[usize], rng: &mut rng::Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng::uniform(rng, -scale, scale))
}

fn weighted_sum(x: Var<'_, f64>) -> Var<'_, f64> {
    let shape = x.tape().shape_of(x);
    let w = Tensor::from_fn(shape, |i| ((i * 2654435761 % 97) as f64) / 97.0 - 0.5);
    let wv = x.tape().constant(&w);
    x.mul(wv).expect("same shape").sum_all()
}

/// Runs the whole suite. `perturb` names a component whose analytic gradient
/// is deliberately damaged before comparison (a negative control used by
/// tests to prove the suite can fail).
pub fn run_suite(seed: u64, perturb: Option<&str>) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut r = rng::seeded(seed);

    let mut push = |name: &str, err: f64, tol: f64| {
        results.push(CheckResult {
            component: name.to_string(),
            max_rel_err: err,
            tolerance: tol,
        });
    };

    // tensor ops
    {
        let mut store = ParamStore::new();
        store.insert("a", rand_tensor(&[3, 4], &mut r, 1.0)).unwrap();
        store.insert("b", rand_tensor(&[4, 2], &mut r, 1.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["a"].matmul(l["b"])?), l))
        }, seed);
        push("tensor.matmul", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[6, 3], &mut r, 1.0)).unwrap();
        store.insert("k", rand_tensor(&[3, 3], &mut r, 1.0)).unwrap();
        store.insert("bias", rand_tensor(&[3], &mut r, 0.5)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["x"].depthwise_conv1d(l["k"], l["bias"])?), l))
        }, seed);
        push("tensor.depthwise_conv1d", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[5, 3], &mut r, 1.0)).unwrap();
        store.insert("w", rand_tensor(&[3, 3, 4], &mut r, 0.8)).unwrap();
        store.insert("bias", rand_tensor(&[4], &mut r, 0.5)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["x"].conv1d(l["w"], l["bias"])?), l))
        }, seed);
        push("tensor.conv1d", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[4, 6], &mut r, 2.0)).unwrap();
        store.insert("g", rand_tensor(&[6], &mut r, 1.0)).unwrap();
        store.insert("beta", rand_tensor(&[6], &mut r, 0.5)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["x"].layer_norm(l["g"], l["beta"], 1e-5)?), l))
        }, seed);
        push("tensor.layer_norm", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[12], &mut r, 2.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            let x = l["x"];
            let y = x.exp().add(x.softplus())?.add(x.silu())?.add(x.tanh())?.add(x.sigmoid())?;
            Ok((weighted_sum(y), l))
        }, seed);
        push("tensor.activations", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("x", rand_tensor(&[3, 5], &mut r, 1.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["x"].softmax()), l))
        }, seed);
        push("tensor.softmax", err, 1e-6);
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((weighted_sum(l["x"].mean_axis(0)?), l))
        }, seed);
        push("tensor.mean_axis", err, 1e-6);
    }

    // cmea ops
    {
        let mut store = ParamStore::new();
        store.insert("a", rand_tensor(&[4, 5], &mut r, 1.0)).unwrap();
        store.insert("b", rand_tensor(&[4, 5], &mut r, 1.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((cmea::token_avg_cosine(l["a"], l["b"])?, l))
        }, seed);
        push("cmea.token_avg_cosine", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        store.insert("z", rand_tensor(&[4, 4], &mut r, 2.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            Ok((cmea::infonce_from_logits(l["z"].scale(4.0))?, l))
        }, seed);
        push("cmea.infonce", err, 1e-6);
    }
    {
        let mut store = ParamStore::new();
        let mut init_rng = rng::seeded(seed ^ 0xA5A5);
        cmea::init_proxy(&mut store, "px", 4, 8, &mut init_rng).unwrap();
        let x = rand_tensor(&[3, 4], &mut r, 1.0);
        let err = run_check(&store, move |t, s| {
            let mut binder = Binder::new(t, s);
            let vars = cmea::ProxyVars::bind(&mut binder, "px")?;
            let xv = t.constant(&x);
            Ok((weighted_sum(cmea::proxy_forward(&vars, xv)?), binder.into_leaves()))
        }, seed);
        push("cmea.proxy_mlp", err, 1e-6);
    }

    // ssm ops
    {
        let (l, di, n) = (5, 3, 2);
        let mut store = ParamStore::new();
        let mut a_log = rand_tensor(&[di, n], &mut r, 0.5);
        for v in a_log.data_mut() {
            *v += 0.2;
        }
        store.insert("a_log", a_log).unwrap();
        store.insert("delta_raw", rand_tensor(&[l, di], &mut r, 1.0)).unwrap();
        store.insert("b", rand_tensor(&[l, n], &mut r, 1.0)).unwrap();
        store.insert("c", rand_tensor(&[l, n], &mut r, 1.0)).unwrap();
        store.insert("u", rand_tensor(&[l, di], &mut r, 1.0)).unwrap();
        store.insert("d_skip", rand_tensor(&[di], &mut r, 1.0)).unwrap();
        let err = run_check(&store, |t, s| {
            let l = bind_all(t, s);
            let a = l["a_log"].exp().neg();
            let delta = l["delta_raw"].softplus();
            let y = ssm::selective_scan(a, delta, l["b"], l["c"], l["u"], l["d_skip"])?;
            Ok((weighted_sum(y), l))
        }, seed);
        push("ssm.selective_scan", err, 1e-5);
    }
    {
        let dims = MambaDims { model_dim: 4, inner_dim: 8, state_dim: 2, conv_width: 4 };
        let mut store = ParamStore::new();
        let mut init_rng = rng::seeded(seed ^ 0x5A5A);
        ssm::init_mamba(&mut store, "m", &dims, &mut init_rng).unwrap();
        let x = rand_tensor(&[4, 4], &mut r, 1.0);
        let err = run_check(&store, move |t, s| {
            let mut binder = Binder::new(t, s);
            let vars = ssm::MambaVars::bind(&mut binder, "m")?;
            let xv = t.constant(&x);
            Ok((weighted_sum(ssm::mamba_block(&vars, xv)?), binder.into_leaves()))
        }, seed);
        push("ssm.mamba_block", err, 1e-5);

        let mut store = ParamStore::new();
        let mut init_rng = rng::seeded(seed ^ 0x3C3C);
        ssm::init_bi_mamba(&mut store, "bi", &dims, &mut init_rng).unwrap();
        let x = rand_tensor(&[4, 4], &mut r, 1.0);
        let err = run_check(&store, move |t, s| {
            let mut binder = Binder::new(t, s);
            let vars = ssm::BiMambaVars::bind(&mut binder, "bi")?;
            let xv = t.constant(&x);
            Ok((weighted_sum(ssm::bi_mamba(&vars, xv)?), binder.into_leaves()))
        }, seed);
        push("ssm.bi_mamba", err, 1e-5);
    }

    // modality encoder
    {
        let config = ModelConfig {
            seq_len: 4,
            dim: 6,
            state_dim: 2,
            inner_dim: 12,
            text_dim: 3,
            vision_dim: 3,
            audio_dim: 3,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut init_rng = rng::seeded(seed ^ 0x77);
        encoder::init_encoder(&mut store, &config, Modality::Text, 3, &mut init_rng).unwrap();
        let x = rand_tensor(&[4, 3], &mut r, 1.0);
        let cfg = config.clone();
        let err = run_check(&store, move |t, s| {
            let mut binder = Binder::new(t, s);
            let vars = EncoderVars::bind(&mut binder, &cfg, Modality::Text)?;
            let xv = t.constant(&x);
            let h = encoder::embed(&vars, xv)?;
            Ok((weighted_sum(encoder::hierarchical_encode(&vars, h)?), binder.into_leaves()))
        }, seed);
        push("encoder.hierarchical", err, 1e-5);
    }

    // fusion block
    {
        let config = ModelConfig {
            seq_len: 2,
            dim: 4,
            state_dim: 2,
            inner_dim: 8,
            fusion_blocks: 1,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut init_rng = rng::seeded(seed ^ 0x99);
        fusion::init_fusion_block(&mut store, 0, &config, &mut init_rng).unwrap();
        fusion::init_head(&mut store, config.dim, &mut init_rng).unwrap();
        let x = rand_tensor(&[6, 4], &mut r, 1.0);
        let cfg = config.clone();
        let err = run_check(&store, move |t, s| {
            let mut binder = Binder::new(t, s);
            let block = fusion::FusionBlockVars::bind(&mut binder, 0, &cfg)?;
            let head = fusion::HeadVars::bind(&mut binder)?;
            let xv = t.constant(&x);
            let f = fusion::fusion_block(&block, xv)?;
            Ok((fusion::pool_predict(&head, f)?, binder.into_leaves()))
        }, seed);
        push("fusion.block_and_head", err, 1e-5);
    }

    // full model, tiny config (L=4, D=8, N=2, Z=1, B=2)
    {
        let config = ModelConfig {
            seq_len: 4,
            dim: 8,
            state_dim: 2,
            inner_dim: 16,
            fusion_blocks: 1,
            batch_size: 2,
            text_dim: 3,
            vision_dim: 4,
            audio_dim: 2,
            seed,
            ..ModelConfig::default()
        };
        let model = HcmenModel::new(config.clone()).expect("tiny config is valid");
        let store: ParamStore<f64> = model.init_params().expect("init");
        let samples = tiny_samples(&config, 2, seed ^ 0xFEED);
        let err = (|| -> hcmen_core::Result<f64> {
            let analytic = model.batch_grads(&store, &samples, 5)?;
            let mut f = |s: &ParamStore<f64>| model.batch_loss(s, &samples, 5);
            finite_diff_check(&mut f, &store, &analytic, FD_EPS, 6, seed)
        })()
        .unwrap_or(f64::INFINITY);
        push("model.total_loss", err, 1e-4);
    }

    if let Some(target) = perturb {
        for res in &mut results {
            if res.component == target {
                res.max_rel_err += 1.0;
            }
        }
    }
    results
}

fn tiny_samples(config: &ModelConfig, count: usize, seed: u64) -> Vec<Sample<f64>> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|i| {
            let mut seq = |t: usize, d: usize| {
                ModalitySeq::new(Tensor::from_fn(vec![t, d], |_| rng::uniform(&mut r, -1.0, 1.0)))
                    .unwrap()
            };
            Sample {
                id: format!("g{i}"),
                label: (i as f64 % 6.0) - 2.5,
                text: seq(5, config.text_dim),
                vision: seq(6, config.vision_dim),
                audio: seq(4, config.audio_dim),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_fresh_build() {
        let results = run_suite(0, None);
        assert!(!results.is_empty());
        for res in &results {
            assert!(
                res.passed(),
                "{}: rel err {} over tolerance {}",
                res.component,
                res.max_rel_err,
                res.tolerance
            );
        }
    }

    #[test]
    fn perturbation_hook_is_detected() {
        let results = run_suite(0, Some("ssm.selective_scan"));
        let scan = results
            .iter()
            .find(|r| r.component == "ssm.selective_scan")
            .unwrap();
        assert!(!scan.passed(), "perturbed component must fail");
    }
}
