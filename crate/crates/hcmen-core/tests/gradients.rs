//! Finite-difference validation of every differentiable operation, in double
//! precision. The analytic gradients come from the tape; the numeric side is
//! the central-difference oracle.

use std::collections::BTreeMap;

use hcmen_core::autograd::{finite_diff_check, Tape, Var};
use hcmen_core::params::{Binder, ParamStore};
use hcmen_core::rng;
use hcmen_core::ssm::{self, MambaDims};
use hcmen_core::tensor::Tensor;
use hcmen_core::{cmea, Result};

type Leaves<'t> = BTreeMap<String, Var<'t, f64>>;

/// Builds the graph once for analytic gradients, then repeatedly for central
/// differences; returns the max relative error over all coordinates. The
/// closure receives the (possibly perturbed) store and must rebuild the whole
/// graph from it, returning the scalar loss and the bound parameter leaves.
fn max_fd_err<F>(store: &ParamStore<f64>, build: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<(Var<'t, f64>, Leaves<'t>)>,
{
    let tape = Tape::new();
    let (loss, leaves) = build(&tape, store).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: BTreeMap<String, Vec<f64>> = leaves
        .iter()
        .map(|(n, v)| {
            let g = grads
                .get(*v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; store.get(n).unwrap().numel()]);
            (n.clone(), g)
        })
        .collect();

    let mut f = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let (loss, _) = build(&tape, s)?;
        Ok(tape.scalar_value(loss))
    };
    finite_diff_check(&mut f, store, &analytic, 1e-4, 256, 7).unwrap()
}

/// Binds every store entry as a leaf and returns the name → var map.
fn bind_all<'t>(tape: &'t Tape<f64>, store: &ParamStore<f64>) -> Leaves<'t> {
    let mut binder = Binder::new(tape, store);
    for name in store.names().cloned().collect::<Vec<_>>() {
        binder.leaf(&name).unwrap();
    }
    binder.into_leaves()
}

fn random_param(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng::uniform(&mut r, -scale, scale))
}

fn store_of(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (name, t) in entries {
        store.insert(name, t.clone()).unwrap();
    }
    store
}

/// Weighted sum against a fixed pattern; breaks symmetry so gradients are
/// informative.
fn weighted_sum(x: Var<'_, f64>) -> Var<'_, f64> {
    let shape: Vec<usize> = x.tape().shape_of(x);
    let w = Tensor::from_fn(shape, |i| ((i * 2654435761 % 97) as f64) / 97.0 - 0.5);
    let wv = x.tape().constant(&w);
    x.mul(wv).unwrap().sum_all()
}

#[test]
fn matmul_gradients() {
    let store = store_of(&[
        ("a", random_param(&[3, 4], 1, 1.0)),
        ("b", random_param(&[4, 2], 2, 1.0)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["a"].matmul(l["b"])?), l))
    });
    assert!(err < 1e-8, "matmul rel err {err}");
}

#[test]
fn depthwise_conv_gradients() {
    let store = store_of(&[
        ("x", random_param(&[6, 3], 3, 1.0)),
        ("k", random_param(&[3, 3], 4, 1.0)),
        ("b", random_param(&[3], 5, 0.5)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].depthwise_conv1d(l["k"], l["b"])?), l))
    });
    assert!(err < 1e-5, "depthwise conv rel err {err}");
}

#[test]
fn causal_conv_gradients() {
    let store = store_of(&[
        ("x", random_param(&[6, 2], 6, 1.0)),
        ("k", random_param(&[4, 2], 7, 1.0)),
        ("b", random_param(&[2], 8, 0.5)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].depthwise_conv1d_causal(l["k"], l["b"])?), l))
    });
    assert!(err < 1e-5, "causal conv rel err {err}");
}

#[test]
fn conv1d_gradients() {
    let store = store_of(&[
        ("x", random_param(&[5, 3], 9, 1.0)),
        ("w", random_param(&[3, 3, 4], 10, 0.8)),
        ("b", random_param(&[4], 11, 0.5)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].conv1d(l["w"], l["b"])?), l))
    });
    assert!(err < 1e-5, "conv1d rel err {err}");
}

#[test]
fn layer_norm_composite_gradients() {
    let store = store_of(&[
        ("x", random_param(&[4, 6], 12, 2.0)),
        ("g", random_param(&[6], 13, 1.0)),
        ("beta", random_param(&[6], 14, 0.5)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].layer_norm(l["g"], l["beta"], 1e-5)?), l))
    });
    assert!(err < 1e-6, "layer_norm rel err {err}");
}

#[test]
fn activation_gradients() {
    let x = random_param(&[12], 15, 2.0);
    for name in ["exp", "softplus", "silu", "tanh", "sigmoid"] {
        let store = store_of(&[("x", x.clone())]);
        let err = max_fd_err(&store, |tape, s| {
            let l = bind_all(tape, s);
            let v = l["x"];
            let y = match name {
                "exp" => v.exp(),
                "softplus" => v.softplus(),
                "silu" => v.silu(),
                "tanh" => v.tanh(),
                _ => v.sigmoid(),
            };
            Ok((weighted_sum(y), l))
        });
        assert!(err < 1e-7, "{name} rel err {err}");
    }
}

#[test]
fn exp_gradient_equals_output() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&random_param(&[5], 16, 1.5).param());
    let y = x.exp();
    let grads = tape.backward(y.sum_all()).unwrap();
    let yv = tape.value(y);
    for (g, v) in grads.get(x).unwrap().iter().zip(yv.data()) {
        assert!((g - v).abs() < 1e-12);
    }
}

#[test]
fn softmax_and_mean_gradients() {
    let store = store_of(&[("x", random_param(&[3, 5], 17, 1.0))]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].softmax()), l))
    });
    assert!(err < 1e-6, "softmax rel err {err}");

    for axis in [0usize, 1] {
        let err = max_fd_err(&store, |tape, s| {
            let l = bind_all(tape, s);
            Ok((weighted_sum(l["x"].mean_axis(axis)?), l))
        });
        assert!(err < 1e-8, "mean_axis({axis}) rel err {err}");
    }
}

#[test]
fn structural_op_gradients() {
    let store = store_of(&[
        ("x", random_param(&[4, 6], 18, 1.0)),
        ("b", random_param(&[6], 19, 1.0)),
    ]);
    for which in ["add_row", "reverse", "narrow"] {
        let err = max_fd_err(&store, |tape, s| {
            let l = bind_all(tape, s);
            let y = match which {
                "add_row" => l["x"].add_row(l["b"])?,
                "reverse" => l["x"].reverse_time(),
                _ => l["x"].narrow_cols(1, 3)?,
            };
            Ok((weighted_sum(y), l))
        });
        assert!(err < 1e-8, "{which} rel err {err}");
    }

    let mask = [true, false, true, false];
    let store2 = store_of(&[
        ("x", random_param(&[4, 3], 20, 1.0)),
        ("y", random_param(&[4, 3], 21, 1.0)),
    ]);
    let err = max_fd_err(&store2, |tape, s| {
        let l = bind_all(tape, s);
        Ok((weighted_sum(l["x"].select_rows(&mask, l["y"])?), l))
    });
    assert!(err < 1e-8, "select_rows rel err {err}");
}

#[test]
fn interleave_gradients() {
    let store = store_of(&[
        ("v", random_param(&[3, 2], 22, 1.0)),
        ("t", random_param(&[3, 2], 23, 1.0)),
        ("a", random_param(&[3, 2], 24, 1.0)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((
            weighted_sum(hcmen_core::fusion::interleave3(l["v"], l["t"], l["a"])?),
            l,
        ))
    });
    assert!(err < 1e-8, "interleave3 rel err {err}");
}

#[test]
fn token_avg_cosine_gradients() {
    let store = store_of(&[
        ("a", random_param(&[4, 5], 25, 1.0)),
        ("b", random_param(&[4, 5], 26, 1.0)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((cmea::token_avg_cosine(l["a"], l["b"])?, l))
    });
    assert!(err < 1e-6, "token_avg_cosine rel err {err}");
}

#[test]
fn infonce_gradients() {
    let store = store_of(&[("z", random_param(&[4, 4], 27, 2.0))]);
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        Ok((cmea::infonce_from_logits(l["z"].scale(4.0))?, l))
    });
    assert!(err < 1e-6, "infonce rel err {err}");
}

#[test]
fn infonce_full_loss_gradients() {
    // Through the cosine-similarity matrices of a B = 3 batch.
    let mut store = ParamStore::new();
    for i in 0..3u64 {
        store.insert(&format!("ev{i}"), random_param(&[3, 4], 30 + i, 1.0)).unwrap();
        store.insert(&format!("ea{i}"), random_param(&[3, 4], 40 + i, 1.0)).unwrap();
        store.insert(&format!("ut{i}"), random_param(&[3, 4], 50 + i, 1.0)).unwrap();
    }
    let err = max_fd_err(&store, |tape, s| {
        let l = bind_all(tape, s);
        let ev: Vec<_> = (0..3).map(|i| l[format!("ev{i}").as_str()]).collect();
        let ea: Vec<_> = (0..3).map(|i| l[format!("ea{i}").as_str()]).collect();
        let ut: Vec<_> = (0..3).map(|i| l[format!("ut{i}").as_str()]).collect();
        Ok((cmea::infonce_loss(&ev, &ea, &ut, 0.2)?, l))
    });
    assert!(err < 1e-5, "infonce_loss rel err {err}");
}

#[test]
fn selective_scan_gradients() {
    // a = −exp(a_log) keeps the state stable; delta = softplus(raw) keeps the
    // step positive; gradients flow through all six scan inputs.
    let (l, di, n) = (5, 3, 2);
    let mut a_log = random_param(&[di, n], 60, 0.5);
    for v in a_log.data_mut() {
        *v += 0.2;
    }
    let store = store_of(&[
        ("a_log", a_log),
        ("delta_raw", random_param(&[l, di], 61, 1.0)),
        ("b", random_param(&[l, n], 62, 1.0)),
        ("c", random_param(&[l, n], 63, 1.0)),
        ("u", random_param(&[l, di], 64, 1.0)),
        ("d_skip", random_param(&[di], 65, 1.0)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let lv = bind_all(tape, s);
        let a = lv["a_log"].exp().neg();
        let delta = lv["delta_raw"].softplus();
        let y = ssm::selective_scan(a, delta, lv["b"], lv["c"], lv["u"], lv["d_skip"])?;
        Ok((weighted_sum(y), lv))
    });
    assert!(err < 1e-5, "selective_scan rel err {err}");
}

#[test]
fn selective_scan_gradients_near_a_singularity() {
    // Exercise the |a| < 1e-8 series branch: `a` is held fixed (a constant,
    // not perturbed across the guard boundary); the other inputs get FD.
    let (l, di, n) = (3, 2, 2);
    let a_fixed = Tensor::from_fn(vec![di, n], |i| if i % 2 == 0 { -1e-10 } else { -0.8 });
    let store = store_of(&[
        ("delta_raw", random_param(&[l, di], 66, 0.5)),
        ("b", random_param(&[l, n], 67, 1.0)),
        ("c", random_param(&[l, n], 68, 1.0)),
        ("u", random_param(&[l, di], 69, 1.0)),
        ("d_skip", random_param(&[di], 70, 1.0)),
    ]);
    let err = max_fd_err(&store, |tape, s| {
        let lv = bind_all(tape, s);
        let delta = lv["delta_raw"].softplus();
        let a = tape.constant(&a_fixed);
        let y = ssm::selective_scan(a, delta, lv["b"], lv["c"], lv["u"], lv["d_skip"])?;
        Ok((weighted_sum(y), lv))
    });
    assert!(err < 1e-5, "selective_scan (guard branch) rel err {err}");
}

#[test]
fn mamba_block_gradients_tiny_config() {
    let dims = MambaDims { model_dim: 4, inner_dim: 8, state_dim: 2, conv_width: 4 };
    let mut rng = rng::seeded(71);
    let mut store = ParamStore::<f64>::new();
    ssm::init_mamba(&mut store, "m", &dims, &mut rng).unwrap();
    let x = random_param(&[4, 4], 72, 1.0);
    let err = max_fd_err(&store, |tape, s| {
        let mut binder = Binder::new(tape, s);
        let vars = ssm::MambaVars::bind(&mut binder, "m")?;
        let xv = tape.constant(&x);
        Ok((weighted_sum(ssm::mamba_block(&vars, xv)?), binder.into_leaves()))
    });
    assert!(err < 1e-5, "mamba_block rel err {err}");
}

#[test]
fn bi_mamba_gradients_tiny_config() {
    let dims = MambaDims { model_dim: 4, inner_dim: 8, state_dim: 2, conv_width: 4 };
    let mut rng = rng::seeded(73);
    let mut store = ParamStore::<f64>::new();
    ssm::init_bi_mamba(&mut store, "bi", &dims, &mut rng).unwrap();
    let x = random_param(&[4, 4], 74, 1.0);
    let err = max_fd_err(&store, |tape, s| {
        let mut binder = Binder::new(tape, s);
        let vars = ssm::BiMambaVars::bind(&mut binder, "bi")?;
        let xv = tape.constant(&x);
        Ok((weighted_sum(ssm::bi_mamba(&vars, xv)?), binder.into_leaves()))
    });
    assert!(err < 1e-5, "bi_mamba rel err {err}");
}

#[test]
fn fusion_stack_gradients_two_blocks() {
    use hcmen_core::fusion::{fusion_block, FusionBlockVars};
    use hcmen_core::ModelConfig;
    let config = ModelConfig {
        seq_len: 2,
        dim: 4,
        state_dim: 2,
        inner_dim: 8,
        fusion_blocks: 2,
        ..ModelConfig::default()
    };
    let mut rng = rng::seeded(75);
    let mut store = ParamStore::<f64>::new();
    hcmen_core::fusion::init_fusion_block(&mut store, 0, &config, &mut rng).unwrap();
    hcmen_core::fusion::init_fusion_block(&mut store, 1, &config, &mut rng).unwrap();
    let x = random_param(&[6, 4], 76, 1.0);
    let err = max_fd_err(&store, |tape, s| {
        let mut binder = Binder::new(tape, s);
        let b0 = FusionBlockVars::bind(&mut binder, 0, &config)?;
        let b1 = FusionBlockVars::bind(&mut binder, 1, &config)?;
        let mut f = tape.constant(&x);
        f = fusion_block(&b0, f)?;
        f = fusion_block(&b1, f)?;
        Ok((weighted_sum(f), binder.into_leaves()))
    });
    assert!(err < 1e-5, "fusion stack rel err {err}");
}
