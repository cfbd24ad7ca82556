//! Cross-Modal Enhancement and Alignment: probabilistic token mixing with the
//! text stream, per-modality proxy MLPs, token-averaged cosine similarity, and
//! the InfoNCE alignment loss over in-batch text negatives.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::autograd::{stack_scalars, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_init, Binder, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Element, Tensor};

const COSINE_GUARD: f64 = 1e-12;

/// Registers one proxy MLP (`D -> D_h -> D`, SiLU hidden) under `prefix`.
///
/// With `hidden == 2·dim` the weights start at the exact identity
/// (`silu(x) − silu(−x) = x`, realized by stacked ±I blocks) plus a small
/// random perturbation, so an untrained proxy passes its input through and
/// training refines from there. Other widths fall back to Glorot.
pub fn init_proxy<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    dim: usize,
    hidden: usize,
    rng: &mut Rng,
) -> Result<()> {
    let (w1, w2) = if hidden == 2 * dim {
        let jitter = 0.02;
        let mut w1 = Tensor::from_fn(vec![dim, hidden], |_| {
            E::from_f64(crate::rng::uniform(rng, -jitter, jitter))
        });
        let mut w2 = Tensor::from_fn(vec![hidden, dim], |_| {
            E::from_f64(crate::rng::uniform(rng, -jitter, jitter))
        });
        for i in 0..dim {
            w1.data_mut()[i * hidden + i] += E::one();
            w1.data_mut()[i * hidden + dim + i] -= E::one();
            w2.data_mut()[i * dim + i] += E::one();
            w2.data_mut()[(dim + i) * dim + i] -= E::one();
        }
        (w1, w2)
    } else {
        (
            glorot_init(rng, vec![dim, hidden], dim, hidden),
            glorot_init(rng, vec![hidden, dim], hidden, dim),
        )
    };
    store.insert(&format!("{prefix}.w1"), w1)?;
    store.insert(&format!("{prefix}.b1"), Tensor::zeros(vec![hidden]))?;
    store.insert(&format!("{prefix}.w2"), w2)?;
    store.insert(&format!("{prefix}.b2"), Tensor::zeros(vec![dim]))?;
    Ok(())
}

pub struct ProxyVars<'t, E: Element> {
    pub w1: Var<'t, E>,
    pub b1: Var<'t, E>,
    pub w2: Var<'t, E>,
    pub b2: Var<'t, E>,
}

impl<'t, E: Element> ProxyVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: binder.leaf(&format!("{prefix}.w1"))?,
            b1: binder.leaf(&format!("{prefix}.b1"))?,
            w2: binder.leaf(&format!("{prefix}.w2"))?,
            b2: binder.leaf(&format!("{prefix}.b2"))?,
        })
    }
}

/// Token-wise two-layer perceptron; shape preserved.
pub fn proxy_forward<'t, E: Element>(
    vars: &ProxyVars<'t, E>,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    x.matmul(vars.w1)?
        .add_row(vars.b1)?
        .silu()
        .matmul(vars.w2)?
        .add_row(vars.b2)
}

/// Probabilistic token mixing: per token draw `p ~ Uniform(0,1)`; the token is
/// replaced by the corresponding text token when `p > p*` (ties toward
/// replacement, so `p* = 0` replaces everything and `p* = 1` nothing).
/// Deterministic given the RNG state; training-time only — evaluation feeds
/// the unmixed tokens to the proxy.
pub fn mix_tokens<'t, E: Element>(
    own: Var<'t, E>,
    text: Var<'t, E>,
    p_star: f64,
    rng: &mut Rng,
) -> Result<Var<'t, E>> {
    if !(0.0..=1.0).contains(&p_star) {
        return Err(Error::Contract(format!("mix_tokens: p* {p_star} outside [0, 1]")));
    }
    let shape = own.tape.shape_of(own);
    let rows = shape[0];
    let replace: Vec<bool> = (0..rows).map(|_| rng::uniform01(rng) >= p_star).collect();
    text.select_rows(&replace, own)
}

/// Average token-wise cosine similarity of two `[L, D]` sequences; a scalar in
/// `[-1, 1]`. Zero-norm tokens contribute 0 (the denominators carry `+1e-12`).
pub fn token_avg_cosine<'t, E: Element>(a: Var<'t, E>, b: Var<'t, E>) -> Result<Var<'t, E>> {
    let tape = a.tape;
    let sa = tape.shape_of(a);
    let sb = tape.shape_of(b);
    if sa != sb || sa.len() != 2 {
        return Err(Error::Shape(format!("token_avg_cosine: shapes {sa:?} vs {sb:?}")));
    }
    let (l, d) = (sa[0], sa[1]);
    let guard = E::from_f64(COSINE_GUARD);
    let inv_l = E::one() / E::from_f64(l as f64);
    let value = tape.with_values(&[a.id, b.id], |vs| {
        let (av, bv) = (vs[0], vs[1]);
        let mut sum = E::zero();
        for i in 0..l {
            let (dot, na, nb) = token_stats(av, bv, i, d);
            sum += dot / (na * nb + guard);
        }
        vec![sum * inv_l]
    });
    Ok(tape.push_op(
        "token_avg_cosine",
        vec![1],
        value,
        vec![a.id, b.id],
        Box::new(move |args| {
            let (av, bv) = (args.inputs[0], args.inputs[1]);
            let u = args.upstream[0] * inv_l;
            let mut da = vec![E::zero(); l * d];
            let mut db = vec![E::zero(); l * d];
            for i in 0..l {
                let (dot, na, nb) = token_stats(av, bv, i, d);
                let den = na * nb + guard;
                let den2 = den * den;
                for c in 0..d {
                    let ai = av[i * d + c];
                    let bi = bv[i * d + c];
                    // d/da of dot/(|a||b| + eps); the norm-direction term
                    // vanishes for zero-norm tokens (dot is 0 there too).
                    let mut ga = bi / den;
                    let mut gb = ai / den;
                    if na > E::zero() {
                        ga -= dot * nb * (ai / na) / den2;
                    }
                    if nb > E::zero() {
                        gb -= dot * na * (bi / nb) / den2;
                    }
                    da[i * d + c] = u * ga;
                    db[i * d + c] = u * gb;
                }
            }
            vec![da, db]
        }),
    ))
}

fn token_stats<E: Element>(a: &[E], b: &[E], i: usize, d: usize) -> (E, E, E) {
    let mut dot = E::zero();
    let mut qa = E::zero();
    let mut qb = E::zero();
    for c in 0..d {
        let av = a[i * d + c];
        let bv = b[i * d + c];
        dot += av * bv;
        qa += av * av;
        qb += bv * bv;
    }
    (dot, qa.sqrt(), qb.sqrt())
}

/// `mean_i( logsumexp(z_i) − z_ii )` over a `[B, B]` logit matrix: the InfoNCE
/// objective with the diagonal as positives.
pub fn infonce_from_logits<'t, E: Element>(logits: Var<'t, E>) -> Result<Var<'t, E>> {
    let tape = logits.tape;
    let shape = tape.shape_of(logits);
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Shape(format!("infonce: logits must be square, got {shape:?}")));
    }
    let b = shape[0];
    let inv_b = E::one() / E::from_f64(b as f64);
    let value = tape.with_values(&[logits.id], |vs| {
        let z = vs[0];
        let mut loss = E::zero();
        for i in 0..b {
            let row = &z[i * b..(i + 1) * b];
            loss += logsumexp(row) - row[i];
        }
        vec![loss * inv_b]
    });
    Ok(tape.push_op(
        "infonce",
        vec![1],
        value,
        vec![logits.id],
        Box::new(move |args| {
            let z = args.inputs[0];
            let u = args.upstream[0] * inv_b;
            let mut dz = vec![E::zero(); b * b];
            for i in 0..b {
                let row = &z[i * b..(i + 1) * b];
                let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
                let mut den = E::zero();
                for &v in row {
                    den += (v - mx).exp();
                }
                for j in 0..b {
                    let soft = (row[j] - mx).exp() / den;
                    let delta = if i == j { E::one() } else { E::zero() };
                    dz[i * b + j] = u * (soft - delta);
                }
            }
            vec![dz]
        }),
    ))
}

fn logsumexp<E: Element>(row: &[E]) -> E {
    let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
    let mut s = E::zero();
    for &v in row {
        s += (v - mx).exp();
    }
    mx + s.ln()
}

/// Full alignment loss: for each of the vision and audio proxies, a `[B, B]`
/// matrix of token-averaged cosine similarities against every sample's text
/// tokens, scaled by `1/τ`, through InfoNCE; the two terms are averaged
/// (the ½ factor).
pub fn infonce_loss<'t, E: Element>(
    proxy_vision: &[Var<'t, E>],
    proxy_audio: &[Var<'t, E>],
    text: &[Var<'t, E>],
    tau: f64,
) -> Result<Var<'t, E>> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("infonce_loss: temperature {tau} must be > 0")));
    }
    let b = text.len();
    if b == 0 || proxy_vision.len() != b || proxy_audio.len() != b {
        return Err(Error::Shape(format!(
            "infonce_loss: batch sizes differ ({}, {}, {b})",
            proxy_vision.len(),
            proxy_audio.len()
        )));
    }
    let tape = text[0].tape;
    let inv_tau = E::from_f64(1.0 / tau);
    let mut per_modality = Vec::with_capacity(2);
    for proxies in [proxy_vision, proxy_audio] {
        let mut sims = Vec::with_capacity(b * b);
        for e in proxies {
            for t in text {
                sims.push(token_avg_cosine(*e, *t)?);
            }
        }
        let logits = stack_scalars(tape, &sims)?.reshape(&[b, b])?.scale(inv_tau);
        per_modality.push(infonce_from_logits(logits)?);
    }
    Ok(per_modality[0].add(per_modality[1])?.scale(E::from_f64(0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn seq(tape: &Tape<f64>, l: usize, d: usize, f: impl FnMut(usize) -> f64) -> Var<'_, f64> {
        tape.constant(&Tensor::from_fn(vec![l, d], f))
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let tape = Tape::<f64>::new();
        let a = seq(&tape, 3, 4, |i| 0.3 + i as f64);
        let s = token_avg_cosine(a, a).unwrap();
        assert!((tape.scalar_value(s) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_orthogonal_tokens_give_zero() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap());
        let b = tape.constant(&Tensor::new(vec![2, 2], vec![0.0, 3.0, 5.0, 0.0]).unwrap());
        let s = token_avg_cosine(a, b).unwrap();
        assert!(tape.scalar_value(s).abs() < 1e-12);
    }

    #[test]
    fn cosine_half_from_mixed_pairs() {
        // one aligned pair (cos 1), one orthogonal pair (cos 0) -> 0.5
        let tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::new(vec![2, 2], vec![2.0, 0.0, 1.0, 0.0]).unwrap());
        let b = tape.constant(&Tensor::new(vec![2, 2], vec![5.0, 0.0, 0.0, 1.0]).unwrap());
        let s = token_avg_cosine(a, b).unwrap();
        assert!((tape.scalar_value(s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_token_contributes_zero() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        let b = seq(&tape, 1, 3, |i| 1.0 + i as f64);
        let s = token_avg_cosine(a, b).unwrap();
        assert_eq!(tape.scalar_value(s), 0.0);
    }

    #[test]
    fn infonce_single_sample_is_zero() {
        let tape = Tape::<f64>::new();
        let e = seq(&tape, 2, 3, |i| 0.5 * i as f64 + 0.1);
        let loss = infonce_loss(&[e], &[e], &[e], 0.1).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn infonce_identical_embeddings_give_ln_b() {
        for b in [2usize, 4, 8] {
            let tape = Tape::<f64>::new();
            let e = seq(&tape, 2, 3, |i| (i as f64).cos() + 1.5);
            let batch: Vec<_> = (0..b).map(|_| e).collect();
            let loss = infonce_loss(&batch, &batch, &batch, 0.1).unwrap();
            let expect = (b as f64).ln();
            assert!(
                (tape.scalar_value(loss) - expect).abs() < 1e-5,
                "B = {b}: {} vs {expect}",
                tape.scalar_value(loss)
            );
        }
    }

    #[test]
    fn infonce_sharp_diagonal_drives_loss_to_zero() {
        // diagonal sim 1, off-diagonal −1, τ = 0.1, B = 4 -> loss < 1e-6
        let tape = Tape::<f64>::new();
        let b = 4;
        let mut z = vec![-1.0f64; b * b];
        for i in 0..b {
            z[i * b + i] = 1.0;
        }
        let logits = tape
            .constant(&Tensor::new(vec![b, b], z).unwrap())
            .scale(1.0 / 0.1);
        let loss = infonce_from_logits(logits).unwrap();
        assert!(tape.scalar_value(loss) < 1e-6);
    }

    #[test]
    fn infonce_rejects_bad_temperature() {
        let tape = Tape::<f64>::new();
        let e = seq(&tape, 1, 2, |_| 1.0);
        assert!(infonce_loss(&[e], &[e], &[e], 0.0).is_err());
        assert!(infonce_loss(&[e], &[e], &[e], -1.0).is_err());
    }

    #[test]
    fn mix_boundaries_are_exact() {
        let tape = Tape::<f64>::new();
        let own = seq(&tape, 5, 2, |i| i as f64);
        let text = seq(&tape, 5, 2, |i| 100.0 + i as f64);
        let mut rng = rng::seeded(3);
        let keep_all = mix_tokens(own, text, 1.0, &mut rng).unwrap();
        assert_eq!(tape.value(keep_all), tape.value(own));
        let replace_all = mix_tokens(own, text, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(replace_all), tape.value(text));
    }

    #[test]
    fn mix_tokens_are_bitwise_copies_of_a_source() {
        let tape = Tape::<f64>::new();
        let own = seq(&tape, 64, 3, |i| (i as f64) * 0.13);
        let text = seq(&tape, 64, 3, |i| -(i as f64) * 0.29);
        let mut rng = rng::seeded(11);
        let mixed = mix_tokens(own, text, 0.4, &mut rng).unwrap();
        let (mv, ov, tv) = (tape.value(mixed), tape.value(own), tape.value(text));
        for r in 0..64 {
            let row = &mv.data()[r * 3..(r + 1) * 3];
            let from_own = row == &ov.data()[r * 3..(r + 1) * 3];
            let from_text = row == &tv.data()[r * 3..(r + 1) * 3];
            assert!(from_own || from_text, "row {r} is a blend");
        }
    }

    #[test]
    fn mix_replacement_fraction_tracks_threshold() {
        let tape = Tape::<f64>::new();
        let n = 10_000;
        let own = seq(&tape, n, 1, |_| 0.0);
        let text = seq(&tape, n, 1, |_| 1.0);
        for p_star in [0.3f64, 0.7] {
            let mut rng = rng::seeded(99);
            let mixed = mix_tokens(own, text, p_star, &mut rng).unwrap();
            let replaced: usize = tape
                .value(mixed)
                .data()
                .iter()
                .filter(|&&v| v == 1.0)
                .count();
            let frac = replaced as f64 / n as f64;
            let expect = 1.0 - p_star;
            let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
            assert!((frac - expect).abs() < 3.0 * sigma, "p*={p_star}: fraction {frac}");
        }
    }

    #[test]
    fn proxy_zero_weights_give_zero_output() {
        let tape = Tape::<f64>::new();
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng::seeded(0);
        init_proxy(&mut store, "px", 3, 6, &mut rng).unwrap();
        for name in ["px.w1", "px.w2"] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut binder = Binder::new(&tape, &store);
        let vars = ProxyVars::bind(&mut binder, "px").unwrap();
        let x = seq(&tape, 4, 3, |i| i as f64);
        let y = proxy_forward(&vars, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape_of(y), vec![4, 3]);
    }
}
