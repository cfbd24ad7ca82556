//! State-space kernels: zero-order-hold discretization, LTI recurrence and
//! its convolutional form, the input-dependent (selective) scan with a
//! hand-derived backward pass, the Mamba block, and the bidirectional wrapper.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


#[allow(unused_imports)] // inherent f64 methods cover std; Float is needed for no_std
use num_traits::Float;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{glorot_init as glorot, uniform_init, Binder, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Element, Tensor};

/// Below this magnitude of `a` the discretization switches to the series
/// expansion of `(exp(δa) − 1)/a` to avoid the 0/0 singularity.
const A_SINGULARITY_GUARD: f64 = 1e-8;

/// `(a_bar, input_coef)` for one diagonal entry: `a_bar = exp(delta·a)` and
/// `input_coef = (exp(delta·a) − 1)/a`, with `b_bar = input_coef · b`.
#[inline]
fn zoh_coef<E: Element>(a: E, delta: E) -> (E, E) {
    let a_bar = (delta * a).exp();
    let guard = E::from_f64(A_SINGULARITY_GUARD);
    let coef = if a.abs() >= guard {
        (a_bar - E::one()) / a
    } else {
        // series limit: delta + delta²·a/2
        delta * (E::one() + delta * a / E::from_f64(2.0))
    };
    (a_bar, coef)
}

/// Zero-order-hold discretization of a diagonal system: for each state,
/// `a_bar = exp(delta·a)` and `b_bar = ((exp(delta·a) − 1)/a)·b`, falling back
/// to the limit `b_bar = delta·b` when `|a| < 1e-8`.
pub fn discretize_zoh<E: Element>(a: &[E], b: &[E], delta: E) -> Result<(Vec<E>, Vec<E>)> {
    if delta < E::zero() {
        return Err(Error::Contract(format!(
            "discretize_zoh: delta must be >= 0, got {:?}",
            delta.as_f64()
        )));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "discretize_zoh: a has {} states, b has {}",
            a.len(),
            b.len()
        )));
    }
    let mut a_bar = Vec::with_capacity(a.len());
    let mut b_bar = Vec::with_capacity(a.len());
    for (&ai, &bi) in a.iter().zip(b) {
        let (ab, coef) = zoh_coef(ai, delta);
        a_bar.push(ab);
        b_bar.push(coef * bi);
    }
    Ok((a_bar, b_bar))
}

/// Discrete-time recurrence `h_t = a_bar·h_{t−1} + b_bar·x_t`,
/// `y_t = Σ_n c_t[n]·h_t[n]` with `h_0 = 0`, for one channel with `n_states`
/// states. Coefficient slices may be constant (`n_states` values) or per-step
/// (`len(x)·n_states` values).
pub fn recurrent_scan<E: Element>(
    a_bar: &[E],
    b_bar: &[E],
    c: &[E],
    x: &[E],
    n_states: usize,
) -> Result<Vec<E>> {
    let len = x.len();
    let stride_of = |slice: &[E], name: &str| -> Result<usize> {
        if slice.len() == n_states {
            Ok(0)
        } else if slice.len() == len * n_states {
            Ok(n_states)
        } else {
            Err(Error::Shape(format!(
                "recurrent_scan: {name} has {} values; expected {n_states} or {}",
                slice.len(),
                len * n_states
            )))
        }
    };
    let sa = stride_of(a_bar, "a_bar")?;
    let sb = stride_of(b_bar, "b_bar")?;
    let sc = stride_of(c, "c")?;
    let mut h = vec![E::zero(); n_states];
    let mut y = Vec::with_capacity(len);
    for (t, &xt) in x.iter().enumerate() {
        let mut acc = E::zero();
        for s in 0..n_states {
            h[s] = a_bar[t * sa + s] * h[s] + b_bar[t * sb + s] * xt;
            acc += c[t * sc + s] * h[s];
        }
        y.push(acc);
    }
    Ok(y)
}

/// Global convolution kernel of a time-invariant scan:
/// `k[j] = Σ_n c[n]·a_bar[n]^j·b_bar[n]`. Only constant parameters are valid;
/// per-step (selective) coefficients are rejected.
pub fn lti_kernel<E: Element>(
    a_bar: &[E],
    b_bar: &[E],
    c: &[E],
    len: usize,
) -> Result<Vec<E>> {
    let n = a_bar.len();
    if b_bar.len() != n || c.len() != n {
        return Err(Error::Contract(format!(
            "lti_kernel: time-invariant parameters required (got lengths {}, {}, {})",
            n,
            b_bar.len(),
            c.len()
        )));
    }
    let mut pow = vec![E::one(); n];
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        let mut acc = E::zero();
        for s in 0..n {
            acc += c[s] * pow[s] * b_bar[s];
            pow[s] *= a_bar[s];
        }
        kernel.push(acc);
    }
    Ok(kernel)
}

/// Causal convolution `y[t] = Σ_{j<=t} k[j]·x[t−j]`.
pub fn causal_convolve<E: Element>(x: &[E], kernel: &[E]) -> Vec<E> {
    let mut y = vec![E::zero(); x.len()];
    for (t, yt) in y.iter_mut().enumerate() {
        let mut acc = E::zero();
        for (j, &kj) in kernel.iter().enumerate().take(t + 1) {
            acc += kj * x[t - j];
        }
        *yt = acc;
    }
    y
}

/// Forward pass of the selective scan (per-step discretization, diagonal `A`,
/// direct feed-through). Runtime is `O(L·D_inner·N)`. When `save_states` is
/// provided it receives the full state trajectory (needed for backward).
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_forward<E: Element>(
    a: &[E],
    delta: &[E],
    b: &[E],
    c: &[E],
    u: &[E],
    d_skip: &[E],
    len: usize,
    inner: usize,
    n_states: usize,
    mut save_states: Option<&mut Vec<E>>,
) -> Vec<E> {
    let mut h = vec![E::zero(); inner * n_states];
    let mut y = vec![E::zero(); len * inner];
    if let Some(states) = save_states.as_deref_mut() {
        states.clear();
        states.reserve(len * inner * n_states);
    }
    for t in 0..len {
        let b_row = &b[t * n_states..(t + 1) * n_states];
        let c_row = &c[t * n_states..(t + 1) * n_states];
        for d in 0..inner {
            let dt = delta[t * inner + d];
            let ut = u[t * inner + d];
            let h_row = &mut h[d * n_states..(d + 1) * n_states];
            let a_row = &a[d * n_states..(d + 1) * n_states];
            let mut acc = E::zero();
            for s in 0..n_states {
                let (a_bar, coef) = zoh_coef(a_row[s], dt);
                h_row[s] = a_bar * h_row[s] + coef * b_row[s] * ut;
                acc += c_row[s] * h_row[s];
            }
            y[t * inner + d] = acc + d_skip[d] * ut;
        }
        if let Some(states) = save_states.as_deref_mut() {
            states.extend_from_slice(&h);
        }
    }
    y
}

/// Records the selective scan on the tape. Inputs: diagonal `a [Di, N]`
/// (strictly negative for stability), per-step `delta [L, Di]` (positive),
/// `b [L, N]`, `c [L, N]`, driving signal `u [L, Di]`, feed-through
/// `d_skip [Di]`. The backward pass propagates through the recurrence in
/// reverse time.
pub fn selective_scan<'t, E: Element>(
    a: Var<'t, E>,
    delta: Var<'t, E>,
    b: Var<'t, E>,
    c: Var<'t, E>,
    u: Var<'t, E>,
    d_skip: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let tape = a.tape;
    let sa = tape.shape_of(a);
    let sd = tape.shape_of(delta);
    let sb = tape.shape_of(b);
    let sc = tape.shape_of(c);
    let su = tape.shape_of(u);
    let ss = tape.shape_of(d_skip);
    if sa.len() != 2 || su.len() != 2 || sa[0] != su[1] {
        return Err(Error::Shape(format!("selective_scan: a {sa:?} vs u {su:?}")));
    }
    let (len, inner, n_states) = (su[0], su[1], sa[1]);
    if sd != [len, inner] || sb != [len, n_states] || sc != [len, n_states] || ss != [inner] {
        return Err(Error::Shape(format!(
            "selective_scan: delta {sd:?}, b {sb:?}, c {sc:?}, d_skip {ss:?} \
             inconsistent with L={len}, D_inner={inner}, N={n_states}"
        )));
    }
    let ids = [a.id, delta.id, b.id, c.id, u.id, d_skip.id];
    let mut states = Vec::new();
    let value = tape.with_values(&ids, |vs| {
        selective_scan_forward(
            vs[0], vs[1], vs[2], vs[3], vs[4], vs[5], len, inner, n_states,
            Some(&mut states),
        )
    });
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(String::from(
            "selective_scan: non-finite state encountered",
        )));
    }
    let guard = E::from_f64(A_SINGULARITY_GUARD);
    Ok(tape.push_op(
        "selective_scan",
        vec![len, inner],
        value,
        ids.to_vec(),
        Box::new(move |args| {
            let (a, delta, b, c, u, d_skip) = (
                args.inputs[0],
                args.inputs[1],
                args.inputs[2],
                args.inputs[3],
                args.inputs[4],
                args.inputs[5],
            );
            let dy = args.upstream;
            let mut da = vec![E::zero(); inner * n_states];
            let mut ddelta = vec![E::zero(); len * inner];
            let mut db = vec![E::zero(); len * n_states];
            let mut dc = vec![E::zero(); len * n_states];
            let mut du = vec![E::zero(); len * inner];
            let mut dd_skip = vec![E::zero(); inner];
            // dL/dh for the step currently being processed, per (d, n).
            let mut dh = vec![E::zero(); inner * n_states];
            let two = E::from_f64(2.0);
            for t in (0..len).rev() {
                let b_row = &b[t * n_states..(t + 1) * n_states];
                let c_row = &c[t * n_states..(t + 1) * n_states];
                let h_now = &states[t * inner * n_states..(t + 1) * inner * n_states];
                let h_prev = if t > 0 {
                    Some(&states[(t - 1) * inner * n_states..t * inner * n_states])
                } else {
                    None
                };
                for d in 0..inner {
                    let dt = delta[t * inner + d];
                    let ut = u[t * inner + d];
                    let dy_td = dy[t * inner + d];
                    dd_skip[d] += dy_td * ut;
                    let mut du_acc = d_skip[d] * dy_td;
                    let mut ddt_acc = E::zero();
                    for s in 0..n_states {
                        let idx = d * n_states + s;
                        let a_ds = a[idx];
                        let a_bar = (dt * a_ds).exp();
                        let (coef, dcoef_ddt, dcoef_da) = if a_ds.abs() >= guard {
                            (
                                (a_bar - E::one()) / a_ds,
                                a_bar,
                                (dt * a_bar * a_ds - a_bar + E::one()) / (a_ds * a_ds),
                            )
                        } else {
                            (
                                dt * (E::one() + dt * a_ds / two),
                                E::one() + dt * a_ds,
                                dt * dt / two,
                            )
                        };
                        let h_t = h_now[idx];
                        let h_p = h_prev.map_or(E::zero(), |hp| hp[idx]);
                        dc[t * n_states + s] += dy_td * h_t;
                        let dh_cur = dh[idx] + c_row[s] * dy_td;
                        let d_a_bar = dh_cur * h_p;
                        let d_bb = dh_cur * ut;
                        du_acc += dh_cur * coef * b_row[s];
                        db[t * n_states + s] += d_bb * coef;
                        let d_coef = d_bb * b_row[s];
                        ddt_acc += d_a_bar * a_ds * a_bar + d_coef * dcoef_ddt;
                        da[idx] += d_a_bar * dt * a_bar + d_coef * dcoef_da;
                        dh[idx] = dh_cur * a_bar;
                    }
                    du[t * inner + d] += du_acc;
                    ddelta[t * inner + d] += ddt_acc;
                }
            }
            vec![da, ddelta, db, dc, du, dd_skip]
        }),
    ))
}

// ── Mamba block ──────────────────────────────────────────────────────────────

/// Shape parameters of one Mamba block.
#[derive(Debug, Clone, Copy)]
pub struct MambaDims {
    pub model_dim: usize,
    pub inner_dim: usize,
    pub state_dim: usize,
    pub conv_width: usize,
}

/// Registers all tensors of one Mamba block under `prefix`.
///
/// Initialization follows common selective-SSM practice: `a_log[d, s] =
/// ln(s + 1)` (so `A = −(s+1)` is strictly negative), unit feed-through, and
/// a `dt` bias chosen so the initial step sizes land in `[1e-3, 1e-1]`.
pub fn init_mamba<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    dims: &MambaDims,
    rng: &mut Rng,
) -> Result<()> {
    let (d, di, n, k) = (dims.model_dim, dims.inner_dim, dims.state_dim, dims.conv_width);
    store.insert(
        &format!("{prefix}.in_proj"),
        glorot(rng, vec![d, 2 * di], d, 2 * di),
    )?;
    let conv_bound = (1.0 / k as f64).sqrt();
    store.insert(
        &format!("{prefix}.conv.kernel"),
        uniform_init(rng, vec![k, di], conv_bound),
    )?;
    store.insert(
        &format!("{prefix}.conv.bias"),
        uniform_init(rng, vec![di], conv_bound),
    )?;
    store.insert(
        &format!("{prefix}.a_log"),
        Tensor::from_fn(vec![di, n], |i| E::from_f64(((i % n + 1) as f64).ln())),
    )?;
    store.insert(&format!("{prefix}.d_skip"), Tensor::filled(vec![di], E::one()))?;
    store.insert(
        &format!("{prefix}.dt.weight"),
        glorot(rng, vec![di, di], di, di),
    )?;
    let dt_bias = Tensor::from_fn(vec![di], |_| {
        let log_lo = (1e-3f64).ln();
        let log_hi = (1e-1f64).ln();
        let target = rng::uniform(rng, log_lo, log_hi).exp();
        // softplus^{-1}(target)
        E::from_f64((target.exp() - 1.0).ln())
    });
    store.insert(&format!("{prefix}.dt.bias"), dt_bias)?;
    store.insert(&format!("{prefix}.b_proj"), glorot(rng, vec![di, n], di, n))?;
    store.insert(&format!("{prefix}.c_proj"), glorot(rng, vec![di, n], di, n))?;
    store.insert(
        &format!("{prefix}.out_proj"),
        glorot(rng, vec![di, d], di, d),
    )?;
    Ok(())
}

/// Tape-bound parameters of one Mamba block.
pub struct MambaVars<'t, E: Element> {
    pub in_proj: Var<'t, E>,
    pub conv_kernel: Var<'t, E>,
    pub conv_bias: Var<'t, E>,
    pub a_log: Var<'t, E>,
    pub d_skip: Var<'t, E>,
    pub dt_weight: Var<'t, E>,
    pub dt_bias: Var<'t, E>,
    pub b_proj: Var<'t, E>,
    pub c_proj: Var<'t, E>,
    pub out_proj: Var<'t, E>,
}

impl<'t, E: Element> MambaVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>, prefix: &str) -> Result<Self> {
        Ok(Self {
            in_proj: binder.leaf(&format!("{prefix}.in_proj"))?,
            conv_kernel: binder.leaf(&format!("{prefix}.conv.kernel"))?,
            conv_bias: binder.leaf(&format!("{prefix}.conv.bias"))?,
            a_log: binder.leaf(&format!("{prefix}.a_log"))?,
            d_skip: binder.leaf(&format!("{prefix}.d_skip"))?,
            dt_weight: binder.leaf(&format!("{prefix}.dt.weight"))?,
            dt_bias: binder.leaf(&format!("{prefix}.dt.bias"))?,
            b_proj: binder.leaf(&format!("{prefix}.b_proj"))?,
            c_proj: binder.leaf(&format!("{prefix}.c_proj"))?,
            out_proj: binder.leaf(&format!("{prefix}.out_proj"))?,
        })
    }
}

/// One Mamba block: project into value and gate branches, causal depthwise
/// conv + SiLU on the value branch, per-step `Δ/B/C` from it, the selective
/// scan, SiLU gate multiply, output projection. Shape `[L, D] -> [L, D]`.
pub fn mamba_block<'t, E: Element>(
    vars: &MambaVars<'t, E>,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let tape = x.tape;
    let proj_shape = tape.shape_of(vars.in_proj);
    let inner = proj_shape[1] / 2;
    let both = x.matmul(vars.in_proj)?;
    let value_branch = both.narrow_cols(0, inner)?;
    let gate_branch = both.narrow_cols(inner, inner)?;
    let v = value_branch
        .depthwise_conv1d_causal(vars.conv_kernel, vars.conv_bias)?
        .silu();
    let delta = v.matmul(vars.dt_weight)?.add_row(vars.dt_bias)?.softplus();
    let b = v.matmul(vars.b_proj)?;
    let c = v.matmul(vars.c_proj)?;
    let a = vars.a_log.exp().neg();
    let scanned = selective_scan(a, delta, b, c, v, vars.d_skip)?;
    scanned.mul(gate_branch.silu())?.matmul(vars.out_proj)
}

/// Bidirectional pair of Mamba blocks merged by elementwise sum.
pub struct BiMambaVars<'t, E: Element> {
    pub fwd: MambaVars<'t, E>,
    pub bwd: MambaVars<'t, E>,
}

pub fn init_bi_mamba<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    dims: &MambaDims,
    rng: &mut Rng,
) -> Result<()> {
    init_mamba(store, &format!("{prefix}.fwd"), dims, rng)?;
    init_mamba(store, &format!("{prefix}.bwd"), dims, rng)
}

impl<'t, E: Element> BiMambaVars<'t, E> {
    pub fn bind(binder: &mut Binder<'_, 't, E>, prefix: &str) -> Result<Self> {
        Ok(Self {
            fwd: MambaVars::bind(binder, &format!("{prefix}.fwd"))?,
            bwd: MambaVars::bind(binder, &format!("{prefix}.bwd"))?,
        })
    }
}

/// `mamba_fwd(x) + reverse(mamba_bwd(reverse(x)))`.
pub fn bi_mamba<'t, E: Element>(
    vars: &BiMambaVars<'t, E>,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let forward = mamba_block(&vars.fwd, x)?;
    let backward = mamba_block(&vars.bwd, x.reverse_time())?.reverse_time();
    forward.add(backward)
}
