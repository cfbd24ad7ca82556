//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records every forward operation into an arena of nodes; calling
//! [`Tape::backward`] replays the arena in reverse, accumulating gradients
//! (`+=` on reuse). Nodes hold plain buffers, so identical inputs replay to
//! bit-identical outputs and gradients.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;


use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Inputs handed to a node's backward closure.
pub(crate) struct VjpArgs<'a, E: Element> {
    pub upstream: &'a [E],
    pub inputs: Vec<&'a [E]>,
    pub output: &'a [E],
}

pub(crate) type VjpFn<E> = Box<dyn Fn(&VjpArgs<'_, E>) -> Vec<Vec<E>>>;

struct Node<E: Element> {
    op: &'static str,
    shape: Vec<usize>,
    value: Vec<E>,
    parents: Vec<usize>,
    vjp: Option<VjpFn<E>>,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Tape<E: Element = f32> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Handle to one node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, E: Element = f32> {
    pub(crate) tape: &'t Tape<E>,
    pub(crate) id: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<E: Element = f32> {
    by_id: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var<'_, E>) -> Option<&[E]> {
        self.by_id.get(var.id).and_then(|g| g.as_deref())
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records an input that never receives gradient.
    pub fn constant(&self, t: &Tensor<E>) -> Var<'_, E> {
        let id = self.push(Node {
            op: "constant",
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            parents: vec![],
            vjp: None,
            needs_grad: false,
        });
        Var { tape: self, id }
    }

    /// Records an input; participates in gradients iff `t.requires_grad`.
    pub fn leaf(&self, t: &Tensor<E>) -> Var<'_, E> {
        let id = self.push(Node {
            op: "leaf",
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            parents: vec![],
            vjp: None,
            needs_grad: t.requires_grad,
        });
        Var { tape: self, id }
    }

    pub fn value(&self, v: Var<'_, E>) -> Tensor<E> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node invariant")
    }

    pub fn shape_of(&self, v: Var<'_, E>) -> Vec<usize> {
        self.nodes.borrow()[v.id].shape.clone()
    }

    /// Scalar value of a 1-element node.
    pub fn scalar_value(&self, v: Var<'_, E>) -> E {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.id].value.len(), 1);
        nodes[v.id].value[0]
    }

    /// First node holding a non-finite value, as (index, op, shape).
    pub fn first_non_finite(&self) -> Option<(usize, &'static str, Vec<usize>)> {
        let nodes = self.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            if n.value.iter().any(|v| !v.is_finite()) {
                return Some((i, n.op, n.shape.clone()));
            }
        }
        None
    }

    fn push(&self, node: Node<E>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn push_op(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<E>,
        parents: Vec<usize>,
        vjp: VjpFn<E>,
    ) -> Var<'_, E> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let needs_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].needs_grad)
        };
        let id = self.push(Node {
            op,
            shape,
            value,
            parents,
            vjp: Some(vjp),
            needs_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn with_values<R>(&self, ids: &[usize], f: impl FnOnce(&[&[E]]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let views: Vec<&[E]> = ids.iter().map(|&i| nodes[i].value.as_slice()).collect();
        f(&views)
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every node
    /// reachable from `loss` that needs one.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![E::one()]);

        for id in (0..=loss.id).rev() {
            let Some(upstream) = grads[id].take() else { continue };
            let node = &nodes[id];
            let keep = node.needs_grad;
            if let Some(vjp) = &node.vjp {
                let inputs: Vec<&[E]> =
                    node.parents.iter().map(|&p| nodes[p].value.as_slice()).collect();
                let args = VjpArgs { upstream: &upstream, inputs, output: &node.value };
                let contribs = vjp(&args);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (&parent, contrib) in node.parents.iter().zip(contribs) {
                    if !nodes[parent].needs_grad {
                        continue;
                    }
                    debug_assert_eq!(contrib.len(), nodes[parent].value.len());
                    match &mut grads[parent] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += *c;
                            }
                        }
                        slot => *slot = Some(contrib),
                    }
                }
            }
            if keep {
                grads[id] = Some(upstream);
            }
        }
        Ok(Gradients { by_id: grads })
    }
}

fn same_shape<E: Element>(op: &str, a: &Var<'_, E>, b: &Var<'_, E>) -> Result<()> {
    let (sa, sb) = (a.tape.shape_of(*a), b.tape.shape_of(*b));
    if sa != sb {
        return Err(Error::Shape(format!("{op}: shapes {sa:?} and {sb:?} differ")));
    }
    Ok(())
}

// ── dense kernels shared by forward passes and VJPs ─────────────────────────

pub(crate) fn matmul_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut y = vec![E::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == E::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let yrow = &mut y[i * n..(i + 1) * n];
            for j in 0..n {
                yrow[j] += ail * brow[j];
            }
        }
    }
    y
}

/// `a [m,p] · b [q,p]ᵀ -> [m,q]`
fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, p: usize, q: usize) -> Vec<E> {
    let mut y = vec![E::zero(); m * q];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..q {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = E::zero();
            for l in 0..p {
                acc += arow[l] * brow[l];
            }
            y[i * q + j] = acc;
        }
    }
    y
}

/// `a [m,k]ᵀ · b [m,n] -> [k,n]`
fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut y = vec![E::zero(); k * n];
    for l in 0..m {
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..k {
            let ali = a[l * k + i];
            if ali == E::zero() {
                continue;
            }
            let yrow = &mut y[i * n..(i + 1) * n];
            for j in 0..n {
                yrow[j] += ali * brow[j];
            }
        }
    }
    y
}

pub(crate) fn stable_sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

const EXP_CLAMP: f64 = 30.0;

// ── operations ───────────────────────────────────────────────────────────────

impl<'t, E: Element> Var<'t, E> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(E) -> E,
        df: impl Fn(E, E) -> E + 'static,
    ) -> Var<'t, E> {
        let shape = self.tape.shape_of(self);
        let value: Vec<E> = self
            .tape
            .with_values(&[self.id], |vs| vs[0].iter().map(|&x| f(x)).collect());
        self.tape.push_op(
            op,
            shape,
            value,
            vec![self.id],
            Box::new(move |args| {
                let x = args.inputs[0];
                let y = args.output;
                vec![args
                    .upstream
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&u, (&xi, &yi))| u * df(xi, yi))
                    .collect()]
            }),
        )
    }

    pub fn add(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("add", &self, &other)?;
        let shape = self.tape.shape_of(self);
        let value = self.tape.with_values(&[self.id, other.id], |vs| {
            vs[0].iter().zip(vs[1]).map(|(&a, &b)| a + b).collect()
        });
        Ok(self.tape.push_op(
            "add",
            shape,
            value,
            vec![self.id, other.id],
            Box::new(|args| vec![args.upstream.to_vec(), args.upstream.to_vec()]),
        ))
    }

    pub fn sub(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("sub", &self, &other)?;
        let shape = self.tape.shape_of(self);
        let value = self.tape.with_values(&[self.id, other.id], |vs| {
            vs[0].iter().zip(vs[1]).map(|(&a, &b)| a - b).collect()
        });
        Ok(self.tape.push_op(
            "sub",
            shape,
            value,
            vec![self.id, other.id],
            Box::new(|args| {
                vec![
                    args.upstream.to_vec(),
                    args.upstream.iter().map(|&u| -u).collect(),
                ]
            }),
        ))
    }

    pub fn mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("mul", &self, &other)?;
        let shape = self.tape.shape_of(self);
        let value = self.tape.with_values(&[self.id, other.id], |vs| {
            vs[0].iter().zip(vs[1]).map(|(&a, &b)| a * b).collect()
        });
        Ok(self.tape.push_op(
            "mul",
            shape,
            value,
            vec![self.id, other.id],
            Box::new(|args| {
                let (a, b) = (args.inputs[0], args.inputs[1]);
                vec![
                    args.upstream.iter().zip(b).map(|(&u, &bv)| u * bv).collect(),
                    args.upstream.iter().zip(a).map(|(&u, &av)| u * av).collect(),
                ]
            }),
        ))
    }

    pub fn scale(self, c: E) -> Var<'t, E> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Var<'t, E> {
        self.scale(-E::one())
    }

    pub fn square(self) -> Var<'t, E> {
        self.unary("square", |x| x * x, |x, _| E::from_f64(2.0) * x)
    }

    /// Standard matrix product `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let sa = self.tape.shape_of(self);
        let sb = self.tape.shape_of(other);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: incompatible shapes {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = self
            .tape
            .with_values(&[self.id, other.id], |vs| matmul_nn(vs[0], vs[1], m, k, n));
        Ok(self.tape.push_op(
            "matmul",
            vec![m, n],
            value,
            vec![self.id, other.id],
            Box::new(move |args| {
                let (a, b) = (args.inputs[0], args.inputs[1]);
                let da = matmul_nt(args.upstream, b, m, n, k);
                let db = matmul_tn(a, args.upstream, m, k, n);
                vec![da, db]
            }),
        ))
    }

    /// Adds a `[D]` bias to every row of a `[L, D]` tensor.
    pub fn add_row(self, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        let sx = self.tape.shape_of(self);
        let sb = self.tape.shape_of(bias);
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::Shape(format!("add_row: {sx:?} with bias {sb:?}")));
        }
        let (rows, d) = (sx[0], sx[1]);
        let value = self.tape.with_values(&[self.id, bias.id], |vs| {
            let mut out = vs[0].to_vec();
            for r in 0..rows {
                for c in 0..d {
                    out[r * d + c] += vs[1][c];
                }
            }
            out
        });
        Ok(self.tape.push_op(
            "add_row",
            sx,
            value,
            vec![self.id, bias.id],
            Box::new(move |args| {
                let mut db = vec![E::zero(); d];
                for r in 0..rows {
                    for c in 0..d {
                        db[c] += args.upstream[r * d + c];
                    }
                }
                vec![args.upstream.to_vec(), db]
            }),
        ))
    }

    /// View with a new shape (same element count, same order).
    pub fn reshape(self, new_shape: &[usize]) -> Result<Var<'t, E>> {
        let old = self.tape.shape_of(self);
        let n_old: usize = old.iter().product();
        let n_new: usize = new_shape.iter().product();
        if n_old != n_new {
            return Err(Error::Shape(format!("reshape: {old:?} -> {new_shape:?}")));
        }
        let value = self.tape.with_values(&[self.id], |vs| vs[0].to_vec());
        Ok(self.tape.push_op(
            "reshape",
            new_shape.to_vec(),
            value,
            vec![self.id],
            Box::new(|args| vec![args.upstream.to_vec()]),
        ))
    }

    /// Elementwise exp with the argument clamped to ±30 (overflow guard).
    pub fn exp(self) -> Var<'t, E> {
        let c = E::from_f64(EXP_CLAMP);
        self.unary(
            "exp",
            move |x| x.max(-c).min(c).exp(),
            move |x, y| if x.abs() <= c { y } else { E::zero() },
        )
    }

    pub fn softplus(self) -> Var<'t, E> {
        self.unary(
            "softplus",
            |x| x.max(E::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| stable_sigmoid(x),
        )
    }

    pub fn sigmoid(self) -> Var<'t, E> {
        self.unary("sigmoid", stable_sigmoid, |_, y| y * (E::one() - y))
    }

    pub fn silu(self) -> Var<'t, E> {
        self.unary(
            "silu",
            |x| x * stable_sigmoid(x),
            |x, _| {
                let s = stable_sigmoid(x);
                s * (E::one() + x * (E::one() - s))
            },
        )
    }

    pub fn tanh(self) -> Var<'t, E> {
        self.unary("tanh", |x| x.tanh(), |_, y| E::one() - y * y)
    }

    /// Row-wise softmax with max subtraction; rows sum to one.
    pub fn softmax(self) -> Var<'t, E> {
        let shape = self.tape.shape_of(self);
        let d = *shape.last().expect("softmax needs at least one axis");
        let rows = shape.iter().product::<usize>() / d;
        let value = self.tape.with_values(&[self.id], |vs| {
            let x = vs[0];
            let mut out = vec![E::zero(); x.len()];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
                let mut sum = E::zero();
                for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (v - mx).exp();
                    sum += *o;
                }
                for o in &mut out[r * d..(r + 1) * d] {
                    *o /= sum;
                }
            }
            out
        });
        self.tape.push_op(
            "softmax",
            shape,
            value,
            vec![self.id],
            Box::new(move |args| {
                let y = args.output;
                let mut dx = vec![E::zero(); y.len()];
                for r in 0..rows {
                    let yr = &y[r * d..(r + 1) * d];
                    let ur = &args.upstream[r * d..(r + 1) * d];
                    let dot = yr.iter().zip(ur).fold(E::zero(), |acc, (&yv, &uv)| acc + yv * uv);
                    for ((o, &yv), &uv) in dx[r * d..(r + 1) * d].iter_mut().zip(yr).zip(ur) {
                        *o = yv * (uv - dot);
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Arithmetic mean along one axis of a `[R, C]` tensor.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, E>> {
        let shape = self.tape.shape_of(self);
        if shape.len() != 2 || axis > 1 {
            return Err(Error::Shape(format!("mean_axis: shape {shape:?}, axis {axis}")));
        }
        let (r, c) = (shape[0], shape[1]);
        if shape[axis] == 0 {
            return Err(Error::Shape(format!("mean_axis: empty axis {axis}")));
        }
        let value = self.tape.with_values(&[self.id], |vs| {
            let x = vs[0];
            if axis == 0 {
                let inv = E::one() / E::from_f64(r as f64);
                let mut out = vec![E::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += x[i * c + j];
                    }
                }
                out.iter_mut().for_each(|v| *v *= inv);
                out
            } else {
                let inv = E::one() / E::from_f64(c as f64);
                (0..r)
                    .map(|i| {
                        x[i * c..(i + 1) * c].iter().fold(E::zero(), |a, &v| a + v) * inv
                    })
                    .collect()
            }
        });
        let out_shape = if axis == 0 { vec![c] } else { vec![r] };
        Ok(self.tape.push_op(
            "mean_axis",
            out_shape,
            value,
            vec![self.id],
            Box::new(move |args| {
                let mut dx = vec![E::zero(); r * c];
                if axis == 0 {
                    let inv = E::one() / E::from_f64(r as f64);
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = args.upstream[j] * inv;
                        }
                    }
                } else {
                    let inv = E::one() / E::from_f64(c as f64);
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = args.upstream[i] * inv;
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    pub fn mean_all(self) -> Var<'t, E> {
        let n = self.tape.shape_of(self).iter().product::<usize>();
        let inv = E::one() / E::from_f64(n as f64);
        let value = self.tape.with_values(&[self.id], |vs| {
            vec![vs[0].iter().fold(E::zero(), |a, &v| a + v) * inv]
        });
        self.tape.push_op(
            "mean_all",
            vec![1],
            value,
            vec![self.id],
            Box::new(move |args| vec![vec![args.upstream[0] * inv; n]]),
        )
    }

    pub fn sum_all(self) -> Var<'t, E> {
        let n = self.tape.shape_of(self).iter().product::<usize>();
        let value = self
            .tape
            .with_values(&[self.id], |vs| vec![vs[0].iter().fold(E::zero(), |a, &v| a + v)]);
        self.tape.push_op(
            "sum_all",
            vec![1],
            value,
            vec![self.id],
            Box::new(move |args| vec![vec![args.upstream[0]; n]]),
        )
    }

    /// Rows in reversed order; an involution.
    pub fn reverse_time(self) -> Var<'t, E> {
        let shape = self.tape.shape_of(self);
        let rows = if shape.len() < 2 { 1 } else { shape[0] };
        let d = shape.iter().product::<usize>() / rows.max(1);
        let value = self.tape.with_values(&[self.id], |vs| {
            let mut out = Vec::with_capacity(vs[0].len());
            for r in (0..rows).rev() {
                out.extend_from_slice(&vs[0][r * d..(r + 1) * d]);
            }
            out
        });
        self.tape.push_op(
            "reverse_time",
            shape,
            value,
            vec![self.id],
            Box::new(move |args| {
                let mut dx = Vec::with_capacity(args.upstream.len());
                for r in (0..rows).rev() {
                    dx.extend_from_slice(&args.upstream[r * d..(r + 1) * d]);
                }
                vec![dx]
            }),
        )
    }

    /// Column slice `[L, C] -> [L, len]` starting at `start`.
    pub fn narrow_cols(self, start: usize, len: usize) -> Result<Var<'t, E>> {
        let shape = self.tape.shape_of(self);
        if shape.len() != 2 || start + len > shape[1] {
            return Err(Error::Shape(format!(
                "narrow_cols: {shape:?} cols [{start}, {})",
                start + len
            )));
        }
        let (rows, c) = (shape[0], shape[1]);
        let value = self.tape.with_values(&[self.id], |vs| {
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&vs[0][r * c + start..r * c + start + len]);
            }
            out
        });
        Ok(self.tape.push_op(
            "narrow_cols",
            vec![rows, len],
            value,
            vec![self.id],
            Box::new(move |args| {
                let mut dx = vec![E::zero(); rows * c];
                for r in 0..rows {
                    dx[r * c + start..r * c + start + len]
                        .copy_from_slice(&args.upstream[r * len..(r + 1) * len]);
                }
                vec![dx]
            }),
        ))
    }

    /// Row-wise selection: row `r` comes from `self` where `mask[r]`, else
    /// from `other`. The mask is data, not a recorded input.
    pub fn select_rows(self, mask: &[bool], other: Var<'t, E>) -> Result<Var<'t, E>> {
        same_shape("select_rows", &self, &other)?;
        let shape = self.tape.shape_of(self);
        let rows = shape[0];
        if mask.len() != rows {
            return Err(Error::Shape(format!(
                "select_rows: mask length {} for {rows} rows",
                mask.len()
            )));
        }
        let d = shape.iter().product::<usize>() / rows;
        let mask: Vec<bool> = mask.to_vec();
        let value = self.tape.with_values(&[self.id, other.id], |vs| {
            let mut out = Vec::with_capacity(rows * d);
            for r in 0..rows {
                let src = if mask[r] { vs[0] } else { vs[1] };
                out.extend_from_slice(&src[r * d..(r + 1) * d]);
            }
            out
        });
        Ok(self.tape.push_op(
            "select_rows",
            shape,
            value,
            vec![self.id, other.id],
            Box::new(move |args| {
                let mut da = vec![E::zero(); rows * d];
                let mut db = vec![E::zero(); rows * d];
                for r in 0..rows {
                    let dst = if mask[r] { &mut da } else { &mut db };
                    dst[r * d..(r + 1) * d].copy_from_slice(&args.upstream[r * d..(r + 1) * d]);
                }
                vec![da, db]
            }),
        ))
    }
}

impl<'t, E: Element> Var<'t, E> {
    /// Depthwise 1D convolution with "same" zero padding; kernel `[K, D]`,
    /// bias `[D]`, odd `K`. Each channel is convolved independently.
    pub fn depthwise_conv1d(self, kernel: Var<'t, E>, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        let k = self.tape.shape_of(kernel);
        if k.is_empty() || k[0] % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise_conv1d: kernel width must be odd, got {:?}",
                k.first()
            )));
        }
        self.depthwise_conv1d_padded(kernel, bias, (k[0] - 1) / 2)
    }

    /// Depthwise 1D convolution with left padding `K - 1`: output at `t` sees
    /// only inputs at `t' <= t`.
    pub fn depthwise_conv1d_causal(self, kernel: Var<'t, E>, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        let k = self.tape.shape_of(kernel);
        if k.is_empty() || k[0] == 0 {
            return Err(Error::Config("depthwise_conv1d: empty kernel".into()));
        }
        self.depthwise_conv1d_padded(kernel, bias, k[0] - 1)
    }

    fn depthwise_conv1d_padded(
        self,
        kernel: Var<'t, E>,
        bias: Var<'t, E>,
        pad_left: usize,
    ) -> Result<Var<'t, E>> {
        let sx = self.tape.shape_of(self);
        let sk = self.tape.shape_of(kernel);
        let sb = self.tape.shape_of(bias);
        if sx.len() != 2 || sk.len() != 2 || sx[1] != sk[1] || sb != [sx[1]] {
            return Err(Error::Shape(format!(
                "depthwise_conv1d: x {sx:?}, kernel {sk:?}, bias {sb:?}"
            )));
        }
        let (l, d, kw) = (sx[0], sx[1], sk[0]);
        let value = self.tape.with_values(&[self.id, kernel.id, bias.id], |vs| {
            let (x, ker, b) = (vs[0], vs[1], vs[2]);
            let mut y = vec![E::zero(); l * d];
            for t in 0..l {
                for c in 0..d {
                    let mut acc = b[c];
                    for j in 0..kw {
                        let src = t as isize + j as isize - pad_left as isize;
                        if src >= 0 && (src as usize) < l {
                            acc += ker[j * d + c] * x[src as usize * d + c];
                        }
                    }
                    y[t * d + c] = acc;
                }
            }
            y
        });
        Ok(self.tape.push_op(
            "depthwise_conv1d",
            sx.clone(),
            value,
            vec![self.id, kernel.id, bias.id],
            Box::new(move |args| {
                let (x, ker) = (args.inputs[0], args.inputs[1]);
                let dy = args.upstream;
                let mut dx = vec![E::zero(); l * d];
                let mut dk = vec![E::zero(); kw * d];
                let mut db = vec![E::zero(); d];
                for t in 0..l {
                    for c in 0..d {
                        let u = dy[t * d + c];
                        db[c] += u;
                        for j in 0..kw {
                            let src = t as isize + j as isize - pad_left as isize;
                            if src >= 0 && (src as usize) < l {
                                let s = src as usize;
                                dx[s * d + c] += ker[j * d + c] * u;
                                dk[j * d + c] += x[s * d + c] * u;
                            }
                        }
                    }
                }
                vec![dx, dk, db]
            }),
        ))
    }

    /// Full 1D convolution over time mapping `D_in -> D_out` channels with
    /// "same" zero padding. Weight layout `[K, D_in, D_out]`, bias `[D_out]`.
    pub fn conv1d(self, weight: Var<'t, E>, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        let sx = self.tape.shape_of(self);
        let sw = self.tape.shape_of(weight);
        let sb = self.tape.shape_of(bias);
        if sx.len() != 2 || sw.len() != 3 || sx[1] != sw[1] || sb != [sw[2]] {
            return Err(Error::Config(format!(
                "conv1d: x {sx:?} incompatible with weight {sw:?} / bias {sb:?}"
            )));
        }
        if sw[0] % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d: kernel width must be odd, got {}",
                sw[0]
            )));
        }
        let (l, din, dout, kw) = (sx[0], sx[1], sw[2], sw[0]);
        let pad = (kw - 1) / 2;
        let value = self.tape.with_values(&[self.id, weight.id, bias.id], |vs| {
            let (x, w, b) = (vs[0], vs[1], vs[2]);
            let mut y = vec![E::zero(); l * dout];
            for t in 0..l {
                let yrow = &mut y[t * dout..(t + 1) * dout];
                yrow.copy_from_slice(b);
                for j in 0..kw {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src as usize >= l {
                        continue;
                    }
                    let xrow = &x[src as usize * din..(src as usize + 1) * din];
                    for (i, &xv) in xrow.iter().enumerate() {
                        if xv == E::zero() {
                            continue;
                        }
                        let wrow = &w[(j * din + i) * dout..(j * din + i + 1) * dout];
                        for o in 0..dout {
                            yrow[o] += xv * wrow[o];
                        }
                    }
                }
            }
            y
        });
        Ok(self.tape.push_op(
            "conv1d",
            vec![l, dout],
            value,
            vec![self.id, weight.id, bias.id],
            Box::new(move |args| {
                let (x, w) = (args.inputs[0], args.inputs[1]);
                let dy = args.upstream;
                let mut dx = vec![E::zero(); l * din];
                let mut dw = vec![E::zero(); kw * din * dout];
                let mut db = vec![E::zero(); dout];
                for t in 0..l {
                    let urow = &dy[t * dout..(t + 1) * dout];
                    for o in 0..dout {
                        db[o] += urow[o];
                    }
                    for j in 0..kw {
                        let src = t as isize + j as isize - pad as isize;
                        if src < 0 || src as usize >= l {
                            continue;
                        }
                        let s = src as usize;
                        for i in 0..din {
                            let xv = x[s * din + i];
                            let wrow = &w[(j * din + i) * dout..(j * din + i + 1) * dout];
                            let dwrow = &mut dw[(j * din + i) * dout..(j * din + i + 1) * dout];
                            let mut acc = E::zero();
                            for o in 0..dout {
                                acc += wrow[o] * urow[o];
                                dwrow[o] += xv * urow[o];
                            }
                            dx[s * din + i] += acc;
                        }
                    }
                }
                vec![dx, dw, db]
            }),
        ))
    }

    /// Layer normalization over the trailing axis, then affine scale/shift.
    pub fn layer_norm(self, gamma: Var<'t, E>, beta: Var<'t, E>, eps: E) -> Result<Var<'t, E>> {
        let sx = self.tape.shape_of(self);
        let d = *sx.last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::Shape("layer_norm: trailing axis is empty".into()));
        }
        if self.tape.shape_of(gamma) != [d] || self.tape.shape_of(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma/beta must be [{d}] for input {sx:?}"
            )));
        }
        if !(eps > E::zero()) {
            return Err(Error::Contract("layer_norm: eps must be > 0".into()));
        }
        let rows = sx.iter().product::<usize>() / d;
        let mut xhat = vec![E::zero(); rows * d];
        let mut inv_std = vec![E::zero(); rows];
        let value = self.tape.with_values(&[self.id, gamma.id, beta.id], |vs| {
            let (x, g, b) = (vs[0], vs[1], vs[2]);
            let inv_d = E::one() / E::from_f64(d as f64);
            let mut y = vec![E::zero(); rows * d];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().fold(E::zero(), |a, &v| a + v) * inv_d;
                let var = row
                    .iter()
                    .fold(E::zero(), |a, &v| a + (v - mean) * (v - mean))
                    * inv_d;
                let inv = E::one() / (var + eps).sqrt();
                inv_std[r] = inv;
                for c in 0..d {
                    let xh = (row[c] - mean) * inv;
                    xhat[r * d + c] = xh;
                    y[r * d + c] = g[c] * xh + b[c];
                }
            }
            y
        });
        Ok(self.tape.push_op(
            "layer_norm",
            sx,
            value,
            vec![self.id, gamma.id, beta.id],
            Box::new(move |args| {
                let g = args.inputs[1];
                let dy = args.upstream;
                let inv_d = E::one() / E::from_f64(d as f64);
                let mut dx = vec![E::zero(); rows * d];
                let mut dg = vec![E::zero(); d];
                let mut db = vec![E::zero(); d];
                for r in 0..rows {
                    let dyr = &dy[r * d..(r + 1) * d];
                    let xhr = &xhat[r * d..(r + 1) * d];
                    let mut mean_gdy = E::zero();
                    let mut mean_gdy_xh = E::zero();
                    for c in 0..d {
                        let gdy = g[c] * dyr[c];
                        mean_gdy += gdy;
                        mean_gdy_xh += gdy * xhr[c];
                        dg[c] += dyr[c] * xhr[c];
                        db[c] += dyr[c];
                    }
                    mean_gdy *= inv_d;
                    mean_gdy_xh *= inv_d;
                    for c in 0..d {
                        let gdy = g[c] * dyr[c];
                        dx[r * d + c] = inv_std[r] * (gdy - mean_gdy - xhr[c] * mean_gdy_xh);
                    }
                }
                vec![dx, dg, db]
            }),
        ))
    }
}

/// Stacks `n` scalar nodes into one `[n]` vector.
pub fn stack_scalars<'t, E: Element>(tape: &'t Tape<E>, vars: &[Var<'t, E>]) -> Result<Var<'t, E>> {
    if vars.is_empty() {
        return Err(Error::Shape("stack_scalars: empty input".into()));
    }
    for v in vars {
        if tape.shape_of(*v).iter().product::<usize>() != 1 {
            return Err(Error::Shape("stack_scalars: inputs must be scalars".into()));
        }
    }
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    let value = tape.with_values(&ids, |vs| vs.iter().map(|v| v[0]).collect());
    let n = vars.len();
    Ok(tape.push_op(
        "stack_scalars",
        vec![n],
        value,
        ids,
        Box::new(move |args| args.upstream.iter().map(|&u| vec![u]).collect()),
    ))
}

// ── finite-difference oracle ─────────────────────────────────────────────────

/// Coordinates whose analytic and numeric gradients are both below
/// `2e-6 · max(1, |f(θ)|)` are skipped: central differences in f64 carry
/// `|f|·ulp/(2·eps)` of roundoff, so gradients this small cannot be
/// distinguished from noise in relative terms. A zeroed gradient with a
/// resolvable true value is still caught (the numeric side would be large).
const FD_RESOLVABLE_FLOOR: f64 = 2e-6;

/// Maximum relative error between `analytic` gradients and central finite
/// differences of `f` over sampled coordinates:
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// Coordinates are sampled deterministically per tensor (all of them when a
/// tensor has at most `max_coords_per_tensor` elements).
pub fn finite_diff_check<E: Element>(
    f: &mut dyn FnMut(&ParamStore<E>) -> Result<E>,
    params: &ParamStore<E>,
    analytic: &alloc::collections::BTreeMap<alloc::string::String, Vec<E>>,
    eps: E,
    max_coords_per_tensor: usize,
    seed: u64,
) -> Result<E> {
    use crate::rng;
    if !(eps > E::zero()) {
        return Err(Error::Contract("finite_diff_check: eps must be > 0".into()));
    }
    let mut work = params.clone();
    let f_scale = f(&work)?.abs().max(E::one());
    let floor = E::from_f64(FD_RESOLVABLE_FLOOR) * f_scale;
    let mut max_rel = E::zero();
    let names: Vec<alloc::string::String> = params.names().cloned().collect();
    for (tensor_idx, name) in names.iter().enumerate() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for '{name}'")))?;
        let n = params.get(name)?.numel();
        let coords: Vec<usize> = if n <= max_coords_per_tensor {
            (0..n).collect()
        } else {
            let mut r = rng::seeded(rng::derive_seed(seed, tensor_idx as u64));
            let mut picked: Vec<usize> = (0..max_coords_per_tensor)
                .map(|_| (rng::uniform01(&mut r) * n as f64) as usize % n)
                .collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        };
        for &idx in &coords {
            let orig = work.get(name)?.data()[idx];
            work.get_mut(name)?.data_mut()[idx] = orig + eps;
            let f_plus = f(&work)?;
            work.get_mut(name)?.data_mut()[idx] = orig - eps;
            let f_minus = f(&work)?;
            work.get_mut(name)?.data_mut()[idx] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "finite_diff_check: non-finite objective at '{name}'[{idx}]"
                )));
            }
            let numeric = (f_plus - f_minus) / (eps + eps);
            let a = grad[idx];
            if a.abs() + numeric.abs() < floor {
                continue;
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + E::from_f64(1e-12));
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
