//! Named parameter store with deterministic (lexicographic) iteration order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods cover std; Float is needed for no_std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Map from unique names to parameter tensors (`requires_grad = true`).
/// Iteration is always lexicographic, so checkpoint layout, Adam state and
/// gradient transfer all agree on one order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<E: Element = f32> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.map.insert(String::from(name), tensor.param());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar parameter count across all tensors.
    pub fn total_elements(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast::<F>())).collect(),
        }
    }

    /// Clears all gradient buffers.
    pub fn zero_grads(&mut self) {
        for t in self.map.values_mut() {
            t.grad = None;
        }
    }

    /// Gradients by name; errors if any parameter is missing one.
    pub fn grads(&self) -> Result<BTreeMap<String, Vec<E>>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.map {
            let g = t
                .grad
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("parameter '{name}' has no gradient")))?;
            out.insert(name.clone(), g.clone());
        }
        Ok(out)
    }
}

/// Creates tape leaves for store parameters and remembers the name → node
/// mapping so gradients can be read back after `backward`.
pub struct Binder<'a, 't, E: Element> {
    tape: &'t crate::autograd::Tape<E>,
    store: &'a ParamStore<E>,
    leaves: BTreeMap<String, crate::autograd::Var<'t, E>>,
}

impl<'a, 't, E: Element> Binder<'a, 't, E> {
    pub fn new(tape: &'t crate::autograd::Tape<E>, store: &'a ParamStore<E>) -> Self {
        Self { tape, store, leaves: BTreeMap::new() }
    }

    pub fn leaf(&mut self, name: &str) -> Result<crate::autograd::Var<'t, E>> {
        let tensor = self.store.get(name)?;
        let var = self.tape.leaf(tensor);
        self.leaves.insert(String::from(name), var);
        Ok(var)
    }

    pub fn leaves(&self) -> &BTreeMap<String, crate::autograd::Var<'t, E>> {
        &self.leaves
    }

    pub fn into_leaves(self) -> BTreeMap<String, crate::autograd::Var<'t, E>> {
        self.leaves
    }
}

/// Copies gradients from a finished backward pass into `store`, accumulating
/// onto any existing buffers.
pub fn write_grads<E: Element>(
    leaves: &BTreeMap<String, crate::autograd::Var<'_, E>>,
    grads: &crate::autograd::Gradients<E>,
    store: &mut ParamStore<E>,
) -> Result<()> {
    for (name, var) in leaves {
        let g = grads
            .get(*var)
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' received no gradient")))?;
        let tensor = store.get_mut(name)?;
        match &mut tensor.grad {
            Some(acc) => {
                for (a, &c) in acc.iter_mut().zip(g) {
                    *a += c;
                }
            }
            slot => *slot = Some(g.to_vec()),
        }
    }
    Ok(())
}

/// Glorot-uniform initialization.
pub(crate) fn glorot_init<E: Element>(
    rng: &mut crate::rng::Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<E> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_init(rng, shape, bound)
}

pub(crate) fn uniform_init<E: Element>(
    rng: &mut crate::rng::Rng,
    shape: Vec<usize>,
    bound: f64,
) -> Tensor<E> {
    Tensor::from_fn(shape, |_| E::from_f64(crate::rng::uniform(rng, -bound, bound)))
}
