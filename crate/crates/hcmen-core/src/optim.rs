//! Adam with bias correction, stateful per parameter tensor.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Element;

pub struct Adam<E: Element = f32> {
    pub lr: E,
    pub beta1: E,
    pub beta2: E,
    pub eps: E,
    step: u64,
    first_moment: BTreeMap<String, Vec<E>>,
    second_moment: BTreeMap<String, Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: E) -> Self {
        Self {
            lr,
            beta1: E::from_f64(0.9),
            beta2: E::from_f64(0.999),
            eps: E::from_f64(1e-8),
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the store; each must carry a
    /// populated gradient.
    pub fn step(&mut self, params: &mut ParamStore<E>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = E::one() - self.beta1.powi(t);
        let bc2 = E::one() - self.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            let n = tensor.numel();
            let grad = tensor
                .grad
                .take()
                .ok_or_else(|| Error::Contract(format!("adam: parameter '{name}' has no gradient")))?;
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![E::zero(); n]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![E::zero(); n]);
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (E::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (E::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = store_with(&[1.0, -2.0, 3.0]);
        let mut adam = Adam::new(0.1);
        store.get_mut("p").unwrap().grad = Some(vec![0.0; 3]);
        adam.step(&mut store).unwrap();
        assert_eq!(store.get("p").unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = store_with(&[0.0, 0.0]);
        let mut adam = Adam::new(0.05);
        store.get_mut("p").unwrap().grad = Some(vec![3.0, -0.2]);
        adam.step(&mut store).unwrap();
        let p = store.get("p").unwrap().data();
        // bias-corrected first step ≈ −lr·sign(g)
        assert!((p[0] + 0.05).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - 0.05).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = store_with(&[1.0]);
        let mut adam = Adam::new(0.1);
        assert!(adam.step(&mut store).is_err());
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = |θ|², grad = 2θ; 500 steps at lr 0.05 reach |θ| < 1e-3
        let mut store = store_with(&[2.0, -1.5, 0.7, 3.0]);
        let mut adam = Adam::new(0.05);
        for _ in 0..500 {
            let grad: Vec<f64> = store.get("p").unwrap().data().iter().map(|v| 2.0 * v).collect();
            store.get_mut("p").unwrap().grad = Some(grad);
            adam.step(&mut store).unwrap();
        }
        let norm: f64 = store
            .get("p")
            .unwrap()
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-3, "final |θ| = {norm}");
    }
}
