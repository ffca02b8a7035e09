use std::collections::BTreeMap;

use super::{Gradients, ParameterStore, Tensor};
use crate::error::{Error, Result};

pub trait Optimizer {
    /// Updates every trainable canonical entry of `store` once.
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()>;

    fn learning_rate(&self) -> f64;
}

fn trainable(store: &ParameterStore) -> Vec<String> {
    store
        .names()
        .filter(|n| store.requires_grad(n).unwrap_or(false))
        .map(str::to_string)
        .collect()
}

fn grad_for<'a>(grads: &'a Gradients, name: &str, param: &Tensor) -> Result<&'a Tensor> {
    let g = grads
        .get(name)
        .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
    if g.shape() != param.shape() {
        return Err(Error::ParameterShape {
            name: name.to_string(),
            expected: param.shape().to_vec(),
            found: g.shape().to_vec(),
        });
    }
    Ok(g)
}

/// Adam with bias correction. Moments are kept per canonical name, so a
/// weight shared across positions is updated exactly once per step with
/// its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        let names = trainable(store);
        // validate before mutating anything
        for name in &names {
            grad_for(grads, name, store.get(name)?)?;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for name in names {
            let g = grads.get(&name).expect("validated").data();
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let w = store.get_mut(&name)?.data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

/// Adadelta (ρ = 0.95, ε = 1e-6), the optimizer the DocumentQA
/// configurations pair with a learning rate of 1.0.
#[derive(Debug, Clone)]
pub struct Adadelta {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    sq_grad: BTreeMap<String, Vec<f64>>,
    sq_delta: BTreeMap<String, Vec<f64>>,
}

impl Adadelta {
    pub fn new(lr: f64) -> Self {
        Adadelta {
            lr,
            rho: 0.95,
            eps: 1e-6,
            sq_grad: BTreeMap::new(),
            sq_delta: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adadelta {
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        let names = trainable(store);
        for name in &names {
            grad_for(grads, name, store.get(name)?)?;
        }
        for name in names {
            let g = grads.get(&name).expect("validated").data();
            let n = g.len();
            let eg = self.sq_grad.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let ed = self.sq_delta.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let w = store.get_mut(&name)?.data_mut();
            for i in 0..n {
                eg[i] = self.rho * eg[i] + (1.0 - self.rho) * g[i] * g[i];
                let delta = -((ed[i] + self.eps).sqrt() / (eg[i] + self.eps).sqrt()) * g[i];
                ed[i] = self.rho * ed[i] + (1.0 - self.rho) * delta * delta;
                w[i] += self.lr * delta;
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

/// `shadow ← decay·shadow + (1 − decay)·live` for every canonical entry.
pub fn ema_update(shadow: &mut ParameterStore, live: &ParameterStore, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid("ema_update", format!("decay {decay} outside [0, 1]")));
    }
    let shadow_names: Vec<String> = shadow.names().map(str::to_string).collect();
    let live_names: Vec<&str> = live.names().collect();
    if shadow_names.len() != live_names.len() {
        let missing = live_names
            .iter()
            .find(|n| !shadow.contains(n))
            .map(|s| s.to_string())
            .or_else(|| shadow_names.iter().find(|n| !live.contains(n)).cloned())
            .unwrap_or_default();
        return Err(Error::StoreMismatch(missing));
    }
    for name in shadow_names {
        let l = live.get(&name).map_err(|_| Error::StoreMismatch(name.clone()))?;
        let s = shadow.get_mut(&name)?;
        if s.shape() != l.shape() {
            return Err(Error::StoreMismatch(name));
        }
        for (x, y) in s.data_mut().iter_mut().zip(l.data()) {
            *x = decay * *x + (1.0 - decay) * y;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(name: &str, v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(name, Tensor::column(vec![v])).unwrap();
        s
    }

    fn grad(name: &str, v: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert(name, Tensor::column(vec![v]));
        g
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = single("w", 0.0);
        Adam::new(0.01).step(&mut s, &grad("w", 0.5)).unwrap();
        assert_abs_diff_eq!(s.get("w").unwrap().data()[0], -0.01, epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = single("w", 0.25);
        Adam::new(0.01).step(&mut s, &grad("w", 0.0)).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.25);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = single("w", 0.25);
        s.insert("frozen", Tensor::column(vec![1.0])).unwrap();
        s.set_requires_grad("frozen", false).unwrap();
        // frozen entries need no gradient
        Adam::new(0.01).step(&mut s, &grad("w", 1.0)).unwrap();
        let err = Adam::new(0.01).step(&mut s, &Gradients::new()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(n) if n == "w"));
    }

    #[test]
    fn adadelta_descends() {
        let mut s = single("w", 1.0);
        let mut opt = Adadelta::new(1.0);
        for _ in 0..5 {
            opt.step(&mut s, &grad("w", 2.0)).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn ema_examples() {
        let mut shadow = single("w", 1.0);
        ema_update(&mut shadow, &single("w", 0.0), 0.9).unwrap();
        assert_abs_diff_eq!(shadow.get("w").unwrap().data()[0], 0.9, epsilon = 1e-15);

        let mut shadow = single("w", 1.0);
        ema_update(&mut shadow, &single("w", 0.3), 0.0).unwrap();
        assert_eq!(shadow.get("w").unwrap().data()[0], 0.3);

        let mut shadow = single("w", 1.0);
        assert!(matches!(
            ema_update(&mut shadow, &single("v", 0.3), 0.999),
            Err(Error::StoreMismatch(_))
        ));
    }
}
