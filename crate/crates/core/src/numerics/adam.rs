use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |p: &ParamStore| {
            p.iter()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            config,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
///
/// `grads` must name exactly the parameters in `params`; all values must be
/// finite. Nothing is modified when validation fails.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for name in params.names() {
        let Some(g) = grads.get(name) else {
            return Err(Error::Gradient(format!("missing gradient for {name}")));
        };
        let p = params.require(name)?;
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Gradient(format!("non-finite gradient for {name}")));
        }
        if !state.m.contains_key(name) {
            return Err(Error::Gradient(format!("optimizer state missing {name}")));
        }
    }
    if let Some(extra) = grads.keys().find(|k| params.get(k).is_none()) {
        return Err(Error::Gradient(format!("gradient for unknown parameter {extra}")));
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, g) in grads {
        let m = state.m.get_mut(name).expect("validated above");
        let v = state.v.get_mut(name).expect("validated above");
        let p = params.get_mut(name).expect("validated above");
        for (((pi, mi), vi), gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    params.set_step(state.step);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![value])).unwrap();
        p
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::vector(vec![value]))])
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = single(1.25);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut p, &grad(0.0), &mut s, 0.1).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 1.25);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &grad(3.0), &mut s, 0.01).unwrap();
        let moved = -p.get("w").unwrap().item();
        let expected = 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((moved - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_missing_extra_and_non_finite() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &BTreeMap::new(), &mut s, 0.1).is_err());
        let mut extra = grad(1.0);
        extra.insert("z".into(), Tensor::vector(vec![1.0]));
        assert!(adam_step(&mut p, &extra, &mut s, 0.1).is_err());
        let bad = BTreeMap::from([("w".to_string(), Tensor::raw(vec![1], vec![f64::NAN]))]);
        assert!(adam_step(&mut p, &bad, &mut s, 0.1).is_err());
        assert_eq!(s.step(), 0);
        assert_eq!(p.get("w").unwrap().item(), 0.0);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = single(0.5);
            let mut s = AdamState::new(&p, AdamConfig::default());
            for i in 0..20 {
                adam_step(&mut p, &grad((i as f64).sin()), &mut s, 0.05).unwrap();
            }
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
