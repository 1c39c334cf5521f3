use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments, keyed like the parameters they track.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Parameters with no gradient entry are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::InvalidBundle(format!("gradient for unknown parameter {name}")))?;
            if !p.same_shape(g) {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    detail: format!("{name}: {:?} vs {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| zeros_like(g));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| zeros_like(g));
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name} after update")));
            }
        }
        Ok(())
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grad(g: f64) -> Gradients {
        let mut gr = Gradients::new();
        gr.insert("w".into(), Tensor::scalar(g));
        gr
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.5);
        let mut st = AdamState::new(AdamConfig::default());
        st.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.5);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        st.step(&mut p, &grad(1.0)).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let w = p.get("w").unwrap().item();
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = scalar_store(5.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01));
        for _ in 0..5000 {
            let w = p.get("w").unwrap().item();
            st.step(&mut p, &grad(2.0 * w)).unwrap();
        }
        assert!(p.get("w").unwrap().item().abs() < 0.01);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.0));
        st.step(&mut p, &grad(3.0)).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 2.0);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(AdamConfig::default());
        assert!(matches!(
            st.step(&mut p, &grad(f64::NAN)),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(p.get("w").unwrap().item(), 2.0);
        assert_eq!(st.steps(), 0);
    }
}
