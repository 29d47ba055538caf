use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One update of every parameter from its accumulated gradient.
    /// Gradients are left in place; call [`ParamStore::zero_grad`] afterwards.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        adamw_step(store, self.lr, self.weight_decay, self.betas, self.eps)
    }
}

pub fn adamw_step(
    store: &mut ParamStore,
    lr: f64,
    weight_decay: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let (b1, b2) = betas;
    if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
        return Err(Error::Config(format!("betas must lie in [0, 1), got {betas:?}")));
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (_, p) in store.iter_mut() {
        let n = p.value.len();
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        for i in 0..n {
            let g = grad[i];
            value[i] -= lr * weight_decay * value[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::Matrix;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Matrix::scalar(p)).unwrap();
        s
    }

    fn value(s: &ParamStore) -> f64 {
        s.get("p").unwrap().item().unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameter() {
        let mut s = scalar_store(1.25);
        adamw_step(&mut s, 1e-3, 0.0, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(value(&s), 1.25);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn positive_gradient_decreases_parameter() {
        let mut s = scalar_store(1.0);
        s.accumulate(&[("p".to_string(), Matrix::scalar(1.0))].into()).unwrap();
        AdamW::with_lr(1e-3).step(&mut s).unwrap();
        assert!(value(&s) < 1.0);
    }

    #[test]
    fn non_positive_lr_is_config_error() {
        let mut s = scalar_store(1.0);
        assert!(matches!(
            adamw_step(&mut s, 0.0, 0.0, (0.9, 0.999), 1e-8),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            adamw_step(&mut s, -1.0, 0.0, (0.9, 0.999), 1e-8),
            Err(Error::Config(_))
        ));
    }

    /// Scalar restatement of the recurrence, kept separate from the store-based update.
    fn reference_minimize(lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (p - 3.0);
            p *= 1.0 - lr * wd;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let reference = reference_minimize(0.1, 200);
        assert!((reference - 3.0).abs() < 0.05, "reference ended at {reference}");

        let mut s = scalar_store(0.0);
        let opt = AdamW::with_lr(0.1);
        for _ in 0..200 {
            let g = 2.0 * (value(&s) - 3.0);
            s.zero_grad();
            s.accumulate(&[("p".to_string(), Matrix::scalar(g))].into()).unwrap();
            opt.step(&mut s).unwrap();
        }
        assert!((value(&s) - 3.0).abs() < 0.05);
        assert!((value(&s) - reference).abs() < 1e-12);
    }
}
