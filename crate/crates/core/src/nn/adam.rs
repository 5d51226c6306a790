use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Applies one update to every parameter using the gradients stored in
    /// the parameters' gradient slots. Nothing is modified if any gradient is
    /// missing or non-finite.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut step = None;
        for p in store.iter() {
            let Some(g) = p.value.grad() else {
                return Err(Error::config(format!("parameter `{}` has no gradient", p.name)));
            };
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: p.name.clone(),
                    index,
                });
            }
            match step {
                None => step = Some(p.step_count),
                Some(s) if s != p.step_count => {
                    return Err(Error::config(format!(
                        "parameter `{}` is at step {} but others are at step {s}",
                        p.name, p.step_count
                    )));
                }
                _ => {}
            }
        }

        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, lr, eps) = (T::one(), T::of(self.lr), T::of(self.eps));
        for p in store.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let grad = p.value.grad().expect("checked above").to_vec();
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let w = p.value.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
