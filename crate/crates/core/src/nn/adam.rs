use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction folded into the step size:
///
/// ```text
/// m ← β1·m + (1-β1)·g
/// v ← β2·v + (1-β2)·g²
/// w ← w - lr·√(1-β2ᵗ)/(1-β1ᵗ) · m / (√v + ε)
/// ```
///
/// Moments that decay into the subnormal range are flushed to zero.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zeroed moment buffers mirroring `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<(), NnError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.first[i].len() {
                return Err(NnError::Shape(format!(
                    "adam slot {i}: param {:?}, grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = T::of(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (nb1, nb2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let eps = T::of(c.epsilon);
        let tiny = T::min_positive_value();
        let flush = |x: T| if x.abs() < tiny { T::zero() } else { x };

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = flush(b1 * *mi + nb1 * gi);
                *vi = flush(b2 * *vi + nb2 * gi * gi);
                *w -= lr_t * *mi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}
