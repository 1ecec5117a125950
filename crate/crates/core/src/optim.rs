//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One parameter tensor and its gradient for an optimizer step.
pub struct ParamSlot<'a, T: Real> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Optimizer state: step counter plus first and second moments per parameter
/// tensor, zero-initialized on the first step.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    config: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Updates every slot in order. Nothing is modified if any gradient is
    /// non-finite or any shape disagrees with the stored moments.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_, T>]) -> Result<()> {
        for s in slots.iter() {
            if s.value.shape() != s.grad.shape() {
                return Err(Error::Shape(format!(
                    "{}: parameter {:?} vs gradient {:?}",
                    s.name,
                    s.value.shape(),
                    s.grad.shape()
                )));
            }
            if let Some(i) = s.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} has non-finite element {i}",
                    s.name
                )));
            }
        }
        if self.t == 0 {
            self.m = slots.iter().map(|s| Tensor::zeros(s.value.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != slots.len()
            || self.m.iter().zip(slots.iter()).any(|(m, s)| m.shape() != s.value.shape())
        {
            return Err(Error::State(
                "parameter set changed between optimizer steps".into(),
            ));
        }

        self.t += 1;
        let c = &self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let lr = T::from_f64_lossy(c.lr);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.epsilon);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);

        for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let params = slot.value.data_mut();
            for (((p, &g), m), v) in params
                .iter_mut()
                .zip(slot.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
