use crate::error::{FwiError, Result};

/// `α·(b·epoch + 1)^a`.
pub fn lr_schedule(epoch: usize, base: f64, power: f64, rate: f64) -> f64 {
    base * (rate * epoch as f64 + 1.0).powf(power)
}

/// Rescales `grad` to global L2 norm `threshold` when it is longer; returns
/// the norm before clipping.
pub fn clip_gradient(grad: &mut [f64], threshold: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restores a saved state.
    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(FwiError::ShapeMismatch("Adam moments differ in length".into()));
        }
        let mut s = Self::new(m.len());
        s.m = m;
        s.v = v;
        s.step = step;
        Ok(s)
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(FwiError::ShapeMismatch(format!(
                "Adam state has {} entries, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
