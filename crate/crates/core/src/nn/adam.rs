//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update of every parameter buffer. Nothing is modified when a
    /// gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameter buffers, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("adam: buffer {i} length mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient buffer {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powf(self.step as f64));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        st.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0f64, -0.5] {
            let mut p = vec![0.0f64];
            let mut st = AdamState::new(AdamConfig::with_learning_rate(0.01), &[1]);
            st.step(&mut [&mut p], &[&[g]]).unwrap();
            assert!((p[0] + 0.01 * g.signum()).abs() < 1e-8, "{}", p[0]);
        }
    }

    #[test]
    fn descends_quadratic() {
        let mut w = vec![0.0f64];
        let mut st = AdamState::new(AdamConfig::with_learning_rate(0.01), &[1]);
        for _ in 0..5000 {
            let g = 2.0 * (w[0] - 3.0);
            st.step(&mut [&mut w], &[&[g]]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.01, "{}", w[0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![1.0f32];
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        assert!(st.step(&mut [&mut p], &[&[f32::NAN]]).is_err());
        assert_eq!(st.step, 0);
        assert_eq!(p, vec![1.0]);
    }
}
