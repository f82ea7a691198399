//! Spatial batch normalization.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel affine normalization. `running` is `None` until statistics
/// have been set, either by a training step or explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running: Option<RunningStats<T>>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNormGrads<T> {
    pub fn zeros(channels: usize) -> Self {
        BatchNormGrads {
            gamma: vec![T::zero(); channels],
            beta: vec![T::zero(); channels],
        }
    }
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNormParams<T> {
    /// γ = 1, β = 0, no running statistics.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running: None,
            eps: T::from_f64_lossy(DEFAULT_EPS),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
        }
    }

    /// Running mean 0 and variance 1.
    pub fn with_default_running(channels: usize) -> Self {
        let mut bn = Self::new(channels);
        bn.running = Some(RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        bn
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Train mode normalizes with batch statistics over (N, H, W) and returns
    /// the cache for [`Self::backward`] and [`Self::update_running`]. Eval mode
    /// uses the running statistics.
    pub fn forward(
        &self,
        x: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, Option<BatchNormCache<T>>)> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let mut out = Tensor4::zeros(x.shape());
        match mode {
            Mode::Eval => {
                let stats = self.running.as_ref().ok_or(Error::BatchNormUninitialized)?;
                for ch in 0..c {
                    let inv = T::one() / (stats.var[ch] + self.eps).sqrt();
                    let (g, b, m) = (self.gamma[ch], self.beta[ch], stats.mean[ch]);
                    for ni in 0..n {
                        for (o, &v) in out.plane_mut(ni, ch).iter_mut().zip(x.plane(ni, ch)) {
                            *o = g * (v - m) * inv + b;
                        }
                    }
                }
                Ok((out, None))
            }
            Mode::Train => {
                let count = T::from_f64_lossy((n * h * w) as f64);
                let mut xhat = Tensor4::zeros(x.shape());
                let mut inv_std = Vec::with_capacity(c);
                let mut means = Vec::with_capacity(c);
                let mut vars = Vec::with_capacity(c);
                for ch in 0..c {
                    let mut sum = T::zero();
                    for ni in 0..n {
                        sum = x.plane(ni, ch).iter().fold(sum, |s, &v| s + v);
                    }
                    let mean = sum / count;
                    let mut sq = T::zero();
                    for ni in 0..n {
                        sq = x.plane(ni, ch).iter().fold(sq, |s, &v| s + (v - mean) * (v - mean));
                    }
                    let var = sq / count;
                    let inv = T::one() / (var + self.eps).sqrt();
                    for ni in 0..n {
                        let src = x.plane(ni, ch);
                        for (xh, &v) in xhat.plane_mut(ni, ch).iter_mut().zip(src) {
                            *xh = (v - mean) * inv;
                        }
                        let (g, b) = (self.gamma[ch], self.beta[ch]);
                        for (o, &xh) in out.plane_mut(ni, ch).iter_mut().zip(xhat.plane(ni, ch)) {
                            *o = g * xh + b;
                        }
                    }
                    inv_std.push(inv);
                    means.push(mean);
                    vars.push(var);
                }
                Ok((
                    out,
                    Some(BatchNormCache {
                        xhat,
                        inv_std,
                        mean: means,
                        var: vars,
                    }),
                ))
            }
        }
    }

    /// Exponential moving average `new = (1 − momentum)·old + momentum·batch`.
    /// The batch variance is the unbiased estimate. Unset statistics are
    /// initialized to mean 0, variance 1 before the first update.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let c = self.channels();
        let [n, _, h, w] = cache.xhat.shape();
        let count = (n * h * w) as f64;
        let correction = if count > 1.0 {
            T::from_f64_lossy(count / (count - 1.0))
        } else {
            T::one()
        };
        let stats = self.running.get_or_insert_with(|| RunningStats {
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        });
        let keep = T::one() - self.momentum;
        for ch in 0..c {
            stats.mean[ch] = keep * stats.mean[ch] + self.momentum * cache.mean[ch];
            stats.var[ch] = keep * stats.var[ch] + self.momentum * cache.var[ch] * correction;
        }
    }

    /// Train-mode backward: returns `(grad_x, grads)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, BatchNormGrads<T>)> {
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape("batch norm grad_out does not match cache".into()));
        }
        let [n, c, h, w] = grad_out.shape();
        let count = T::from_f64_lossy((n * h * w) as f64);
        let mut grad_x = Tensor4::zeros(grad_out.shape());
        let mut grads = BatchNormGrads::zeros(c);
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ni in 0..n {
                for (&g, &xh) in grad_out.plane(ni, ch).iter().zip(cache.xhat.plane(ni, ch)) {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            grads.beta[ch] = sum_g;
            grads.gamma[ch] = sum_gx;
            let scale = self.gamma[ch] * cache.inv_std[ch] / count;
            for ni in 0..n {
                let src = grad_out.plane(ni, ch);
                let xh = cache.xhat.plane(ni, ch);
                for ((o, &g), &xv) in grad_x.plane_mut(ni, ch).iter_mut().zip(src).zip(xh) {
                    *o = scale * (count * g - sum_g - xv * sum_gx);
                }
            }
        }
        Ok((grad_x, grads))
    }
}
