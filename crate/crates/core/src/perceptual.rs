//! Fixed feature extractor Φ and the single-tap feature reconstruction loss.
//!
//! Φ mirrors the VGG-19 prefix up to `conv5_1`: 3×3 pad-1 convolutions with
//! ReLU, and 2×2 max pooling between blocks. A tap returns the convolution
//! output before its ReLU. Weights come either from an NNWT file or from a
//! seeded He-normal initialization with narrower layers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::init::normal;
use crate::nn::{conv2d, conv2d_backward_input, leaky_relu, leaky_relu_backward, maxpool2d, maxpool2d_backward, ConvParams};
use crate::tensor::{Scalar, Tensor4};
use crate::weights::{read_nnwt, NamedTensor};

pub const TAPS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];

/// Layer sequence of the VGG-19 prefix; `"pool"` marks 2×2 max pooling.
pub const VGG19_PREFIX: [&str; 17] = [
    "conv1_1", "conv1_2", "pool", "conv2_1", "conv2_2", "pool", "conv3_1", "conv3_2", "conv3_3",
    "conv3_4", "pool", "conv4_1", "conv4_2", "conv4_3", "conv4_4", "pool", "conv5_1",
];

pub const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const RANDOM_WIDTHS: [usize; 5] = [16, 32, 64, 128, 128];

/// Per-channel means in BGR order, on the 0–255 scale.
pub const VGG_BGR_MEAN: [f64; 3] = [103.939, 116.779, 123.68];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preprocess {
    /// Inputs in [0,1] are used as is.
    Identity,
    /// Scale to [0,255], reorder RGB to BGR, subtract [`VGG_BGR_MEAN`].
    VggBgr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv { name: String, params: ConvParams<T> },
    Pool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet<T> {
    layers: Vec<Layer<T>>,
    preprocess: Preprocess,
}

enum Step<T> {
    Conv { index: usize, input_shape: [usize; 4] },
    Relu { pre: Tensor4<T> },
    Pool { input_shape: [usize; 4], argmax: Vec<usize> },
}

struct Trace<T> {
    input_shape: [usize; 4],
    replicated: bool,
    steps: Vec<Step<T>>,
}

fn block_of(name: &str) -> usize {
    name.as_bytes()[4] as usize - b'1' as usize
}

impl<T: Scalar> FeatureNet<T> {
    /// Checks kernel shapes and that channel counts chain through the layers.
    pub fn new(layers: Vec<Layer<T>>, preprocess: Preprocess) -> Result<Self> {
        let mut channels: Option<usize> = None;
        for layer in &layers {
            if let Layer::Conv { name, params } = layer {
                let [cout, cin, kh, kw] = params.weight.shape();
                if kh != kw || kh % 2 == 0 || params.stride != 1 || params.padding != kh / 2 {
                    return Err(Error::Format(format!(
                        "{name}: expected a same-size odd kernel, got {kh}x{kw} stride {} pad {}",
                        params.stride, params.padding
                    )));
                }
                if params.bias.len() != cout {
                    return Err(Error::Format(format!("{name}: bias length {} != {cout}", params.bias.len())));
                }
                if let Some(prev) = channels {
                    if prev != cin {
                        return Err(Error::Format(format!(
                            "{name}: expects {cin} input channels, previous layer gives {prev}"
                        )));
                    }
                }
                channels = Some(cout);
            }
        }
        let net = FeatureNet { layers, preprocess };
        let cin = net
            .input_channels()
            .ok_or_else(|| Error::Format("feature net has no convolution".into()))?;
        if preprocess == Preprocess::VggBgr && cin != 3 {
            return Err(Error::Format("VGG preprocessing needs 3 input channels".into()));
        }
        Ok(net)
    }

    /// Fixed He-normal weights, zero biases, `widths[b]` channels in block `b`.
    pub fn random(widths: [usize; 5], seed: u64) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::Param("feature widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut layers = Vec::with_capacity(VGG19_PREFIX.len());
        for name in VGG19_PREFIX {
            if name == "pool" {
                layers.push(Layer::Pool);
                continue;
            }
            let cout = widths[block_of(name)];
            let std = (2.0 / (cin * 9) as f64).sqrt();
            layers.push(Layer::Conv {
                name: name.to_string(),
                params: ConvParams {
                    weight: normal([cout, cin, 3, 3], std, &mut rng),
                    bias: vec![T::zero(); cout],
                    stride: 1,
                    padding: 1,
                },
            });
            cin = cout;
        }
        Self::new(layers, Preprocess::Identity)
    }

    /// All 13 convolutions must be present as `<name>.weight` (Cout, Cin, 3, 3)
    /// and `<name>.bias` (Cout). Imported weights use [`Preprocess::VggBgr`].
    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let mut layers = Vec::with_capacity(VGG19_PREFIX.len());
        for name in VGG19_PREFIX {
            if name == "pool" {
                layers.push(Layer::Pool);
                continue;
            }
            let w = find(&format!("{name}.weight"))?;
            let b = find(&format!("{name}.bias"))?;
            let shape: [usize; 4] = w.dims.as_slice().try_into().map_err(|_| {
                Error::Format(format!("{name}.weight must be 4-D, got {:?}", w.dims))
            })?;
            if b.dims != [shape[0]] {
                return Err(Error::Format(format!(
                    "{name}.bias has dims {:?}, expected [{}]",
                    b.dims, shape[0]
                )));
            }
            layers.push(Layer::Conv {
                name: name.to_string(),
                params: ConvParams {
                    weight: Tensor4::from_vec(shape, w.data.iter().map(|&v| T::from_f32_lossy(v)).collect())?,
                    bias: b.data.iter().map(|&v| T::from_f32_lossy(v)).collect(),
                    stride: 1,
                    padding: shape[2] / 2,
                },
            });
        }
        if let Some(Layer::Conv { params, .. }) = layers.first() {
            if params.weight.shape()[1] != 3 {
                return Err(Error::Format("conv1_1 must take 3 input channels".into()));
            }
        }
        Self::new(layers, Preprocess::VggBgr)
    }

    pub fn from_nnwt(path: &Path) -> Result<Self> {
        Self::from_tensors(&read_nnwt(path)?)
    }

    pub fn preprocess(&self) -> Preprocess {
        self.preprocess
    }

    pub fn input_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Conv { params, .. } => Some(params.weight.shape()[1]),
            Layer::Pool => None,
        })
    }

    pub fn conv_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { name, .. } => Some(name.as_str()),
                Layer::Pool => None,
            })
            .collect()
    }

    pub fn conv(&self, name: &str) -> Option<&ConvParams<T>> {
        self.layers.iter().find_map(|l| match l {
            Layer::Conv { name: n, params } if n == name => Some(params),
            _ => None,
        })
    }

    fn tap_index(&self, tap: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Conv { name, .. } if name == tap))
            .ok_or_else(|| Error::Param(format!("unknown tap {tap}")))
    }

    /// Spatial downsampling factor between the input and `tap`.
    pub fn pool_factor(&self, tap: &str) -> Result<usize> {
        let idx = self.tap_index(tap)?;
        let pools = self.layers[..idx].iter().filter(|l| matches!(l, Layer::Pool)).count();
        Ok(1 << pools)
    }

    fn prepare(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, bool)> {
        let cin = self.input_channels().expect("validated");
        let [n, c, h, w] = x.shape();
        let (mut t, replicated) = if c == cin {
            (x.clone(), false)
        } else if c == 1 && cin == 3 {
            let mut t = Tensor4::zeros([n, 3, h, w]);
            for ni in 0..n {
                for ch in 0..3 {
                    t.plane_mut(ni, ch).copy_from_slice(x.plane(ni, 0));
                }
            }
            (t, true)
        } else {
            return Err(Error::Shape(format!(
                "feature net takes {cin} channels (or 1 to replicate), got {c}"
            )));
        };
        if self.preprocess == Preprocess::VggBgr {
            let src = t.clone();
            let scale = T::from_f64_lossy(255.0);
            for ni in 0..n {
                for ch in 0..3 {
                    let mean = T::from_f64_lossy(VGG_BGR_MEAN[ch]);
                    for (o, &v) in t.plane_mut(ni, ch).iter_mut().zip(src.plane(ni, 2 - ch)) {
                        *o = v * scale - mean;
                    }
                }
            }
        }
        Ok((t, replicated))
    }

    fn run(&self, x: &Tensor4<T>, tap: &str, record: bool) -> Result<(Tensor4<T>, Trace<T>)> {
        let idx = self.tap_index(tap)?;
        let factor = self.pool_factor(tap)?;
        if x.h() % factor != 0 || x.w() % factor != 0 {
            return Err(Error::Shape(format!(
                "{}x{} input is not divisible by {factor}, the pooling factor at {tap}",
                x.h(),
                x.w()
            )));
        }
        let (mut cur, replicated) = self.prepare(x)?;
        let mut steps = Vec::new();
        for (i, layer) in self.layers[..=idx].iter().enumerate() {
            match layer {
                Layer::Conv { params, .. } => {
                    let h = conv2d(&cur, params)?;
                    if record {
                        steps.push(Step::Conv { index: i, input_shape: cur.shape() });
                    }
                    if i == idx {
                        cur = h;
                    } else {
                        cur = leaky_relu(&h, T::zero());
                        if record {
                            steps.push(Step::Relu { pre: h });
                        }
                    }
                }
                Layer::Pool => {
                    let (y, argmax) = maxpool2d(&cur)?;
                    if record {
                        steps.push(Step::Pool { input_shape: cur.shape(), argmax });
                    }
                    cur = y;
                }
            }
        }
        Ok((
            cur,
            Trace {
                input_shape: x.shape(),
                replicated,
                steps,
            },
        ))
    }

    fn backward(&self, trace: Trace<T>, grad: Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad;
        for step in trace.steps.into_iter().rev() {
            g = match step {
                Step::Conv { index, input_shape } => match &self.layers[index] {
                    Layer::Conv { params, .. } => conv2d_backward_input(input_shape, params, &g)?,
                    Layer::Pool => unreachable!("conv step indexes a conv layer"),
                },
                Step::Relu { pre } => leaky_relu_backward(&pre, &g, T::zero()),
                Step::Pool { input_shape, argmax } => maxpool2d_backward(input_shape, &argmax, &g),
            };
        }
        let [n, c, h, w] = trace.input_shape;
        if self.preprocess == Preprocess::VggBgr {
            let src = g.clone();
            let scale = T::from_f64_lossy(255.0);
            for ni in 0..n {
                for ch in 0..3 {
                    for (o, &v) in g.plane_mut(ni, 2 - ch).iter_mut().zip(src.plane(ni, ch)) {
                        *o = v * scale;
                    }
                }
            }
        }
        if trace.replicated {
            let mut out = Tensor4::zeros([n, c, h, w]);
            for ni in 0..n {
                let dst = out.plane_mut(ni, 0);
                for ch in 0..3 {
                    for (o, &v) in dst.iter_mut().zip(g.plane(ni, ch)) {
                        *o += v;
                    }
                }
            }
            g = out;
        }
        Ok(g)
    }
}

/// Φ at `tap` (pre-activation), shape (N, C_tap, H/f, W/f).
pub fn phi_features<T: Scalar>(net: &FeatureNet<T>, x: &Tensor4<T>, tap: &str) -> Result<Tensor4<T>> {
    Ok(net.run(x, tap, false)?.0)
}

fn check_pair<T: Scalar>(y_hat: &Tensor4<T>, y: &Tensor4<T>) -> Result<()> {
    if y_hat.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    Ok(())
}

fn mean_sq_diff<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p - q).to_f64_lossy().powi(2))
        .sum();
    sum / a.len() as f64
}

/// Mean over all feature elements of the squared difference; this is the
/// per-image `1/(C·H·W)` normalized distance averaged over the batch.
pub fn perceptual_loss_value<T: Scalar>(
    net: &FeatureNet<T>,
    y_hat: &Tensor4<T>,
    y: &Tensor4<T>,
    tap: &str,
) -> Result<f64> {
    check_pair(y_hat, y)?;
    let a = phi_features(net, y_hat, tap)?;
    let b = phi_features(net, y, tap)?;
    Ok(mean_sq_diff(&a, &b))
}

/// Loss and its exact gradient with respect to `y_hat`; `y` is a constant.
pub fn perceptual_loss<T: Scalar>(
    net: &FeatureNet<T>,
    y_hat: &Tensor4<T>,
    y: &Tensor4<T>,
    tap: &str,
) -> Result<(f64, Tensor4<T>)> {
    check_pair(y_hat, y)?;
    let (a, trace) = net.run(y_hat, tap, true)?;
    let b = phi_features(net, y, tap)?;
    let loss = mean_sq_diff(&a, &b);
    let scale = T::from_f64_lossy(2.0 / a.len() as f64);
    let mut g = a;
    for (d, &t) in g.data_mut().iter_mut().zip(b.data()) {
        *d = (*d - t) * scale;
    }
    let grad = net.backward(trace, g)?;
    Ok((loss, grad))
}
