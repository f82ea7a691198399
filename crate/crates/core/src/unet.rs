//! Encoder-decoder transformation network with skip connections.
//!
//! Encoder stage `i` is a 4×4 stride-2 convolution (pad 1) producing
//! `min(base·2^i, cap)` channels, followed by batch norm (not on stage 0)
//! and LeakyReLU. Decoder stage `k` is a 4×4 stride-2 transposed convolution
//! with batch norm and ReLU that upsamples to the resolution of encoder
//! stage `k`'s input. Every decoder stage except the deepest reads the
//! output of the stage below concatenated with the matching encoder
//! activation, so the skip features form half of its input. A linear 3×3
//! head maps the full-resolution decoder features (optionally concatenated
//! with the network input) to the output image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::init::{normal, WEIGHT_STD};
use crate::nn::{
    concat_channels, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward,
    leaky_relu, leaky_relu_backward, split_channels, BatchNormCache, BatchNormGrads,
    BatchNormParams, ConvGrads, ConvParams, Mode, RunningStats,
};
use crate::tensor::{Scalar, Tensor4};
use crate::weights::NamedTensor;

const KERNEL: usize = 4;
const HEAD_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    /// Number of down/up sampling stages.
    pub depth: usize,
    pub base_channels: usize,
    pub channel_cap: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub leaky_slope: f64,
    /// Concatenate the network input onto the head's input.
    pub input_skip: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_channels: 32,
            channel_cap: 256,
            in_channels: 3,
            out_channels: 3,
            leaky_slope: 0.2,
            input_skip: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.base_channels == 0 || self.channel_cap < self.base_channels {
            return Err(Error::Config(format!(
                "need 1 <= base_channels ({}) <= channel_cap ({})",
                self.base_channels, self.channel_cap
            )));
        }
        for (what, c) in [("in_channels", self.in_channels), ("out_channels", self.out_channels)] {
            if c != 1 && c != 3 {
                return Err(Error::Config(format!("{what} must be 1 or 3, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky_slope must be in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Output channels of each encoder stage.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_channels << i.min(30)).min(self.channel_cap))
            .collect()
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn head_inputs(&self) -> usize {
        self.base_channels + if self.input_skip { self.in_channels } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams<T> {
    pub config: UNetConfig,
    pub encoder: Vec<Stage<T>>,
    /// `decoder[k]` upsamples to the resolution of `encoder[k]`'s input.
    pub decoder: Vec<Stage<T>>,
    pub head: ConvParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageGrads<T> {
    pub conv: ConvGrads<T>,
    pub bn: Option<BatchNormGrads<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetGrads<T> {
    pub encoder: Vec<StageGrads<T>>,
    pub decoder: Vec<StageGrads<T>>,
    pub head: ConvGrads<T>,
}

/// Activations kept by [`UNetParams::forward`] for the backward pass.
#[derive(Debug)]
pub struct UNetCache<T> {
    mode: Mode,
    input_shape: [usize; 4],
    enc_input: Vec<Tensor4<T>>,
    enc_pre: Vec<Tensor4<T>>,
    enc_bn: Vec<Option<BatchNormCache<T>>>,
    dec_input: Vec<Tensor4<T>>,
    dec_pre: Vec<Tensor4<T>>,
    dec_bn: Vec<Option<BatchNormCache<T>>>,
    head_input: Tensor4<T>,
    output_shape: [usize; 4],
}

fn conv_stage<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: [usize; 4],
    out_channels: usize,
    stride: usize,
    padding: usize,
    bn: bool,
) -> Stage<T> {
    Stage {
        conv: ConvParams {
            weight: normal(shape, WEIGHT_STD, rng),
            bias: vec![T::zero(); out_channels],
            stride,
            padding,
        },
        bn: bn.then(|| BatchNormParams::with_default_running(out_channels)),
    }
}

/// Initializes all weights from `Normal(0, 0.02)` with zero biases.
pub fn build_unet<T: Scalar>(config: &UNetConfig, seed: u64) -> Result<UNetParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = config.encoder_channels();
    let d = config.depth;
    let mut encoder = Vec::with_capacity(d);
    for i in 0..d {
        let cin = if i == 0 { config.in_channels } else { ch[i - 1] };
        encoder.push(conv_stage(&mut rng, [ch[i], cin, KERNEL, KERNEL], ch[i], 2, 1, i > 0));
    }
    let mut decoder = Vec::with_capacity(d);
    for k in 0..d {
        let cin = if k == d - 1 { ch[d - 1] } else { 2 * ch[k] };
        let cout = if k == 0 { config.base_channels } else { ch[k - 1] };
        // transposed layout: (C_in, C_out, kh, kw)
        decoder.push(conv_stage(&mut rng, [cin, cout, KERNEL, KERNEL], cout, 2, 1, true));
    }
    let head = conv_stage::<T>(
        &mut rng,
        [config.out_channels, config.head_inputs(), HEAD_KERNEL, HEAD_KERNEL],
        config.out_channels,
        1,
        1,
        false,
    )
    .conv;
    Ok(UNetParams {
        config: config.clone(),
        encoder,
        decoder,
        head,
    })
}

impl<T: Scalar> UNetParams<T> {
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let m = self.config.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, UNetCache<T>)> {
        self.check_input(x.shape())?;
        let d = self.config.depth;
        let slope = T::from_f64_lossy(self.config.leaky_slope);
        let mut enc_input = Vec::with_capacity(d);
        let mut enc_pre = Vec::with_capacity(d);
        let mut enc_bn = Vec::with_capacity(d);
        let mut skips: Vec<Tensor4<T>> = Vec::with_capacity(d);
        let mut cur = x.clone();
        for stage in &self.encoder {
            let mut h = conv2d(&cur, &stage.conv)?;
            let mut bn_cache = None;
            if let Some(bn) = &stage.bn {
                let (y, c) = bn.forward(&h, mode)?;
                h = y;
                bn_cache = c;
            }
            let a = leaky_relu(&h, slope);
            enc_input.push(std::mem::replace(&mut cur, a.clone()));
            enc_pre.push(h);
            enc_bn.push(bn_cache);
            skips.push(a);
        }

        let mut dec_input: Vec<Option<Tensor4<T>>> = (0..d).map(|_| None).collect();
        let mut dec_pre: Vec<Option<Tensor4<T>>> = (0..d).map(|_| None).collect();
        let mut dec_bn: Vec<Option<BatchNormCache<T>>> = (0..d).map(|_| None).collect();
        let mut up = skips[d - 1].clone();
        for k in (0..d).rev() {
            let input = if k == d - 1 {
                up
            } else {
                concat_channels(&up, &skips[k])?
            };
            let stage = &self.decoder[k];
            let mut h = conv_transpose2d(&input, &stage.conv)?;
            if let Some(bn) = &stage.bn {
                let (y, c) = bn.forward(&h, mode)?;
                h = y;
                dec_bn[k] = c;
            }
            up = leaky_relu(&h, T::zero());
            dec_input[k] = Some(input);
            dec_pre[k] = Some(h);
        }

        let head_input = if self.config.input_skip {
            concat_channels(&up, x)?
        } else {
            up
        };
        let out = conv2d(&head_input, &self.head)?;
        let cache = UNetCache {
            mode,
            input_shape: x.shape(),
            enc_input,
            enc_pre,
            enc_bn,
            dec_input: dec_input.into_iter().map(|t| t.expect("filled")).collect(),
            dec_pre: dec_pre.into_iter().map(|t| t.expect("filled")).collect(),
            dec_bn,
            head_input,
            output_shape: out.shape(),
        };
        Ok((out, cache))
    }

    /// Exact gradients of all parameters and of the input, given the cache
    /// of a train-mode forward with these parameters.
    pub fn backward(
        &self,
        cache: &UNetCache<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(UNetGrads<T>, Tensor4<T>)> {
        if cache.mode != Mode::Train {
            return Err(Error::Mismatch("backward needs a train-mode cache".into()));
        }
        if grad_out.shape() != cache.output_shape {
            return Err(Error::Shape(format!(
                "grad_out {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output_shape
            )));
        }
        let d = self.config.depth;
        if cache.enc_input.len() != d
            || cache.head_input.c() != self.head.weight.shape()[1]
            || cache
                .enc_input
                .iter()
                .zip(&self.encoder)
                .any(|(x, s)| x.c() != s.conv.weight.shape()[1])
        {
            return Err(Error::Mismatch("cache was produced by a different network".into()));
        }
        let slope = T::from_f64_lossy(self.config.leaky_slope);
        let ch = self.config.encoder_channels();

        let (g_head_in, head) = conv2d_backward(&cache.head_input, &self.head, grad_out)?;
        let (mut g, g_input_skip) = if self.config.input_skip {
            let (a, b) = split_channels(&g_head_in, self.config.base_channels)?;
            (a, Some(b))
        } else {
            (g_head_in, None)
        };

        let mut dec_grads: Vec<Option<StageGrads<T>>> = (0..d).map(|_| None).collect();
        let mut skip_grads: Vec<Option<Tensor4<T>>> = (0..d).map(|_| None).collect();
        for k in 0..d {
            let stage = &self.decoder[k];
            g = leaky_relu_backward(&cache.dec_pre[k], &g, T::zero());
            let mut bn_grads = None;
            if let Some(bn) = &stage.bn {
                let c = cache.dec_bn[k]
                    .as_ref()
                    .ok_or_else(|| Error::Mismatch("missing batch norm cache".into()))?;
                let (gx, gb) = bn.backward(c, &g)?;
                g = gx;
                bn_grads = Some(gb);
            }
            let (g_in, conv) = conv_transpose2d_backward(&cache.dec_input[k], &stage.conv, &g)?;
            dec_grads[k] = Some(StageGrads { conv, bn: bn_grads });
            if k == d - 1 {
                skip_grads[k] = Some(g_in);
                // unused once the loop ends
                g = Tensor4::zeros([0, 0, 0, 0]);
            } else {
                let (g_up, g_skip) = split_channels(&g_in, ch[k])?;
                skip_grads[k] = Some(g_skip);
                g = g_up;
            }
        }

        let mut enc_grads: Vec<Option<StageGrads<T>>> = (0..d).map(|_| None).collect();
        let mut carry: Option<Tensor4<T>> = None;
        for i in (0..d).rev() {
            let mut ge = skip_grads[i].take().expect("filled");
            if let Some(c) = carry.take() {
                for (a, &b) in ge.data_mut().iter_mut().zip(c.data()) {
                    *a += b;
                }
            }
            let stage = &self.encoder[i];
            let mut gh = leaky_relu_backward(&cache.enc_pre[i], &ge, slope);
            let mut bn_grads = None;
            if let Some(bn) = &stage.bn {
                let c = cache.enc_bn[i]
                    .as_ref()
                    .ok_or_else(|| Error::Mismatch("missing batch norm cache".into()))?;
                let (gx, gb) = bn.backward(c, &gh)?;
                gh = gx;
                bn_grads = Some(gb);
            }
            let (g_in, conv) = conv2d_backward(&cache.enc_input[i], &stage.conv, &gh)?;
            enc_grads[i] = Some(StageGrads { conv, bn: bn_grads });
            carry = Some(g_in);
        }
        let mut grad_input = carry.expect("depth >= 1");
        if let Some(extra) = g_input_skip {
            for (a, &b) in grad_input.data_mut().iter_mut().zip(extra.data()) {
                *a += b;
            }
        }
        debug_assert_eq!(grad_input.shape(), cache.input_shape);
        Ok((
            UNetGrads {
                encoder: enc_grads.into_iter().map(|g| g.expect("filled")).collect(),
                decoder: dec_grads.into_iter().map(|g| g.expect("filled")).collect(),
                head,
            },
            grad_input,
        ))
    }

    /// Folds the batch statistics of a train-mode forward into the running averages.
    pub fn update_running_stats(&mut self, cache: &UNetCache<T>) {
        let stages = self.encoder.iter_mut().zip(&cache.enc_bn);
        let stages = stages.chain(self.decoder.iter_mut().zip(&cache.dec_bn));
        for (stage, c) in stages {
            if let (Some(bn), Some(c)) = (stage.bn.as_mut(), c.as_ref()) {
                bn.update_running(c);
            }
        }
    }

    /// Trainable buffers in a fixed order shared with [`UNetGrads::buffers`].
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for stage in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(stage.conv.weight.data_mut());
            out.push(&mut stage.conv.bias);
            if let Some(bn) = stage.bn.as_mut() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Names matching [`Self::trainable_mut`] entry by entry.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let stages = self.encoder.iter().enumerate().map(|(i, s)| (format!("enc{i}"), s));
        let stages = stages.chain(self.decoder.iter().enumerate().map(|(k, s)| (format!("dec{k}"), s)));
        for (prefix, stage) in stages {
            out.push(format!("{prefix}.weight"));
            out.push(format!("{prefix}.bias"));
            if stage.bn.is_some() {
                out.push(format!("{prefix}.bn.gamma"));
                out.push(format!("{prefix}.bn.beta"));
            }
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn trainable_sizes(&mut self) -> Vec<usize> {
        self.trainable_mut().iter().map(|b| b.len()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        let mut copy = self.clone();
        copy.trainable_sizes().iter().sum()
    }

    /// All tensors, including batch-norm running statistics, for serialization.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![config_tensor(&self.config)];
        let stages = self.encoder.iter().enumerate().map(|(i, s)| (format!("enc{i}"), s));
        let stages = stages.chain(self.decoder.iter().enumerate().map(|(k, s)| (format!("dec{k}"), s)));
        for (prefix, stage) in stages {
            push_conv(&mut out, &prefix, &stage.conv);
            if let Some(bn) = &stage.bn {
                out.push(NamedTensor::from_slice(format!("{prefix}.bn.gamma"), vec![bn.gamma.len()], &bn.gamma));
                out.push(NamedTensor::from_slice(format!("{prefix}.bn.beta"), vec![bn.beta.len()], &bn.beta));
                if let Some(r) = &bn.running {
                    out.push(NamedTensor::from_slice(format!("{prefix}.bn.running_mean"), vec![r.mean.len()], &r.mean));
                    out.push(NamedTensor::from_slice(format!("{prefix}.bn.running_var"), vec![r.var.len()], &r.var));
                }
            }
        }
        push_conv(&mut out, "head", &self.head);
        out
    }

    /// Rebuilds parameters from [`Self::named_tensors`] output. Every
    /// expected tensor must be present with the expected shape.
    pub fn from_named_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let config = config_from_tensor(find(tensors, "unet.config")?)?;
        let mut params: UNetParams<T> = build_unet(&config, 0)?;
        let d = config.depth;
        let stages = params.encoder.iter_mut().enumerate().map(|(i, s)| (format!("enc{i}"), s));
        let stages: Vec<_> = stages
            .chain(params.decoder.iter_mut().enumerate().map(|(k, s)| (format!("dec{k}"), s)))
            .collect();
        debug_assert_eq!(stages.len(), 2 * d);
        for (prefix, stage) in stages {
            load_conv(tensors, &prefix, &mut stage.conv)?;
            if let Some(bn) = stage.bn.as_mut() {
                bn.gamma = find_vec(tensors, &format!("{prefix}.bn.gamma"), bn.gamma.len())?;
                bn.beta = find_vec(tensors, &format!("{prefix}.bn.beta"), bn.beta.len())?;
                let mean_name = format!("{prefix}.bn.running_mean");
                bn.running = if tensors.iter().any(|t| t.name == mean_name) {
                    Some(RunningStats {
                        mean: find_vec(tensors, &mean_name, bn.gamma.len())?,
                        var: find_vec(tensors, &format!("{prefix}.bn.running_var"), bn.gamma.len())?,
                    })
                } else {
                    None
                };
            }
        }
        load_conv(tensors, "head", &mut params.head)?;
        Ok(params)
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            weight: c.weight.cast(),
            bias: cast_vec(&c.bias),
            stride: c.stride,
            padding: c.padding,
        };
        let stage = |s: &Stage<T>| Stage {
            conv: conv(&s.conv),
            bn: s.bn.as_ref().map(|bn| BatchNormParams {
                gamma: cast_vec(&bn.gamma),
                beta: cast_vec(&bn.beta),
                running: bn.running.as_ref().map(|r| RunningStats {
                    mean: cast_vec(&r.mean),
                    var: cast_vec(&r.var),
                }),
                eps: U::from_f64_lossy(bn.eps.to_f64_lossy()),
                momentum: U::from_f64_lossy(bn.momentum.to_f64_lossy()),
            }),
        };
        UNetParams {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(stage).collect(),
            decoder: self.decoder.iter().map(stage).collect(),
            head: conv(&self.head),
        }
    }
}

impl<T: Scalar> UNetGrads<T> {
    /// Gradient buffers in the order of [`UNetParams::trainable_mut`].
    pub fn buffers(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for stage in self.encoder.iter().chain(&self.decoder) {
            out.push(stage.conv.weight.data());
            out.push(&stage.conv.bias);
            if let Some(bn) = &stage.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(self.head.weight.data());
        out.push(&self.head.bias);
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.buffers()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect()
}

fn push_conv<T: Scalar>(out: &mut Vec<NamedTensor>, prefix: &str, conv: &ConvParams<T>) {
    out.push(NamedTensor::from_slice(
        format!("{prefix}.weight"),
        conv.weight.shape().to_vec(),
        conv.weight.data(),
    ));
    out.push(NamedTensor::from_slice(
        format!("{prefix}.bias"),
        vec![conv.bias.len()],
        &conv.bias,
    ));
}

fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}

fn find_vec<T: Scalar>(tensors: &[NamedTensor], name: &str, len: usize) -> Result<Vec<T>> {
    let t = find(tensors, name)?;
    if t.dims != [len] {
        return Err(Error::Format(format!(
            "tensor {name} has dims {:?}, expected [{len}]",
            t.dims
        )));
    }
    Ok(t.data.iter().map(|&v| T::from_f32_lossy(v)).collect())
}

fn load_conv<T: Scalar>(tensors: &[NamedTensor], prefix: &str, conv: &mut ConvParams<T>) -> Result<()> {
    let name = format!("{prefix}.weight");
    let t = find(tensors, &name)?;
    let shape = conv.weight.shape();
    if t.dims != shape {
        return Err(Error::Format(format!(
            "tensor {name} has dims {:?}, expected {shape:?}",
            t.dims
        )));
    }
    conv.weight = Tensor4::from_vec(shape, t.data.iter().map(|&v| T::from_f32_lossy(v)).collect())?;
    conv.bias = find_vec(tensors, &format!("{prefix}.bias"), conv.bias.len())?;
    Ok(())
}

fn config_tensor(c: &UNetConfig) -> NamedTensor {
    let values = [
        c.depth as f32,
        c.base_channels as f32,
        c.channel_cap as f32,
        c.in_channels as f32,
        c.out_channels as f32,
        c.leaky_slope as f32,
        if c.input_skip { 1.0 } else { 0.0 },
    ];
    NamedTensor::new("unet.config", vec![values.len()], values.to_vec())
}

fn config_from_tensor(t: &NamedTensor) -> Result<UNetConfig> {
    if t.data.len() != 7 {
        return Err(Error::Format("unet.config must hold 7 values".into()));
    }
    let int = |v: f32| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Format(format!("unet.config value {v} is not a count")))
        }
    };
    let config = UNetConfig {
        depth: int(t.data[0])?,
        base_channels: int(t.data[1])?,
        channel_cap: int(t.data[2])?,
        in_channels: int(t.data[3])?,
        out_channels: int(t.data[4])?,
        leaky_slope: (f64::from(t.data[5]) * 1e6).round() / 1e6,
        input_skip: t.data[6] != 0.0,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_channels: 4,
            channel_cap: 16,
            in_channels: 1,
            out_channels: 1,
            ..Default::default()
        }
    }

    fn input(shape: [usize; 4], seed: u64) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::nn::init::uniform(shape, 0.0, 1.0, &mut rng)
    }

    #[test]
    fn channel_ladder() {
        let cfg = UNetConfig::default();
        assert_eq!(cfg.encoder_channels(), vec![32, 64, 128, 256]);
        let p: UNetParams<f32> = build_unet(&cfg, 1).unwrap();
        let ins: Vec<usize> = p.encoder.iter().map(|s| s.conv.weight.shape()[1]).collect();
        assert_eq!(ins, vec![3, 32, 64, 128]);
        // decoder inputs: deepest takes the bottleneck, others twice the skip width
        let dec_in: Vec<usize> = p.decoder.iter().map(|s| s.conv.weight.shape()[0]).collect();
        assert_eq!(dec_in, vec![64, 128, 256, 256]);
        assert!(p.encoder[0].bn.is_none());
        assert!(p.encoder[1..].iter().all(|s| s.bn.is_some()));
        assert!(p.decoder.iter().all(|s| s.bn.is_some()));
        let capped = UNetConfig { depth: 5, base_channels: 64, channel_cap: 256, ..cfg };
        assert_eq!(capped.encoder_channels(), vec![64, 128, 256, 256, 256]);
    }

    #[test]
    fn invalid_configs() {
        let bad = UNetConfig { depth: 0, ..UNetConfig::default() };
        assert!(build_unet::<f32>(&bad, 0).is_err());
        let bad = UNetConfig { in_channels: 2, ..UNetConfig::default() };
        assert!(build_unet::<f32>(&bad, 0).is_err());
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let a: UNetParams<f32> = build_unet(&small(), 5).unwrap();
        let b: UNetParams<f32> = build_unet(&small(), 5).unwrap();
        let c: UNetParams<f32> = build_unet(&small(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn output_shape_matches_input() {
        for depth in 1..=4 {
            for size in [16usize, 32, 48] {
                let cfg = UNetConfig { depth, base_channels: 2, channel_cap: 8, ..UNetConfig::default() };
                let p: UNetParams<f32> = build_unet(&cfg, 0).unwrap();
                let x = input([1, 3, size, size], 0);
                let (y, _) = p.forward(&x, Mode::Train).unwrap();
                assert_eq!(y.shape(), x.shape());
            }
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let p: UNetParams<f32> = build_unet(&small(), 0).unwrap();
        assert!(p.forward(&input([1, 1, 10, 12], 0), Mode::Train).is_err());
        assert!(p.forward(&input([1, 3, 8, 8], 0), Mode::Train).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let p: UNetParams<f32> = build_unet(&small(), 0).unwrap();
        let x = input([2, 1, 8, 8], 1);
        let (y, cache) = p.forward(&x, Mode::Train).unwrap();
        let (grads, gx) = p.backward(&cache, &Tensor4::zeros(y.shape())).unwrap();
        assert!(grads.buffers().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
        let mut q = p.clone();
        let shapes: Vec<usize> = q.trainable_mut().iter().map(|b| b.len()).collect();
        let gshapes: Vec<usize> = grads.buffers().iter().map(|b| b.len()).collect();
        assert_eq!(shapes, gshapes);
    }

    #[test]
    fn eval_cache_rejected_for_backward() {
        let p: UNetParams<f32> = build_unet(&small(), 0).unwrap();
        let x = input([1, 1, 8, 8], 1);
        let (y, cache) = p.forward(&x, Mode::Eval).unwrap();
        assert!(p.backward(&cache, &y).is_err());
        let (y, cache) = p.forward(&x, Mode::Train).unwrap();
        let other: UNetParams<f32> = build_unet(&UNetConfig { input_skip: false, ..small() }, 0).unwrap();
        assert!(other.backward(&cache, &y).is_err());
    }

    #[test]
    fn single_pixel_changes_output() {
        let p: UNetParams<f32> = build_unet(&small(), 3).unwrap();
        let x = input([1, 1, 16, 16], 2);
        let (y1, _) = p.forward(&x, Mode::Eval).unwrap();
        let (y1b, _) = p.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y1, y1b);
        let mut x2 = x.clone();
        x2.set(0, 0, 7, 9, 0.0);
        let (y2, _) = p.forward(&x2, Mode::Eval).unwrap();
        assert_ne!(y1, y2);
    }

    #[test]
    fn named_tensor_round_trip() {
        let mut p: UNetParams<f32> = build_unet(&small(), 4).unwrap();
        let x = input([2, 1, 8, 8], 0);
        let (_, cache) = p.forward(&x, Mode::Train).unwrap();
        p.update_running_stats(&cache);
        let back = UNetParams::<f32>::from_named_tensors(&p.named_tensors()).unwrap();
        assert_eq!(back, p);
    }
}
