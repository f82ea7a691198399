//! End-to-end gradient check of the restoration network under the feature loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::gradcheck::{grad_check_piecewise, layer_suite, GradCheckReport, REL_FLOOR};
use crate::nn::init::uniform;
use crate::nn::Mode;
use crate::perceptual::{perceptual_loss, perceptual_loss_value, FeatureNet};
use crate::tensor::Tensor4;
use crate::unet::{build_unet, UNetConfig, UNetParams};

pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const END_TO_END_SHAPE: [usize; 4] = [2, 1, 8, 8];
/// Magnitude floor for biases feeding train-mode batch norm, whose gradient
/// is identically zero.
pub const ZERO_GRAD_FLOOR: f64 = 1e-3;

fn loss(net: &UNetParams<f64>, phi: &FeatureNet<f64>, x: &Tensor4<f64>, y: &Tensor4<f64>, tap: &str) -> f64 {
    let (out, _) = net.forward(x, Mode::Train).expect("forward");
    perceptual_loss_value(phi, &out, y, tap).expect("loss")
}

/// Depth-2 U-Net on a (2,1,8,8) batch, loss at `tap` of a small random Φ.
/// One report for the input and one per parameter buffer.
pub fn end_to_end(seed: u64, tap: &str) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = UNetConfig {
        depth: 2,
        base_channels: 4,
        channel_cap: 8,
        in_channels: 1,
        out_channels: 1,
        ..UNetConfig::default()
    };
    let net: UNetParams<f64> = build_unet(&config, seed).expect("valid config");
    let phi = FeatureNet::<f64>::random([4, 4, 4, 4, 4], seed).expect("widths");
    let x: Tensor4<f64> = uniform(END_TO_END_SHAPE, 0.0, 1.0, &mut rng);
    let y: Tensor4<f64> = uniform(END_TO_END_SHAPE, 0.0, 1.0, &mut rng);

    let (out, cache) = net.forward(&x, Mode::Train).expect("forward");
    let (_, g_out) = perceptual_loss(&phi, &out, &y, tap).expect("loss");
    let (grads, g_x) = net.backward(&cache, &g_out).expect("backward");

    let mut reports = vec![grad_check_piecewise(
        &format!("unet+phi[{tap}] input"),
        |d| loss(&net, &phi, &Tensor4::from_vec(x.shape(), d.to_vec()).expect("shape"), &y, tap),
        x.data(),
        g_x.data(),
        END_TO_END_TOLERANCE,
        REL_FLOOR,
    )];
    let names = net.trainable_names();
    let analytic: Vec<Vec<f64>> = grads.buffers().iter().map(|b| b.to_vec()).collect();
    let values: Vec<Vec<f64>> = net.clone().trainable_mut().iter().map(|b| b.to_vec()).collect();
    for (i, name) in names.iter().enumerate() {
        let ahead_of_bn = name.ends_with(".bias") && names.contains(&name.replace(".bias", ".bn.gamma"));
        let floor = if ahead_of_bn { ZERO_GRAD_FLOOR } else { REL_FLOOR };
        reports.push(grad_check_piecewise(
            &format!("unet+phi[{tap}] {name}"),
            |d| {
                let mut probe = net.clone();
                probe.trainable_mut()[i].copy_from_slice(d);
                loss(&probe, &phi, &x, &y, tap)
            },
            &values[i],
            &analytic[i],
            END_TO_END_TOLERANCE,
            floor,
        ));
    }
    reports
}

/// Per-layer checks, optionally followed by the end-to-end check.
pub fn gradient_suite(seed: u64, full: bool) -> Vec<GradCheckReport> {
    let mut reports = layer_suite(seed);
    if full {
        reports.extend(end_to_end(seed, "conv1_1"));
        reports.extend(end_to_end(seed, "conv2_1"));
    }
    reports
}
