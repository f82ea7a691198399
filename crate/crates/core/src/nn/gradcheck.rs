//! Central finite-difference gradient checks.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::activation::{leaky_relu, leaky_relu_backward};
use super::batchnorm::{BatchNormParams, Mode};
use super::concat::{concat_channels, split_channels};
use super::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvParams};
use super::init::uniform;
use super::pool::{maxpool2d, maxpool2d_backward};
use crate::tensor::Tensor4;

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude on both sides a coordinate is compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const LAYER_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates accepted on a one-sided difference.
    pub one_sided: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<40} max rel err {:>10.3e} over {:>5} coords, {:>2} one-sided (tol {:.0e}) {}",
            self.name,
            self.max_rel_err,
            self.checked,
            self.one_sided,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    relative_error_with_floor(a, n, REL_FLOOR)
}

fn relative_error_with_floor(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` around `x`,
/// one coordinate at a time with step [`FD_STEP`].
pub fn grad_check(
    name: &str,
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    grad_check_with_floor(name, f, x, analytic, tolerance, REL_FLOOR)
}

/// [`grad_check`] with a caller-chosen magnitude floor, for buffers whose
/// true gradient is zero and whose differences are pure rounding noise.
pub fn grad_check_with_floor(
    name: &str,
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
    floor: f64,
) -> GradCheckReport {
    check(name, f, x, analytic, tolerance, floor, false)
}

/// [`grad_check_with_floor`] for piecewise-smooth functions. A coordinate
/// whose central difference disagrees is retried with the second-order
/// one-sided differences over `[x − 2h, x]` and `[x, x + 2h]`; a single
/// rectifier or pooling switch inside the central interval leaves one of
/// them smooth. Coordinates accepted this way are counted in `one_sided`.
pub fn grad_check_piecewise(
    name: &str,
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
    floor: f64,
) -> GradCheckReport {
    check(name, f, x, analytic, tolerance, floor, true)
}

fn check(
    name: &str,
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
    floor: f64,
    piecewise: bool,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "{name}: gradient length");
    let h = FD_STEP;
    let mut probe = x.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, offset: f64| {
        let orig = probe[i];
        probe[i] = orig + offset;
        let v = f(probe);
        probe[i] = orig;
        v
    };
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    let mut one_sided = 0;
    for i in 0..x.len() {
        let plus = at(&mut probe, i, h);
        let minus = at(&mut probe, i, -h);
        let mut err = relative_error_with_floor(analytic[i], (plus - minus) / (2.0 * h), floor);
        if piecewise && !(err < tolerance) {
            let centre = at(&mut probe, i, 0.0);
            let right = (4.0 * plus - 3.0 * centre - at(&mut probe, i, 2.0 * h)) / (2.0 * h);
            let left = (3.0 * centre - 4.0 * minus + at(&mut probe, i, -2.0 * h)) / (2.0 * h);
            let side = relative_error_with_floor(analytic[i], right, floor)
                .min(relative_error_with_floor(analytic[i], left, floor));
            if side < tolerance {
                one_sided += 1;
                err = side;
            }
        }
        if err > max_rel_err || err.is_nan() {
            max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            worst_index = i;
        }
    }
    GradCheckReport {
        name: name.to_string(),
        max_rel_err,
        worst_index,
        checked: x.len(),
        one_sided,
        tolerance,
        passed: max_rel_err < tolerance,
    }
}

fn rand_t(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

fn with_data(t: &Tensor4<f64>, data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(t.shape(), data.to_vec()).expect("same length")
}

fn check_conv(
    label: &str,
    x: Tensor4<f64>,
    p: ConvParams<f64>,
    transpose: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<GradCheckReport> {
    let fwd = |x: &Tensor4<f64>, p: &ConvParams<f64>| {
        if transpose {
            conv_transpose2d(x, p).expect("forward")
        } else {
            conv2d(x, p).expect("forward")
        }
    };
    let out = fwd(&x, &p);
    let r = rand_t(out.shape(), rng);
    let (gx, gp) = if transpose {
        conv_transpose2d_backward(&x, &p, &r).expect("backward")
    } else {
        conv2d_backward(&x, &p, &r).expect("backward")
    };
    let mut reports = Vec::new();
    reports.push(grad_check(
        &format!("{label} input"),
        |d| fwd(&with_data(&x, d), &p).dot(&r),
        x.data(),
        gx.data(),
        LAYER_TOLERANCE,
    ));
    reports.push(grad_check(
        &format!("{label} weight"),
        |d| {
            let mut q = p.clone();
            q.weight = with_data(&p.weight, d);
            fwd(&x, &q).dot(&r)
        },
        p.weight.data(),
        gp.weight.data(),
        LAYER_TOLERANCE,
    ));
    reports.push(grad_check(
        &format!("{label} bias"),
        |d| {
            let mut q = p.clone();
            q.bias = d.to_vec();
            fwd(&x, &q).dot(&r)
        },
        &p.bias,
        &gp.bias,
        LAYER_TOLERANCE,
    ));
    reports
}

/// Finite-difference checks of every layer's backward at 64-bit precision.
pub fn layer_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let x = rand_t([2, 3, 5, 5], &mut rng);
    let p = ConvParams {
        weight: rand_t([4, 3, 3, 3], &mut rng),
        bias: rand_t([1, 1, 1, 4], &mut rng).into_vec(),
        stride: 1,
        padding: 1,
    };
    reports.extend(check_conv("conv2d 3x3/s1/p1", x, p, false, &mut rng));

    let x = rand_t([2, 2, 6, 6], &mut rng);
    let p = ConvParams {
        weight: rand_t([3, 2, 4, 4], &mut rng),
        bias: rand_t([1, 1, 1, 3], &mut rng).into_vec(),
        stride: 2,
        padding: 1,
    };
    reports.extend(check_conv("conv2d 4x4/s2/p1", x, p, false, &mut rng));

    let x = rand_t([2, 3, 3, 3], &mut rng);
    let p = ConvParams {
        weight: rand_t([3, 2, 4, 4], &mut rng),
        bias: rand_t([1, 1, 1, 2], &mut rng).into_vec(),
        stride: 2,
        padding: 1,
    };
    reports.extend(check_conv("conv_transpose2d 4x4/s2/p1", x, p, true, &mut rng));

    // batch norm, train mode
    let x = rand_t([2, 3, 3, 3], &mut rng);
    let mut bn = BatchNormParams::<f64>::new(3);
    bn.gamma = rand_t([1, 1, 1, 3], &mut rng).into_vec();
    bn.beta = rand_t([1, 1, 1, 3], &mut rng).into_vec();
    let (y, cache) = bn.forward(&x, Mode::Train).expect("forward");
    let r = rand_t(y.shape(), &mut rng);
    let (gx, gbn) = bn.backward(&cache.expect("train cache"), &r).expect("backward");
    let eval = |x: &Tensor4<f64>, bn: &BatchNormParams<f64>| bn.forward(x, Mode::Train).expect("forward").0.dot(&r);
    reports.push(grad_check(
        "batchnorm input",
        |d| eval(&with_data(&x, d), &bn),
        x.data(),
        gx.data(),
        LAYER_TOLERANCE,
    ));
    reports.push(grad_check(
        "batchnorm gamma",
        |d| {
            let mut q = bn.clone();
            q.gamma = d.to_vec();
            eval(&x, &q)
        },
        &bn.gamma,
        &gbn.gamma,
        LAYER_TOLERANCE,
    ));
    reports.push(grad_check(
        "batchnorm beta",
        |d| {
            let mut q = bn.clone();
            q.beta = d.to_vec();
            eval(&x, &q)
        },
        &bn.beta,
        &gbn.beta,
        LAYER_TOLERANCE,
    ));

    // rectifiers, inputs kept away from the kink
    for (label, slope) in [("leaky_relu 0.2", 0.2), ("relu", 0.0)] {
        let x = rand_t([2, 2, 3, 3], &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let r = rand_t(x.shape(), &mut rng);
        let gx = leaky_relu_backward(&x, &r, slope);
        reports.push(grad_check(
            label,
            |d| leaky_relu(&with_data(&x, d), slope).dot(&r),
            x.data(),
            gx.data(),
            LAYER_TOLERANCE,
        ));
    }

    let a = rand_t([2, 2, 3, 3], &mut rng);
    let b = rand_t([2, 3, 3, 3], &mut rng);
    let r = rand_t([2, 5, 3, 3], &mut rng);
    let (ga, gb) = split_channels(&r, 2).expect("split");
    reports.push(grad_check(
        "concat first",
        |d| concat_channels(&with_data(&a, d), &b).expect("concat").dot(&r),
        a.data(),
        ga.data(),
        LAYER_TOLERANCE,
    ));
    reports.push(grad_check(
        "concat second",
        |d| concat_channels(&a, &with_data(&b, d)).expect("concat").dot(&r),
        b.data(),
        gb.data(),
        LAYER_TOLERANCE,
    ));

    // distinct values spaced well beyond the probe step
    let n = 2 * 2 * 4 * 4;
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let x = Tensor4::from_vec([2, 2, 4, 4], order.iter().map(|&i| i as f64 * 0.1).collect()).expect("shape");
    let (y, idx) = maxpool2d(&x).expect("pool");
    let r = rand_t(y.shape(), &mut rng);
    let gx = maxpool2d_backward(x.shape(), &idx, &r);
    reports.push(grad_check(
        "maxpool2d",
        |d| maxpool2d(&with_data(&x, d)).expect("pool").0.dot(&r),
        x.data(),
        gx.data(),
        LAYER_TOLERANCE,
    ));

    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for report in layer_suite(7) {
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_t([2, 3, 5, 5], &mut rng);
        let p = ConvParams {
            weight: rand_t([2, 3, 3, 3], &mut rng),
            bias: vec![0.0; 2],
            stride: 1,
            padding: 1,
        };
        let r = rand_t([2, 2, 5, 5], &mut rng);
        let (gx, _) = conv2d_backward(&x, &p, &r).unwrap();
        // drop one contribution
        let mut bad = gx.into_vec();
        bad[7] *= 0.5;
        let report = grad_check(
            "corrupted conv2d",
            |d| conv2d(&with_data(&x, d), &p).unwrap().dot(&r),
            x.data(),
            &bad,
            LAYER_TOLERANCE,
        );
        assert!(!report.passed);
        assert_eq!(report.worst_index, 7);
    }

    #[test]
    fn kink_inside_probe_interval() {
        let relu = |d: &[f64]| (d[0] - 0.4 * FD_STEP).max(0.0);
        let plain = grad_check("kink", relu, &[0.0], &[0.0], LAYER_TOLERANCE);
        assert!(!plain.passed);
        let piecewise = grad_check_piecewise("kink", relu, &[0.0], &[0.0], LAYER_TOLERANCE, REL_FLOOR);
        assert!(piecewise.passed);
        assert_eq!(piecewise.one_sided, 1);
        let wrong = grad_check_piecewise("kink", relu, &[0.0], &[0.5], LAYER_TOLERANCE, REL_FLOOR);
        assert!(!wrong.passed);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
        assert!(relative_error(1e-9, 0.0) < 1e-2);
    }
}
