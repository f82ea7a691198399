//! PSNR and SSIM over 8-bit images.

use crate::error::{Error, Result};
use crate::image::Image;

const PEAK: f64 = 255.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(255² / MSE)` with the MSE pooled over all samples.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region separable filtering of a w×h plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), w, h, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Gaussian-window SSIM (11×11, σ = 1.5) averaged over all valid window
/// positions; color images average the per-channel scores.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {WINDOW}x{WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    let plane = |img: &Image, c| -> Vec<f64> {
        img.channel_plane(c).into_iter().map(f64::from).collect()
    };
    let total: f64 = (0..a.channels())
        .map(|c| ssim_plane(&plane(a, c), &plane(b, c), w, h))
        .sum();
    Ok(total / a.channels() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-window SSIM with explicit 2-D weights; independent of the separable path.
    fn ssim_brute(a: &Image, b: &Image) -> f64 {
        let taps = gaussian_taps();
        let c1 = (K1 * PEAK).powi(2);
        let c2 = (K2 * PEAK).powi(2);
        let (w, h) = (a.width(), a.height());
        let mut per_channel = 0.0;
        for c in 0..a.channels() {
            let mut total = 0.0;
            let mut count = 0;
            for y0 in 0..=h - WINDOW {
                for x0 in 0..=w - WINDOW {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for dy in 0..WINDOW {
                        for dx in 0..WINDOW {
                            let wt = taps[dy] * taps[dx];
                            ma += wt * f64::from(a.sample(x0 + dx, y0 + dy, c));
                            mb += wt * f64::from(b.sample(x0 + dx, y0 + dy, c));
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for dy in 0..WINDOW {
                        for dx in 0..WINDOW {
                            let wt = taps[dy] * taps[dx];
                            let da = f64::from(a.sample(x0 + dx, y0 + dy, c)) - ma;
                            let db = f64::from(b.sample(x0 + dx, y0 + dy, c)) - mb;
                            va += wt * da * da;
                            vb += wt * db * db;
                            cov += wt * da * db;
                        }
                    }
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            per_channel += total / f64::from(count);
        }
        per_channel / a.channels() as f64
    }

    fn noise_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let zero = Image::filled(4, 4, 3, 0).unwrap();
        let full = Image::filled(4, 4, 3, 255).unwrap();
        assert_eq!(psnr(&zero, &zero).unwrap(), f64::INFINITY);
        assert!(psnr(&zero, &full).unwrap().abs() < 1e-12);
        let a = Image::filled(4, 4, 1, 100).unwrap();
        let b = Image::filled(4, 4, 1, 116).unwrap();
        let expected = 10.0 * (65025.0f64 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.05).abs() < 0.01);
        assert!(psnr(&a, &Image::filled(4, 5, 1, 0).unwrap()).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = noise_image(32, 32, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let offsets: Vec<f64> = (0..base.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noisy = |amp: f64| {
            let d = base
                .data()
                .iter()
                .zip(&offsets)
                .map(|(&v, o)| (f64::from(v) + amp * o).round().clamp(0.0, 255.0) as u8)
                .collect();
            Image::new(32, 32, 1, d).unwrap()
        };
        let p: Vec<f64> = [4.0, 16.0, 64.0].iter().map(|&a| psnr(&base, &noisy(a)).unwrap()).collect();
        assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = Image::filled(16, 16, 1, 100).unwrap();
        let b = Image::filled(16, 16, 1, 110).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let closed = (2.0 * 100.0 * 110.0 + c1) / (100.0f64 * 100.0 + 110.0 * 110.0 + c1);
        assert!((closed - 0.99548).abs() < 1e-5);
        let s = ssim(&a, &b).unwrap();
        assert!((s - closed).abs() < 1e-9, "{s} vs {closed}");
        assert!((ssim_brute(&a, &b) - closed).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        for (seed, c) in [(1u64, 1usize), (2, 3)] {
            let a = noise_image(19, 16, c, seed);
            let b = noise_image(19, 16, c, seed + 100);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_brute(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_errors() {
        let small = Image::filled(10, 20, 1, 0).unwrap();
        assert!(ssim(&small, &small).is_err());
        let a = Image::filled(12, 12, 1, 0).unwrap();
        let b = Image::filled(12, 12, 3, 0).unwrap();
        assert!(ssim(&a, &b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = noise_image(12, 13, 3, s1);
            let b = noise_image(12, 13, 3, s2);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= 1.0);
            prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }
    }
}
