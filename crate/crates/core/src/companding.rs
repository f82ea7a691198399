//! Bit-depth reduction by truncating low bits, and display rescaling.

use crate::error::{Error, Result};
use crate::image::Image;

fn check_bits(low: u8, high: u8) -> Result<()> {
    if low < 1 || low >= high || high > 8 {
        return Err(Error::Param(format!(
            "bit depths must satisfy 1 <= l < h <= 8, got l={low}, h={high}"
        )));
    }
    Ok(())
}

/// Quantizes every sample to `floor(v / 2^(h-l)) * 2^(h-l)`, channel by channel.
///
/// The result keeps the 8-bit container but carries `bit_depth = low`.
pub fn compress_bits(img: &Image, low: u8, high: u8) -> Result<Image> {
    check_bits(low, high)?;
    if img.bit_depth() != high {
        return Err(Error::Param(format!(
            "image has bit depth {}, expected {high}",
            img.bit_depth()
        )));
    }
    let shift = high - low;
    let data = img.data().iter().map(|&v| (v >> shift) << shift).collect();
    Image::with_bit_depth(img.width(), img.height(), img.channels(), low, data)
}

/// Spreads the `2^l` levels of a compressed image over the full `2^h` display range:
/// `round(v / 2^(h-l) * (2^h - 1) / (2^l - 1))`.
pub fn rescale_full_range(img: &Image, low: u8, high: u8) -> Result<Image> {
    check_bits(low, high)?;
    let step = 1u32 << (high - low);
    let top = f64::from((1u32 << high) - 1);
    let levels = f64::from((1u32 << low) - 1);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let v = u32::from(v);
            if v % step != 0 {
                return Err(Error::Param(format!(
                    "sample {v} is not a multiple of {step}; not an l={low} compressed image"
                )));
            }
            Ok((f64::from(v / step) * top / levels).round() as u8)
        })
        .collect::<Result<Vec<u8>>>()?;
    Image::new(img.width(), img.height(), img.channels(), data)
}

/// PSNR predicted for truncation to `low` bits when the error is uniform on
/// `[0, Δ)`, `Δ = 2^(8-low)`: MSE = Δ²/3.
pub fn truncation_psnr_estimate(low: u8) -> f64 {
    let delta = f64::from(1u32 << (8 - u32::from(low)));
    20.0 * 255f64.log10() - 10.0 * (delta * delta / 3.0).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(values: &[u8]) -> Image {
        Image::new(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn direct_values() {
        assert_eq!(compress_bits(&gray(&[200]), 4, 8).unwrap().data(), &[192]);
        assert_eq!(compress_bits(&gray(&[255]), 1, 8).unwrap().data(), &[128]);
        for l in 1..8 {
            assert_eq!(compress_bits(&gray(&[0]), l, 8).unwrap().data(), &[0]);
        }
        assert_eq!(compress_bits(&gray(&[255]), 3, 8).unwrap().bit_depth(), 3);
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = gray(&[1, 2]);
        assert!(compress_bits(&img, 8, 8).is_err());
        assert!(compress_bits(&img, 0, 8).is_err());
        assert!(compress_bits(&img, 9, 8).is_err());
        // source depth mismatch
        let low = compress_bits(&img, 4, 8).unwrap();
        assert!(compress_bits(&low, 2, 8).is_err());
        assert!(compress_bits(&low, 2, 4).is_ok());
    }

    #[test]
    fn rescale_examples() {
        let one = compress_bits(&gray(&[0, 200]), 1, 8).unwrap();
        assert_eq!(one.data(), &[0, 128]);
        assert_eq!(rescale_full_range(&one, 1, 8).unwrap().data(), &[0, 255]);
        assert_eq!(
            rescale_full_range(&gray(&[192, 64]), 2, 8).unwrap().data(),
            &[255, 85]
        );
        assert_eq!(rescale_full_range(&gray(&[240]), 4, 8).unwrap().data(), &[255]);
        assert!(rescale_full_range(&gray(&[65]), 2, 8).is_err());
    }

    #[test]
    fn estimate_at_three_bits() {
        assert!((truncation_psnr_estimate(3) - 22.80).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn idempotent_and_on_grid(v in proptest::collection::vec(any::<u8>(), 1..64), l in 1u8..8) {
            let img = gray(&v);
            let once = compress_bits(&img, l, 8).unwrap();
            let mut twice_src = Image::new(once.width(), 1, 1, once.data().to_vec()).unwrap();
            twice_src = compress_bits(&twice_src, l, 8).unwrap();
            prop_assert_eq!(once.data(), twice_src.data());
            let step = 1u16 << (8 - l);
            prop_assert!(once.data().iter().all(|&s| u16::from(s) % step == 0));
            let mut levels: Vec<u8> = once.data().to_vec();
            levels.sort_unstable();
            levels.dedup();
            prop_assert!(levels.len() <= 1 << l);
        }

        #[test]
        fn monotone(a in any::<u8>(), b in any::<u8>(), l in 1u8..8) {
            let (lo, hi) = (a.min(b), a.max(b));
            let q = compress_bits(&gray(&[lo, hi]), l, 8).unwrap();
            prop_assert!(q.data()[0] <= q.data()[1]);
            let r = rescale_full_range(&q, l, 8).unwrap();
            prop_assert!(r.data()[0] <= r.data()[1]);
        }
    }
}
