//! Floyd–Steinberg error-diffusion halftoning.
//!
//! Raster scan (left to right, top to bottom), threshold 128, classic
//! 7/16, 3/16, 5/16, 1/16 kernel. Error is carried in floating point and
//! weights that fall outside the image are dropped.

use crate::image::Image;

/// Binarizes each channel independently; output samples are 0 or 255 with `bit_depth = 1`.
pub fn floyd_steinberg(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<u8>> = (0..img.channels())
        .map(|c| diffuse_plane(&img.channel_plane(c), w, h))
        .collect();
    Image::from_planes(w, h, 1, &planes).expect("binary planes are valid at bit depth 1")
}

fn diffuse_plane(plane: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut acc: Vec<f64> = plane.iter().map(|&v| f64::from(v)).collect();
    let mut out = vec![0u8; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let u = acc[i];
            let (level, value) = if u >= 128.0 { (255u8, 255.0) } else { (0u8, 0.0) };
            out[i] = level;
            let err = u - value;
            if x + 1 < w {
                acc[i + 1] += err * 7.0 / 16.0;
            }
            if y + 1 < h {
                let below = i + w;
                if x > 0 {
                    acc[below - 1] += err * 3.0 / 16.0;
                }
                acc[below] += err * 5.0 / 16.0;
                if x + 1 < w {
                    acc[below + 1] += err / 16.0;
                }
            }
        }
    }
    out
}
