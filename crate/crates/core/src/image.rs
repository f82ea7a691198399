//! 8-bit raster images, tensor conversion and file I/O.
//!
//! Supported files are PNG (8-bit gray or RGB; palette and alpha variants are
//! flattened on load) and binary PGM (P5) / PPM (P6) with maxval 255.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Row-major, channel-interleaved 8-bit image.
///
/// `bit_depth` records how many significant quantization bits the samples
/// carry: with `bit_depth = b < 8` every sample is a multiple of `2^(8-b)`.
/// Binary images (`b = 1`) may also use the display alphabet {0, 255}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    bit_depth: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_bit_depth(width, height, channels, 8, data)
    }

    pub fn with_bit_depth(
        width: usize,
        height: usize,
        channels: usize,
        bit_depth: u8,
        data: Vec<u8>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Param(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if !(1..=8).contains(&bit_depth) {
            return Err(Error::Param(format!(
                "bit depth must be in 1..=8, got {bit_depth}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        let step = 1u16 << (8 - bit_depth);
        let binary_display = |v: u8| bit_depth == 1 && v == 255;
        if let Some(v) = data.iter().find(|&&v| u16::from(v) % step != 0 && !binary_display(v)) {
            return Err(Error::Param(format!(
                "sample {v} is not a multiple of {step} required by bit depth {bit_depth}"
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            bit_depth,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a row-major plane.
    pub fn channel_plane(&self, c: usize) -> Vec<u8> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        bit_depth: u8,
        planes: &[Vec<u8>],
    ) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0u8; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::Shape("plane size mismatch".into()));
            }
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self::with_bit_depth(width, height, channels, bit_depth, data)
    }

    /// Window `[x, x+w) × [y, y+h)`; keeps the bit depth.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            width: w,
            height: h,
            channels: c,
            bit_depth: self.bit_depth,
            data,
        })
    }

    /// Converts between gray and RGB. Gray to RGB replicates the plane;
    /// RGB to gray uses Rec. 601 luma weights, rounded.
    pub fn to_channels(&self, channels: usize) -> Result<Self> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 3) => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Image::new(self.width, self.height, 3, data)
            }
            (3, 1) => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| {
                        let y = 0.299 * f64::from(p[0])
                            + 0.587 * f64::from(p[1])
                            + 0.114 * f64::from(p[2]);
                        y.round().clamp(0.0, 255.0) as u8
                    })
                    .collect();
                Image::new(self.width, self.height, 1, data)
            }
            (_, b) => Err(Error::Param(format!("cannot convert to {b} channels"))),
        }
    }
}

/// Reads a PNG, PGM (P5) or PPM (P6) file as an 8-bit image.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes).map_err(|reason| Error::Decode {
            path: path.to_path_buf(),
            reason,
        });
    }
    if !bytes.starts_with(b"\x89PNG") {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: "not a PNG, binary PGM or binary PPM file".into(),
        });
    }
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let unsupported = |reason: &str| Error::Unsupported {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let (channels, data) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, decoded.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, decoded.to_rgb8().into_raw()),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => return Err(unsupported("16-bit samples")),
        _ => return Err(unsupported("unsupported sample type")),
    };
    Image::new(w, h, channels, data)
}

/// Writes `img` as PGM/PPM when the extension is `.pgm`/`.ppm`/`.pnm`, PNG otherwise.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("pgm") | Some("ppm") | Some("pnm") => encode_pnm(img),
        _ => {
            let color = if img.channels == 1 {
                image::ExtendedColorType::L8
            } else {
                image::ExtendedColorType::Rgb8
            };
            let mut out = Vec::new();
            image::write_buffer_with_format(
                &mut Cursor::new(&mut out),
                &img.data,
                img.width as u32,
                img.height as u32,
                color,
                ImageFormat::Png,
            )
            .map_err(|e| Error::Format(format!("{}: PNG encode: {e}", path.display())))?;
            out
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    let n = w * h * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("truncated raster: need {n} bytes"))?;
    Image::new(w, h, channels, raster.to_vec()).map_err(|e| e.to_string())
}

/// 1×C×H×W planar tensor with values `sample / 255`.
pub fn to_tensor<T: Scalar>(img: &Image) -> Tensor4<T> {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut t = Tensor4::zeros([1, c, h, w]);
    let scale = T::from_f64_lossy(255.0);
    for ch in 0..c {
        let plane = t.plane_mut(0, ch);
        for (i, v) in plane.iter_mut().enumerate() {
            *v = T::from_f64_lossy(f64::from(img.data[i * c + ch])) / scale;
        }
    }
    t
}

/// Inverse of [`to_tensor`]: clamp to [0,1], scale by 255, round half away from zero.
pub fn from_tensor<T: Scalar>(t: &Tensor4<T>) -> Result<Image> {
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::Shape(format!("expected batch of 1, got {n}")));
    }
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("expected 1 or 3 channels, got {c}")));
    }
    let mut data = vec![0u8; w * h * c];
    for ch in 0..c {
        for (i, &v) in t.plane(0, ch).iter().enumerate() {
            let v = v.to_f64_lossy();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            // f64::round is half away from zero
            data[i * c + ch] = (v * 255.0).round() as u8;
        }
    }
    Image::new(w, h, c, data)
}

/// 256-bin intensity histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    /// One 256-bin table when pooled, one per channel otherwise.
    pub bins: Vec<[u64; 256]>,
    pub per_channel: bool,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().flat_map(|b| b.iter()).sum()
    }

    /// Number of nonzero bins in each table.
    pub fn occupied(&self) -> Vec<usize> {
        self.bins
            .iter()
            .map(|b| b.iter().filter(|&&n| n > 0).count())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value");
        if self.per_channel {
            for c in 0..self.bins.len() {
                out.push_str(&format!(",channel{c}"));
            }
        } else {
            out.push_str(",count");
        }
        out.push('\n');
        for v in 0..256 {
            out.push_str(&v.to_string());
            for b in &self.bins {
                out.push_str(&format!(",{}", b[v]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn intensity_histogram(img: &Image, per_channel: bool) -> Histogram {
    let tables = if per_channel { img.channels } else { 1 };
    let mut bins = vec![[0u64; 256]; tables];
    for (i, &v) in img.data.iter().enumerate() {
        let t = if per_channel { i % img.channels } else { 0 };
        bins[t][v as usize] += 1;
    }
    Histogram { bins, per_channel }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_decode_direct() {
        let bytes = b"P5\n2 2\n255\n\x00\x40\x80\xff";
        let img = decode_pnm(bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0, 64, 128, 255]);
        assert_eq!(img.bit_depth(), 8);
    }

    #[test]
    fn pgm_header_with_comment() {
        let bytes = b"P5 # made by hand\n2 1 255\n\x07\x09";
        assert_eq!(decode_pnm(bytes).unwrap().data(), &[7, 9]);
    }

    #[test]
    fn pnm_rejects_other_maxval_and_truncation() {
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pnm(b"P6\n2 2\n255\n\x00\x00").is_err());
    }

    #[test]
    fn tensor_scaling() {
        let img = Image::new(3, 1, 1, vec![255, 0, 128]).unwrap();
        let t = to_tensor::<f64>(&img);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
        assert!((t.data()[2] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn from_tensor_clamps_and_rounds() {
        let t = Tensor4::from_vec([1, 1, 1, 4], vec![1.2f64, 0.50196, -0.3, 0.5 / 255.0]).unwrap();
        let img = from_tensor(&t).unwrap();
        assert_eq!(img.data(), &[255, 128, 0, 1]);
        assert_eq!(img.bit_depth(), 8);
    }

    #[test]
    fn from_tensor_rejects_bad_shapes() {
        assert!(from_tensor(&Tensor4::<f32>::zeros([2, 1, 2, 2])).is_err());
        assert!(from_tensor(&Tensor4::<f32>::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn histogram_constant() {
        let img = Image::filled(10, 10, 1, 77).unwrap();
        let hist = intensity_histogram(&img, false);
        assert_eq!(hist.bins[0][77], 100);
        assert_eq!(hist.total(), 100);
        assert_eq!(hist.occupied(), vec![1]);
    }

    #[test]
    fn bit_depth_invariant_enforced() {
        assert!(Image::with_bit_depth(1, 1, 1, 2, vec![64]).is_ok());
        assert!(Image::with_bit_depth(1, 1, 1, 2, vec![65]).is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn channel_conversion() {
        let gray = Image::new(2, 1, 1, vec![10, 200]).unwrap();
        let rgb = gray.to_channels(3).unwrap();
        assert_eq!(rgb.data(), &[10, 10, 10, 200, 200, 200]);
        assert_eq!(rgb.to_channels(1).unwrap(), gray);
    }

    fn any_image() -> impl Strategy<Value = Image> {
        (1usize..9, 1usize..9, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |d| Image::new(w, h, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn tensor_round_trip(img in any_image()) {
            prop_assert_eq!(from_tensor(&to_tensor::<f32>(&img)).unwrap(), img.clone());
            prop_assert_eq!(from_tensor(&to_tensor::<f64>(&img)).unwrap(), img);
        }

        #[test]
        fn histogram_mass(img in any_image(), per_channel in any::<bool>()) {
            let hist = intensity_histogram(&img, per_channel);
            prop_assert_eq!(hist.total() as usize, img.data().len());
        }

        #[test]
        fn pnm_round_trip(img in any_image()) {
            prop_assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
        }
    }
}
