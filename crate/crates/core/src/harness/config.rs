//! Degradation specs and `key = value` training configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::companding::compress_bits;
use crate::error::{Error, Result};
use crate::halftone::floyd_steinberg;
use crate::image::Image;
use crate::perceptual::{FeatureNet, RANDOM_WIDTHS, TAPS};
use crate::unet::UNetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degradation {
    /// Truncate 8-bit samples to the given number of bits.
    Compand(u8),
    Halftone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegradationSpec {
    pub kind: Degradation,
    pub color: bool,
}

impl DegradationSpec {
    pub fn compand(bits: u8, color: bool) -> Result<Self> {
        if !(1..=5).contains(&bits) {
            return Err(Error::Config(format!("compand bits must be in 1..=5, got {bits}")));
        }
        Ok(DegradationSpec { kind: Degradation::Compand(bits), color })
    }

    pub fn halftone(color: bool) -> Self {
        DegradationSpec { kind: Degradation::Halftone, color }
    }

    pub fn channels(&self) -> usize {
        if self.color {
            3
        } else {
            1
        }
    }

    /// Converts `img` to this spec's channel count; the reference the
    /// degraded and restored images are scored against.
    pub fn reference(&self, img: &Image) -> Result<Image> {
        img.to_channels(self.channels())
    }

    /// Degrades an already converted reference image.
    pub fn degrade(&self, reference: &Image) -> Result<Image> {
        match self.kind {
            Degradation::Compand(bits) => compress_bits(reference, bits, 8),
            Degradation::Halftone => Ok(floyd_steinberg(reference)),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ch = if self.color { "color" } else { "gray" };
        match self.kind {
            Degradation::Compand(bits) => write!(f, "compand:{bits}:{ch}"),
            Degradation::Halftone => write!(f, "halftone:{ch}"),
        }
    }
}

/// `compand:L[:gray|color]` or `halftone[:gray|color]`; color is the default.
impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let color = |p: Option<&&str>| match p.copied() {
            None | Some("color") => Ok(true),
            Some("gray") => Ok(false),
            Some(other) => Err(Error::Config(format!("unknown channel mode {other:?} in spec {s:?}"))),
        };
        match parts.as_slice() {
            ["compand", bits, rest @ ..] if rest.len() <= 1 => {
                let bits: u8 = bits
                    .parse()
                    .map_err(|_| Error::Config(format!("bad bit count in spec {s:?}")))?;
                Self::compand(bits, color(rest.first())?)
            }
            ["halftone", rest @ ..] if rest.len() <= 1 => Ok(Self::halftone(color(rest.first())?)),
            _ => Err(Error::Config(format!(
                "unknown degradation spec {s:?}; expected compand:L[:gray|color] or halftone[:gray|color]"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhiSource {
    /// Seeded He-normal weights with the given block widths.
    Random { widths: [usize; 5], seed: u64 },
    /// Imported VGG weights in an NNWT file.
    Nnwt(PathBuf),
}

impl PhiSource {
    pub fn load(&self) -> Result<FeatureNet<f32>> {
        match self {
            PhiSource::Random { widths, seed } => FeatureNet::random(*widths, *seed),
            PhiSource::Nnwt(path) => FeatureNet::from_nnwt(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub degradation: DegradationSpec,
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub loss_tap: String,
    pub seed: u64,
    pub unet: UNetConfig,
    pub phi: PhiSource,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl TrainingConfig {
    /// Single-CPU scale: depth-2 U-Net on 64×64 patches.
    pub fn desk() -> Self {
        let degradation = DegradationSpec { kind: Degradation::Compand(3), color: true };
        TrainingConfig {
            degradation,
            patch_size: 64,
            batch_size: 4,
            iterations: 2000,
            learning_rate: 2e-3,
            loss_tap: "conv1_1".into(),
            seed: 0,
            unet: UNetConfig {
                depth: 2,
                base_channels: 16,
                channel_cap: 256,
                in_channels: 3,
                out_channels: 3,
                leaky_slope: 0.2,
                input_skip: true,
            },
            phi: PhiSource::Random { widths: RANDOM_WIDTHS, seed: 0 },
            log_every: 100,
            checkpoint_every: 0,
        }
    }

    /// Full-scale setup: 256×256 inputs, batch 16, 30k
    /// iterations at 2e-4, depth-4 U-Net.
    pub fn full_scale() -> Self {
        TrainingConfig {
            patch_size: 256,
            batch_size: 16,
            iterations: 30_000,
            learning_rate: 2e-4,
            unet: UNetConfig { depth: 4, base_channels: 32, ..TrainingConfig::desk().unet },
            log_every: 500,
            checkpoint_every: 5000,
            ..TrainingConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        let c = self.degradation.channels();
        if self.unet.in_channels != c || self.unet.out_channels != c {
            return Err(Error::Config(format!(
                "network channels ({}/{}) do not match degradation {}",
                self.unet.in_channels, self.unet.out_channels, self.degradation
            )));
        }
        if let Degradation::Compand(bits) = self.degradation.kind {
            if !(1..=5).contains(&bits) {
                return Err(Error::Config(format!("compand bits must be in 1..=5, got {bits}")));
            }
        }
        let Some(block) = TAPS.iter().position(|t| *t == self.loss_tap) else {
            return Err(Error::Config(format!(
                "loss_tap must be one of {}, got {}",
                TAPS.join(", "),
                self.loss_tap
            )));
        };
        let multiple = self.unet.size_multiple().max(1 << block);
        if self.patch_size == 0 || self.patch_size % multiple != 0 {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of {multiple}",
                self.patch_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let u = &self.unet;
        let (phi, widths, phi_seed) = match &self.phi {
            PhiSource::Random { widths, seed } => (
                "random".to_string(),
                widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
                seed.to_string(),
            ),
            PhiSource::Nnwt(path) => (path.display().to_string(), String::new(), String::new()),
        };
        let mut out = vec![
            ("degradation", self.degradation.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("iterations", self.iterations.to_string()),
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("loss_tap", self.loss_tap.clone()),
            ("seed", self.seed.to_string()),
            ("depth", u.depth.to_string()),
            ("base_channels", u.base_channels.to_string()),
            ("channel_cap", u.channel_cap.to_string()),
            ("leaky_slope", u.leaky_slope.to_string()),
            ("input_skip", u.input_skip.to_string()),
            ("phi", phi),
        ];
        if !widths.is_empty() {
            out.push(("phi_widths", widths));
            out.push(("phi_seed", phi_seed));
        }
        out.push(("log_every", self.log_every.to_string()));
        out.push(("checkpoint_every", self.checkpoint_every.to_string()));
        out
    }

    /// Canonical `key = value` text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text without the keys that only control
    /// run length and reporting, so a checkpoint can be extended.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.entries() {
            if matches!(k, "iterations" | "log_every" | "checkpoint_every") {
                continue;
            }
            hasher.update(format!("{k} = {v}\n").as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Parses `key = value` lines over a preset (`preset = desk|full`, default
    /// desk). `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(_, k, _)| k == "preset").map(|(_, _, v)| v.as_str()) {
            None | Some("desk") => TrainingConfig::desk(),
            Some("full") => TrainingConfig::full_scale(),
            Some(other) => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        let mut phi: Option<String> = None;
        let mut widths = RANDOM_WIDTHS;
        let mut phi_seed = 0u64;
        for (lineno, key, value) in pairs {
            let bad = |what: &str| Error::Config(format!("line {lineno}: bad {what} value {value:?}"));
            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|_| bad(&key))?
                };
            }
            match key.as_str() {
                "preset" => {}
                "degradation" => cfg.degradation = value.parse()?,
                "patch_size" => cfg.patch_size = num!(usize),
                "batch_size" => cfg.batch_size = num!(usize),
                "iterations" => cfg.iterations = num!(usize),
                "learning_rate" => cfg.learning_rate = num!(f64),
                "loss_tap" => cfg.loss_tap = value.clone(),
                "seed" => cfg.seed = num!(u64),
                "depth" => cfg.unet.depth = num!(usize),
                "base_channels" => cfg.unet.base_channels = num!(usize),
                "channel_cap" => cfg.unet.channel_cap = num!(usize),
                "leaky_slope" => cfg.unet.leaky_slope = num!(f64),
                "input_skip" => cfg.unet.input_skip = num!(bool),
                "phi" => phi = Some(value.clone()),
                "phi_widths" => {
                    let parsed: Vec<usize> = value
                        .split(',')
                        .map(|p| p.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("phi_widths"))?;
                    widths = parsed.try_into().map_err(|_| bad("phi_widths (need 5)"))?;
                }
                "phi_seed" => phi_seed = num!(u64),
                "log_every" => cfg.log_every = num!(usize),
                "checkpoint_every" => cfg.checkpoint_every = num!(usize),
                _ => return Err(Error::Config(format!("line {lineno}: unknown key {key:?}"))),
            }
        }
        cfg.phi = match phi.as_deref() {
            None | Some("random") => PhiSource::Random { widths, seed: phi_seed },
            Some(path) => PhiSource::Nnwt(PathBuf::from(path)),
        };
        let c = cfg.degradation.channels();
        cfg.unet.in_channels = c;
        cfg.unet.out_channels = c;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s: DegradationSpec = "compand:3".parse().unwrap();
        assert_eq!(s, DegradationSpec::compand(3, true).unwrap());
        assert_eq!("compand:2:gray".parse::<DegradationSpec>().unwrap().to_string(), "compand:2:gray");
        assert_eq!("halftone".parse::<DegradationSpec>().unwrap(), DegradationSpec::halftone(true));
        assert_eq!("halftone:gray".parse::<DegradationSpec>().unwrap().channels(), 1);
        for bad in ["compand:0", "compand:6", "compand", "compand:3:rgb", "dither", "halftone:gray:x"] {
            assert!(bad.parse::<DegradationSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn degrade_matches_standalone_ops() {
        let img = Image::new(4, 1, 1, vec![0, 37, 128, 255]).unwrap();
        let spec = DegradationSpec::compand(3, false).unwrap();
        assert_eq!(spec.degrade(&img).unwrap(), compress_bits(&img, 3, 8).unwrap());
        let spec = DegradationSpec::halftone(false);
        assert_eq!(spec.degrade(&img).unwrap(), floyd_steinberg(&img));
        let color = DegradationSpec::halftone(true).reference(&img).unwrap();
        assert_eq!(color.channels(), 3);
    }

    #[test]
    fn text_round_trip() {
        for cfg in [TrainingConfig::desk(), TrainingConfig::full_scale()] {
            assert_eq!(TrainingConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
        let mut cfg = TrainingConfig::desk();
        cfg.phi = PhiSource::Nnwt("weights/vgg.nnwt".into());
        cfg.degradation = DegradationSpec::halftone(false);
        cfg.unet.in_channels = 1;
        cfg.unet.out_channels = 1;
        assert_eq!(TrainingConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_over_preset() {
        let cfg = TrainingConfig::parse("preset = full\n# comment\niterations = 10\ndegradation = halftone:gray\n").unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.unet.in_channels, 1);
        assert!(TrainingConfig::parse("bogus = 1").is_err());
        assert!(TrainingConfig::parse("patch_size = 62").is_err());
        assert!(TrainingConfig::parse("patch_size = 4\ndepth = 2\nloss_tap = conv4_1").is_err());
        assert!(TrainingConfig::parse("loss_tap = conv1_2").is_err());
        assert!(TrainingConfig::parse("iterations").is_err());
    }

    #[test]
    fn fingerprint_ignores_run_length() {
        let a = TrainingConfig::desk();
        let mut b = a.clone();
        b.iterations = 7;
        b.log_every = 1;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
