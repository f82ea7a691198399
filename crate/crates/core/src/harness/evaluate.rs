//! Restoration of whole images and table-style evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{Degradation, DegradationSpec, TrainingConfig};
use super::pairs::Corpus;
use super::train::{train, Checkpoint};
use crate::error::{Error, Result};
use crate::image::{from_tensor, to_tensor, Image};
use crate::metrics::{psnr, ssim};
use crate::nn::Mode;
use crate::tensor::{Scalar, Tensor4};
use crate::unet::UNetParams;

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn reflect_pad<T: Scalar>(t: &Tensor4<T>, h: usize, w: usize) -> Tensor4<T> {
    let [n, c, th, tw] = t.shape();
    let mut out = Tensor4::zeros([n, c, h, w]);
    for ni in 0..n {
        for ch in 0..c {
            let src = t.plane(ni, ch);
            let dst = out.plane_mut(ni, ch);
            for y in 0..h {
                let sy = reflect(y, th);
                for x in 0..w {
                    dst[y * w + x] = src[sy * tw + reflect(x, tw)];
                }
            }
        }
    }
    out
}

fn crop<T: Scalar>(t: &Tensor4<T>, h: usize, w: usize) -> Tensor4<T> {
    let [n, c, _, tw] = t.shape();
    let mut out = Tensor4::zeros([n, c, h, w]);
    for ni in 0..n {
        for ch in 0..c {
            let src = t.plane(ni, ch);
            let dst = out.plane_mut(ni, ch);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[y * tw..y * tw + w]);
            }
        }
    }
    out
}

/// Eval-mode restoration of a whole image. Sides that are not multiples of
/// `2^depth` are reflect-padded and the output cropped back.
pub fn expand(params: &UNetParams<f32>, img: &Image) -> Result<Image> {
    let img = img.to_channels(params.config.in_channels)?;
    let m = params.config.size_multiple();
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let x = to_tensor::<f32>(&img);
    let x = if (ph, pw) == (h, w) { x } else { reflect_pad(&x, ph, pw) };
    let (y, _) = params.forward(&x, Mode::Eval)?;
    from_tensor(&crop(&y, h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub filename: String,
    pub psnr_degraded: f64,
    pub ssim_degraded: f64,
    pub psnr_restored: f64,
    pub ssim_restored: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub spec: DegradationSpec,
    pub rows: Vec<EvalRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// `(psnr_degraded, ssim_degraded, psnr_restored, ssim_restored)` means.
    pub fn means(&self) -> (f64, f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: fn(&EvalRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        (
            sum(|r| r.psnr_degraded),
            sum(|r| r.ssim_degraded),
            sum(|r| r.psnr_restored),
            sum(|r| r.ssim_restored),
        )
    }

    fn column_names(&self) -> (&'static str, &'static str) {
        match self.spec.kind {
            Degradation::Compand(_) => ("Compressed", "Expanded"),
            Degradation::Halftone => ("Halftone", "CNN Inverse"),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,psnr_degraded,ssim_degraded,psnr_restored,ssim_restored\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{:.6}",
                r.filename,
                fmt_db(r.psnr_degraded),
                r.ssim_degraded,
                fmt_db(r.psnr_restored),
                r.ssim_restored
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let (deg, res) = self.column_names();
        let width = self.rows.iter().map(|r| r.filename.len()).max().unwrap_or(0).max(8);
        let mut out = format!("degradation: {}\n", self.spec);
        let _ = writeln!(
            out,
            "{:<width$}  {:>14} {:>14}  {:>14} {:>14}",
            "image",
            format!("{deg} PSNR"),
            format!("{deg} SSIM"),
            format!("{res} PSNR"),
            format!("{res} SSIM"),
        );
        let line = |out: &mut String, name: &str, a: f64, b: f64, c: f64, d: f64| {
            let _ = writeln!(out, "{name:<width$}  {:>14} {b:>14.4}  {:>14} {d:>14.4}", fmt_db(a), fmt_db(c));
        };
        for r in &self.rows {
            line(&mut out, &r.filename, r.psnr_degraded, r.ssim_degraded, r.psnr_restored, r.ssim_restored);
        }
        let (a, b, c, d) = self.means();
        line(&mut out, "mean", a, b, c, d);
        out
    }
}

/// Scores degraded and restored versions of every corpus image against its
/// original. The checkpoint must have been trained for `spec`.
pub fn evaluate(ckpt: &Checkpoint, corpus: &Corpus) -> Result<EvalReport> {
    if ckpt.config.degradation != corpus.spec {
        return Err(Error::Mismatch(format!(
            "checkpoint trained for {}, evaluation asks for {}",
            ckpt.config.degradation, corpus.spec
        )));
    }
    let mut rows = Vec::with_capacity(corpus.len());
    for item in &corpus.items {
        let restored = expand(&ckpt.params, &item.degraded)?;
        rows.push(EvalRow {
            filename: item.name.clone(),
            psnr_degraded: psnr(&item.reference, &item.degraded)?,
            ssim_degraded: ssim(&item.reference, &item.degraded)?,
            psnr_restored: psnr(&item.reference, &restored)?,
            ssim_restored: ssim(&item.reference, &restored)?,
        });
    }
    Ok(EvalReport { spec: corpus.spec, rows })
}

pub fn evaluate_dir(ckpt: &Checkpoint, dir: &Path, spec: DegradationSpec) -> Result<EvalReport> {
    // SSIM needs an 11×11 window
    evaluate(ckpt, &Corpus::load(dir, spec, 11)?)
}

#[derive(Clone, Debug)]
pub struct LayerStudyRow {
    pub tap: String,
    pub report: EvalReport,
    pub losses: Vec<f32>,
}

/// One model per tap under an identical budget, compared against the
/// degraded baseline.
#[derive(Clone, Debug)]
pub struct LayerStudy {
    pub rows: Vec<LayerStudyRow>,
}

impl LayerStudy {
    pub fn to_text(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::from("(no runs)\n");
        };
        let (deg, _) = first.report.column_names();
        let (bp, bs, _, _) = first.report.means();
        let mut out = format!("degradation: {}\n{:<8}{:>12}", first.report.spec, "", deg);
        for r in &self.rows {
            let _ = write!(out, "{:>12}", r.tap);
        }
        let _ = write!(out, "\n{:<8}{:>12.4}", "PSNR", bp);
        for r in &self.rows {
            let _ = write!(out, "{:>12.4}", r.report.means().2);
        }
        let _ = write!(out, "\n{:<8}{:>12.4}", "SSIM", bs);
        for r in &self.rows {
            let _ = write!(out, "{:>12.4}", r.report.means().3);
        }
        out.push('\n');
        out
    }
}

/// Trains `config` once per tap from scratch and evaluates each on `test`.
pub fn layer_study(config: &TrainingConfig, taps: &[&str], train_set: &Corpus, test: &Corpus) -> Result<LayerStudy> {
    let mut rows = Vec::with_capacity(taps.len());
    for tap in taps {
        let mut cfg = config.clone();
        cfg.loss_tap = tap.to_string();
        let phi = cfg.phi.load()?;
        let ckpt = train(&cfg, train_set, &phi, Checkpoint::initial(&cfg)?, |_| Ok(()))?;
        rows.push(LayerStudyRow {
            tap: tap.to_string(),
            report: evaluate(&ckpt, test)?,
            losses: ckpt.losses,
        });
    }
    Ok(LayerStudy { rows })
}
