//! Corpus loading and seeded (degraded, original) patch sampling.

use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DegradationSpec;
use crate::error::{Error, Result};
use crate::image::{load_image, to_tensor, Image};
use crate::tensor::Tensor4;

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub name: String,
    /// Original converted to the spec's channel count.
    pub reference: Image,
    /// Whole-image degradation of `reference`.
    pub degraded: Image,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: DegradationSpec,
    pub items: Vec<CorpusItem>,
    /// Images skipped for being smaller than the requested minimum.
    pub skipped: usize,
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

impl Corpus {
    /// Loads every image in `dir` at least `min_size` on each side and
    /// degrades it whole, so halftone patches see the full-image error diffusion.
    pub fn load(dir: &Path, spec: DegradationSpec, min_size: usize) -> Result<Self> {
        let mut items = Vec::new();
        let mut skipped = 0;
        for path in list_images(dir)? {
            let img = load_image(&path)?;
            if img.width() < min_size || img.height() < min_size {
                skipped += 1;
                continue;
            }
            let reference = spec.reference(&img)?;
            let degraded = spec.degrade(&reference)?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            items.push(CorpusItem { name, reference, degraded });
        }
        if skipped > 0 {
            warn!("{}: skipped {skipped} images smaller than {min_size}x{min_size}", dir.display());
        }
        if items.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no usable images of at least {min_size}x{min_size} in {}",
                dir.display()
            )));
        }
        Ok(Corpus { spec, items, skipped })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Deterministic patch sampler. Batch `i` depends only on `(seed, i)`, so a
/// resumed run draws exactly the batches the uninterrupted run would have.
#[derive(Clone, Debug)]
pub struct PairSampler<'a> {
    corpus: &'a Corpus,
    patch_size: usize,
    seed: u64,
}

impl<'a> PairSampler<'a> {
    pub fn new(corpus: &'a Corpus, patch_size: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Param("patch_size must be >= 1".into()));
        }
        if let Some(small) = corpus
            .items
            .iter()
            .find(|i| i.reference.width() < patch_size || i.reference.height() < patch_size)
        {
            return Err(Error::Param(format!(
                "{} is smaller than the {patch_size}x{patch_size} patch",
                small.name
            )));
        }
        Ok(PairSampler { corpus, patch_size, seed })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(Image, Image)> {
        let item = &self.corpus.items[rng.random_range(0..self.corpus.len())];
        let p = self.patch_size;
        let x = rng.random_range(0..=item.reference.width() - p);
        let y = rng.random_range(0..=item.reference.height() - p);
        Ok((item.degraded.crop(x, y, p, p)?, item.reference.crop(x, y, p, p)?))
    }

    /// `(input, target)` tensors in [0,1] for training iteration `iteration`.
    pub fn batch(&self, iteration: u64, batch_size: usize) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
        let mut rng = self.rng(iteration);
        let mut inputs = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (d, r) = self.draw(&mut rng)?;
            inputs.push(to_tensor::<f32>(&d));
            targets.push(to_tensor::<f32>(&r));
        }
        Ok((Tensor4::stack(&inputs)?, Tensor4::stack(&targets)?))
    }

    /// Endless stream of single `(degraded, original)` patches.
    pub fn pairs(&self) -> impl Iterator<Item = Result<(Image, Image)>> + '_ {
        let mut rng = self.rng(u64::MAX);
        std::iter::repeat_with(move || self.draw(&mut rng))
    }
}

/// Loads `dir` and returns the first `count` pairs of the seeded stream.
pub fn make_pairs(
    dir: &Path,
    spec: DegradationSpec,
    patch_size: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<(Tensor4<f32>, Tensor4<f32>)>> {
    let corpus = Corpus::load(dir, spec, patch_size)?;
    let sampler = PairSampler::new(&corpus, patch_size, seed)?;
    sampler
        .pairs()
        .take(count)
        .map(|p| p.map(|(d, r)| (to_tensor(&d), to_tensor(&r))))
        .collect()
}
