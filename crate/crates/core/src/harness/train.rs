//! Training loop and checkpoints.

use std::path::{Path, PathBuf};

use log::info;

use super::config::TrainingConfig;
use super::pairs::{Corpus, PairSampler};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Mode};
use crate::perceptual::{perceptual_loss, FeatureNet};
use crate::unet::{build_unet, UNetParams};
use crate::weights::{read_nnwt, write_nnwt, NamedTensor};

const LOSS_TENSOR: &str = "train.loss";

/// Complete training state; saving and reloading it is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub params: UNetParams<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed iterations.
    pub iteration: usize,
    /// Loss of every completed iteration.
    pub losses: Vec<f32>,
}

/// Companion header written next to the weights: `<weights>.txt`.
pub fn header_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

impl Checkpoint {
    /// Freshly initialized network and optimizer, nothing trained.
    pub fn initial(config: &TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut params = build_unet(&config.unet, config.seed)?;
        let adam = AdamState::new(
            AdamConfig::with_learning_rate(config.learning_rate),
            &params.trainable_sizes(),
        );
        Ok(Checkpoint {
            config: config.clone(),
            params,
            adam,
            iteration: 0,
            losses: Vec::new(),
        })
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.params.named_tensors();
        for (i, name) in self.params.trainable_names().iter().enumerate() {
            let (m, v) = (&self.adam.m[i], &self.adam.v[i]);
            tensors.push(NamedTensor::new(format!("adam.m.{name}"), vec![m.len()], m.clone()));
            tensors.push(NamedTensor::new(format!("adam.v.{name}"), vec![v.len()], v.clone()));
        }
        tensors.push(NamedTensor::new(LOSS_TENSOR, vec![self.losses.len()], self.losses.clone()));
        write_nnwt(path, &tensors)?;
        let header = format!(
            "fingerprint = {}\niteration = {}\nadam_step = {}\n[config]\n{}",
            self.fingerprint(),
            self.iteration,
            self.adam.step,
            self.config.to_text()
        );
        let hp = header_path(path);
        std::fs::write(&hp, header).map_err(|e| Error::io(&hp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let header = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let (meta, config_text) = header
            .split_once("[config]\n")
            .ok_or_else(|| Error::Format(format!("{}: missing [config] section", hp.display())))?;
        let mut fingerprint = None;
        let mut iteration = None;
        let mut step = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("{}: bad header line {line:?}", hp.display())))?;
            let v = v.trim();
            let num = || v.parse::<u64>().map_err(|_| Error::Format(format!("bad header value {v:?}")));
            match k.trim() {
                "fingerprint" => fingerprint = Some(v.to_string()),
                "iteration" => iteration = Some(num()? as usize),
                "adam_step" => step = Some(num()?),
                other => return Err(Error::Format(format!("unknown header key {other:?}"))),
            }
        }
        let (Some(fingerprint), Some(iteration), Some(step)) = (fingerprint, iteration, step) else {
            return Err(Error::Format(format!("{}: incomplete header", hp.display())));
        };
        let config = TrainingConfig::parse(config_text)?;
        if config.fingerprint() != fingerprint {
            return Err(Error::Mismatch(format!(
                "{}: recorded fingerprint does not match its config",
                hp.display()
            )));
        }

        let tensors = read_nnwt(path)?;
        let params = UNetParams::<f32>::from_named_tensors(&tensors)?;
        if params.config != config.unet {
            return Err(Error::Mismatch("network in weights file differs from header config".into()));
        }
        let find = |name: &str, len: Option<usize>| -> Result<Vec<f32>> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if t.dims.len() != 1 || len.is_some_and(|n| t.dims[0] != n) {
                return Err(Error::Format(format!("tensor {name} has dims {:?}", t.dims)));
            }
            Ok(t.data.clone())
        };
        let mut probe = params.clone();
        let sizes = probe.trainable_sizes();
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), &sizes);
        adam.step = step;
        for (i, name) in params.trainable_names().iter().enumerate() {
            adam.m[i] = find(&format!("adam.m.{name}"), Some(sizes[i]))?;
            adam.v[i] = find(&format!("adam.v.{name}"), Some(sizes[i]))?;
        }
        let losses = find(LOSS_TENSOR, Some(iteration))?;
        Ok(Checkpoint { config, params, adam, iteration, losses })
    }
}

/// Continues `start` until `config.iterations`, calling `on_checkpoint`
/// every `config.checkpoint_every` iterations (0 disables). The
/// configuration must match the checkpoint's fingerprint.
pub fn train(
    config: &TrainingConfig,
    corpus: &Corpus,
    phi: &FeatureNet<f32>,
    start: Checkpoint,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    if start.fingerprint() != config.fingerprint() {
        return Err(Error::Mismatch(
            "checkpoint was trained with a different configuration".into(),
        ));
    }
    if corpus.spec != config.degradation {
        return Err(Error::Mismatch(format!(
            "corpus prepared for {}, config wants {}",
            corpus.spec, config.degradation
        )));
    }
    let mut ckpt = start;
    ckpt.config = config.clone();
    let sampler = PairSampler::new(corpus, config.patch_size, config.seed)?;
    for it in ckpt.iteration..config.iterations {
        let (x, y) = sampler.batch(it as u64, config.batch_size)?;
        let (out, cache) = ckpt.params.forward(&x, Mode::Train)?;
        let (loss, grad_out) = perceptual_loss(phi, &out, &y, &config.loss_tap)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss, grad_norm: f64::NAN });
        }
        let (grads, _) = ckpt.params.backward(&cache, &grad_out)?;
        let grad_norm = grads.l2_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { iteration: it, loss, grad_norm });
        }
        ckpt.adam.step(&mut ckpt.params.trainable_mut(), &grads.buffers())?;
        ckpt.params.update_running_stats(&cache);
        ckpt.losses.push(loss as f32);
        ckpt.iteration = it + 1;
        if config.log_every > 0 && ckpt.iteration % config.log_every == 0 {
            info!("iter {:>6} loss {:.6} grad_norm {:.4e}", ckpt.iteration, loss, grad_norm);
        }
        if config.checkpoint_every > 0 && ckpt.iteration % config.checkpoint_every == 0 {
            on_checkpoint(&ckpt)?;
        }
    }
    Ok(ckpt)
}

/// Mean of the first and last `window` logged losses.
pub fn loss_window_means(losses: &[f32], window: usize) -> Option<(f64, f64)> {
    if window == 0 || losses.len() < window {
        return None;
    }
    let mean = |s: &[f32]| s.iter().map(|&v| f64::from(v)).sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..window]), mean(&losses[losses.len() - window..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DegradationSpec, PhiSource};
    use crate::image::{save_image, Image};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TrainingConfig {
        let mut cfg = TrainingConfig::desk();
        cfg.degradation = DegradationSpec::compand(3, false).unwrap();
        cfg.unet.in_channels = 1;
        cfg.unet.out_channels = 1;
        cfg.unet.base_channels = 4;
        cfg.patch_size = 16;
        cfg.batch_size = 2;
        cfg.iterations = 6;
        cfg.phi = PhiSource::Random { widths: [4, 4, 4, 4, 4], seed: 1 };
        cfg
    }

    fn corpus(spec: DegradationSpec) -> Corpus {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..2 {
            let data = (0..24 * 24).map(|_| rng.random()).collect();
            save_image(&Image::new(24, 24, 1, data).unwrap(), dir.path().join(format!("{i}.pgm"))).unwrap();
        }
        Corpus::load(dir.path(), spec, 16).unwrap()
    }

    #[test]
    fn zero_iterations() {
        let mut cfg = tiny_config();
        cfg.iterations = 0;
        let c = corpus(cfg.degradation);
        let phi = cfg.phi.load().unwrap();
        let ckpt = train(&cfg, &c, &phi, Checkpoint::initial(&cfg).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(ckpt, Checkpoint::initial(&cfg).unwrap());
        assert!(ckpt.losses.is_empty());
    }

    #[test]
    fn resume_is_bit_identical() {
        let cfg = tiny_config();
        let c = corpus(cfg.degradation);
        let phi = cfg.phi.load().unwrap();
        let full = train(&cfg, &c, &phi, Checkpoint::initial(&cfg).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(full.losses.len(), 6);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.nnwt");
        let mut half_cfg = cfg.clone();
        half_cfg.iterations = 3;
        let half = train(&half_cfg, &c, &phi, Checkpoint::initial(&cfg).unwrap(), |_| Ok(())).unwrap();
        half.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, half);
        let resumed = train(&cfg, &c, &phi, loaded, |_| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn periodic_checkpoints() {
        let mut cfg = tiny_config();
        cfg.checkpoint_every = 2;
        let c = corpus(cfg.degradation);
        let phi = cfg.phi.load().unwrap();
        let mut seen = Vec::new();
        train(&cfg, &c, &phi, Checkpoint::initial(&cfg).unwrap(), |k| {
            seen.push(k.iteration);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2, 4, 6]);
    }

    #[test]
    fn mismatches_rejected() {
        let cfg = tiny_config();
        let c = corpus(cfg.degradation);
        let phi = cfg.phi.load().unwrap();
        let mut other = cfg.clone();
        other.seed = 9;
        let start = Checkpoint::initial(&other).unwrap();
        assert!(matches!(train(&cfg, &c, &phi, start, |_| Ok(())), Err(Error::Mismatch(_))));
        let wrong = corpus(DegradationSpec::halftone(false));
        let start = Checkpoint::initial(&cfg).unwrap();
        assert!(matches!(train(&cfg, &wrong, &phi, start, |_| Ok(())), Err(Error::Mismatch(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = tiny_config();
        cfg.iterations = 1;
        let c = corpus(cfg.degradation);
        let phi = cfg.phi.load().unwrap();
        let mut start = Checkpoint::initial(&cfg).unwrap();
        start.params.head.bias[0] = f32::MAX;
        let err = train(&cfg, &c, &phi, start, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0, .. } | Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn tampered_header_rejected() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.nnwt");
        Checkpoint::initial(&cfg).unwrap().save(&path).unwrap();
        let hp = header_path(&path);
        let text = std::fs::read_to_string(&hp).unwrap().replace("seed = 0", "seed = 1");
        std::fs::write(&hp, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Mismatch(_))));
    }

    #[test]
    fn window_means() {
        assert_eq!(loss_window_means(&[1.0, 2.0, 3.0, 4.0], 2), Some((1.5, 3.5)));
        assert_eq!(loss_window_means(&[1.0], 2), None);
    }
}
