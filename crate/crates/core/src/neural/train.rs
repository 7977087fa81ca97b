//! Adam training loop with best-validation model selection.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::net::{example_loss, MaskNet, TrainExample};
use super::scalar::Scalar;
use crate::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::TsdrParams;
use crate::spectral::Stft;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tsdr_threshold_db: f64,
    pub tsdr_eps: f64,
    /// Global l2 norm the batch gradient is clipped to.
    pub clip_norm: f64,
    pub seed: u64,
    /// Best-so-far network is written here after every improvement.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 10,
            epochs: 30,
            tsdr_threshold_db: 30.0,
            tsdr_eps: 1.2e-7,
            clip_norm: 5.0,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.epochs > 0
            && self.tsdr_threshold_db > 0.0
            && self.tsdr_eps > 0.0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }

    pub fn tsdr(&self) -> TsdrParams {
        TsdrParams {
            threshold_db: self.tsdr_threshold_db,
            eps: self.tsdr_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<S> {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: MaskNet<S>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

struct Adam<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [S], grads: &[S], lr: f64) {
        self.step += 1;
        let (b1, b2) = (S::from_f64(ADAM_BETA1), S::from_f64(ADAM_BETA2));
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let step_size = S::from_f64(lr / c1);
        let c2 = S::from_f64(c2);
        let eps = S::from_f64(ADAM_EPS);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            *p = *p - step_size * *m / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Mean loss (and mean gradient) over `batch`, computed in parallel and
/// reduced in example order.
fn batch_loss<S: Scalar>(
    net: &MaskNet<S>,
    batch: &[&TrainExample<S>],
    stft: &Stft,
    p: &TsdrParams,
    with_grad: bool,
) -> Result<(f64, Option<Vec<S>>)> {
    let parts = batch
        .par_iter()
        .map(|ex| example_loss(net, ex, stft, p, with_grad))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let loss = parts.iter().map(|(l, _)| *l).sum::<f64>() / n;
    if !with_grad {
        return Ok((loss, None));
    }
    let mut grads = vec![S::zero(); net.params().len()];
    for (_, g) in parts {
        for (acc, v) in grads.iter_mut().zip(g.expect("gradient requested")) {
            *acc = *acc + v;
        }
    }
    let inv = S::from_f64(1.0 / n);
    grads.iter_mut().for_each(|g| *g = *g * inv);
    Ok((loss, Some(grads)))
}

/// Mean `-tSDR` over a set of examples.
pub fn evaluate_loss<S: Scalar>(net: &MaskNet<S>, examples: &[TrainExample<S>], stft: &Stft, p: &TsdrParams) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no examples to evaluate".into()));
    }
    let refs: Vec<&TrainExample<S>> = examples.iter().collect();
    Ok(batch_loss(net, &refs, stft, p, false)?.0)
}

fn clip_global_norm<S: Scalar>(grads: &mut [S], max_norm: f64) {
    let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = S::from_f64(max_norm / norm);
        grads.iter_mut().for_each(|g| *g = *g * scale);
    }
}

pub fn train<S: Scalar>(
    net: MaskNet<S>,
    train_set: &[TrainExample<S>],
    validation_set: &[TrainExample<S>],
    stft: &Stft,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::EmptyDataset("train and validation sets must be non-empty".into()));
    }
    let p = cfg.tsdr();
    let mut net = net;
    let mut adam = Adam::new(net.params().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MaskNet<S>)> = None;
    let mut batch_index = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x74_7261_696e, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample<S>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_loss(&net, &batch, stft, &p, true)?;
            let mut grads = grads.expect("gradient requested");
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { batch: batch_index });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(net.params_mut(), &grads, cfg.learning_rate);
            total += loss * chunk.len() as f64;
            batch_index += 1;
        }
        let val_loss = evaluate_loss(&net, validation_set, stft, &p)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch_index });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            if let Some(path) = &cfg.checkpoint {
                save_checkpoint(&net.cast::<f32>(), path)?;
            }
            best = Some((val_loss, epoch, net.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

/// `epoch,train_loss,val_loss` with six decimals.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_loss));
    }
    s
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::net::MaskNetConfig;
    use crate::spectral::FrameConfig;
    use rand::Rng;

    fn tiny_set(n: usize, seed: u64) -> (Vec<TrainExample<f64>>, Stft) {
        let cfg = FrameConfig::with_frame_len(16).unwrap();
        let stft = Stft::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = (0..n)
            .map(|_| {
                let x: Vec<Vec<f64>> = (0..2).map(|_| (0..64).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
                let target: Vec<f64> = x[0].iter().map(|v| 0.5 * v).collect();
                let specs: Vec<_> = x.iter().map(|s| stft.analyze(s).unwrap()).collect();
                TrainExample::new(&specs, 0, target).unwrap()
            })
            .collect();
        (set, stft)
    }

    fn net() -> MaskNet<f64> {
        MaskNet::new(MaskNetConfig {
            q_channels: 2,
            bins: 9,
            hidden_freq: 4,
            hidden_time: 4,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (set, stft) = tiny_set(4, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            epochs: 3,
            ..Default::default()
        };
        let out = train(net(), &set, &set, &stft, &cfg, |_| {}).unwrap();
        assert_eq!(out.best, net());
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn fixed_seed_is_bit_identical_and_learns() {
        let (set, stft) = tiny_set(6, 2);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 3,
            epochs: 8,
            seed: 5,
            ..Default::default()
        };
        let a = train(net(), &set[..4], &set[4..], &stft, &cfg, |_| {}).unwrap();
        let b = train(net(), &set[..4], &set[4..], &stft, &cfg, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        let best = a.history[a.best_epoch - 1].val_loss;
        assert!(best < a.history[0].val_loss);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0f64, 4.0];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut small = vec![0.1f64];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1]);
    }

    #[test]
    fn history_format() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            train_loss: -1.5,
            val_loss: -2.0,
        }]);
        assert_eq!(csv, "epoch,train_loss,val_loss\n1,-1.500000,-2.000000\n");
    }

    #[test]
    fn empty_sets_rejected() {
        let (set, stft) = tiny_set(1, 3);
        assert!(matches!(
            train(net(), &[], &set, &stft, &TrainConfig::default(), |_| {}),
            Err(Error::EmptyDataset(_))
        ));
    }
}
