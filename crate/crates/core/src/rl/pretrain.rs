use candle_core::{Tensor, D};
use candle_nn::Optimizer;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam, control_of, dev_metrics, ParaphraseExample};
use crate::error::{Error, Result};
use crate::generator::{restore, snapshot, Awareness, DecodeConfig, Generator, EOS};
use crate::metrics::harmonic_mean;
use crate::oracle::NliBackend;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub decode: DecodeConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 256, learning_rate: 1e-4, label_smoothing: 0.1, seed: 0, decode: DecodeConfig::default() }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        self.decode.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_ibleu: Option<f64>,
    pub dev_consistency: Option<f64>,
    /// Value used for model selection.
    pub selection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: Vec<PretrainEpoch>,
    pub best_epoch: Option<usize>,
}

/// Mean over real positions of `(1 - eps) * nll + eps * uniform cross-entropy`.
pub fn smoothed_nll(log_probs: &Tensor, targets: &Tensor, mask: &Tensor, eps: f64) -> Result<Tensor> {
    let nll = log_probs.gather(&targets.unsqueeze(2)?, 2)?.squeeze(2)?.neg()?;
    let uniform = log_probs.mean(D::Minus1)?.neg()?;
    let per_token = ((nll * (1.0 - eps))? + (uniform * eps)?)?;
    let total = (per_token * mask)?.sum_all()?;
    Ok((total / mask.sum_all()?.to_scalar::<f32>()? as f64)?)
}

/// Supervised training with label smoothing. Each epoch is scored on `dev`
/// (dev iBLEU when unaware; harmonic mean of iBLEU and R-Consistency when
/// aware and an oracle is given) and the best epoch's weights are kept.
/// Without dev data the lowest training loss selects.
pub fn pretrain(
    generator: &Generator,
    train: &[ParaphraseExample],
    dev: &[ParaphraseExample],
    awareness: Awareness,
    cfg: &PretrainConfig,
    oracle: Option<&dyn NliBackend>,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training pairs"));
    }
    if awareness == Awareness::Aware && oracle.is_none() && !dev.is_empty() {
        warn!("no oracle for relation-aware selection, selecting by dev iBLEU");
    }
    let mut data: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(train.len());
    for ex in train {
        let src = generator.source_ids(&ex.x, control_of(ex, awareness)?)?;
        let max = generator.config().model.max_positions.saturating_sub(1).max(1);
        let mut tgt = generator.vocab().encode(&ex.y[..ex.y.len().min(max)]);
        tgt.push(EOS);
        data.push((src, tgt));
    }
    for ex in dev {
        control_of(ex, awareness)?;
    }
    let mut optimizer = adam(generator, cfg.learning_rate)?;
    let mut report = PretrainReport { epochs: Vec::new(), best_epoch: None };
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let sources: Vec<Vec<u32>> = chunk.iter().map(|&i| data[i].0.clone()).collect();
            let targets: Vec<Vec<u32>> = chunk.iter().map(|&i| data[i].1.clone()).collect();
            let (lp, mask) = generator.teacher_forced(&sources, &targets, true)?;
            let loss = smoothed_nll(&lp, &generator.target_matrix(&targets)?, &mask, cfg.label_smoothing)?;
            let value = loss.to_scalar::<f32>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(value));
            }
            optimizer.backward_step(&loss)?;
            loss_sum += value as f64;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (dev_ibleu, dev_consistency, selection) = if dev.is_empty() {
            (None, None, -train_loss)
        } else {
            let oracle = if awareness == Awareness::Aware { oracle } else { None };
            let m = dev_metrics(generator, dev, awareness, &cfg.decode, oracle)?;
            let sel = match m.r_consistency {
                Some(c) => harmonic_mean(m.ibleu, c),
                None => m.ibleu,
            };
            (Some(m.ibleu), m.r_consistency, sel)
        };
        info!("pretrain epoch {epoch}: loss {train_loss:.4} selection {selection:.3}");
        report.epochs.push(PretrainEpoch { epoch, train_loss, dev_ibleu, dev_consistency, selection });
        if best.as_ref().is_none_or(|(s, _)| selection > *s) {
            best = Some((selection, snapshot(generator.varmap())?));
            report.best_epoch = Some(epoch);
        }
    }
    if let Some((_, weights)) = best {
        restore(generator.varmap(), &weights)?;
    }
    Ok(report)
}
