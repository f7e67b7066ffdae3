use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::warn;
use serde::{Deserialize, Serialize};

use super::rewards::Trajectory;
use crate::error::{Error, Result};
use crate::generator::{all_finite, restore, snapshot, Generator};

/// How each realized action enters the policy objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `-sum_t Q_t log P(y_t | s_t)`.
    #[default]
    LogProb,
    /// `-sum_t Q_t P(y_t | s_t)`.
    Prob,
}

/// Policy loss for per-action log-probabilities and returns of equal shape.
pub fn reinforce_loss(action_log_probs: &Tensor, returns: &Tensor, objective: Objective) -> Result<Tensor> {
    let term = match objective {
        Objective::LogProb => action_log_probs.clone(),
        Objective::Prob => action_log_probs.exp()?,
    };
    Ok((term * returns)?.sum_all()?.neg()?)
}

/// Adam with no weight decay.
pub fn adam(generator: &Generator, learning_rate: f64) -> Result<AdamW> {
    let params = ParamsAdamW { lr: learning_rate, weight_decay: 0.0, ..Default::default() };
    Ok(AdamW::new(generator.varmap().all_vars(), params)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub loss: f64,
    /// False when every return was zero and no update was made.
    pub applied: bool,
}

/// Log-probabilities `[b, t]` of each trajectory's actions, with the mask
/// of real positions. Dropout follows the model configuration.
pub fn action_log_probs(generator: &Generator, batch: &[Trajectory], train: bool) -> Result<(Tensor, Tensor)> {
    let sources: Vec<Vec<u32>> = batch.iter().map(|t| t.source.clone()).collect();
    let actions: Vec<Vec<u32>> = batch.iter().map(|t| t.actions.clone()).collect();
    let (log_probs, mask) = generator.teacher_forced(&sources, &actions, train)?;
    let targets = generator.target_matrix(&actions)?;
    let picked = log_probs.gather(&targets.unsqueeze(2)?, 2)?.squeeze(2)?;
    Ok((picked, mask))
}

/// One policy-gradient update over a batch of trajectories, averaged over
/// trajectories. A non-finite loss or parameter leaves the model as it was.
pub fn reinforce_step(
    generator: &Generator,
    optimizer: &mut AdamW,
    batch: &[Trajectory],
    objective: Objective,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("trajectory batch"));
    }
    for t in batch {
        if t.actions.len() != t.q.len() {
            return Err(Error::InvalidArgument(format!("{} actions but {} returns", t.actions.len(), t.q.len())));
        }
    }
    if batch.iter().all(|t| t.q.iter().all(|q| *q == 0.0)) {
        return Ok(StepOutcome { loss: 0.0, applied: false });
    }
    // Dropout off: the gradient must be taken on the policy that sampled.
    let (picked, mask) = action_log_probs(generator, batch, false)?;
    let (b, len) = picked.dims2()?;
    let mut q = vec![0f32; b * len];
    for (i, t) in batch.iter().enumerate() {
        for (j, v) in t.q.iter().enumerate() {
            q[i * len + j] = *v as f32;
        }
    }
    let q = (Tensor::from_vec(q, (b, len), picked.device())? * &mask)?;
    let loss = (reinforce_loss(&picked, &q, objective)? / b as f64)?;
    let value = loss.to_scalar::<f32>()?;
    if !value.is_finite() {
        warn!("non-finite policy loss, step skipped");
        return Err(Error::NonFiniteLoss(value));
    }
    let before = snapshot(generator.varmap())?;
    optimizer.backward_step(&loss)?;
    if !all_finite(generator.varmap())? {
        restore(generator.varmap(), &before)?;
        warn!("update produced non-finite parameters, restored");
        return Err(Error::NonFiniteLoss(value));
    }
    Ok(StepOutcome { loss: value as f64, applied: true })
}
