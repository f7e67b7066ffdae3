use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rollout::RolloutSet;
use crate::error::Result;
use crate::generator::{Vocab, EOS};
use crate::scorers::{Evaluator, Scores};
use crate::types::Relation;

/// `r_1 = f_1`, `r_t = f_t - f_{t-1}`.
pub fn step_rewards(f: &[f64]) -> Vec<f64> {
    f.iter().enumerate().map(|(t, v)| if t == 0 { *v } else { v - f[t - 1] }).collect()
}

/// `Q_t = sum_{tau >= t} gamma^(tau - t) r_tau`.
pub fn discounted_returns(r: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; r.len()];
    let mut acc = 0.0;
    for t in (0..r.len()).rev() {
        acc = r[t] + gamma * acc;
        q[t] = acc;
    }
    q
}

/// One scored generation: the source, the reference actions (ending with
/// EOS) and per-step combined scores, rewards and returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub source: Vec<u32>,
    pub actions: Vec<u32>,
    pub f: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
}

impl Trajectory {
    /// Builds `r` and `q` from per-step combined scores.
    pub fn from_scores(source: Vec<u32>, actions: Vec<u32>, f: Vec<f64>, gamma: f64) -> Self {
        let r = step_rewards(&f);
        let q = discounted_returns(&r, gamma);
        Self { source, actions, f, r, q }
    }
}

/// A trajectory with the scores of its completed reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub trajectory: Trajectory,
    pub reference_scores: Scores,
    /// Samples whose scoring failed transiently and counted as zero.
    pub scorer_failures: usize,
}

/// Scores every step's rollouts and turns the per-step means into rewards
/// and discounted returns. Identical sequences are scored once.
pub fn estimate_rewards(
    set: &RolloutSet,
    source: Vec<u32>,
    x: &[String],
    relation: Relation,
    evaluator: &Evaluator<'_>,
    vocab: &Vocab,
) -> Result<Estimate> {
    let mut cache: HashMap<&[u32], Scores> = HashMap::new();
    let mut failures = 0;
    let mut f = Vec::with_capacity(set.per_step.len());
    for samples in &set.per_step {
        let mut total = 0.0;
        for s in samples {
            let scores = match cache.get(s.as_slice()) {
                Some(sc) => *sc,
                None => {
                    let (sc, failed) = evaluator.thresholded_or_zero(x, &vocab.decode(s), relation)?;
                    failures += usize::from(failed);
                    cache.insert(s, sc);
                    sc
                }
            };
            total += scores.weighted(&evaluator.config);
        }
        f.push(if samples.is_empty() { 0.0 } else { total / samples.len() as f64 });
    }
    let reference_scores = match cache.get(set.reference.as_slice()) {
        Some(s) => *s,
        None => evaluator.thresholded_or_zero(x, &vocab.decode(&set.reference), relation)?.0,
    };
    let mut actions = set.reference.clone();
    actions.push(EOS);
    Ok(Estimate {
        trajectory: Trajectory::from_scores(source, actions, f, evaluator.config.gamma),
        reference_scores,
        scorer_failures: failures,
    })
}
