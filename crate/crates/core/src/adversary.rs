//! Hypothesis-only relation classifier over generated paraphrases.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::OracleVerdict;

/// A classifier that sees only the generated sequence.
pub trait HypothesisOnly: Send + Sync {
    /// Distribution over EQ, FWD, REV.
    fn predict(&self, y_hat: &[String]) -> [f64; 3];
    /// False until at least one training step has been taken.
    fn is_trained(&self) -> bool;
}

/// How oracle verdicts become training targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Oracle likelihoods renormalised over the control relations.
    #[default]
    Soft,
    /// One-hot on the oracle's relation.
    OneHot,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBatch {
    pub y_hats: Vec<Vec<String>>,
    pub targets: Vec<[f64; 3]>,
}

impl AdversaryBatch {
    pub fn new(y_hats: Vec<Vec<String>>, targets: Vec<[f64; 3]>) -> Result<Self> {
        if y_hats.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sequences but {} targets",
                y_hats.len(),
                targets.len()
            )));
        }
        Ok(Self { y_hats, targets })
    }

    /// Builds targets from oracle verdicts. Sequences whose verdict is not a
    /// control relation are left out; the second value counts them.
    pub fn from_verdicts<'a, I>(pool: I, mode: TargetMode) -> (Self, usize)
    where
        I: IntoIterator<Item = (&'a [String], &'a OracleVerdict)>,
    {
        let mut batch = Self::default();
        let mut excluded = 0;
        for (y, verdict) in pool {
            let Ok(idx) = verdict.relation.control_index() else {
                excluded += 1;
                continue;
            };
            let target = match mode {
                TargetMode::Soft => match verdict.control_distribution() {
                    Some(d) => d,
                    None => {
                        excluded += 1;
                        continue;
                    }
                },
                TargetMode::OneHot => {
                    let mut t = [0.0; 3];
                    t[idx] = 1.0;
                    t
                }
            };
            batch.y_hats.push(y.to_vec());
            batch.targets.push(target);
        }
        (batch, excluded)
    }

    pub fn len(&self) -> usize {
        self.y_hats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hats.is_empty()
    }
}

/// Cross-entropy of `pred` against the soft `target`.
pub fn soft_cross_entropy(target: &[f64; 3], pred: &[f64; 3]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| -t * p.max(f64::MIN_POSITIVE).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Mean loss of the kept rows before the update.
    pub loss: f64,
    pub dropped: usize,
    pub used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub target_mode: TargetMode,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self { dim: 16, learning_rate: 0.5, seed: 0, target_mode: TargetMode::Soft }
    }
}

/// Mean of token embeddings followed by a linear layer and softmax, trained
/// by full-batch gradient descent. Unseen tokens are ignored at prediction
/// time and added to the vocabulary at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOfEmbeddings {
    config: AdversaryConfig,
    vocab: HashMap<String, usize>,
    embeddings: Vec<Vec<f64>>,
    /// Three rows of length `dim`.
    weight: Vec<Vec<f64>>,
    bias: [f64; 3],
    steps: u64,
}

impl BagOfEmbeddings {
    pub fn new(config: AdversaryConfig) -> Result<Self> {
        if config.dim == 0 || !(config.learning_rate > 0.0) {
            return Err(Error::Config("adversary needs dim > 0 and a positive learning rate".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.dim as f64).sqrt();
        let weight = (0..3).map(|_| (0..config.dim).map(|_| rng.random_range(-scale..scale)).collect()).collect();
        Ok(Self { config, vocab: HashMap::new(), embeddings: Vec::new(), weight, bias: [0.0; 3], steps: 0 })
    }

    pub fn config(&self) -> &AdversaryConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn token_id(&mut self, token: &str) -> usize {
        if let Some(&id) = self.vocab.get(token) {
            return id;
        }
        let id = self.embeddings.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1 + id as u64));
        self.embeddings.push((0..self.config.dim).map(|_| rng.random_range(-0.1..0.1)).collect());
        self.vocab.insert(token.to_string(), id);
        id
    }

    fn pooled(&self, ids: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.config.dim];
        if ids.is_empty() {
            return h;
        }
        for &id in ids {
            for (a, e) in h.iter_mut().zip(&self.embeddings[id]) {
                *a += e;
            }
        }
        let n = ids.len() as f64;
        h.iter_mut().for_each(|a| *a /= n);
        h
    }

    fn forward(&self, h: &[f64]) -> [f64; 3] {
        let mut z = [0.0; 3];
        for c in 0..3 {
            z[c] = self.bias[c] + self.weight[c].iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = z.map(|v| (v - m).exp());
        let s: f64 = e.iter().sum();
        e.map(|v| v / s)
    }

    /// Raw model output, bypassing the cold-start rule.
    fn model_predict(&self, y_hat: &[String]) -> [f64; 3] {
        let ids: Vec<usize> = y_hat.iter().filter_map(|t| self.vocab.get(t).copied()).collect();
        self.forward(&self.pooled(&ids))
    }

    /// One gradient step on the soft cross-entropy. Rows whose target has no
    /// mass are dropped and counted.
    pub fn train_step(&mut self, batch: &AdversaryBatch) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("adversary batch"));
        }
        if batch.y_hats.len() != batch.targets.len() {
            return Err(Error::InvalidArgument("adversary batch lists differ in length".into()));
        }
        let mut rows = Vec::new();
        let mut dropped = 0;
        for (y, t) in batch.y_hats.iter().zip(&batch.targets) {
            let mass: f64 = t.iter().sum();
            if !(mass > 0.0) || t.iter().any(|v| !v.is_finite() || *v < 0.0) {
                dropped += 1;
                continue;
            }
            let ids: Vec<usize> = y.iter().map(|tok| self.token_id(tok)).collect();
            rows.push((ids, t.map(|v| v / mass)));
        }
        if rows.is_empty() {
            return Ok(StepReport { loss: 0.0, dropped, used: 0 });
        }

        let dim = self.config.dim;
        let n = rows.len() as f64;
        let mut grad_w = vec![vec![0.0; dim]; 3];
        let mut grad_b = [0.0; 3];
        let mut grad_e: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut loss = 0.0;
        for (ids, target) in &rows {
            let h = self.pooled(ids);
            let p = self.forward(&h);
            loss += soft_cross_entropy(target, &p);
            let dz: [f64; 3] = std::array::from_fn(|c| (p[c] - target[c]) / n);
            let mut dh = vec![0.0; dim];
            for c in 0..3 {
                grad_b[c] += dz[c];
                for k in 0..dim {
                    grad_w[c][k] += dz[c] * h[k];
                    dh[k] += dz[c] * self.weight[c][k];
                }
            }
            if ids.is_empty() {
                continue;
            }
            let share = 1.0 / ids.len() as f64;
            for &id in ids {
                let g = grad_e.entry(id).or_insert_with(|| vec![0.0; dim]);
                for k in 0..dim {
                    g[k] += dh[k] * share;
                }
            }
        }

        let lr = self.config.learning_rate;
        for c in 0..3 {
            self.bias[c] -= lr * grad_b[c];
            for k in 0..dim {
                self.weight[c][k] -= lr * grad_w[c][k];
            }
        }
        for (id, g) in grad_e {
            for k in 0..dim {
                self.embeddings[id][k] -= lr * g[k];
            }
        }
        self.steps += 1;
        Ok(StepReport { loss: loss / n, dropped, used: rows.len() })
    }

    /// Repeats [`BagOfEmbeddings::train_step`] and returns the last report.
    pub fn fit(&mut self, batch: &AdversaryBatch, steps: usize) -> Result<StepReport> {
        let mut last = StepReport { loss: 0.0, dropped: 0, used: 0 };
        for _ in 0..steps {
            last = self.train_step(batch)?;
        }
        Ok(last)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

impl HypothesisOnly for BagOfEmbeddings {
    fn predict(&self, y_hat: &[String]) -> [f64; 3] {
        if self.steps == 0 {
            return [1.0 / 3.0; 3];
        }
        self.model_predict(y_hat)
    }

    fn is_trained(&self) -> bool {
        self.steps > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::NliDistribution;
    use crate::types::{tokenize, NliLabel, Relation};
    use approx::assert_abs_diff_eq;

    fn toy_batch() -> AdversaryBatch {
        let mut ys = Vec::new();
        let mut ts = Vec::new();
        for (i, s) in ["a b", "a c", "b c zz", "c d zz", "a d", "b d qq", "c qq", "a qq"].iter().enumerate() {
            ys.push(tokenize(s));
            let mut t = [0.0; 3];
            t[if s.contains("zz") { 2 } else if s.contains("qq") { 1 } else { 0 }] = 1.0;
            let _ = i;
            ts.push(t);
        }
        AdversaryBatch::new(ys, ts).unwrap()
    }

    #[test]
    fn cold_start_is_uniform() {
        let adv = BagOfEmbeddings::new(AdversaryConfig::default()).unwrap();
        assert_eq!(adv.predict(&tokenize("anything")), [1.0 / 3.0; 3]);
        assert!(!adv.is_trained());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(soft_cross_entropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(soft_cross_entropy(&[1.0, 0.0, 0.0], &[1.0 / 3.0; 3]), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn first_step_from_uniform_reports_ln3() {
        let mut cfg = AdversaryConfig::default();
        cfg.dim = 4;
        let mut adv = BagOfEmbeddings::new(cfg).unwrap();
        // Zero the head so the model output itself is uniform.
        adv.weight = vec![vec![0.0; 4]; 3];
        let batch = AdversaryBatch::new(vec![tokenize("x y")], vec![[1.0, 0.0, 0.0]]).unwrap();
        let rep = adv.train_step(&batch).unwrap();
        assert_abs_diff_eq!(rep.loss, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_strictly_decreases_on_separable_batch() {
        let mut adv = BagOfEmbeddings::new(AdversaryConfig::default()).unwrap();
        let batch = toy_batch();
        let losses: Vec<f64> = (0..11).map(|_| adv.train_step(&batch).unwrap().loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn artifact_token_drives_prediction() {
        let mut adv = BagOfEmbeddings::new(AdversaryConfig::default()).unwrap();
        adv.fit(&toy_batch(), 300).unwrap();
        let p = adv.predict(&tokenize("d zz"));
        assert!(p[2] > p[0] && p[2] > p[1], "{p:?}");
        assert_eq!(adv.predict(&tokenize("d zz")), p);
    }

    #[test]
    fn empty_target_rows_are_dropped() {
        let mut adv = BagOfEmbeddings::new(AdversaryConfig::default()).unwrap();
        let batch = AdversaryBatch::new(vec![tokenize("a"), tokenize("b")], vec![[0.0; 3], [0.0, 1.0, 0.0]]).unwrap();
        let rep = adv.train_step(&batch).unwrap();
        assert_eq!((rep.dropped, rep.used), (1, 1));
        assert!(adv.train_step(&AdversaryBatch::default()).is_err());
    }

    #[test]
    fn targets_from_verdicts() {
        let v = |f: NliDistribution, b: NliDistribution| OracleVerdict::from_directional(&f, &b);
        let e = NliDistribution::one_hot(NliLabel::Entailment);
        let n = NliDistribution::one_hot(NliLabel::Neutral);
        let soft = v(NliDistribution::new(0.6, 0.4, 0.0).unwrap(), NliDistribution::new(0.5, 0.5, 0.0).unwrap());
        let verdicts = [v(e, e), v(n, n), soft];
        let ys = [tokenize("a"), tokenize("b"), tokenize("c")];
        let pool = ys.iter().map(Vec::as_slice).zip(verdicts.iter());
        let (batch, excluded) = AdversaryBatch::from_verdicts(pool, TargetMode::Soft);
        assert_eq!(excluded, 1);
        assert_eq!(batch.targets[0], [1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(batch.targets[1][0], 0.375, epsilon = 1e-12);
        assert_eq!(verdicts[2].relation, Relation::Eq);

        let pool = ys.iter().map(Vec::as_slice).zip(verdicts.iter());
        let (batch, _) = AdversaryBatch::from_verdicts(pool, TargetMode::OneHot);
        assert_eq!(batch.targets[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut adv = BagOfEmbeddings::new(AdversaryConfig::default()).unwrap();
        adv.fit(&toy_batch(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adv.json");
        adv.save(&path).unwrap();
        let back = BagOfEmbeddings::load(&path).unwrap();
        let (a, b) = (back.predict(&tokenize("b zz")), adv.predict(&tokenize("b zz")));
        for i in 0..3 {
            assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-12);
        }
    }
}
