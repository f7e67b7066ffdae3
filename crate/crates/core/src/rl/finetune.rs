use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Tensor;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam, dev_metrics, estimate_rewards, reinforce_step, rollout, Objective, ParaphraseExample, Trajectory};
use crate::adversary::{AdversaryBatch, BagOfEmbeddings};
use crate::error::{Error, Result};
use crate::generator::{restore, snapshot, Awareness, DecodeConfig, Generator};
use crate::metrics::harmonic_mean;
use crate::oracle::{oracle_verdict, NliBackend, OracleVerdict};
use crate::scorers::{Evaluator, SimilarityBackend};
use crate::types::{Relation, RewardConfig};

/// Dev score that picks the checkpoint kept at the end.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Harmonic mean of iBLEU and R-Consistency.
    #[default]
    HarmonicMean,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub reward: RewardConfig,
    pub decode: DecodeConfig,
    pub objective: Objective,
    /// When false the adversary is never trained and its penalty stays 0.
    pub adversary_enabled: bool,
    /// Adversary gradient steps after each generation phase.
    pub adversary_steps: usize,
    /// Cap on training pairs visited per epoch.
    pub examples_per_epoch: Option<usize>,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 2e-5,
            reward: RewardConfig::default(),
            decode: DecodeConfig::default(),
            objective: Objective::LogProb,
            adversary_enabled: true,
            adversary_steps: 100,
            examples_per_epoch: None,
            selection: Selection::HarmonicMean,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.reward.validate()?;
        self.decode.validate()
    }
}

/// Scoring backends used during fine-tuning.
#[derive(Clone, Copy)]
pub struct FinetuneBackends<'a> {
    pub oracle: &'a dyn NliBackend,
    pub similarity: &'a dyn SimilarityBackend,
}

/// Progress that survives a restart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneState {
    /// Completed epochs; 0 is the starting model.
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
}

/// One row of the per-epoch report. Epoch 0 scores the starting model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub mean_f: f64,
    pub mean_r_s: f64,
    pub mean_r_d: f64,
    pub mean_r_l: f64,
    pub mean_p_l: f64,
    pub updates: usize,
    pub skipped_updates: usize,
    pub skipped_examples: usize,
    pub scorer_failures: usize,
    pub adversary_loss: Option<f64>,
    pub adversary_pool: usize,
    pub adversary_excluded: usize,
    pub dev_ibleu: f64,
    pub dev_consistency: f64,
    pub harmonic_mean: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub epochs: Vec<FinetuneEpoch>,
    pub state: FinetuneState,
    /// Set when a backend outage stopped training early.
    pub aborted: Option<String>,
}

/// Files of one saved epoch.
pub struct Checkpoint {
    pub generator: Generator,
    pub adversary: BagOfEmbeddings,
    pub state: FinetuneState,
}

impl Checkpoint {
    pub fn dir(run_dir: &Path, epoch: usize) -> PathBuf {
        run_dir.join(format!("epoch_{epoch}"))
    }

    pub fn write(dir: &Path, generator: &Generator, adversary: &BagOfEmbeddings, state: &FinetuneState) -> Result<()> {
        generator.save(dir)?;
        adversary.save(&dir.join("adversary.json"))?;
        fs::write(dir.join("state.json"), serde_json::to_vec_pretty(state)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let state_path = dir.join("state.json");
        if !state_path.exists() {
            return Err(Error::MissingInput(state_path));
        }
        Ok(Self {
            generator: Generator::load(dir)?,
            adversary: BagOfEmbeddings::load(&dir.join("adversary.json"))?,
            state: serde_json::from_slice(&fs::read(&state_path)?)?,
        })
    }

    /// Highest-numbered epoch directory under `run_dir` that has a state file.
    pub fn latest(run_dir: &Path) -> Option<PathBuf> {
        let entries = fs::read_dir(run_dir).ok()?;
        entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let k: usize = name.strip_prefix("epoch_")?.parse().ok()?;
                e.path().join("state.json").exists().then_some((k, e.path()))
            })
            .max_by_key(|(k, _)| *k)
            .map(|(_, p)| p)
    }
}

fn append_report(run_dir: Option<&Path>, row: &FinetuneEpoch) -> Result<()> {
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join("report.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(row)?)?;
    }
    Ok(())
}

fn dev_row(generator: &Generator, dev: &[ParaphraseExample], cfg: &FinetuneConfig, oracle: &dyn NliBackend, row: &mut FinetuneEpoch) -> Result<()> {
    if dev.is_empty() {
        return Ok(());
    }
    let m = dev_metrics(generator, dev, Awareness::Aware, &cfg.decode, Some(oracle))?;
    row.dev_ibleu = m.ibleu;
    row.dev_consistency = m.r_consistency.unwrap_or(0.0);
    row.harmonic_mean = harmonic_mean(row.dev_ibleu, row.dev_consistency);
    Ok(())
}

/// Policy-gradient fine-tuning alternated with adversary training.
///
/// Each epoch generates and reinforces over the shuffled training pairs,
/// trains the adversary on the oracle verdicts of that epoch's outputs,
/// scores the dev set and writes `epoch_k/` plus a `report.jsonl` row when
/// `run_dir` is set. The best epoch by dev harmonic mean is restored at the
/// end. A backend outage rolls back to the start of the failing epoch and
/// returns with `aborted` set.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    generator: &Generator,
    adversary: &mut BagOfEmbeddings,
    train: &[ParaphraseExample],
    dev: &[ParaphraseExample],
    cfg: &FinetuneConfig,
    backends: FinetuneBackends<'_>,
    run_dir: Option<&Path>,
    mut state: FinetuneState,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training pairs"));
    }
    for ex in train.iter().chain(dev) {
        match ex.relation {
            Some(r) if r.is_control() => {}
            Some(r) => return Err(Error::NotControlRelation(r)),
            None => return Err(Error::InvalidArgument("fine-tuning pairs need a relation".into())),
        }
    }
    let mut outcome = FinetuneOutcome { epochs: Vec::new(), state, aborted: None };
    let mut best: Option<Vec<(String, Tensor)>> = None;
    if let (Some(k), Some(dir)) = (state.best_epoch, run_dir) {
        let path = Checkpoint::dir(dir, k);
        if path.join("model.safetensors").exists() {
            best = Some(snapshot(Generator::load(&path)?.varmap())?);
        }
    }
    if state.epoch == 0 && state.best_epoch.is_none() {
        let mut row = FinetuneEpoch::default();
        let started = Instant::now();
        if let Err(e) = dev_row(generator, dev, cfg, backends.oracle, &mut row) {
            return abort_or_fail(e, outcome);
        }
        row.seconds = started.elapsed().as_secs_f64();
        state.best_epoch = Some(0);
        state.best_score = Some(selection_score(&row, cfg.selection));
        best = Some(snapshot(generator.varmap())?);
        if let Some(dir) = run_dir {
            Checkpoint::write(&Checkpoint::dir(dir, 0), generator, adversary, &state)?;
        }
        append_report(run_dir, &row)?;
        outcome.epochs.push(row);
        outcome.state = state;
    }
    let mut optimizer = adam(generator, cfg.learning_rate)?;
    for epoch in state.epoch + 1..=cfg.epochs {
        let weights_before = snapshot(generator.varmap())?;
        let adversary_before = adversary.clone();
        let result = run_epoch(generator, adversary, &mut optimizer, train, dev, cfg, backends, epoch);
        let mut row = match result {
            Ok(r) => r,
            Err(e) if matches!(e, Error::BackendUnavailable(_)) => {
                restore(generator.varmap(), &weights_before)?;
                *adversary = adversary_before;
                warn!("epoch {epoch} aborted: {e}");
                outcome.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        row.epoch = epoch;
        state.epoch = epoch;
        let score = selection_score(&row, cfg.selection);
        if state.best_score.is_none_or(|s| score > s) {
            state.best_epoch = Some(epoch);
            state.best_score = Some(score);
            best = Some(snapshot(generator.varmap())?);
        }
        info!(
            "finetune epoch {epoch}: f {:.3} r_l {:.3} p_l {:.3} dev iBLEU {:.2} R-Consistency {:.1}",
            row.mean_f, row.mean_r_l, row.mean_p_l, row.dev_ibleu, row.dev_consistency
        );
        if let Some(dir) = run_dir {
            Checkpoint::write(&Checkpoint::dir(dir, epoch), generator, adversary, &state)?;
        }
        append_report(run_dir, &row)?;
        outcome.epochs.push(row);
        outcome.state = state;
    }
    if let Some(weights) = best {
        restore(generator.varmap(), &weights)?;
    }
    Ok(outcome)
}

fn selection_score(row: &FinetuneEpoch, selection: Selection) -> f64 {
    match selection {
        Selection::HarmonicMean => row.harmonic_mean,
        Selection::Consistency => row.dev_consistency,
    }
}

fn abort_or_fail(e: Error, mut outcome: FinetuneOutcome) -> Result<FinetuneOutcome> {
    match e {
        Error::BackendUnavailable(_) => {
            outcome.aborted = Some(e.to_string());
            Ok(outcome)
        }
        e => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    generator: &Generator,
    adversary: &mut BagOfEmbeddings,
    optimizer: &mut candle_nn::AdamW,
    train: &[ParaphraseExample],
    dev: &[ParaphraseExample],
    cfg: &FinetuneConfig,
    backends: FinetuneBackends<'_>,
    epoch: usize,
) -> Result<FinetuneEpoch> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.examples_per_epoch.unwrap_or(train.len()));
    let mut row = FinetuneEpoch::default();
    let mut pool: Vec<(Vec<String>, OracleVerdict)> = Vec::new();
    let mut scored = 0usize;
    {
        let mut evaluator = Evaluator::new(backends.oracle, backends.similarity, cfg.reward);
        if cfg.adversary_enabled {
            evaluator = evaluator.with_adversary(&*adversary);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<Trajectory> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let ex = &train[i];
                let relation: Relation = ex.relation.expect("checked above");
                let source = generator.source_ids(&ex.x, Some(relation))?;
                let set = match rollout(generator, &source, cfg.reward.n_rollouts, &cfg.decode, &mut rng) {
                    Ok(s) => s,
                    Err(Error::Decode(e)) => {
                        warn!("skipping pair {i}: {e}");
                        row.skipped_examples += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let est = estimate_rewards(&set, source, &ex.x, relation, &evaluator, generator.vocab())?;
                row.scorer_failures += est.scorer_failures;
                let s = est.reference_scores;
                row.mean_f += s.weighted(&cfg.reward);
                row.mean_r_s += s.r_s;
                row.mean_r_d += s.r_d;
                row.mean_r_l += s.r_l;
                row.mean_p_l += s.p_l;
                scored += 1;
                let y_ref = generator.vocab().decode(&set.reference);
                if cfg.adversary_enabled && !y_ref.is_empty() {
                    match oracle_verdict(&ex.x, &y_ref, backends.oracle) {
                        Ok(v) => pool.push((y_ref, v)),
                        Err(Error::Backend(e)) => warn!("no verdict for pair {i}: {e}"),
                        Err(e) => return Err(e),
                    }
                }
                batch.push(est.trajectory);
            }
            if batch.is_empty() {
                continue;
            }
            match reinforce_step(generator, optimizer, &batch, cfg.objective) {
                Ok(o) if o.applied => row.updates += 1,
                Ok(_) => row.skipped_updates += 1,
                Err(Error::NonFiniteLoss(v)) => {
                    warn!("policy step skipped, loss {v}");
                    row.skipped_updates += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if scored > 0 {
        let n = scored as f64;
        row.mean_f /= n;
        row.mean_r_s /= n;
        row.mean_r_d /= n;
        row.mean_r_l /= n;
        row.mean_p_l /= n;
    }
    if cfg.adversary_enabled {
        let (batch, excluded) =
            AdversaryBatch::from_verdicts(pool.iter().map(|(y, v)| (y.as_slice(), v)), adversary.config().target_mode);
        row.adversary_pool = batch.len();
        row.adversary_excluded = excluded;
        if !batch.is_empty() && cfg.adversary_steps > 0 {
            row.adversary_loss = Some(adversary.fit(&batch, cfg.adversary_steps)?.loss);
        }
    }
    dev_row(generator, dev, cfg, backends.oracle, &mut row)?;
    row.seconds = started.elapsed().as_secs_f64();
    Ok(row)
}
