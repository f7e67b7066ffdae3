//! Training: supervised pretraining, reward estimation from rollouts and
//! the policy-gradient fine-tuning loop.

mod finetune;
mod pretrain;
mod reinforce;
mod rewards;
mod rollout;

use log::warn;
use serde::{Deserialize, Serialize};

pub use finetune::{finetune, Checkpoint, FinetuneBackends, FinetuneConfig, FinetuneEpoch, FinetuneOutcome, FinetuneState, Selection};
pub use pretrain::{pretrain, smoothed_nll, PretrainConfig, PretrainEpoch, PretrainReport};
pub use reinforce::{action_log_probs, adam, reinforce_loss, reinforce_step, Objective, StepOutcome};
pub use rewards::{discounted_returns, estimate_rewards, step_rewards, Estimate, Trajectory};
pub use rollout::{rollout, RolloutSet};

use crate::error::{Error, Result};
use crate::generator::{beam_search, Awareness, DecodeConfig, Generator};
use crate::metrics::{evaluate_rows, EvalRow, MetricsReport};
use crate::oracle::NliBackend;
use crate::types::{detokenize, tokenize, AnnotatedPair, Relation};

/// A tokenized training or evaluation pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseExample {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub relation: Option<Relation>,
}

impl ParaphraseExample {
    pub fn new(x: &str, y: &str, relation: Option<Relation>) -> Self {
        Self { x: tokenize(x), y: tokenize(y), relation }
    }
}

impl From<&AnnotatedPair> for ParaphraseExample {
    fn from(p: &AnnotatedPair) -> Self {
        Self { x: p.pair.x.clone(), y: p.pair.y.clone(), relation: Some(p.relation) }
    }
}

fn control_of(example: &ParaphraseExample, awareness: Awareness) -> Result<Option<Relation>> {
    match awareness {
        Awareness::Unaware => Ok(None),
        Awareness::Aware => match example.relation {
            Some(r) if r.is_control() => Ok(Some(r)),
            Some(r) => Err(Error::NotControlRelation(r)),
            None => Err(Error::InvalidArgument("relation-aware training needs a relation on every example".into())),
        },
    }
}

/// Beam-decodes every example. Failed decodes come back empty.
pub fn decode_all(
    generator: &Generator,
    examples: &[ParaphraseExample],
    awareness: Awareness,
    decode: &DecodeConfig,
) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let src = generator.source_ids(&ex.x, control_of(ex, awareness)?)?;
        match beam_search(generator, &src, decode) {
            Ok(ids) => out.push(generator.vocab().decode(&ids)),
            Err(Error::Decode(e)) => {
                warn!("decode failed: {e}");
                out.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Corpus metrics of beam outputs on `examples`, each scored against its
/// single reference. R-Consistency needs an oracle and example relations.
pub fn dev_metrics(
    generator: &Generator,
    examples: &[ParaphraseExample],
    awareness: Awareness,
    decode: &DecodeConfig,
    oracle: Option<&dyn NliBackend>,
) -> Result<MetricsReport> {
    let outputs = decode_all(generator, examples, awareness, decode)?;
    let rows: Vec<EvalRow> = examples
        .iter()
        .zip(outputs)
        .map(|(ex, y_hat)| EvalRow {
            x: detokenize(&ex.x),
            y_hat: detokenize(&y_hat),
            references: vec![detokenize(&ex.y)],
            relation: ex.relation,
            metrics: Default::default(),
        })
        .collect();
    evaluate_rows(&rows, oracle)
}
