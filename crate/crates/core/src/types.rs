//! Domain vocabulary shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way NLI label for a directional premise/hypothesis judgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NliLabel {
    #[serde(rename = "E")]
    Entailment,
    #[serde(rename = "N")]
    Neutral,
    #[serde(rename = "C")]
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for NliLabel {
    type Err = Error;

    /// Accepts the short forms (`E`/`N`/`C`), full words, and SICK's directional
    /// spellings such as `A_entails_B` or `B_neutral_A`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let label = match lower.as_str() {
            "e" | "entailment" | "entails" => Some(NliLabel::Entailment),
            "n" | "neutral" => Some(NliLabel::Neutral),
            "c" | "contradiction" | "contradicts" => Some(NliLabel::Contradiction),
            _ if lower.contains("entail") => Some(NliLabel::Entailment),
            _ if lower.contains("neutral") => Some(NliLabel::Neutral),
            _ if lower.contains("contradict") => Some(NliLabel::Contradiction),
            _ => None,
        };
        label.ok_or_else(|| Error::InvalidArgument(format!("unknown NLI label {s:?}")))
    }
}

/// Entailment relation between a sentence and its paraphrase.
///
/// Only [`Relation::Eq`], [`Relation::Fwd`] and [`Relation::Rev`] may be used to
/// condition generation; the remaining values are oracle outcomes that mark a
/// pair as semantically divergent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "EQ")]
    Eq,
    #[serde(rename = "FWD")]
    Fwd,
    #[serde(rename = "REV")]
    Rev,
    #[serde(rename = "CONTRA")]
    Contra,
    #[serde(rename = "NEUTRAL")]
    Neutral,
    #[serde(rename = "INVALID")]
    Invalid,
}

impl Relation {
    /// All relations in argmax tie-break order.
    pub const ALL: [Relation; 6] = [
        Relation::Eq,
        Relation::Fwd,
        Relation::Rev,
        Relation::Contra,
        Relation::Neutral,
        Relation::Invalid,
    ];

    pub const CONTROL: [Relation; 3] = [Relation::Eq, Relation::Fwd, Relation::Rev];

    pub fn is_control(self) -> bool {
        matches!(self, Relation::Eq | Relation::Fwd | Relation::Rev)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position within [`Relation::CONTROL`].
    pub fn control_index(self) -> Result<usize> {
        if self.is_control() {
            Ok(self as usize)
        } else {
            Err(Error::NotControlRelation(self))
        }
    }

    /// The relation that holds once the two sentences swap places.
    pub fn reversed(self) -> Relation {
        match self {
            Relation::Fwd => Relation::Rev,
            Relation::Rev => Relation::Fwd,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Eq => "EQ",
            Relation::Fwd => "FWD",
            Relation::Rev => "REV",
            Relation::Contra => "CONTRA",
            Relation::Neutral => "NEUTRAL",
            Relation::Invalid => "INVALID",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EQ" | "≡" => Ok(Relation::Eq),
            "FWD" | "⊏" => Ok(Relation::Fwd),
            "REV" | "⊐" => Ok(Relation::Rev),
            "CONTRA" | "C" => Ok(Relation::Contra),
            "NEUTRAL" | "N" => Ok(Relation::Neutral),
            "INVALID" => Ok(Relation::Invalid),
            _ => Err(Error::InvalidArgument(format!("unknown relation {s:?}"))),
        }
    }
}

pub const CONTROL_EQ: &str = "<rel_eq>";
pub const CONTROL_FWD: &str = "<rel_fwd>";
pub const CONTROL_REV: &str = "<rel_rev>";

/// Reserved vocabulary token that conditions the generator on `relation`.
pub fn control_token(relation: Relation) -> Result<&'static str> {
    match relation {
        Relation::Eq => Ok(CONTROL_EQ),
        Relation::Fwd => Ok(CONTROL_FWD),
        Relation::Rev => Ok(CONTROL_REV),
        other => Err(Error::NotControlRelation(other)),
    }
}

pub fn is_control_token(token: &str) -> bool {
    matches!(token, CONTROL_EQ | CONTROL_FWD | CONTROL_REV)
}

/// Lowercasing whitespace tokenizer used by the oracle, scorers and toy models.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// An input sequence and one paraphrase of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub x: Vec<String>,
    pub y: Vec<String>,
}

impl SentencePair {
    pub fn new(x: Vec<String>, y: Vec<String>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyInput("input sequence"));
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("paraphrase sequence"));
        }
        Ok(Self { x, y })
    }

    pub fn from_text(x: &str, y: &str) -> Result<Self> {
        Self::new(tokenize(x), tokenize(y))
    }

    pub fn swapped(&self) -> Self {
        Self { x: self.y.clone(), y: self.x.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Gold,
    Oracle,
}

/// A sentence pair with its entailment relation and where the label came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PairRecord", into = "PairRecord")]
pub struct AnnotatedPair {
    pub pair: SentencePair,
    pub relation: Relation,
    pub source: Source,
}

impl AnnotatedPair {
    pub fn new(pair: SentencePair, relation: Relation, source: Source) -> Self {
        Self { pair, relation, source }
    }
}

/// JSONL wire form of [`AnnotatedPair`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairRecord {
    x: String,
    y: String,
    relation: Relation,
    source: Source,
}

impl TryFrom<PairRecord> for AnnotatedPair {
    type Error = Error;

    fn try_from(r: PairRecord) -> Result<Self> {
        Ok(AnnotatedPair::new(SentencePair::from_text(&r.x, &r.y)?, r.relation, r.source))
    }
}

impl From<AnnotatedPair> for PairRecord {
    fn from(p: AnnotatedPair) -> Self {
        PairRecord {
            x: detokenize(&p.pair.x),
            y: detokenize(&p.pair.y),
            relation: p.relation,
            source: p.source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    #[default]
    Beam,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub x: Vec<String>,
    pub relation: Relation,
    pub decode: DecodeStrategy,
    pub min_len: usize,
    pub max_len: usize,
}

impl GenerationRequest {
    pub fn new(
        x: Vec<String>,
        relation: Relation,
        decode: DecodeStrategy,
        min_len: usize,
        max_len: usize,
    ) -> Result<Self> {
        if !relation.is_control() {
            return Err(Error::NotControlRelation(relation));
        }
        if x.is_empty() {
            return Err(Error::EmptyInput("generation input"));
        }
        if min_len < 1 || max_len < min_len {
            return Err(Error::InvalidArgument(format!(
                "length bounds must satisfy 1 <= min_len <= max_len (got {min_len}, {max_len})"
            )));
        }
        Ok(Self { x, relation, decode, min_len, max_len })
    }
}

/// Weights and thresholds of the combined rollout reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the consistency-minus-penalty term.
    pub alpha: f64,
    /// Weight of semantic similarity.
    pub beta: f64,
    /// Weight of expression diversity.
    pub delta: f64,
    pub n_rollouts: usize,
    pub gamma: f64,
    pub sim_low: f64,
    pub sim_high: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            delta: 0.2,
            n_rollouts: 2,
            gamma: 0.99,
            sim_low: 0.3,
            sim_high: 0.98,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.alpha < 0.0 || self.beta < 0.0 || self.delta < 0.0 {
            return bad(format!(
                "reward weights must be non-negative (alpha={}, beta={}, delta={})",
                self.alpha, self.beta, self.delta
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0 <= self.sim_low && self.sim_low < self.sim_high && self.sim_high <= 1.0) {
            return bad(format!(
                "similarity band must satisfy 0 <= sim_low < sim_high <= 1 (got {}, {})",
                self.sim_low, self.sim_high
            ));
        }
        if self.n_rollouts == 0 {
            return bad("n_rollouts must be at least 1".into());
        }
        Ok(())
    }
}

/// Scores of one generated sequence plus the per-step rewards of its trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_s: f64,
    pub r_d: f64,
    pub r_l: f64,
    pub p_l: f64,
    pub f: f64,
    pub per_step_r: Vec<f64>,
    pub per_step_q: Vec<f64>,
}
