//! Bidirectional NLI oracle: directional classification, the relation case
//! table, likelihood composition, weak labeling and class balancing.

mod corpus;
mod http;
mod synthetic;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{NliLabel, Relation};

pub use corpus::{balance_corpus, weak_label_corpus, BalanceMode, DivergenceStats};
pub use http::HttpNliBackend;
pub(crate) use http::map_http_error;
pub use synthetic::{SyntheticWorldBackend, NEGATION_MARKER};

const MASS_TOLERANCE: f64 = 1e-6;

/// Probabilities over {E, N, C} for one premise/hypothesis direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliDistribution {
    pub p_e: f64,
    pub p_n: f64,
    pub p_c: f64,
}

impl NliDistribution {
    pub fn new(p_e: f64, p_n: f64, p_c: f64) -> Result<Self> {
        let d = Self { p_e, p_n, p_c };
        d.validate()?;
        Ok(d)
    }

    pub fn one_hot(label: NliLabel) -> Self {
        let mut p = [0.0; 3];
        p[label.index()] = 1.0;
        Self { p_e: p[0], p_n: p[1], p_c: p[2] }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self.as_array();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Backend(format!("probabilities out of range: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Backend(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_e, self.p_n, self.p_c]
    }

    pub fn prob(&self, label: NliLabel) -> f64 {
        self.as_array()[label.index()]
    }

    /// Most likely label; ties resolve in E, N, C order.
    pub fn argmax(&self) -> NliLabel {
        let p = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        NliLabel::ALL[best]
    }
}

/// A directional three-way NLI classifier.
pub trait NliBackend: Send + Sync {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution>;
}

impl<T: NliBackend + ?Sized> NliBackend for Box<T> {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution> {
        (**self).classify(premise, hypothesis)
    }
}

impl<T: NliBackend + ?Sized> NliBackend for std::sync::Arc<T> {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution> {
        (**self).classify(premise, hypothesis)
    }
}

/// Runs `backend` on one direction, rejecting empty input and improper output.
pub fn classify<B: NliBackend + ?Sized>(
    premise: &[String],
    hypothesis: &[String],
    backend: &B,
) -> Result<NliDistribution> {
    if premise.is_empty() {
        return Err(Error::EmptyInput("premise"));
    }
    if hypothesis.is_empty() {
        return Err(Error::EmptyInput("hypothesis"));
    }
    let dist = backend.classify(premise, hypothesis)?;
    dist.validate()?;
    Ok(dist)
}

/// Maps the forward (X ⇒ Y) and backward (Y ⇒ X) labels to a relation.
pub fn derive_relation(forward: NliLabel, backward: NliLabel) -> Relation {
    use NliLabel::*;
    match (forward, backward) {
        (Entailment, Entailment) => Relation::Eq,
        (Entailment, Neutral) => Relation::Fwd,
        (Neutral, Entailment) => Relation::Rev,
        (Contradiction, Contradiction) => Relation::Contra,
        (Neutral, Neutral) => Relation::Neutral,
        _ => Relation::Invalid,
    }
}

/// Relation likelihoods for a pair and the relation they select.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub relation: Relation,
    #[serde(with = "likelihood_map")]
    pub likelihoods: [f64; 6],
}

impl OracleVerdict {
    /// Composes the two directional distributions assuming independence.
    /// Every cell of the 3×3 outer product not named by the case table counts
    /// towards INVALID.
    pub fn from_directional(forward: &NliDistribution, backward: &NliDistribution) -> Self {
        let f = forward.as_array();
        let b = backward.as_array();
        let mut likelihoods = [0.0; 6];
        for (i, fl) in NliLabel::ALL.iter().enumerate() {
            for (j, bl) in NliLabel::ALL.iter().enumerate() {
                likelihoods[derive_relation(*fl, *bl).index()] += f[i] * b[j];
            }
        }
        let named: f64 = likelihoods[..5].iter().sum();
        likelihoods[Relation::Invalid.index()] = (1.0 - named).max(0.0);

        let mut best = 0;
        for i in 1..6 {
            if likelihoods[i] > likelihoods[best] {
                best = i;
            }
        }
        Self { relation: Relation::ALL[best], likelihoods }
    }

    pub fn likelihood(&self, relation: Relation) -> f64 {
        self.likelihoods[relation.index()]
    }

    /// Likelihoods of EQ, FWD, REV renormalised to sum to one, or `None` when
    /// the oracle puts no mass on any control relation.
    pub fn control_distribution(&self) -> Option<[f64; 3]> {
        let mass: f64 = self.likelihoods[..3].iter().sum();
        if mass <= 0.0 {
            return None;
        }
        Some([
            self.likelihoods[0] / mass,
            self.likelihoods[1] / mass,
            self.likelihoods[2] / mass,
        ])
    }
}

mod likelihood_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(l: &[f64; 6], s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = Relation::ALL.iter().map(|r| (r.as_str(), l[r.index()])).collect();
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[f64; 6], D::Error> {
        let map = BTreeMap::<Relation, f64>::deserialize(d)?;
        let mut out = [0.0; 6];
        for (r, v) in map {
            out[r.index()] = v;
        }
        Ok(out)
    }
}

/// Runs the classifier forwards ⟨X, Y⟩ and backwards ⟨Y, X⟩ and composes a verdict.
pub fn oracle_verdict<B: NliBackend + ?Sized>(x: &[String], y: &[String], backend: &B) -> Result<OracleVerdict> {
    let forward = classify(x, y, backend)?;
    let backward = classify(y, x, backend)?;
    Ok(OracleVerdict::from_directional(&forward, &backward))
}

/// Backend that looks directional judgements up in a table, for precomputed
/// classifier output and for tests.
#[derive(Debug, Clone, Default)]
pub struct TableBackend {
    entries: HashMap<(Vec<String>, Vec<String>), NliDistribution>,
    fallback: Option<NliDistribution>,
}

impl TableBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(mut self, fallback: NliDistribution) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn insert(&mut self, premise: Vec<String>, hypothesis: Vec<String>, dist: NliDistribution) {
        self.entries.insert((premise, hypothesis), dist);
    }

    /// Registers both directions of a pair.
    pub fn insert_pair(&mut self, x: &[String], y: &[String], forward: NliDistribution, backward: NliDistribution) {
        self.insert(x.to_vec(), y.to_vec(), forward);
        self.insert(y.to_vec(), x.to_vec(), backward);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl NliBackend for TableBackend {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution> {
        self.entries
            .get(&(premise.to_vec(), hypothesis.to_vec()))
            .copied()
            .or(self.fallback)
            .ok_or_else(|| Error::Backend(format!("no entry for ({:?}, {:?})", premise.join(" "), hypothesis.join(" "))))
    }
}
