use std::collections::{BTreeSet, HashMap};

use super::{NliBackend, NliDistribution};
use crate::error::Result;
use crate::types::NliLabel;

/// Token whose presence on exactly one side makes a pair contradictory.
pub const NEGATION_MARKER: &str = "not";

/// Rule-based NLI over token sets, so that ground-truth relations are
/// computable without a trained classifier.
///
/// Tokens are first mapped to a canonical form through an optional synonym
/// table. Then, in order:
/// 1. the negation marker present on one side only gives C;
/// 2. hypothesis tokens contained in the premise tokens give E;
/// 3. anything else gives N.
///
/// Word order and multiplicity are ignored, so equal token sets entail each
/// other and dropping tokens is entailed by the longer sentence.
#[derive(Debug, Clone, Default)]
pub struct SyntheticWorldBackend {
    canonical: HashMap<String, String>,
}

impl SyntheticWorldBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares each group of surface forms as interchangeable.
    pub fn with_synonyms<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut canonical = HashMap::new();
        for group in groups {
            let forms: Vec<String> = group.into_iter().map(|s| s.as_ref().to_lowercase()).collect();
            if let Some(head) = forms.first().cloned() {
                for f in forms {
                    canonical.insert(f, head.clone());
                }
            }
        }
        Self { canonical }
    }

    fn concepts<'a>(&'a self, tokens: &'a [String]) -> BTreeSet<&'a str> {
        tokens
            .iter()
            .map(|t| self.canonical.get(t).map(String::as_str).unwrap_or(t.as_str()))
            .collect()
    }

    pub fn label(&self, premise: &[String], hypothesis: &[String]) -> NliLabel {
        let p = self.concepts(premise);
        let h = self.concepts(hypothesis);
        if p.contains(NEGATION_MARKER) != h.contains(NEGATION_MARKER) {
            NliLabel::Contradiction
        } else if h.is_subset(&p) {
            NliLabel::Entailment
        } else {
            NliLabel::Neutral
        }
    }
}

impl NliBackend for SyntheticWorldBackend {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution> {
        Ok(NliDistribution::one_hot(self.label(premise, hypothesis)))
    }
}
