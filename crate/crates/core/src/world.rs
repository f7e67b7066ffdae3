//! A toy world of interchangeable pseudo-words in which every entailment
//! relation can be produced on demand and checked exactly by
//! [`SyntheticWorldBackend`].
//!
//! Words name concepts; some concepts are modifiers that sentences may
//! carry, and dropping or adding one is the usual way to generalise or
//! specialise a sentence.

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{SyntheticWorldBackend, NEGATION_MARKER};
use crate::rl::ParaphraseExample;
use crate::types::Relation;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Content concepts a sentence is built from.
    pub concepts: usize,
    /// Extra concepts used for generalising and specialising.
    pub modifiers: usize,
    /// Surface forms per concept.
    pub forms: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { concepts: 24, modifiers: 4, forms: 2, min_len: 3, max_len: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    forms: Vec<Vec<String>>,
    concept_of: HashMap<String, usize>,
    content: usize,
    min_len: usize,
    max_len: usize,
}

impl World {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        if cfg.forms == 0 || cfg.min_len < 2 || cfg.min_len > cfg.max_len || cfg.concepts < cfg.max_len + 2 || cfg.modifiers < 2 {
            return Err(Error::Config(
                "world needs forms >= 1, 2 <= min_len <= max_len, concepts >= max_len + 2 and modifiers >= 2".into(),
            ));
        }
        let total = cfg.concepts + cfg.modifiers;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let mut seen: HashSet<String> = HashSet::from([NEGATION_MARKER.to_string()]);
        let mut forms = Vec::with_capacity(total);
        let capacity = (ONSETS.len() * VOWELS.len()).pow(2);
        if total * cfg.forms > capacity / 2 {
            return Err(Error::Config(format!("at most {} surface forms", capacity / 2)));
        }
        for _ in 0..total {
            let mut group = Vec::with_capacity(cfg.forms);
            while group.len() < cfg.forms {
                let w: String = (0..2)
                    .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
                    .collect();
                if seen.insert(w.clone()) {
                    group.push(w);
                }
            }
            forms.push(group);
        }
        let concept_of = forms.iter().enumerate().flat_map(|(i, g)| g.iter().map(move |w| (w.clone(), i))).collect();
        Ok(Self { forms, concept_of, content: cfg.concepts, min_len: cfg.min_len, max_len: cfg.max_len })
    }

    /// The rule oracle that knows this world's synonyms.
    pub fn oracle(&self) -> SyntheticWorldBackend {
        SyntheticWorldBackend::with_synonyms(self.forms.iter())
    }

    pub fn synonym_groups(&self) -> &[Vec<String>] {
        &self.forms
    }

    fn form(&self, concept: usize, rng: &mut impl Rng) -> String {
        self.forms[concept].choose(rng).unwrap().clone()
    }

    fn is_modifier(&self, concept: usize) -> bool {
        concept >= self.content
    }

    fn fresh(&self, range: std::ops::Range<usize>, used: &HashSet<usize>, rng: &mut impl Rng) -> Option<usize> {
        let free: Vec<usize> = range.filter(|c| !used.contains(c)).collect();
        free.choose(rng).copied()
    }

    /// Distinct content concepts in random order, possibly with one
    /// modifier, each with a random surface form.
    pub fn sentence(&self, rng: &mut impl Rng) -> Vec<String> {
        let len = rng.random_range(self.min_len..=self.max_len);
        let mut concepts: Vec<usize> = (0..self.content).collect();
        concepts.shuffle(rng);
        concepts.truncate(len);
        if rng.random_bool(0.5) {
            let m = rng.random_range(self.content..self.forms.len());
            concepts.insert(rng.random_range(0..=concepts.len()), m);
        }
        concepts.iter().map(|&c| self.form(c, rng)).collect()
    }

    /// A rewrite of `x` standing in `relation` to it: synonym swaps for EQ,
    /// plus a dropped word for FWD (a modifier when there is one), an added
    /// modifier for REV, a replaced word for NEUTRAL or the negation marker
    /// for CONTRA.
    pub fn paraphrase(&self, x: &[String], relation: Relation, rng: &mut impl Rng) -> Result<Vec<String>> {
        let mut concepts = Vec::with_capacity(x.len());
        for w in x {
            match self.concept_of.get(w) {
                Some(c) => concepts.push(*c),
                None => return Err(Error::InvalidArgument(format!("'{w}' is not a word of this world"))),
            }
        }
        let used: HashSet<usize> = concepts.iter().copied().collect();
        if used.len() != concepts.len() || concepts.len() < 2 {
            return Err(Error::InvalidArgument("need at least 2 distinct words".into()));
        }
        let mut y: Vec<String> = x.to_vec();
        let swaps = (x.len() / 3).max(1);
        let mut positions: Vec<usize> = (0..x.len()).collect();
        positions.shuffle(rng);
        for &i in &positions[..swaps] {
            if let Some(other) = self.forms[concepts[i]].iter().filter(|f| **f != x[i]).collect::<Vec<_>>().choose(rng) {
                y[i] = (*other).clone();
            }
        }
        match relation {
            Relation::Eq => {}
            Relation::Fwd => {
                let mods: Vec<usize> = (0..y.len()).filter(|&i| self.is_modifier(concepts[i])).collect();
                let i = mods.choose(rng).copied().unwrap_or_else(|| rng.random_range(0..y.len()));
                y.remove(i);
            }
            Relation::Rev => {
                let c = self
                    .fresh(self.content..self.forms.len(), &used, rng)
                    .or_else(|| self.fresh(0..self.content, &used, rng))
                    .ok_or_else(|| Error::InvalidArgument("no unused concept left".into()))?;
                let w = self.form(c, rng);
                y.insert(rng.random_range(0..=y.len()), w);
            }
            Relation::Neutral => {
                let c = self
                    .fresh(0..self.content, &used, rng)
                    .ok_or_else(|| Error::InvalidArgument("no unused concept left".into()))?;
                let i = rng.random_range(0..y.len());
                y[i] = self.form(c, rng);
            }
            Relation::Contra => y.insert(rng.random_range(0..=y.len()), NEGATION_MARKER.to_string()),
            Relation::Invalid => return Err(Error::InvalidArgument("no rewrite produces INVALID".into())),
        }
        Ok(y)
    }

    /// `n` pairs with relations drawn uniformly from `relations`. With
    /// probability `label_noise` the recorded relation is replaced by a
    /// uniform draw from `relations`, independent of the pair.
    pub fn examples(&self, n: usize, relations: &[Relation], label_noise: f64, rng: &mut impl Rng) -> Result<Vec<ParaphraseExample>> {
        if relations.is_empty() {
            return Err(Error::EmptyInput("relations"));
        }
        (0..n)
            .map(|_| {
                let x = self.sentence(rng);
                let r = *relations.choose(rng).unwrap();
                let y = self.paraphrase(&x, r, rng)?;
                let label = if rng.random::<f64>() < label_noise { *relations.choose(rng).unwrap() } else { r };
                Ok(ParaphraseExample { x, y, relation: Some(label) })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_verdict;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_is_seeded_and_words_are_unique() {
        let a = World::new(&WorldConfig::default()).unwrap();
        let b = World::new(&WorldConfig::default()).unwrap();
        assert_eq!(a, b);
        let all: Vec<&String> = a.forms.iter().flatten().collect();
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len());
        assert!(World::new(&WorldConfig { concepts: 5, ..Default::default() }).is_err());
    }

    #[test]
    fn foreign_words_are_rejected() {
        let w = World::new(&WorldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(w.paraphrase(&["zzz".into(), "yyy".into(), "xxx".into()], Relation::Eq, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn rewrites_have_the_requested_relation(seed in 0u64..10_000, k in 0usize..5) {
            let w = World::new(&WorldConfig::default()).unwrap();
            let oracle = w.oracle();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rel = [Relation::Eq, Relation::Fwd, Relation::Rev, Relation::Neutral, Relation::Contra][k];
            let x = w.sentence(&mut rng);
            let y = w.paraphrase(&x, rel, &mut rng).unwrap();
            prop_assert_eq!(oracle_verdict(&x, &y, &oracle).unwrap().relation, rel);
            prop_assert!(y != x);
        }
    }
}
