use std::collections::BTreeMap;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{oracle_verdict, NliBackend};
use crate::error::{Error, Result};
use crate::types::{AnnotatedPair, Relation, SentencePair, Source};

/// Summary of a weak-labeling pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceStats {
    /// Pairs that received a label.
    pub total: usize,
    /// Share of labeled pairs judged CONTRA, NEUTRAL or INVALID.
    pub divergent_fraction: f64,
    pub per_relation: BTreeMap<Relation, usize>,
    /// Records that could not be parsed or scored.
    pub skipped: usize,
}

/// Labels every pair with the oracle's relation.
///
/// Malformed records (`Err` items) and transient backend failures are skipped
/// and counted; an unreachable backend aborts the pass.
pub fn weak_label_corpus<I, B>(pairs: I, backend: &B) -> Result<(Vec<AnnotatedPair>, DivergenceStats)>
where
    I: IntoIterator<Item = Result<SentencePair>>,
    B: NliBackend + ?Sized,
{
    let mut out = Vec::new();
    let mut stats = DivergenceStats::default();
    for item in pairs {
        let pair = match item {
            Ok(p) => p,
            Err(e) => {
                warn!("skipping record: {e}");
                stats.skipped += 1;
                continue;
            }
        };
        let verdict = match oracle_verdict(&pair.x, &pair.y, backend) {
            Ok(v) => v,
            Err(e @ Error::BackendUnavailable(_)) => return Err(e),
            Err(e) => {
                warn!("oracle failed on {:?}: {e}", pair.x.join(" "));
                stats.skipped += 1;
                continue;
            }
        };
        *stats.per_relation.entry(verdict.relation).or_default() += 1;
        out.push(AnnotatedPair::new(pair, verdict.relation, Source::Oracle));
    }
    stats.total = out.len();
    let divergent = out.iter().filter(|p| !p.relation.is_control()).count();
    stats.divergent_fraction = if stats.total == 0 { 0.0 } else { divergent as f64 / stats.total as f64 };
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Every class drawn up to the largest class size, with replacement.
    Upsample,
    /// Every class cut down to the smallest class size, without replacement.
    Downsample,
}

/// Equalises the EQ/FWD/REV class sizes. Deterministic for a given seed.
pub fn balance_corpus(pairs: &[AnnotatedPair], mode: BalanceMode, seed: u64) -> Result<Vec<AnnotatedPair>> {
    let mut classes: [Vec<&AnnotatedPair>; 3] = Default::default();
    for p in pairs {
        let idx = p.relation.control_index().map_err(|_| {
            Error::InvalidArgument(format!("balance_corpus expects control relations only, found {}", p.relation))
        })?;
        classes[idx].push(p);
    }
    for (rel, members) in Relation::CONTROL.iter().zip(&classes) {
        if members.is_empty() {
            return Err(Error::EmptyClass(*rel));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = match mode {
        BalanceMode::Upsample => classes.iter().map(Vec::len).max().unwrap_or(0),
        BalanceMode::Downsample => classes.iter().map(Vec::len).min().unwrap_or(0),
    };
    let mut out = Vec::with_capacity(target * 3);
    for members in &classes {
        match mode {
            BalanceMode::Downsample => {
                out.extend(members.choose_multiple(&mut rng, target).map(|p| (*p).clone()));
            }
            BalanceMode::Upsample => {
                out.extend(members.iter().map(|p| (*p).clone()));
                for _ in members.len()..target {
                    let extra = members.choose(&mut rng).expect("non-empty class");
                    out.push((*extra).clone());
                }
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SyntheticWorldBackend;
    use std::collections::HashMap;

    fn pairs(counts: [usize; 3]) -> Vec<AnnotatedPair> {
        let mut out = Vec::new();
        for (rel, n) in Relation::CONTROL.iter().zip(counts) {
            for i in 0..n {
                let pair = SentencePair::from_text(&format!("{rel} x {i}"), &format!("{rel} y {i}")).unwrap();
                out.push(AnnotatedPair::new(pair, *rel, Source::Gold));
            }
        }
        out
    }

    fn counts(ps: &[AnnotatedPair]) -> [usize; 3] {
        let mut c = [0; 3];
        for p in ps {
            c[p.relation.control_index().unwrap()] += 1;
        }
        c
    }

    #[test]
    fn downsample_to_smallest_class() {
        let input = pairs([10, 4, 6]);
        let out = balance_corpus(&input, BalanceMode::Downsample, 7).unwrap();
        assert_eq!(counts(&out), [4, 4, 4]);
        // Sub-multiset of the input, no duplicates introduced.
        let mut seen: HashMap<&AnnotatedPair, usize> = HashMap::new();
        for p in &out {
            *seen.entry(p).or_default() += 1;
        }
        assert!(seen.iter().all(|(p, n)| *n == 1 && input.contains(p)));
    }

    #[test]
    fn upsample_to_largest_class() {
        let input = pairs([10, 4, 6]);
        let out = balance_corpus(&input, BalanceMode::Upsample, 7).unwrap();
        assert_eq!(counts(&out), [10, 10, 10]);
        assert!(input.iter().all(|p| out.contains(p)));
    }

    #[test]
    fn balancing_is_seed_deterministic() {
        let input = pairs([10, 4, 6]);
        let a = balance_corpus(&input, BalanceMode::Upsample, 3).unwrap();
        let b = balance_corpus(&input, BalanceMode::Upsample, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(
            balance_corpus(&pairs([0, 4, 6]), BalanceMode::Downsample, 0),
            Err(Error::EmptyClass(Relation::Eq))
        ));
    }

    #[test]
    fn non_control_relation_is_rejected() {
        let mut input = pairs([1, 1, 1]);
        input[0].relation = Relation::Neutral;
        assert!(balance_corpus(&input, BalanceMode::Upsample, 0).is_err());
    }

    #[test]
    fn weak_labels_and_divergence() {
        let b = SyntheticWorldBackend::new();
        let input = vec![
            SentencePair::from_text("a b c", "a b"),
            SentencePair::from_text("a b", "a b"),
            SentencePair::from_text("a b", "a b c"),
            SentencePair::from_text("a b", "c d"),
        ];
        let (labeled, stats) = weak_label_corpus(input, &b).unwrap();
        let rels: Vec<_> = labeled.iter().map(|p| p.relation).collect();
        assert_eq!(rels, [Relation::Fwd, Relation::Eq, Relation::Rev, Relation::Neutral]);
        assert!(labeled.iter().all(|p| p.source == Source::Oracle));
        assert_eq!(stats.total, 4);
        assert_eq!(stats.divergent_fraction, 0.25);
        assert_eq!(stats.per_relation[&Relation::Neutral], 1);
    }

    #[test]
    fn malformed_records_are_counted() {
        let b = SyntheticWorldBackend::new();
        let input = vec![SentencePair::from_text("a b", ""), SentencePair::from_text("a b", "a")];
        let (labeled, stats) = weak_label_corpus(input, &b).unwrap();
        assert_eq!(labeled.len(), 1);
        assert_eq!(stats.skipped, 1);
    }
}
