//! Paraphrastic augmentation of binary entailment data with label
//! projection, export of likely mislabeled augmentations, and a small
//! bag-of-features classifier for exercising the augmented data.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{oracle_verdict, NliBackend};
use crate::types::{detokenize, tokenize, Relation};

/// Binary entailment label of a training row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    E,
    NE,
}

/// Label after projection; `U` means the composition is undetermined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projected {
    E,
    NE,
    U,
}

/// Which version of a sentence a side of an augmented pair uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Orig,
    EqPara,
    RevPara,
    FwdPara,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Orig, Variant::EqPara, Variant::RevPara, Variant::FwdPara];

    pub fn for_relation(relation: Relation) -> Result<Variant> {
        match relation {
            Relation::Eq => Ok(Variant::EqPara),
            Relation::Fwd => Ok(Variant::FwdPara),
            Relation::Rev => Ok(Variant::RevPara),
            other => Err(Error::NotControlRelation(other)),
        }
    }

    /// Relation assumed between the original sentence and this variant.
    pub fn relation(self) -> Option<Relation> {
        match self {
            Variant::Orig => None,
            Variant::EqPara => Some(Relation::Eq),
            Variant::RevPara => Some(Relation::Rev),
            Variant::FwdPara => Some(Relation::Fwd),
        }
    }
}

/// Projects an entailment label through paraphrases of premise and
/// hypothesis.
///
/// A forward-entailing premise paraphrase or a reverse-entailing hypothesis
/// paraphrase leaves the label undetermined. A forward-entailing hypothesis
/// paraphrase keeps entailment but makes non-entailment undetermined. Every
/// other combination keeps the label.
pub fn project_label(original: BinaryLabel, premise: Variant, hypothesis: Variant) -> Projected {
    if premise == Variant::FwdPara || hypothesis == Variant::RevPara {
        return Projected::U;
    }
    match (original, hypothesis) {
        (BinaryLabel::E, _) => Projected::E,
        (BinaryLabel::NE, Variant::FwdPara) => Projected::U,
        (BinaryLabel::NE, _) => Projected::NE,
    }
}

/// One row of an entailment dataset, original or augmented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentRow {
    pub premise: String,
    pub hypothesis: String,
    pub label: BinaryLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub premise_variant: Variant,
    pub hypothesis_variant: Variant,
    pub projected_from: BinaryLabel,
    pub original_premise: String,
    pub original_hypothesis: String,
}

/// Produces a paraphrase of a sentence; `None` asks for a paraphrase with no
/// relation control.
pub trait Paraphraser {
    fn paraphrase(&self, sentence: &[String], relation: Option<Relation>) -> Result<Vec<String>>;
}

impl<F> Paraphraser for F
where
    F: Fn(&[String], Option<Relation>) -> Result<Vec<String>>,
{
    fn paraphrase(&self, sentence: &[String], relation: Option<Relation>) -> Result<Vec<String>> {
        self(sentence, relation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Paraphrases are requested per relation and projected accordingly.
    Aware,
    /// One uncontrolled paraphrase per sentence, assumed equivalent.
    Unaware,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub generated: usize,
    pub emitted: usize,
    /// Rows whose projected label was undetermined.
    pub dropped_unknown: usize,
    /// Sentence paraphrase requests that failed.
    pub failed_paraphrases: usize,
}

/// Emits every premise/hypothesis variant combination except the original
/// pair, labeled by [`project_label`]. Undetermined rows are dropped and
/// counted.
pub fn generate_augmentations<P: Paraphraser + ?Sized>(
    rows: &[EntailmentRow],
    paraphraser: &P,
    relations: &[Relation],
    mode: AugmentMode,
) -> Result<(Vec<EntailmentRow>, AugmentStats)> {
    let requests: Vec<(Variant, Option<Relation>)> = match mode {
        AugmentMode::Aware => {
            let mut v = Vec::new();
            for r in relations {
                let variant = Variant::for_relation(*r)?;
                if !v.iter().any(|(x, _)| *x == variant) {
                    v.push((variant, Some(*r)));
                }
            }
            v.sort();
            v
        }
        AugmentMode::Unaware => vec![(Variant::EqPara, None)],
    };

    let mut stats = AugmentStats::default();
    let mut out = Vec::new();
    for row in rows {
        let p = tokenize(&row.premise);
        let h = tokenize(&row.hypothesis);
        let mut side = |s: &[String]| -> Result<Vec<(Variant, Vec<String>)>> {
            let mut v = vec![(Variant::Orig, s.to_vec())];
            for (variant, rel) in &requests {
                match paraphraser.paraphrase(s, *rel) {
                    Ok(y) if !y.is_empty() => v.push((*variant, y)),
                    Ok(_) => stats.failed_paraphrases += 1,
                    Err(e @ Error::BackendUnavailable(_)) => return Err(e),
                    Err(e) => {
                        warn!("paraphrase failed for {:?}: {e}", detokenize(s));
                        stats.failed_paraphrases += 1;
                    }
                }
            }
            Ok(v)
        };
        let premises = side(&p)?;
        let hypotheses = side(&h)?;
        for (pv, ps) in &premises {
            for (hv, hs) in &hypotheses {
                if *pv == Variant::Orig && *hv == Variant::Orig {
                    continue;
                }
                stats.generated += 1;
                let label = match project_label(row.label, *pv, *hv) {
                    Projected::E => BinaryLabel::E,
                    Projected::NE => BinaryLabel::NE,
                    Projected::U => {
                        stats.dropped_unknown += 1;
                        continue;
                    }
                };
                out.push(EntailmentRow {
                    premise: detokenize(ps),
                    hypothesis: detokenize(hs),
                    label,
                    provenance: Some(Provenance {
                        premise_variant: *pv,
                        hypothesis_variant: *hv,
                        projected_from: row.label,
                        original_premise: row.premise.clone(),
                        original_hypothesis: row.hypothesis.clone(),
                    }),
                });
            }
        }
    }
    stats.emitted = out.len();
    Ok((out, stats))
}

/// An augmented row whose paraphrase the oracle judges differently from the
/// relation its variant assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialCandidate {
    pub premise: String,
    pub hypothesis: String,
    pub label: BinaryLabel,
    pub side: String,
    pub original: String,
    pub paraphrase: String,
    pub assumed_relation: Relation,
    pub oracle_relation: Relation,
}

/// Rows whose paraphrased side disagrees with the oracle, for manual review.
/// Rows without provenance are ignored; transient oracle failures skip the
/// side being checked.
pub fn export_adversarial_candidates<B: NliBackend + ?Sized>(
    rows: &[EntailmentRow],
    oracle: &B,
) -> Result<Vec<AdversarialCandidate>> {
    let mut out = Vec::new();
    for row in rows {
        let Some(prov) = &row.provenance else { continue };
        let sides = [
            ("premise", prov.premise_variant, &prov.original_premise, &row.premise),
            ("hypothesis", prov.hypothesis_variant, &prov.original_hypothesis, &row.hypothesis),
        ];
        for (side, variant, original, paraphrase) in sides {
            let Some(assumed) = variant.relation() else { continue };
            let verdict = match oracle_verdict(&tokenize(original), &tokenize(paraphrase), oracle) {
                Ok(v) => v,
                Err(e @ Error::BackendUnavailable(_)) => return Err(e),
                Err(e) => {
                    warn!("oracle failed during export: {e}");
                    continue;
                }
            };
            if verdict.relation != assumed {
                out.push(AdversarialCandidate {
                    premise: row.premise.clone(),
                    hypothesis: row.hypothesis.clone(),
                    label: row.label,
                    side: side.into(),
                    original: original.clone(),
                    paraphrase: paraphrase.clone(),
                    assumed_relation: assumed,
                    oracle_relation: verdict.relation,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_candidates_csv(path: &Path, candidates: &[AdversarialCandidate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["premise", "hypothesis", "label", "side", "original", "paraphrase", "assumed_relation", "oracle_relation", "annotation"])?;
    for c in candidates {
        let label = match c.label {
            BinaryLabel::E => "E",
            BinaryLabel::NE => "NE",
        };
        w.write_record([
            c.premise.as_str(),
            &c.hypothesis,
            label,
            &c.side,
            &c.original,
            &c.paraphrase,
            c.assumed_relation.as_str(),
            c.oracle_relation.as_str(),
            "",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Logistic regression over premise, hypothesis and overlap token features.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BagClassifier {
    features: HashMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
}

impl BagClassifier {
    fn feature_names(row: &EntailmentRow) -> Vec<String> {
        let p = tokenize(&row.premise);
        let h = tokenize(&row.hypothesis);
        let mut names: Vec<String> = p.iter().map(|t| format!("p:{t}")).collect();
        for t in &h {
            names.push(format!("h:{t}"));
            names.push(if p.contains(t) { format!("shared:{t}") } else { format!("new:{t}") });
        }
        let novel = h.iter().filter(|t| !p.contains(t)).count();
        names.push(format!("novel_count:{}", novel.min(3)));
        names
    }

    fn ids(&self, row: &EntailmentRow) -> Vec<usize> {
        Self::feature_names(row).iter().filter_map(|n| self.features.get(n).copied()).collect()
    }

    fn logit(&self, ids: &[usize]) -> f64 {
        self.bias + ids.iter().map(|&i| self.weights[i]).sum::<f64>()
    }

    /// Probability that the premise entails the hypothesis.
    pub fn prob_entails(&self, row: &EntailmentRow) -> f64 {
        1.0 / (1.0 + (-self.logit(&self.ids(row))).exp())
    }

    pub fn predict(&self, row: &EntailmentRow) -> BinaryLabel {
        if self.prob_entails(row) >= 0.5 {
            BinaryLabel::E
        } else {
            BinaryLabel::NE
        }
    }

    /// Trains by shuffled per-example gradient descent.
    pub fn train(rows: &[EntailmentRow], epochs: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("training rows"));
        }
        let mut model = Self::default();
        let mut data = Vec::with_capacity(rows.len());
        for row in rows {
            let mut ids = Vec::new();
            for name in Self::feature_names(row) {
                let next = model.features.len();
                ids.push(*model.features.entry(name).or_insert(next));
            }
            data.push((ids, if row.label == BinaryLabel::E { 1.0 } else { 0.0 }));
        }
        model.weights = vec![0.0; model.features.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (ids, y) = &data[i];
                let p = 1.0 / (1.0 + (-model.logit(ids)).exp());
                let g = p - y;
                model.bias -= learning_rate * g;
                for &id in ids {
                    model.weights[id] -= learning_rate * g;
                }
            }
        }
        Ok(model)
    }

    pub fn accuracy(&self, rows: &[EntailmentRow]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|r| self.predict(r) == r.label).count() as f64 / rows.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SyntheticWorldBackend;
    use BinaryLabel::{E, NE};
    use Variant::*;

    fn row(p: &str, h: &str, label: BinaryLabel) -> EntailmentRow {
        EntailmentRow { premise: p.into(), hypothesis: h.into(), label, provenance: None }
    }

    /// Appends a tag naming the requested relation.
    fn tagging(s: &[String], r: Option<Relation>) -> Result<Vec<String>> {
        let mut v = s.to_vec();
        v.push(r.map_or("eq", |r| match r {
            Relation::Eq => "eq",
            Relation::Fwd => "fwd",
            _ => "rev",
        }).into());
        Ok(v)
    }

    #[test]
    fn spot_cells() {
        assert_eq!(project_label(E, EqPara, Orig), Projected::E);
        assert_eq!(project_label(NE, Orig, FwdPara), Projected::U);
        assert_eq!(project_label(E, FwdPara, Orig), Projected::U);
        assert_eq!(project_label(NE, RevPara, EqPara), Projected::NE);
        assert_eq!(project_label(E, RevPara, FwdPara), Projected::E);
    }

    #[test]
    fn equivalence_only_yields_three_rows_each() {
        let rows = [row("a b", "a", E), row("c d", "e", NE)];
        let (out, stats) = generate_augmentations(&rows, &tagging, &[Relation::Eq], AugmentMode::Aware).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(stats, AugmentStats { generated: 6, emitted: 6, dropped_unknown: 0, failed_paraphrases: 0 });
        assert_eq!(out[0].label, E);
        assert_eq!(out[3].label, NE);
    }

    #[test]
    fn reverse_premises_keep_labels() {
        let rows = [row("a b", "a", NE)];
        let (out, stats) =
            generate_augmentations(&rows, &tagging, &[Relation::Eq, Relation::Rev], AugmentMode::Aware).unwrap();
        let pr: Vec<_> = out
            .iter()
            .filter(|r| r.provenance.as_ref().unwrap().premise_variant == RevPara)
            .collect();
        assert_eq!(pr.len(), 2);
        assert!(pr.iter().all(|r| r.label == NE));
        assert_eq!(stats.generated, stats.emitted + stats.dropped_unknown);
    }

    #[test]
    fn unaware_matches_aware_equivalence_subset() {
        let rows = [row("a b", "a", E), row("c d", "e", NE)];
        let (aware, _) = generate_augmentations(
            &rows,
            &tagging,
            &[Relation::Eq, Relation::Fwd, Relation::Rev],
            AugmentMode::Aware,
        )
        .unwrap();
        let (unaware, _) = generate_augmentations(&rows, &tagging, &[], AugmentMode::Unaware).unwrap();
        let restricted: Vec<_> = aware
            .into_iter()
            .filter(|r| {
                let p = r.provenance.as_ref().unwrap();
                matches!(p.premise_variant, Orig | EqPara) && matches!(p.hypothesis_variant, Orig | EqPara)
            })
            .collect();
        assert_eq!(unaware, restricted);
    }

    #[test]
    fn failed_paraphrases_are_counted() {
        let failing = |s: &[String], _: Option<Relation>| -> Result<Vec<String>> {
            if s[0] == "bad" {
                Err(Error::Decode("boom".into()))
            } else {
                Ok(s.to_vec())
            }
        };
        let (out, stats) = generate_augmentations(&[row("bad x", "y", E)], &failing, &[Relation::Eq], AugmentMode::Aware).unwrap();
        assert_eq!(stats.failed_paraphrases, 1);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn export_flags_disagreements_only() {
        let b = SyntheticWorldBackend::new();
        let dropping = |s: &[String], _: Option<Relation>| -> Result<Vec<String>> { Ok(s[..s.len() - 1].to_vec()) };
        let rows = [row("a b c", "a b", E)];
        let (aug, _) = generate_augmentations(&rows, &dropping, &[Relation::Eq], AugmentMode::Aware).unwrap();
        let cands = export_adversarial_candidates(&aug, &b).unwrap();
        assert_eq!(cands.len(), 4);
        assert!(cands.iter().all(|c| c.oracle_relation == Relation::Fwd));

        let identity = |s: &[String], _: Option<Relation>| -> Result<Vec<String>> { Ok(s.iter().rev().cloned().collect()) };
        let (aug, _) = generate_augmentations(&rows, &identity, &[Relation::Eq], AugmentMode::Aware).unwrap();
        assert!(export_adversarial_candidates(&aug, &b).unwrap().is_empty());

        let dir = tempfile::tempdir().unwrap();
        write_candidates_csv(&dir.path().join("c.csv"), &cands).unwrap();
    }

    #[test]
    fn bag_classifier_learns_overlap() {
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push(row(&format!("w{i} x{i} y"), &format!("w{i} y"), E));
            rows.push(row(&format!("w{i} x{i} y"), &format!("z{i} y"), NE));
        }
        let model = BagClassifier::train(&rows, 20, 0.1, 0).unwrap();
        let held = [row("q r s", "q s", E), row("q r s", "t s", NE)];
        assert_eq!(model.accuracy(&held), 1.0);
    }
}
