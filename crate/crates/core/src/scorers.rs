//! Reward-side scorers: semantic similarity, expression diversity, relation
//! consistency, the adversary penalty, thresholding and the combined score.

use std::collections::HashMap;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::adversary::HypothesisOnly;
use crate::error::{Error, Result};
use crate::oracle::{oracle_verdict, NliBackend};
use crate::types::{is_control_token, Relation, RewardConfig};

/// Scores how close in meaning two token sequences are, in [0, 1].
pub trait SimilarityBackend: Send + Sync {
    fn similarity(&self, x: &[String], y_hat: &[String]) -> Result<f64>;
}

/// Multiset token-overlap F1, ignoring reserved control tokens and an
/// optional stop list.
#[derive(Debug, Clone, Default)]
pub struct TokenOverlapSimilarity {
    stopwords: Vec<String>,
}

impl TokenOverlapSimilarity {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords<I: IntoIterator<Item = S>, S: Into<String>>(stopwords: I) -> Self {
        Self { stopwords: stopwords.into_iter().map(Into::into).collect() }
    }

    fn content<'a>(&self, tokens: &'a [String]) -> HashMap<&'a str, usize> {
        let mut counts = HashMap::new();
        for t in tokens {
            if !is_control_token(t) && !self.stopwords.iter().any(|s| s == t) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        counts
    }
}

impl SimilarityBackend for TokenOverlapSimilarity {
    fn similarity(&self, x: &[String], y_hat: &[String]) -> Result<f64> {
        let cx = self.content(x);
        let cy = self.content(y_hat);
        let nx: usize = cx.values().sum();
        let ny: usize = cy.values().sum();
        if nx == 0 || ny == 0 {
            return Ok(0.0);
        }
        let overlap: usize = cy.iter().map(|(t, n)| (*n).min(*cx.get(t).unwrap_or(&0))).sum();
        if overlap == 0 {
            return Ok(0.0);
        }
        let precision = overlap as f64 / ny as f64;
        let recall = overlap as f64 / nx as f64;
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Adapter for an external similarity scorer served over HTTP: POSTs
/// `{"x": str, "y": str}` and reads `{"score": f}`.
#[derive(Debug, Clone)]
pub struct HttpSimilarity {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpSimilarity {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(30))).build().into();
        Self { endpoint: endpoint.into(), agent }
    }
}

impl SimilarityBackend for HttpSimilarity {
    fn similarity(&self, x: &[String], y_hat: &[String]) -> Result<f64> {
        #[derive(Deserialize)]
        struct Reply {
            score: f64,
        }
        let body = serde_json::json!({ "x": x.join(" "), "y": y_hat.join(" ") });
        let reply: Reply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| crate::oracle::map_http_error(&self.endpoint, e))?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(Error::Backend(format!("similarity {} outside [0, 1]", reply.score)));
        }
        Ok(reply.score)
    }
}

pub fn similarity<S: SimilarityBackend + ?Sized>(x: &[String], y_hat: &[String], backend: &S) -> Result<f64> {
    backend.similarity(x, y_hat)
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one order.
pub(crate) fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let total = candidate.len().saturating_sub(n - 1);
    let matched = cand.iter().map(|(g, c)| (*c).min(*refs.get(g).unwrap_or(&0))).sum();
    (matched, total)
}

/// Sentence BLEU in [0, 1] with the brevity penalty fixed to 1.
///
/// Geometric mean of clipped 1..4-gram precisions. Orders for which the
/// candidate has no n-grams are left out of the mean; a zero precision at
/// order two or higher is smoothed to `1 / (total + 1)`.
pub fn bleu_no_brevity(candidate: &[String], reference: &[String]) -> f64 {
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        let (matched, total) = clipped_matches(candidate, reference, n);
        if total == 0 {
            continue;
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    (log_sum / orders as f64).exp()
}

/// Expression diversity `1 - BLEU(y_hat, x)`.
pub fn diversity(x: &[String], y_hat: &[String]) -> f64 {
    1.0 - bleu_no_brevity(y_hat, x)
}

/// Oracle likelihood that `(x, y_hat)` stands in `relation`.
pub fn consistency<B: NliBackend + ?Sized>(x: &[String], y_hat: &[String], relation: Relation, oracle: &B) -> Result<f64> {
    relation.control_index()?;
    Ok(oracle_verdict(x, y_hat, oracle)?.likelihood(relation))
}

/// Adversary confidence in `relation`, counted only when that is also its
/// top prediction. Zero before the adversary has been trained.
pub fn adversary_penalty<A: HypothesisOnly + ?Sized>(y_hat: &[String], relation: Relation, adversary: &A) -> f64 {
    let Ok(idx) = relation.control_index() else {
        return 0.0;
    };
    if !adversary.is_trained() {
        return 0.0;
    }
    let probs = adversary.predict(y_hat);
    let mut best = 0;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    if best == idx {
        probs[idx]
    } else {
        0.0
    }
}

/// The four per-sequence scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub r_s: f64,
    pub r_d: f64,
    pub r_l: f64,
    pub p_l: f64,
}

impl Scores {
    pub fn weighted(&self, config: &RewardConfig) -> f64 {
        config.alpha * (self.r_l - self.p_l) + config.beta * self.r_s + config.delta * self.r_d
    }
}

/// Zeroes similarity outside `[sim_low, sim_high]`, and every other score
/// whenever similarity ends up zero.
pub fn apply_thresholds(raw: Scores, config: &RewardConfig) -> Scores {
    let r_s = if raw.r_s >= config.sim_low && raw.r_s <= config.sim_high { raw.r_s } else { 0.0 };
    if r_s > 0.0 {
        Scores { r_s, ..raw }
    } else {
        Scores::default()
    }
}

/// Raw and thresholded scores of one sequence with its weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub raw: Scores,
    pub thresholded: Scores,
    pub f: f64,
}

/// Everything needed to score a generated sequence.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub oracle: &'a dyn NliBackend,
    pub similarity: &'a dyn SimilarityBackend,
    /// `None` disables the adversary penalty.
    pub adversary: Option<&'a dyn HypothesisOnly>,
    pub config: RewardConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(oracle: &'a dyn NliBackend, similarity: &'a dyn SimilarityBackend, config: RewardConfig) -> Self {
        Self { oracle, similarity, adversary: None, config }
    }

    pub fn with_adversary(mut self, adversary: &'a dyn HypothesisOnly) -> Self {
        self.adversary = Some(adversary);
        self
    }

    /// All four raw scores, then thresholded.
    pub fn report(&self, x: &[String], y_hat: &[String], relation: Relation) -> Result<ScoreReport> {
        relation.control_index()?;
        let raw = Scores {
            r_s: self.similarity.similarity(x, y_hat)?,
            r_d: diversity(x, y_hat),
            r_l: consistency(x, y_hat, relation, self.oracle)?,
            p_l: self.adversary.map_or(0.0, |a| adversary_penalty(y_hat, relation, a)),
        };
        let thresholded = apply_thresholds(raw, &self.config);
        Ok(ScoreReport { raw, thresholded, f: thresholded.weighted(&self.config) })
    }

    /// Thresholded scores, skipping the oracle and adversary when similarity
    /// already zeroes the sample.
    pub fn thresholded(&self, x: &[String], y_hat: &[String], relation: Relation) -> Result<Scores> {
        relation.control_index()?;
        let r_s = self.similarity.similarity(x, y_hat)?;
        let gate = apply_thresholds(Scores { r_s, r_d: 1.0, r_l: 1.0, p_l: 1.0 }, &self.config);
        if gate.r_s == 0.0 {
            return Ok(Scores::default());
        }
        Ok(Scores {
            r_s,
            r_d: diversity(x, y_hat),
            r_l: consistency(x, y_hat, relation, self.oracle)?,
            p_l: self.adversary.map_or(0.0, |a| adversary_penalty(y_hat, relation, a)),
        })
    }

    /// Like [`Evaluator::thresholded`], but a transient backend failure yields
    /// all-zero scores instead of an error. Outages still propagate.
    pub fn thresholded_or_zero(&self, x: &[String], y_hat: &[String], relation: Relation) -> Result<(Scores, bool)> {
        match self.thresholded(x, y_hat, relation) {
            Ok(s) => Ok((s, false)),
            Err(Error::Backend(msg)) => {
                warn!("scorer failed, rewarding 0: {msg}");
                Ok((Scores::default(), true))
            }
            Err(e) => Err(e),
        }
    }

    /// Mean weighted score over complete rollouts.
    pub fn combined_score(&self, x: &[String], relation: Relation, rollouts: &[Vec<String>]) -> Result<f64> {
        let scores = rollouts
            .iter()
            .map(|y| self.thresholded(x, y, relation))
            .collect::<Result<Vec<_>>>()?;
        combine(&scores, &self.config)
    }
}

/// Mean of the weighted thresholded scores of `n` rollouts.
pub fn combine(thresholded: &[Scores], config: &RewardConfig) -> Result<f64> {
    if thresholded.is_empty() {
        return Err(Error::EmptyInput("rollouts"));
    }
    Ok(thresholded.iter().map(|s| s.weighted(config)).sum::<f64>() / thresholded.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{NliDistribution, SyntheticWorldBackend, TableBackend};
    use crate::types::{tokenize, NliLabel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    struct FixedAdversary(Option<[f64; 3]>);

    impl HypothesisOnly for FixedAdversary {
        fn predict(&self, _: &[String]) -> [f64; 3] {
            self.0.unwrap_or([1.0 / 3.0; 3])
        }
        fn is_trained(&self) -> bool {
            self.0.is_some()
        }
    }

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn overlap_similarity_examples() {
        let s = TokenOverlapSimilarity::new();
        assert_eq!(s.similarity(&t("a b c"), &t("a b c")).unwrap(), 1.0);
        assert_eq!(s.similarity(&t("a b c"), &t("d e f")).unwrap(), 0.0);
        // P = 2/2, R = 2/4.
        assert_abs_diff_eq!(s.similarity(&t("a b c d"), &t("a b")).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.similarity(&t("<rel_eq> a"), &t("a")).unwrap(), 1.0);
    }

    #[test]
    fn diversity_extremes() {
        assert_eq!(diversity(&t("a b c d e"), &t("a b c d e")), 0.0);
        assert_eq!(diversity(&t("a b c d e"), &t("v w x y z")), 1.0);
    }

    /// Independent n-gram precision count: enumerate every candidate n-gram
    /// position and greedily consume matching reference positions.
    fn brute_bleu(cand: &[String], reference: &[String]) -> f64 {
        let mut logs = Vec::new();
        for n in 1..=4usize {
            if cand.len() < n {
                continue;
            }
            let mut used = vec![false; reference.len().saturating_sub(n - 1).max(0)];
            let mut hits = 0;
            let total = cand.len() - n + 1;
            for i in 0..total {
                for j in 0..used.len() {
                    if !used[j] && cand[i..i + n] == reference[j..j + n] {
                        used[j] = true;
                        hits += 1;
                        break;
                    }
                }
            }
            if hits == 0 && n == 1 {
                return 0.0;
            }
            let p = if hits == 0 { 1.0 / (total as f64 + 1.0) } else { hits as f64 / total as f64 };
            logs.push(p.ln());
        }
        if logs.is_empty() {
            return 0.0;
        }
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }

    #[test]
    fn diversity_of_half_copy() {
        // Candidate = first half of an 8-token input: every n-gram matches,
        // so all four precisions are 1.
        let x = t("a b c d e f g h");
        let half = &x[..4];
        assert_abs_diff_eq!(diversity(&x, half), 1.0 - brute_bleu(half, &x), epsilon = 1e-12);
        assert_abs_diff_eq!(diversity(&x, half), 0.0, epsilon = 1e-12);
        // With one substitution: p1 = 3/4, p2 = 1/3, p3 = 1/3 (smoothed), p4 = 1/2 (smoothed).
        let y = t("a b z d");
        let expected = 1.0 - (0.75f64 * (1.0 / 3.0) * (1.0 / 3.0) * 0.5).powf(0.25);
        assert_abs_diff_eq!(diversity(&x, &y), expected, epsilon = 1e-12);
    }

    #[test]
    fn diversity_matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let alphabet = ["a", "b", "c", "d"];
        for _ in 0..50 {
            let mut gen = |lo: usize, hi: usize| -> Vec<String> {
                let n = rng.random_range(lo..=hi);
                (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect()
            };
            let x = gen(1, 8);
            let y = gen(1, 8);
            assert_abs_diff_eq!(diversity(&x, &y), 1.0 - brute_bleu(&y, &x), epsilon = 1e-12);
        }
    }

    #[test]
    fn consistency_from_oracle_likelihoods() {
        let syn = SyntheticWorldBackend::new();
        assert_eq!(consistency(&t("a b"), &t("b a"), Relation::Eq, &syn).unwrap(), 1.0);
        assert_eq!(consistency(&t("a b"), &t("b a"), Relation::Fwd, &syn).unwrap(), 0.0);
        assert!(consistency(&t("a b"), &t("b a"), Relation::Contra, &syn).is_err());

        let (x, y) = (t("p q"), t("r s"));
        let mut table = TableBackend::new();
        table.insert_pair(
            &x,
            &y,
            NliDistribution::new(0.6, 0.4, 0.0).unwrap(),
            NliDistribution::new(0.5, 0.5, 0.0).unwrap(),
        );
        assert_abs_diff_eq!(consistency(&x, &y, Relation::Fwd, &table).unwrap(), 0.30, epsilon = 1e-12);
        let _ = NliLabel::Entailment;
    }

    #[test]
    fn penalty_gate() {
        let adv = FixedAdversary(Some([0.7, 0.2, 0.1]));
        assert_eq!(adversary_penalty(&t("x"), Relation::Eq, &adv), 0.7);
        assert_eq!(adversary_penalty(&t("x"), Relation::Fwd, &adv), 0.0);
        assert_eq!(adversary_penalty(&t("x"), Relation::Eq, &FixedAdversary(None)), 0.0);
    }

    #[test]
    fn threshold_boundaries() {
        let cfg = RewardConfig::default();
        let s = |r_s| apply_thresholds(Scores { r_s, r_d: 0.5, r_l: 0.8, p_l: 0.1 }, &cfg);
        assert_eq!(s(0.99), Scores::default());
        assert_eq!(s(0.20), Scores::default());
        assert_eq!(s(0.29), Scores::default());
        assert_eq!(s(0.30).r_s, 0.30);
        assert_eq!(s(0.98).r_s, 0.98);
        assert_eq!(s(0.50), Scores { r_s: 0.5, r_d: 0.5, r_l: 0.8, p_l: 0.1 });
    }

    #[test]
    fn combined_score_examples() {
        let cfg = RewardConfig::default();
        let good = Scores { r_s: 0.5, r_d: 0.5, r_l: 1.0, p_l: 0.0 };
        assert_abs_diff_eq!(combine(&[good], &cfg).unwrap(), 0.70, epsilon = 1e-12);
        assert_abs_diff_eq!(combine(&[good, Scores::default()], &cfg).unwrap(), 0.35, epsilon = 1e-12);
        let cancelled = Scores { r_s: 0.5, r_d: 0.5, r_l: 0.6, p_l: 0.6 };
        assert_abs_diff_eq!(combine(&[cancelled], &cfg).unwrap(), 0.4 * 0.5 + 0.2 * 0.5, epsilon = 1e-12);
        assert!(combine(&[], &cfg).is_err());
    }

    #[test]
    fn copying_is_never_rewarded() {
        let syn = SyntheticWorldBackend::new();
        let sim = TokenOverlapSimilarity::new();
        let ev = Evaluator::new(&syn, &sim, RewardConfig::default());
        let x = t("a man rides a horse");
        let rep = ev.report(&x, &x, Relation::Eq).unwrap();
        assert_eq!(rep.raw.r_d, 0.0);
        assert_eq!(rep.f, 0.0);
        assert_eq!(ev.combined_score(&x, Relation::Eq, &[x.clone(), x.clone()]).unwrap(), 0.0);
    }

    #[test]
    fn evaluator_paths_agree() {
        let syn = SyntheticWorldBackend::new();
        let sim = TokenOverlapSimilarity::new();
        let adv = FixedAdversary(Some([0.1, 0.8, 0.1]));
        let ev = Evaluator::new(&syn, &sim, RewardConfig::default()).with_adversary(&adv);
        for (x, y, r) in [("a b c d", "a b c", Relation::Fwd), ("a b", "x y", Relation::Eq), ("a b c", "a b c d e", Relation::Rev)] {
            let rep = ev.report(&t(x), &t(y), r).unwrap();
            assert_eq!(rep.thresholded, ev.thresholded(&t(x), &t(y), r).unwrap());
        }
        let rep = ev.report(&t("a b c d"), &t("a b c"), Relation::Fwd).unwrap();
        assert_eq!(rep.thresholded.p_l, 0.8);
    }

    proptest! {
        #[test]
        fn combined_monotone_in_consistency_and_penalty(
            r_s in 0.0f64..1.0, r_d in 0.0f64..1.0, r_l in 0.0f64..1.0, p_l in 0.0f64..1.0, bump in 0.0f64..0.5,
        ) {
            let cfg = RewardConfig::default();
            let base = apply_thresholds(Scores { r_s, r_d, r_l, p_l }, &cfg);
            let more_l = apply_thresholds(Scores { r_s, r_d, r_l: (r_l + bump).min(1.0), p_l }, &cfg);
            let more_p = apply_thresholds(Scores { r_s, r_d, r_l, p_l: (p_l + bump).min(1.0) }, &cfg);
            prop_assert!(more_l.weighted(&cfg) >= base.weighted(&cfg));
            prop_assert!(more_p.weighted(&cfg) <= base.weighted(&cfg));
            let f = base.weighted(&cfg);
            prop_assert!(f >= -cfg.alpha - 1e-12 && f <= cfg.alpha + cfg.beta + cfg.delta + 1e-12);
            prop_assert!(base.r_s == 0.0 || base.r_s >= cfg.sim_low);
        }
    }
}
