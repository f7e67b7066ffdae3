//! Corpus-level evaluation: BLEU, iBLEU, diversity, relation consistency and
//! sample re-ranking.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{oracle_verdict, NliBackend};
use crate::scorers::{clipped_matches, Evaluator};
use crate::types::{tokenize, Relation};

const MAX_ORDER: usize = 4;

static TOKENIZER_RULES: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        (Regex::new(r"([\{-~\[-\x60 -&\(-\+:-@/])").unwrap(), " ${1} "),
        (Regex::new(r"([^0-9])([\.,])").unwrap(), "${1} ${2} "),
        (Regex::new(r"([\.,])([^0-9])").unwrap(), " ${1} ${2}"),
        (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
    ]
});

/// The mteval-v13a tokenizer used by standard BLEU reporting.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.trim_end().replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in TOKENIZER_RULES.iter() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(String::from).collect()
}

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub sys_len: usize,
    pub ref_len: usize,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
}

impl BleuStats {
    fn add(&mut self, other: &BleuStats) {
        self.sys_len += other.sys_len;
        self.ref_len += other.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += other.correct[n];
            self.total[n] += other.total[n];
        }
    }

    /// Score in [0, 100] with exponential brevity penalty and the
    /// halving smoother for orders without matches.
    pub fn score(&self) -> f64 {
        if self.correct.iter().all(|&c| c == 0) {
            return 0.0;
        }
        let bp = if self.sys_len < self.ref_len {
            if self.sys_len > 0 {
                (1.0 - self.ref_len as f64 / self.sys_len as f64).exp()
            } else {
                0.0
            }
        } else {
            1.0
        };
        let mut precisions = [0.0; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.total[n] as f64)
            } else {
                100.0 * self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { p.ln() };
        bp * (precisions.iter().map(|&p| log(p)).sum::<f64>() / MAX_ORDER as f64).exp()
    }
}

fn ngrams(tokens: &[String]) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    for n in 1..=MAX_ORDER {
        if tokens.len() >= n {
            for w in tokens.windows(n) {
                *out.entry(w).or_default() += 1;
            }
        }
    }
    out
}

/// Statistics of one hypothesis against its references: n-gram counts are
/// clipped by the maximum count in any reference, and the reference length
/// is the closest one (shorter on ties).
pub fn segment_stats(hypothesis: &str, references: &[&str]) -> BleuStats {
    let hyp = tokenize_13a(hypothesis);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize_13a(r)).collect();
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in &refs {
        for (g, c) in ngrams(r) {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let mut ref_len = usize::MAX;
    let mut best_diff = usize::MAX;
    for r in &refs {
        let diff = r.len().abs_diff(hyp.len());
        if diff < best_diff || (diff == best_diff && r.len() < ref_len) {
            best_diff = diff;
            ref_len = r.len();
        }
    }
    let mut stats = BleuStats { sys_len: hyp.len(), ref_len: if refs.is_empty() { 0 } else { ref_len }, ..Default::default() };
    for (g, c) in ngrams(&hyp) {
        let n = g.len() - 1;
        stats.total[n] += c;
        stats.correct[n] += c.min(*max_ref.get(g).unwrap_or(&0));
    }
    stats
}

/// Corpus BLEU × 100. `references[i]` lists the references of hypothesis `i`.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[Vec<R>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} reference lists",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::EmptyInput("references"));
        }
        let refs: Vec<&str> = refs.iter().map(AsRef::as_ref).collect();
        total.add(&segment_stats(h.as_ref(), &refs));
    }
    Ok(total.score())
}

/// Single-segment BLEU × 100.
pub fn bleu<R: AsRef<str>>(candidate: &str, references: &[R]) -> Result<f64> {
    corpus_bleu(&[candidate], &[references.iter().map(AsRef::as_ref).collect::<Vec<_>>()])
}

pub const IBLEU_REF_WEIGHT: f64 = 0.8;
pub const IBLEU_SRC_WEIGHT: f64 = 0.2;

/// `0.8 · BLEU(candidate, references) − 0.2 · BLEU(candidate, source)`.
pub fn ibleu_from(bleu_refs: f64, bleu_src: f64) -> f64 {
    IBLEU_REF_WEIGHT * bleu_refs - IBLEU_SRC_WEIGHT * bleu_src
}

/// Corpus iBLEU.
pub fn corpus_ibleu<H: AsRef<str>, R: AsRef<str>, S: AsRef<str>>(
    hypotheses: &[H],
    references: &[Vec<R>],
    sources: &[S],
) -> Result<f64> {
    let src: Vec<Vec<&str>> = sources.iter().map(|s| vec![s.as_ref()]).collect();
    Ok(ibleu_from(corpus_bleu(hypotheses, references)?, corpus_bleu(hypotheses, &src)?))
}

/// BLEU without brevity penalty, pooled over a corpus, in [0, 1]. Same
/// smoothing as the per-sequence diversity reward.
pub fn corpus_bleu_no_brevity(candidates: &[Vec<String>], sources: &[Vec<String>]) -> Result<f64> {
    if candidates.len() != sources.len() {
        return Err(Error::InvalidArgument("candidate and source counts differ".into()));
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=MAX_ORDER {
        let (mut matched, mut total) = (0, 0);
        for (c, s) in candidates.iter().zip(sources) {
            let (m, t) = clipped_matches(c, s, n);
            matched += m;
            total += t;
        }
        if total == 0 {
            continue;
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
        orders += 1;
    }
    Ok(if orders == 0 { 0.0 } else { (log_sum / orders as f64).exp() })
}

/// Corpus diversity `100 · (1 − BLEU)` of candidates against their inputs.
pub fn diversity_metric(candidates: &[Vec<String>], sources: &[Vec<String>]) -> Result<f64> {
    Ok(100.0 * (1.0 - corpus_bleu_no_brevity(candidates, sources)?))
}

/// One evaluated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub x: String,
    pub y_hat: String,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default)]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub r_consistency: f64,
    pub scored: usize,
    /// Rows without a control relation.
    pub excluded: usize,
}

/// Percentage of rows whose oracle relation equals the requested relation.
pub fn r_consistency<B: NliBackend + ?Sized>(rows: &[EvalRow], oracle: &B) -> Result<ConsistencyReport> {
    let mut hits = 0;
    let mut scored = 0;
    let mut excluded = 0;
    for row in rows {
        let Some(rel) = row.relation.filter(|r| r.is_control()) else {
            excluded += 1;
            continue;
        };
        let (x, y) = (tokenize(&row.x), tokenize(&row.y_hat));
        if x.is_empty() || y.is_empty() {
            scored += 1;
            continue;
        }
        scored += 1;
        if oracle_verdict(&x, &y, oracle)?.relation == rel {
            hits += 1;
        }
    }
    let r_consistency = if scored == 0 { 0.0 } else { 100.0 * hits as f64 / scored as f64 };
    Ok(ConsistencyReport { r_consistency, scored, excluded })
}

/// Output of the `evaluate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub diversity: f64,
    pub ibleu: f64,
    pub r_consistency: Option<f64>,
    pub n: usize,
}

/// All corpus metrics over `rows`. Rows without references are rejected;
/// R-Consistency is computed only when an oracle is supplied.
pub fn evaluate_rows(rows: &[EvalRow], oracle: Option<&dyn NliBackend>) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("evaluation rows"));
    }
    let hyps: Vec<&str> = rows.iter().map(|r| r.y_hat.as_str()).collect();
    let refs: Vec<Vec<&str>> = rows.iter().map(|r| r.references.iter().map(String::as_str).collect()).collect();
    let srcs: Vec<&str> = rows.iter().map(|r| r.x.as_str()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?;
    let ibleu = corpus_ibleu(&hyps, &refs, &srcs)?;
    let cands: Vec<Vec<String>> = rows.iter().map(|r| tokenize(&r.y_hat)).collect();
    let sources: Vec<Vec<String>> = rows.iter().map(|r| tokenize(&r.x)).collect();
    let diversity = diversity_metric(&cands, &sources)?;
    let r_consistency = oracle.map(|o| r_consistency(rows, o)).transpose()?.map(|r| r.r_consistency);
    Ok(MetricsReport { bleu, diversity, ibleu, r_consistency, n: rows.len() })
}

/// Harmonic mean used to pick the best checkpoint; zero if either is
/// non-positive.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub best: Vec<String>,
    pub score: f64,
    /// Index of the winner in the sample pool.
    pub index: usize,
    /// Per-sample scores in draw order; `None` marks a failed draw.
    pub scores: Vec<Option<f64>>,
}

/// Draws `k` samples with `sample(i)` and keeps the highest single-sequence
/// combined score, earliest sample on ties. Failed draws shrink the pool.
pub fn rerank<F>(x: &[String], relation: Relation, k: usize, evaluator: &Evaluator<'_>, mut sample: F) -> Result<RerankOutcome>
where
    F: FnMut(usize) -> Result<Vec<String>>,
{
    if k == 0 {
        return Err(Error::InvalidArgument("rerank needs k >= 1".into()));
    }
    relation.control_index()?;
    let mut best: Option<(usize, Vec<String>, f64)> = None;
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let y = match sample(i) {
            Ok(y) if !y.is_empty() => y,
            Ok(_) => {
                scores.push(None);
                continue;
            }
            Err(e @ Error::BackendUnavailable(_)) => return Err(e),
            Err(e) => {
                warn!("sample {i} failed: {e}");
                scores.push(None);
                continue;
            }
        };
        let (s, _) = evaluator.thresholded_or_zero(x, &y, relation)?;
        let f = s.weighted(&evaluator.config);
        scores.push(Some(f));
        if best.as_ref().is_none_or(|(_, _, b)| f > *b) {
            best = Some((i, y, f));
        }
    }
    let (index, best, score) = best.ok_or(Error::EmptyInput("rerank pool"))?;
    Ok(RerankOutcome { best, score, index, scores })
}
