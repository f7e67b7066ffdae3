use proptest::prelude::*;
use relpara::metrics::{corpus_bleu, corpus_ibleu, diversity_metric};
use relpara::tokenize;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    hypotheses: Vec<String>,
    references: Vec<Vec<String>>,
    bleu: f64,
}

#[test]
fn agrees_with_sacrebleu_on_recorded_cases() {
    let f: Fixture = serde_json::from_str(include_str!("fixtures/sacrebleu_cases.json")).unwrap();
    assert_eq!(f.cases.len(), 100);
    for (i, c) in f.cases.iter().enumerate() {
        let got = corpus_bleu(&c.hypotheses, &c.references).unwrap();
        assert!((got - c.bleu).abs() <= 1e-6, "case {i}: {got} vs {}", c.bleu);
    }
}

fn count(seq: &[&str], gram: &[&str]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

/// Straight transcription of corpus BLEU with clipped counts, closest
/// reference length and halving smoothing, for whitespace-only text.
fn brute_bleu(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rs: Vec<Vec<&str>> = rs.iter().map(|s| s.split_whitespace().collect()).collect();
        c += h.len();
        let mut best = rs[0].len();
        for x in &rs {
            let (d, bd) = (x.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[&str]> = Vec::new();
            for i in 0..=h.len() - n {
                let g = &h[i..i + n];
                total[n - 1] += 1;
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_hyp = count(&h, g);
                let in_ref = rs.iter().map(|x| count(x, g)).max().unwrap();
                correct[n - 1] += in_hyp.min(in_ref);
            }
        }
    }
    if correct.iter().sum::<usize>() == 0 {
        return 0.0;
    }
    let mut logsum = 0.0;
    let mut halvings = 0;
    for n in 0..4 {
        let p = if total[n] == 0 {
            0.0
        } else if correct[n] == 0 {
            halvings += 1;
            100.0 / (2f64.powi(halvings) * total[n] as f64)
        } else {
            100.0 * correct[n] as f64 / total[n] as f64
        };
        logsum += if p == 0.0 { -9_999_999_999.0 } else { p.ln() };
    }
    let bp = if c >= r { 1.0 } else if c == 0 { 0.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logsum / 4.0).exp()
}

const WORDS: &[&str] = &["a", "man", "dog", "runs", "the", "park", "in", "big", "red"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..9).prop_map(|v| v.join(" "))
}

fn corpus() -> impl Strategy<Value = (Vec<String>, Vec<Vec<String>>)> {
    prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..4)), 1..6).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_brute_force_on_random_corpora((hyps, refs) in corpus()) {
        let got = corpus_bleu(&hyps, &refs).unwrap();
        let want = brute_bleu(&hyps, &refs);
        prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
    }

    #[test]
    fn copying_the_source_has_zero_diversity(srcs in prop::collection::vec(sentence(), 1..6)) {
        let toks: Vec<Vec<String>> = srcs.iter().map(|s| tokenize(s)).collect();
        prop_assert_eq!(diversity_metric(&toks, &toks).unwrap(), 0.0);
    }

    #[test]
    fn ibleu_weights_references_and_source((hyps, refs) in corpus(), src in sentence()) {
        let srcs = vec![src; hyps.len()];
        let ib = corpus_ibleu(&hyps, &refs, &srcs).unwrap();
        let b = corpus_bleu(&hyps, &refs).unwrap();
        let s = corpus_bleu(&hyps, &srcs.iter().map(|s| vec![s.clone()]).collect::<Vec<_>>()).unwrap();
        prop_assert!((ib - (0.8 * b - 0.2 * s)).abs() <= 1e-9);
    }
}
