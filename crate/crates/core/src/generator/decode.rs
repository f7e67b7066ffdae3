use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Generator, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub top_p: f64,
    pub temperature: f64,
    /// Output tokens required before EOS may be chosen.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_width: 5, top_p: 0.8, temperature: 1.0, min_len: 5, max_len: 40 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("need 0 <= min_len <= max_len, max_len >= 1 (got {} / {})", self.min_len, self.max_len)));
        }
        Ok(())
    }
}

fn allowed(banned: &[u32], token: u32, len: usize, min_len: usize) -> bool {
    !banned.contains(&token) && !(token == EOS && len < min_len)
}

/// The smallest set of most probable tokens whose mass reaches `top_p`,
/// renormalised, after temperature scaling. Disallowed tokens get no mass.
pub fn nucleus_filter(log_probs: &[f32], allowed: impl Fn(u32) -> bool, temperature: f64, top_p: f64) -> Vec<(u32, f64)> {
    let mut scaled: Vec<(u32, f64)> = log_probs
        .iter()
        .enumerate()
        .filter(|(i, l)| allowed(*i as u32) && l.is_finite())
        .map(|(i, l)| (i as u32, *l as f64 / temperature))
        .collect();
    if scaled.is_empty() {
        return scaled;
    }
    let max = scaled.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scaled.iter().map(|(_, l)| (l - max).exp()).sum();
    for (_, l) in scaled.iter_mut() {
        *l = (*l - max).exp() / z;
    }
    scaled.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = 0;
    for (_, p) in &scaled {
        cum += p;
        keep += 1;
        if cum >= top_p - 1e-12 {
            break;
        }
    }
    scaled.truncate(keep);
    let mass: f64 = scaled.iter().map(|(_, p)| p).sum();
    scaled.iter_mut().for_each(|(_, p)| *p /= mass);
    scaled
}

fn draw(dist: &[(u32, f64)], rng: &mut impl Rng) -> u32 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (t, p) in dist {
        cum += p;
        if u < cum {
            return *t;
        }
    }
    dist.last().map(|(t, _)| *t).unwrap_or(EOS)
}

/// Beam search; returns output ids without EOS. Finished hypotheses are
/// ranked by log-probability divided by length including EOS.
pub fn beam_search(generator: &Generator, source: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    let memory = generator.encode(&[source.to_vec()])?;
    let banned = generator.vocab().banned_outputs();
    let width = cfg.beam_width;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for len in 0..cfg.max_len {
        let prefixes: Vec<Vec<u32>> = live.iter().map(|(p, _)| p.clone()).collect();
        let log_probs = generator.next_log_probs(&memory, &vec![0; live.len()], &prefixes)?;
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (i, lp) in log_probs.iter().enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                if allowed(&banned, tok as u32, len, cfg.min_len) && l.is_finite() {
                    candidates.push((i, tok as u32, live[i].1 + l as f64));
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::Decode("no admissible token".into()));
        }
        candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut next = Vec::with_capacity(width);
        for (rank, (i, tok, score)) in candidates.into_iter().enumerate() {
            if tok == EOS {
                if rank < width {
                    finished.push((live[i].0.clone(), score));
                }
            } else if next.len() < width {
                let mut seq = live[i].0.clone();
                seq.push(tok);
                next.push((seq, score));
            }
            if next.len() >= width && rank + 1 >= width {
                break;
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    finished.extend(live.into_iter().filter(|(s, _)| s.len() >= cfg.max_len));
    let norm = |(s, score): &(Vec<u32>, f64)| score / (s.len() + 1) as f64;
    let mut best: Option<&(Vec<u32>, f64)> = None;
    for f in &finished {
        if best.is_none_or(|b| norm(f) > norm(b)) {
            best = Some(f);
        }
    }
    best.map(|(s, _)| s.clone()).ok_or_else(|| Error::Decode("beam search produced no hypothesis".into()))
}

/// Completes every prefix by nucleus sampling, all rows decoded together.
/// Returns full output ids (prefix included) without EOS.
pub fn sample_continuations(
    generator: &Generator,
    source: &[u32],
    prefixes: &[Vec<u32>],
    cfg: &DecodeConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    let memory = generator.encode(&[source.to_vec()])?;
    let banned = generator.vocab().banned_outputs();
    let mut seqs: Vec<Vec<u32>> = prefixes.to_vec();
    let mut done: Vec<bool> = seqs.iter().map(|s| s.len() >= cfg.max_len).collect();
    loop {
        let active: Vec<usize> = (0..seqs.len()).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let batch: Vec<Vec<u32>> = active.iter().map(|&i| seqs[i].clone()).collect();
        let log_probs = generator.next_log_probs(&memory, &vec![0; active.len()], &batch)?;
        for (&i, lp) in active.iter().zip(&log_probs) {
            let len = seqs[i].len();
            let dist = nucleus_filter(lp, |t| allowed(&banned, t, len, cfg.min_len), cfg.temperature, cfg.top_p);
            if dist.is_empty() {
                return Err(Error::Decode("no admissible token".into()));
            }
            let tok = draw(&dist, rng);
            if tok == EOS {
                done[i] = true;
            } else {
                seqs[i].push(tok);
                done[i] = seqs[i].len() >= cfg.max_len;
            }
        }
    }
    Ok(seqs)
}
