use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generator::{beam_search, sample_continuations, DecodeConfig, Generator};

/// A beam-decoded reference and, for each step, the sequences used to score
/// it: `n` sampled completions of every reference prefix, then the
/// reference alone for the final (EOS) step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSet {
    /// Output ids without EOS.
    pub reference: Vec<u32>,
    pub per_step: Vec<Vec<Vec<u32>>>,
}

impl RolloutSet {
    /// Number of steps, the reference length plus the EOS step.
    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }
}

/// Decodes a reference by beam search and samples `n` completions of each
/// of its prefixes in one batch. If sampling fails, every step falls back
/// to the reference.
pub fn rollout(generator: &Generator, source: &[u32], n: usize, cfg: &DecodeConfig, rng: &mut impl Rng) -> Result<RolloutSet> {
    let reference = beam_search(generator, source, cfg)?;
    let prefixes: Vec<Vec<u32>> =
        (1..=reference.len()).flat_map(|t| std::iter::repeat_n(reference[..t].to_vec(), n)).collect();
    let mut per_step: Vec<Vec<Vec<u32>>> = match sample_continuations(generator, source, &prefixes, cfg, rng) {
        Ok(samples) if n > 0 => samples.chunks(n).map(<[Vec<u32>]>::to_vec).collect(),
        Ok(_) => vec![Vec::new(); reference.len()],
        Err(e) => {
            warn!("rollout sampling failed, scoring the reference instead: {e}");
            vec![vec![reference.clone()]; reference.len()]
        }
    };
    per_step.push(vec![reference.clone()]);
    Ok(RolloutSet { reference, per_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{GeneratorConfig, ModelConfig, Vocab};
    use crate::types::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn structure_of_rollouts() {
        let vocab = Vocab::build([tokenize("a b c d e f")]);
        let cfg = GeneratorConfig {
            model: ModelConfig { d_model: 16, heads: 2, layers: 1, ffn: 32, dropout: 0.0, max_positions: 32 },
            ..Default::default()
        };
        let g = Generator::new(vocab, cfg).unwrap();
        let src = g.source_ids(&tokenize("a b c"), None).unwrap();
        let dec = DecodeConfig { min_len: 3, max_len: 6, ..Default::default() };
        let set = rollout(&g, &src, 2, &dec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let t_len = set.reference.len() + 1;
        assert_eq!(set.len(), t_len);
        for (t, samples) in set.per_step[..t_len - 1].iter().enumerate() {
            assert_eq!(samples.len(), 2);
            assert!(samples.iter().all(|s| s.starts_with(&set.reference[..=t]) && s.len() >= 3));
        }
        assert_eq!(set.per_step[t_len - 1], vec![set.reference.clone()]);
    }
}
