//! Relation-conditioned sequence-to-sequence generator.

mod decode;
mod model;
mod vocab;

use std::fs;
use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::{ops, VarMap};
use serde::{Deserialize, Serialize};

pub use decode::{beam_search, nucleus_filter, sample_continuations, DecodeConfig};
pub use model::{all_finite, restore, snapshot, Memory, ModelConfig, Seq2Seq};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};
use crate::types::{DecodeStrategy, GenerationRequest, Relation};

/// Whether sources carry a control token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Awareness {
    Aware,
    Unaware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub model: ModelConfig,
    /// Source tokens kept after the control token.
    pub max_input_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), max_input_len: 40, seed: 0 }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: GeneratorConfig,
    vocab: Vocab,
}

/// A seq2seq model together with its vocabulary.
pub struct Generator {
    config: GeneratorConfig,
    vocab: Vocab,
    varmap: VarMap,
    model: Seq2Seq,
}

impl Generator {
    pub fn new(vocab: Vocab, config: GeneratorConfig) -> Result<Self> {
        let varmap = VarMap::new();
        let model = Seq2Seq::new(config.model, vocab.len(), &varmap, config.seed)?;
        Ok(Self { config, vocab, varmap, model })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    /// `[control] x <eos>`, with `x` truncated to the input limit.
    pub fn source_ids(&self, x: &[String], relation: Option<Relation>) -> Result<Vec<u32>> {
        if x.is_empty() {
            return Err(Error::EmptyInput("input sequence"));
        }
        let mut ids = Vec::with_capacity(x.len() + 2);
        if let Some(r) = relation {
            ids.push(self.vocab.control_id(r)?);
        }
        ids.extend(self.vocab.encode(&x[..x.len().min(self.config.max_input_len)]));
        ids.push(EOS);
        Ok(ids)
    }

    /// Encodes a batch of sources without dropout.
    pub fn encode(&self, sources: &[Vec<u32>]) -> Result<Memory> {
        let (src, mask) = self.model.batch(sources, PAD)?;
        self.model.encode(&src, &mask, false)
    }

    /// Log-probabilities of the next token after each prefix. Row `i` reads
    /// memory row `rows[i]`; prefixes exclude the leading BOS.
    pub fn next_log_probs(&self, memory: &Memory, rows: &[u32], prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        if prefixes.is_empty() {
            return Ok(Vec::new());
        }
        let inputs: Vec<Vec<u32>> = prefixes.iter().map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect()).collect();
        let (tgt, _) = self.model.batch(&inputs, PAD)?;
        let logits = self.model.decode(&memory.select(rows)?, &tgt, false)?;
        let log_probs = ops::log_softmax(&logits, D::Minus1)?;
        let mut out = Vec::with_capacity(prefixes.len());
        for (i, input) in inputs.iter().enumerate() {
            let row = log_probs.get(i)?.get(input.len() - 1)?;
            out.push(row.to_vec1::<f32>()?);
        }
        Ok(out)
    }

    /// Per-position log-probabilities `[b, t, vocab]` of `targets` (each
    /// ending with EOS) under teacher forcing, plus a `[b, t]` 0/1 mask of
    /// real positions. Dropout is active when `train` is set.
    pub fn teacher_forced(&self, sources: &[Vec<u32>], targets: &[Vec<u32>], train: bool) -> Result<(Tensor, Tensor)> {
        if sources.len() != targets.len() || sources.is_empty() {
            return Err(Error::InvalidArgument("teacher forcing needs equal, non-empty batches".into()));
        }
        let (src, src_mask) = self.model.batch(sources, PAD)?;
        let memory = self.model.encode(&src, &src_mask, train)?;
        let inputs: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| std::iter::once(BOS).chain(t[..t.len().saturating_sub(1)].iter().copied()).collect())
            .collect();
        let (tgt, _) = self.model.batch(&inputs, PAD)?;
        let logits = self.model.decode(&memory, &tgt, train)?;
        let len = tgt.dim(1)?;
        let mut mask = vec![0f32; targets.len() * len];
        for (i, t) in targets.iter().enumerate() {
            mask[i * len..i * len + t.len()].iter_mut().for_each(|m| *m = 1.0);
        }
        let mask = Tensor::from_vec(mask, (targets.len(), len), self.model.device())?;
        Ok((ops::log_softmax(&logits, D::Minus1)?, mask))
    }

    /// Right-padded target id matrix `[b, t]` matching [`Generator::teacher_forced`].
    pub fn target_matrix(&self, targets: &[Vec<u32>]) -> Result<Tensor> {
        let len = targets.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut ids = vec![PAD; targets.len() * len];
        for (i, t) in targets.iter().enumerate() {
            ids[i * len..i * len + t.len()].copy_from_slice(t);
        }
        Ok(Tensor::from_vec(ids, (targets.len(), len), self.model.device())?)
    }

    /// Decodes one request into output tokens.
    pub fn generate(
        &self,
        request: &GenerationRequest,
        awareness: Awareness,
        decode: &DecodeConfig,
        rng: &mut impl rand::Rng,
    ) -> Result<Vec<String>> {
        let relation = match awareness {
            Awareness::Aware => Some(request.relation),
            Awareness::Unaware => None,
        };
        let src = self.source_ids(&request.x, relation)?;
        let cfg = DecodeConfig { min_len: request.min_len, max_len: request.max_len, ..*decode };
        let ids = match request.decode {
            DecodeStrategy::Beam => beam_search(self, &src, &cfg)?,
            DecodeStrategy::Nucleus => sample_continuations(self, &src, &[Vec::new()], &cfg, rng)?.remove(0),
        };
        Ok(self.vocab.decode(&ids))
    }

    /// Writes `model.safetensors` and `generator.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.varmap.save(dir.join("model.safetensors"))?;
        let header = Header { config: self.config, vocab: self.vocab.clone() };
        fs::write(dir.join("generator.json"), serde_json::to_vec_pretty(&header)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join("generator.json");
        let weights = dir.join("model.safetensors");
        for p in [&header_path, &weights] {
            if !p.exists() {
                return Err(Error::MissingInput(p.clone()));
            }
        }
        let header: Header = serde_json::from_slice(&fs::read(&header_path)?)?;
        let mut generator = Generator::new(header.vocab, header.config)?;
        generator.varmap.load(&weights)?;
        Ok(generator)
    }
}
