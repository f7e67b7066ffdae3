//! Pre-norm transformer encoder-decoder built from differentiable candle ops.

use std::sync::Mutex;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{ops, Embedding, Init, Linear, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NEG_INF: f32 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub dropout: f32,
    /// Longest sequence the positional table covers.
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 128, heads: 4, layers: 2, ffn: 256, dropout: 0.1, max_positions: 64 }
    }
}

impl ModelConfig {
    /// 6 layers, 8 heads, width 512, feed-forward 2048.
    pub fn full_scale() -> Self {
        Self { d_model: 512, heads: 8, layers: 6, ffn: 2048, dropout: 0.1, max_positions: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.ffn == 0 || self.max_positions == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

fn linear(vb: &VarBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
    let vb = vb.pp(name);
    let w = vb.get_with_hints((d_out, d_in), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(d_out, "bias", Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    fn new(vb: &VarBuilder, name: &str, d: usize) -> Result<Self> {
        let vb = vb.pp(name);
        Ok(Self {
            gamma: vb.get_with_hints(d, "gamma", Init::Const(1.0))?,
            beta: vb.get_with_hints(d, "beta", Init::Const(0.0))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    fn new(vb: &VarBuilder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let vb = vb.pp(name);
        let d = cfg.d_model;
        Ok(Self {
            q: linear(&vb, "q", d, d)?,
            k: linear(&vb, "k", d, d)?,
            v: linear(&vb, "v", d, d)?,
            o: linear(&vb, "o", d, d)?,
            heads: cfg.heads,
            head_dim: d / cfg.heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, self.head_dim))?.transpose(1, 2)?.contiguous()?)
    }

    /// `mask` is additive and broadcasts to `[batch, heads, queries, keys]`.
    fn forward(&self, x: &Tensor, memory: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(memory)?)?;
        let v = self.split(&self.v.forward(memory)?)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (self.head_dim as f64).sqrt())?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let attn = ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        Ok(self.o.forward(&out)?)
    }
}

struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(vb: &VarBuilder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let vb = vb.pp(name);
        Ok(Self { up: linear(&vb, "up", cfg.d_model, cfg.ffn)?, down: linear(&vb, "down", cfg.ffn, cfg.d_model)? })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.down.forward(&self.up.forward(x)?.relu()?)?)
    }
}

struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

/// Encoder output with the additive key mask for its padding.
pub struct Memory {
    pub states: Tensor,
    pub mask: Tensor,
}

impl Memory {
    /// Rows of the memory selected by `rows` (one per decoder row).
    pub fn select(&self, rows: &[u32]) -> Result<Memory> {
        let idx = Tensor::new(rows, self.states.device())?;
        Ok(Memory { states: self.states.index_select(&idx, 0)?, mask: self.mask.index_select(&idx, 0)? })
    }
}

pub struct Seq2Seq {
    cfg: ModelConfig,
    vocab_size: usize,
    src_embed: Embedding,
    tgt_embed: Embedding,
    positions: Tensor,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    out: Linear,
    rng: Mutex<ChaCha8Rng>,
    device: Device,
}

fn sinusoids(n: usize, d: usize, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; n * d];
    for pos in 0..n {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            v[pos * d + 2 * i] = angle.sin() as f32;
            v[pos * d + 2 * i + 1] = angle.cos() as f32;
        }
    }
    Ok(Tensor::from_vec(v, (n, d), device)?)
}

impl Seq2Seq {
    /// Builds the network and initialises every weight from `seed`.
    pub fn new(cfg: ModelConfig, vocab_size: usize, varmap: &VarMap, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let device = Device::Cpu;
        let vb = VarBuilder::from_varmap(varmap, DType::F32, &device);
        let d = cfg.d_model;
        let embed = |name: &str| -> Result<Embedding> {
            let w = vb.pp(name).get_with_hints((vocab_size, d), "weight", Init::Const(0.0))?;
            Ok(Embedding::new(w, d))
        };
        let enc = vb.pp("encoder");
        let dec = vb.pp("decoder");
        let encoder = (0..cfg.layers)
            .map(|i| {
                let vb = enc.pp(i.to_string());
                Ok(EncoderLayer {
                    ln1: LayerNorm::new(&vb, "ln1", d)?,
                    attn: Attention::new(&vb, "attn", &cfg)?,
                    ln2: LayerNorm::new(&vb, "ln2", d)?,
                    ff: FeedForward::new(&vb, "ff", &cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.layers)
            .map(|i| {
                let vb = dec.pp(i.to_string());
                Ok(DecoderLayer {
                    ln1: LayerNorm::new(&vb, "ln1", d)?,
                    self_attn: Attention::new(&vb, "self_attn", &cfg)?,
                    ln2: LayerNorm::new(&vb, "ln2", d)?,
                    cross_attn: Attention::new(&vb, "cross_attn", &cfg)?,
                    ln3: LayerNorm::new(&vb, "ln3", d)?,
                    ff: FeedForward::new(&vb, "ff", &cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            src_embed: embed("src_embed")?,
            tgt_embed: embed("tgt_embed")?,
            positions: sinusoids(cfg.max_positions, d, &device)?,
            encoder,
            enc_norm: LayerNorm::new(&enc, "norm", d)?,
            decoder,
            dec_norm: LayerNorm::new(&dec, "norm", d)?,
            out: linear(&vb, "out", d, vocab_size)?,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)),
            cfg,
            vocab_size,
            device,
        };
        init_weights(varmap, seed)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn dropout(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let p = self.cfg.dropout;
        if !train || p == 0.0 {
            return Ok(x.clone());
        }
        let n = x.elem_count();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = {
            let mut rng = self.rng.lock().expect("dropout rng poisoned");
            (0..n).map(|_| if rng.random::<f32>() < p { 0.0 } else { keep }).collect()
        };
        Ok((x * Tensor::from_vec(mask, x.shape(), &self.device)?)?)
    }

    fn embed(&self, table: &Embedding, ids: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t) = ids.dims2()?;
        if t > self.cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "sequence of {t} positions exceeds the model's {}",
                self.cfg.max_positions
            )));
        }
        let x = (table.forward(ids)? * (self.cfg.d_model as f64).sqrt())?;
        let x = x.broadcast_add(&self.positions.narrow(0, 0, t)?)?;
        self.dropout(&x, train)
    }

    /// Right-padded id matrix and its additive padding mask `[b, 1, 1, len]`.
    pub fn batch(&self, rows: &[Vec<u32>], pad: u32) -> Result<(Tensor, Tensor)> {
        let b = rows.len();
        let len = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = vec![pad; b * len];
        let mut mask = vec![NEG_INF; b * len];
        for (i, r) in rows.iter().enumerate() {
            ids[i * len..i * len + r.len()].copy_from_slice(r);
            mask[i * len..i * len + r.len()].iter_mut().for_each(|m| *m = 0.0);
        }
        Ok((Tensor::from_vec(ids, (b, len), &self.device)?, Tensor::from_vec(mask, (b, 1, 1, len), &self.device)?))
    }

    pub fn encode(&self, src: &Tensor, src_mask: &Tensor, train: bool) -> Result<Memory> {
        let mut x = self.embed(&self.src_embed, src, train)?;
        for layer in &self.encoder {
            let h = layer.ln1.forward(&x)?;
            x = (&x + self.dropout(&layer.attn.forward(&h, &h, Some(src_mask))?, train)?)?;
            let h = layer.ln2.forward(&x)?;
            x = (&x + self.dropout(&layer.ff.forward(&h)?, train)?)?;
        }
        Ok(Memory { states: self.enc_norm.forward(&x)?, mask: src_mask.clone() })
    }

    /// Next-token logits `[b, t, vocab]` for decoder inputs `tgt` `[b, t]`.
    pub fn decode(&self, memory: &Memory, tgt: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t) = tgt.dims2()?;
        let causal: Vec<f32> = (0..t).flat_map(|i| (0..t).map(move |j| if j > i { NEG_INF } else { 0.0 })).collect();
        let causal = Tensor::from_vec(causal, (1, 1, t, t), &self.device)?;
        let mut x = self.embed(&self.tgt_embed, tgt, train)?;
        for layer in &self.decoder {
            let h = layer.ln1.forward(&x)?;
            x = (&x + self.dropout(&layer.self_attn.forward(&h, &h, Some(&causal))?, train)?)?;
            let h = layer.ln2.forward(&x)?;
            x = (&x + self.dropout(&layer.cross_attn.forward(&h, &memory.states, Some(&memory.mask))?, train)?)?;
            let h = layer.ln3.forward(&x)?;
            x = (&x + self.dropout(&layer.ff.forward(&h)?, train)?)?;
        }
        Ok(self.out.forward(&self.dec_norm.forward(&x)?)?)
    }
}

/// Seeded initialisation: linear weights uniform in ±1/sqrt(fan_in),
/// embeddings uniform in ±0.1, biases and layer-norm shifts zero, layer-norm
/// scales one.
pub fn init_weights(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let shape = var.shape().clone();
        let n = shape.elem_count();
        let values: Vec<f32> = if name.ends_with("gamma") {
            vec![1.0; n]
        } else if name.ends_with("bias") || name.ends_with("beta") {
            vec![0.0; n]
        } else {
            let bound = if name.contains("embed") { 0.1 } else { 1.0 / (shape.dims()[1] as f32).sqrt() };
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        var.set(&Tensor::from_vec(values, shape, var.device())?)?;
    }
    Ok(())
}

/// Copies of every parameter, keyed by name, for rollback.
pub fn snapshot(varmap: &VarMap) -> Result<Vec<(String, Tensor)>> {
    let data = varmap.data().lock().expect("varmap poisoned");
    data.iter().map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?))).collect()
}

pub fn restore(varmap: &VarMap, snap: &[(String, Tensor)]) -> Result<()> {
    let data = varmap.data().lock().expect("varmap poisoned");
    for (k, t) in snap {
        if let Some(v) = data.get(k) {
            v.set(t)?;
        }
    }
    Ok(())
}

pub fn all_finite(varmap: &VarMap) -> Result<bool> {
    let data = varmap.data().lock().expect("varmap poisoned");
    for v in data.values() {
        let s = v.as_tensor().abs()?.sum_all()?.to_scalar::<f32>()?;
        if !s.is_finite() {
            return Ok(false);
        }
    }
    Ok(true)
}
