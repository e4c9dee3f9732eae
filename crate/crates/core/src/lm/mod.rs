//! Small encoder-decoder language model used frozen behind the aligners.

pub mod generate;
pub mod pretrain;
pub mod tokenizer;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{GlimError, Result};
use crate::nn::{causal_bias, key_bias, log_softmax_last, rms_norm, Attention, FeedForward, Init, Linear, ParamStore};
pub use tokenizer::{TokenSeq, Tokenizer, BOS, EOS, MASK, PAD};

pub const ARCHIVE_FILE: &str = "lm.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "lm.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    /// Longest token sequence on either side.
    pub max_len: usize,
    pub beam_width: usize,
    /// Text forced at the start of every generated sequence; empty by default.
    pub generation_prefix: String,
    pub frozen: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 256,
            max_len: 48,
            beam_width: 4,
            generation_prefix: String::new(),
            frozen: true,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 || self.d_model == 0 || self.max_len == 0 || self.beam_width == 0 {
            return Err(GlimError::config("LM vocab, width, max_len and beam width must be positive"));
        }
        if self.d_model % self.n_heads.max(1) != 0 || self.n_heads == 0 {
            return Err(GlimError::config("LM d_model must be divisible by n_heads"));
        }
        Ok(())
    }
}

const EPS: f64 = 1e-6;

struct EncoderLayer {
    norm1: Tensor,
    attn: Attention,
    norm2: Tensor,
    ff: FeedForward,
}

struct DecoderLayer {
    norm1: Tensor,
    self_attn: Attention,
    norm2: Tensor,
    cross_attn: Attention,
    norm3: Tensor,
    ff: FeedForward,
}

pub struct FrozenLm {
    pub cfg: LmConfig,
    pub store: ParamStore,
    embed: Tensor,
    enc_pos: Tensor,
    dec_pos: Tensor,
    encoder: Vec<EncoderLayer>,
    enc_norm: Tensor,
    decoder: Vec<DecoderLayer>,
    dec_norm: Tensor,
    head: Linear,
    truncations: AtomicUsize,
}

/// Right-padded id batch and its valid lengths.
pub struct PaddedIds {
    pub ids: Tensor,
    pub lens: Vec<usize>,
    pub width: usize,
}

pub fn pad_ids(seqs: &[Vec<u32>], device: &Device) -> Result<PaddedIds> {
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let mut flat = Vec::with_capacity(seqs.len() * width);
    for s in seqs {
        flat.extend_from_slice(s);
        flat.extend(std::iter::repeat_n(PAD, width - s.len()));
    }
    Ok(PaddedIds {
        ids: Tensor::from_vec(flat, (seqs.len(), width), device)?,
        lens: seqs.iter().map(Vec::len).collect(),
        width,
    })
}

impl FrozenLm {
    pub fn build(cfg: LmConfig, mut store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ps = &mut store;
        let embed = ps.param("lm.embed", &[cfg.vocab_size, d], Init::Normal(1.0))?;
        let enc_pos = ps.param("lm.enc_pos", &[cfg.max_len, d], Init::Normal(0.1))?;
        let dec_pos = ps.param("lm.dec_pos", &[cfg.max_len + 1, d], Init::Normal(0.1))?;
        let mut encoder = Vec::new();
        for i in 0..cfg.n_encoder_layers {
            let p = format!("lm.encoder.{i}");
            encoder.push(EncoderLayer {
                norm1: ps.param(&format!("{p}.norm1"), &[d], Init::Ones)?,
                attn: Attention::new(ps, &format!("{p}.attn"), d, cfg.n_heads)?,
                norm2: ps.param(&format!("{p}.norm2"), &[d], Init::Ones)?,
                ff: FeedForward::new(ps, &format!("{p}.ff"), d, cfg.d_ff)?,
            });
        }
        let enc_norm = ps.param("lm.encoder.norm", &[d], Init::Ones)?;
        let mut decoder = Vec::new();
        for i in 0..cfg.n_decoder_layers {
            let p = format!("lm.decoder.{i}");
            decoder.push(DecoderLayer {
                norm1: ps.param(&format!("{p}.norm1"), &[d], Init::Ones)?,
                self_attn: Attention::new(ps, &format!("{p}.self_attn"), d, cfg.n_heads)?,
                norm2: ps.param(&format!("{p}.norm2"), &[d], Init::Ones)?,
                cross_attn: Attention::new(ps, &format!("{p}.cross_attn"), d, cfg.n_heads)?,
                norm3: ps.param(&format!("{p}.norm3"), &[d], Init::Ones)?,
                ff: FeedForward::new(ps, &format!("{p}.ff"), d, cfg.d_ff)?,
            });
        }
        let dec_norm = ps.param("lm.decoder.norm", &[d], Init::Ones)?;
        let head = Linear::new(ps, "lm.head", d, cfg.vocab_size, true)?;
        Ok(FrozenLm {
            cfg,
            store,
            embed,
            enc_pos,
            dec_pos,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            head,
            truncations: AtomicUsize::new(0),
        })
    }

    /// Fresh, randomly initialized model.
    pub fn new_random(cfg: LmConfig, seed: u64, dtype: DType, trainable: bool) -> Result<Self> {
        Self::build(cfg, ParamStore::new(seed, dtype, trainable))
    }

    /// Loads a fixture directory (archive, vocabulary, config). The model is
    /// always frozen.
    pub fn load_dir(dir: &Path, dtype: DType) -> Result<(Self, Tokenizer)> {
        let cfg: LmConfig = serde_json::from_slice(&std::fs::read(dir.join(CONFIG_FILE))?)
            .map_err(|e| GlimError::format(0, format!("{}: {e}", CONFIG_FILE)))?;
        let tok = Tokenizer::load(&dir.join(VOCAB_FILE))?;
        if tok.vocab_size() != cfg.vocab_size {
            return Err(GlimError::config("vocabulary size differs from LM config"));
        }
        let store = ParamStore::load(&dir.join(ARCHIVE_FILE), dtype, false)?;
        Ok((Self::build(LmConfig { frozen: true, ..cfg }, store)?, tok))
    }

    pub fn save_dir(&self, dir: &Path, tok: &Tokenizer) -> Result<String> {
        std::fs::create_dir_all(dir)?;
        let cfg = serde_json::to_vec_pretty(&self.cfg).expect("config serializes");
        std::fs::write(dir.join(CONFIG_FILE), cfg)?;
        tok.save(&dir.join(VOCAB_FILE))?;
        self.store.save(&dir.join(ARCHIVE_FILE))
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn truncation_count(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    fn truncate<'a>(&self, ids: &'a [u32], limit: usize) -> &'a [u32] {
        if ids.len() > limit {
            self.truncations.fetch_add(1, Ordering::Relaxed);
            log::warn!("sequence of {} tokens truncated to {limit}", ids.len());
            &ids[..limit]
        } else {
            ids
        }
    }

    fn embed_ids(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        Ok(self.embed.index_select(&ids.flatten_all()?, 0)?.reshape((b, t, self.cfg.d_model))?)
    }

    /// Token-level latents (B, T, D) and valid lengths.
    pub fn encode_ids(&self, seqs: &[Vec<u32>]) -> Result<(Tensor, Vec<usize>)> {
        let seqs: Vec<Vec<u32>> = seqs.iter().map(|s| self.truncate(s, self.cfg.max_len).to_vec()).collect();
        if seqs.iter().any(Vec::is_empty) {
            return Err(GlimError::Degenerate("cannot encode an empty token sequence".into()));
        }
        let p = pad_ids(&seqs, self.device())?;
        let pos = self.enc_pos.narrow(0, 0, p.width)?;
        let mut x = self.embed_ids(&p.ids)?.broadcast_add(&pos)?;
        let bias = key_bias(&p.lens, p.width, self.dtype(), self.device())?;
        for l in &self.encoder {
            let h = rms_norm(&x, &l.norm1, EPS)?;
            x = (x + l.attn.forward(&h, &h, Some(&bias))?)?;
            let h = rms_norm(&x, &l.norm2, EPS)?;
            x = (x + l.ff.forward(&h)?)?;
        }
        Ok((rms_norm(&x, &self.enc_norm, EPS)?, p.lens))
    }

    pub fn encode_text(&self, seq: &TokenSeq) -> Result<Tensor> {
        let (h, _) = self.encode_ids(std::slice::from_ref(&seq.ids))?;
        Ok(h.squeeze(0)?)
    }

    /// Next-token logits (B, T, V) for decoder inputs `dec_ids` (B, T)
    /// cross-attending to `memory` (B, M, D) with `mem_lens` valid rows.
    pub fn decode_logits(&self, memory: &Tensor, mem_lens: &[usize], dec_ids: &Tensor) -> Result<Tensor> {
        let (_, t) = dec_ids.dims2()?;
        if t > self.cfg.max_len + 1 {
            return Err(GlimError::config(format!("decoder input of {t} tokens exceeds max_len + 1")));
        }
        let (_, m, _) = memory.dims3()?;
        let pos = self.dec_pos.narrow(0, 0, t)?;
        let mut x = self.embed_ids(dec_ids)?.broadcast_add(&pos)?;
        let causal = causal_bias(t, self.dtype(), self.device())?;
        let mem_bias = key_bias(mem_lens, m, self.dtype(), self.device())?;
        for l in &self.decoder {
            let h = rms_norm(&x, &l.norm1, EPS)?;
            x = (x + l.self_attn.forward(&h, &h, Some(&causal))?)?;
            let h = rms_norm(&x, &l.norm2, EPS)?;
            x = (x + l.cross_attn.forward(&h, memory, Some(&mem_bias))?)?;
            let h = rms_norm(&x, &l.norm3, EPS)?;
            x = (x + l.ff.forward(&h)?)?;
        }
        self.head.forward(&rms_norm(&x, &self.dec_norm, EPS)?)
    }

    /// Prefix forced after BOS at generation and teacher forcing.
    pub fn prefix_ids(&self, tok: Option<&Tokenizer>) -> Vec<u32> {
        match tok {
            Some(t) if !self.cfg.generation_prefix.is_empty() => t.tokenize(&self.cfg.generation_prefix).ids,
            _ => Vec::new(),
        }
    }

    /// Per-sequence mean token NLL (B,) of `targets` (each followed by EOS)
    /// given `memory`. Differentiable with respect to `memory`.
    pub fn teacher_forced_nll(&self, memory: &Tensor, mem_lens: &[usize], targets: &[Vec<u32>]) -> Result<Tensor> {
        let (b, _, _) = memory.dims3()?;
        if targets.len() != b {
            return Err(GlimError::config(format!("{} targets for a memory batch of {b}", targets.len())));
        }
        if targets.iter().any(Vec::is_empty) {
            return Err(GlimError::Degenerate("empty target sequence".into()));
        }
        let mut inputs = Vec::with_capacity(b);
        let mut outputs = Vec::with_capacity(b);
        for t in targets {
            let t = self.truncate(t, self.cfg.max_len);
            let mut out = t.to_vec();
            out.push(EOS);
            let mut inp = vec![BOS];
            inp.extend_from_slice(t);
            inputs.push(inp);
            outputs.push(out);
        }
        let inp = pad_ids(&inputs, self.device())?;
        let out = pad_ids(&outputs, self.device())?;
        let logits = self.decode_logits(memory, mem_lens, &inp.ids)?;
        let logp = log_softmax_last(&logits)?;
        let picked = logp.gather(&out.ids.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?;
        let width = out.width;
        let mut mask = vec![0f32; b * width];
        let mut inv_len = vec![0f32; b];
        for (i, &n) in out.lens.iter().enumerate() {
            for j in 0..n {
                mask[i * width + j] = 1.0;
            }
            inv_len[i] = 1.0 / n as f32;
        }
        let mask = Tensor::from_vec(mask, (b, width), self.device())?.to_dtype(self.dtype())?;
        let inv_len = Tensor::from_vec(inv_len, b, self.device())?.to_dtype(self.dtype())?;
        let sums = (picked * mask)?.sum(1)?;
        Ok((sums.neg()? * inv_len)?)
    }

    /// Mean-pooled encoder output per text.
    pub fn pooled(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            let (h, lens) = self.encode_ids(chunk)?;
            let h = h.to_dtype(DType::F32)?.to_vec3::<f32>()?;
            for (rows, n) in h.iter().zip(lens) {
                let mut v = vec![0f32; self.cfg.d_model];
                for r in &rows[..n] {
                    for (a, b) in v.iter_mut().zip(r) {
                        *a += b / n as f32;
                    }
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// The LM with its tokenizer, usable as a sentence embedder.
pub struct LmEmbedder<'a> {
    pub lm: &'a FrozenLm,
    pub tok: &'a Tokenizer,
}

impl crate::synth::TextEmbedder for LmEmbedder<'_> {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let ids: Vec<Vec<u32>> = texts.iter().map(|t| self.tok.tokenize(t).ids).collect();
        self.lm.pooled(&ids)
    }
}
