//! EEG encoder: a patch stem and self-attention blocks over valid time
//! points, then decoder blocks in which a fixed set of learnable queries
//! cross-attends to the encoded sequence. Domain prompts condition the
//! encoder blocks through zero-initialized scale-shift adapters.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainPrompt, EegTrial, PromptDictionaries, Task, TRIAL_CHANNELS};
use crate::error::{GlimError, Result};
use crate::nn::{key_bias, normalize_last, sinusoidal, Attention, FeedForward, Init, Linear, ParamStore};

const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_encoder_blocks: usize,
    pub n_decoder_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_queries: usize,
    /// Replacement probabilities for the (task, dataset, subject) slots.
    pub dropout_probs: [f64; 3],
    /// Time points folded into one encoder token.
    pub patch_len: usize,
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_encoder_blocks: 6,
            n_decoder_blocks: 6,
            d_model: 128,
            n_heads: 4,
            n_queries: 64,
            dropout_probs: [0.0, 0.1, 0.1],
            patch_len: 16,
            d_ff: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(GlimError::config("encoder d_model must be a positive multiple of n_heads"));
        }
        if self.n_queries == 0 || self.patch_len == 0 || self.d_ff == 0 {
            return Err(GlimError::config("n_queries, patch_len and d_ff must be positive"));
        }
        if self.dropout_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GlimError::config("prompt dropout probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Replaces each slot by UNKNOWN independently with its probability.
pub fn apply_prompt_dropout<R: Rng + ?Sized>(prompt: &DomainPrompt, probs: [f64; 3], rng: &mut R) -> DomainPrompt {
    let mut keep = |p: f64| !(p > 0.0 && rng.random_bool(p.min(1.0)));
    DomainPrompt {
        task: prompt.task.filter(|_| keep(probs[0])),
        dataset: prompt.dataset.filter(|_| keep(probs[1])),
        subject: prompt.subject.filter(|_| keep(probs[2])),
    }
}

/// `normalize(hidden) ⊙ (1 + scale) + shift`, with `hidden` (B, T, D) and
/// per-sample `scale`, `shift` (B, D).
pub fn scale_shift(hidden: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let n = normalize_last(hidden, EPS)?;
    let s = (scale.unsqueeze(1)? + 1.0)?;
    Ok(n.broadcast_mul(&s)?.broadcast_add(&shift.unsqueeze(1)?)?)
}

/// Normalizes every feature over the valid time steps; `mask` is (B, T, 1)
/// with ones on valid rows. Padded rows come out as zero.
fn temporal_norm(x: &Tensor, mask: &Tensor, counts: &Tensor) -> Result<Tensor> {
    let mean = x.broadcast_mul(mask)?.sum_keepdim(1)?.broadcast_div(counts)?;
    let xc = x.broadcast_sub(&mean)?.broadcast_mul(mask)?;
    let var = xc.sqr()?.sum_keepdim(1)?.broadcast_div(counts)?;
    Ok(xc.broadcast_div(&(var + EPS)?.sqrt()?)?)
}

struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: ps.param(&format!("{name}.gain"), &[d], Init::Ones)?,
            bias: ps.param(&format!("{name}.bias"), &[d], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(normalize_last(x, EPS)?.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

/// Maps the prompt condition to a (scale, shift) pair; zero at init.
struct Adapter {
    gen: Linear,
}

impl Adapter {
    fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Adapter {
            gen: Linear::with_init(ps, name, d, 2 * d, true, Init::Zeros)?,
        })
    }

    fn params(&self, cond: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.gen.forward(cond)?;
        let d = out.dim(D::Minus1)? / 2;
        Ok((out.narrow(1, 0, d)?, out.narrow(1, d, d)?))
    }
}

struct EncoderBlock {
    ad1: Adapter,
    attn: Attention,
    ad2: Adapter,
    ff: FeedForward,
    ad_top: Adapter,
}

struct DecoderBlock {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

pub struct EegEncoder {
    pub cfg: EncoderConfig,
    stem: Linear,
    task_emb: Tensor,
    dataset_emb: Tensor,
    subject_emb: Tensor,
    n_datasets: usize,
    n_subjects: usize,
    blocks: Vec<EncoderBlock>,
    queries: Tensor,
    decoder: Vec<DecoderBlock>,
    final_ln: LayerNorm,
    dtype: DType,
    device: Device,
}

/// A batch of trials laid out for the encoder.
struct TrialBatch {
    x: Tensor,
    patches: Vec<usize>,
    width: usize,
}

impl EegEncoder {
    /// Registers parameters under `encoder.*`. Prompt tables hold one row
    /// per dictionary entry plus a final UNKNOWN row.
    pub fn new(ps: &mut ParamStore, cfg: EncoderConfig, dicts: &PromptDictionaries) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let n_datasets = dicts.datasets.len();
        let n_subjects = dicts.subjects.len();
        let stem = Linear::new(ps, "encoder.stem", cfg.patch_len * TRIAL_CHANNELS, d, true)?;
        let task_emb = ps.param("encoder.prompt.task", &[Task::ALL.len() + 1, d], Init::Normal(1.0))?;
        let dataset_emb = ps.param("encoder.prompt.dataset", &[n_datasets + 1, d], Init::Normal(1.0))?;
        let subject_emb = ps.param("encoder.prompt.subject", &[n_subjects + 1, d], Init::Normal(1.0))?;
        let mut blocks = Vec::new();
        for i in 0..cfg.n_encoder_blocks {
            let p = format!("encoder.block.{i}");
            blocks.push(EncoderBlock {
                ad1: Adapter::new(ps, &format!("{p}.adapter1"), d)?,
                attn: Attention::new(ps, &format!("{p}.attn"), d, cfg.n_heads)?,
                ad2: Adapter::new(ps, &format!("{p}.adapter2"), d)?,
                ff: FeedForward::new(ps, &format!("{p}.ff"), d, cfg.d_ff)?,
                ad_top: Adapter::new(ps, &format!("{p}.adapter_top"), d)?,
            });
        }
        let queries = ps.param("encoder.queries", &[cfg.n_queries, d], Init::Normal(1.0))?;
        let mut decoder = Vec::new();
        for i in 0..cfg.n_decoder_blocks {
            let p = format!("encoder.decoder.{i}");
            decoder.push(DecoderBlock {
                ln1: LayerNorm::new(ps, &format!("{p}.ln1"), d)?,
                self_attn: Attention::new(ps, &format!("{p}.self_attn"), d, cfg.n_heads)?,
                ln2: LayerNorm::new(ps, &format!("{p}.ln2"), d)?,
                cross_attn: Attention::new(ps, &format!("{p}.cross_attn"), d, cfg.n_heads)?,
                ln3: LayerNorm::new(ps, &format!("{p}.ln3"), d)?,
                ff: FeedForward::new(ps, &format!("{p}.ff"), d, cfg.d_ff)?,
            });
        }
        let final_ln = LayerNorm::new(ps, "encoder.final_ln", d)?;
        Ok(EegEncoder {
            cfg,
            stem,
            task_emb,
            dataset_emb,
            subject_emb,
            n_datasets,
            n_subjects,
            blocks,
            queries,
            decoder,
            final_ln,
            dtype: ps.dtype(),
            device: ps.device().clone(),
        })
    }

    fn slot_ids(&self, prompts: &[DomainPrompt]) -> Result<[Tensor; 3]> {
        let mut ids = [Vec::new(), Vec::new(), Vec::new()];
        for p in prompts {
            let d = match p.dataset {
                Some(d) if (d as usize) < self.n_datasets => d,
                Some(d) => return Err(GlimError::config(format!("dataset id {d} outside the prompt dictionary"))),
                None => self.n_datasets as u32,
            };
            let s = match p.subject {
                Some(s) if (s as usize) < self.n_subjects => s,
                Some(s) => return Err(GlimError::config(format!("subject id {s} outside the prompt dictionary"))),
                None => self.n_subjects as u32,
            };
            ids[0].push(p.task.map_or(Task::ALL.len() as u32, |t| t.index() as u32));
            ids[1].push(d);
            ids[2].push(s);
        }
        let n = prompts.len();
        let [a, b, c] = ids;
        Ok([
            Tensor::from_vec(a, n, &self.device)?,
            Tensor::from_vec(b, n, &self.device)?,
            Tensor::from_vec(c, n, &self.device)?,
        ])
    }

    /// SiLU of the summed slot embeddings, (B, D).
    fn condition(&self, prompts: &[DomainPrompt]) -> Result<Tensor> {
        let [t, d, s] = self.slot_ids(prompts)?;
        let sum = ((self.task_emb.index_select(&t, 0)? + self.dataset_emb.index_select(&d, 0)?)?
            + self.subject_emb.index_select(&s, 0)?)?;
        Ok(sum.silu()?)
    }

    fn layout(&self, trials: &[&EegTrial], min_len: usize) -> Result<TrialBatch> {
        let p = self.cfg.patch_len;
        let mut patches = Vec::with_capacity(trials.len());
        for (i, t) in trials.iter().enumerate() {
            if t.valid_time_len() == 0 {
                return Err(GlimError::Degenerate(format!("trial {i} has no valid time points")));
            }
            patches.push(t.valid_time_len().div_ceil(p));
        }
        let width = patches.iter().copied().max().unwrap_or(1).max(min_len.div_ceil(p));
        let mut flat = Vec::with_capacity(trials.len() * width * p * TRIAL_CHANNELS);
        for t in trials {
            flat.extend(t.to_padded_len(width * p));
        }
        let x = Tensor::from_vec(flat, (trials.len(), width, p * TRIAL_CHANNELS), &self.device)?.to_dtype(self.dtype)?;
        Ok(TrialBatch { x, patches, width })
    }

    /// Latent sequences (B, n_queries, d_model). In train mode prompt
    /// slots are dropped with the configured probabilities.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        trials: &[&EegTrial],
        prompts: &[DomainPrompt],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.encode_padded(trials, prompts, mode, rng, 0)
    }

    /// As `encode`, with the time axis padded to at least `min_len` points.
    pub fn encode_padded<R: Rng + ?Sized>(
        &self,
        trials: &[&EegTrial],
        prompts: &[DomainPrompt],
        mode: Mode,
        rng: &mut R,
        min_len: usize,
    ) -> Result<Tensor> {
        if trials.len() != prompts.len() || trials.is_empty() {
            return Err(GlimError::config("encode needs one prompt per trial and a nonempty batch"));
        }
        let prompts: Vec<DomainPrompt> = match mode {
            Mode::Train => prompts.iter().map(|p| apply_prompt_dropout(p, self.cfg.dropout_probs, rng)).collect(),
            Mode::Eval => prompts.to_vec(),
        };
        let batch = self.layout(trials, min_len)?;
        let b = trials.len();
        let w = batch.width;
        let cond = self.condition(&prompts)?;
        let mut mask = vec![0f32; b * w];
        for (i, &n) in batch.patches.iter().enumerate() {
            for j in 0..n {
                mask[i * w + j] = 1.0;
            }
        }
        let mask = Tensor::from_vec(mask, (b, w, 1), &self.device)?.to_dtype(self.dtype)?;
        let counts: Vec<f32> = batch.patches.iter().map(|&n| n as f32).collect();
        let counts = Tensor::from_vec(counts, (b, 1, 1), &self.device)?.to_dtype(self.dtype)?;
        let bias = key_bias(&batch.patches, w, self.dtype, &self.device)?;
        let pos = sinusoidal(w, self.cfg.d_model, self.dtype, &self.device)?;
        let mut x = self.stem.forward(&batch.x)?.broadcast_add(&pos)?;
        for blk in &self.blocks {
            let (s, sh) = blk.ad1.params(&cond)?;
            let h = scale_shift(&x, &s, &sh)?;
            x = (x + blk.attn.forward(&h, &h, Some(&bias))?)?;
            let (s, sh) = blk.ad2.params(&cond)?;
            let h = scale_shift(&x, &s, &sh)?;
            x = (x + blk.ff.forward(&h)?)?;
            let (s, sh) = blk.ad_top.params(&cond)?;
            let n = temporal_norm(&x, &mask, &counts)?;
            x = n
                .broadcast_mul(&(s.unsqueeze(1)? + 1.0)?)?
                .broadcast_add(&sh.unsqueeze(1)?)?
                .broadcast_mul(&mask)?;
        }
        let mut q = self.queries.unsqueeze(0)?.repeat((b, 1, 1))?;
        for blk in &self.decoder {
            let h = blk.ln1.forward(&q)?;
            q = (q + blk.self_attn.forward(&h, &h, None)?)?;
            let h = blk.ln2.forward(&q)?;
            q = (q + blk.cross_attn.forward(&h, &x, Some(&bias))?)?;
            let h = blk.ln3.forward(&q)?;
            q = (q + blk.ff.forward(&h)?)?;
        }
        self.final_ln.forward(&q)
    }
}
