//! Querying aligners: a single learnable query pools a latent sequence by
//! cross-attention. The EEG side first projects encoder latents into the
//! language model's width.

use candle_core::{Device, Tensor, D};

use crate::error::{GlimError, Result};
use crate::nn::{key_bias, softmax_last, Init, Linear, ParamStore};

/// One-query, one-head attention pooling without positional terms.
pub struct QueryPool {
    query: Tensor,
    wk: Linear,
    wv: Linear,
    d: usize,
}

impl QueryPool {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(QueryPool {
            query: ps.param(&format!("{name}.query"), &[1, d], Init::Normal(1.0))?,
            wk: Linear::new(ps, &format!("{name}.k"), d, d, false)?,
            wv: Linear::new(ps, &format!("{name}.v"), d, d, false)?,
            d,
        })
    }

    /// Attention weights (B, T) of the query over `z` (B, T, D).
    pub fn weights(&self, z: &Tensor, lens: &[usize]) -> Result<Tensor> {
        let (b, t, d) = z.dims3()?;
        if d != self.d {
            return Err(GlimError::config(format!("pooling expects width {}, got {d}", self.d)));
        }
        if lens.len() != b || lens.iter().any(|&n| n == 0 || n > t) {
            return Err(GlimError::Degenerate("pooling needs 1..=T valid rows per sequence".into()));
        }
        let k = self.wk.forward(z)?;
        let scores = (k.broadcast_matmul(&self.query.t()?)?.squeeze(D::Minus1)? * (1.0 / (d as f64).sqrt()))?;
        let bias = key_bias(lens, t, z.dtype(), z.device())?.reshape((b, t))?;
        softmax_last(&(scores + bias)?)
    }

    /// Pooled vectors (B, D).
    pub fn forward(&self, z: &Tensor, lens: &[usize]) -> Result<Tensor> {
        let w = self.weights(z, lens)?;
        let v = self.wv.forward(z)?;
        Ok(w.unsqueeze(1)?.matmul(&v)?.squeeze(1)?)
    }
}

/// Sequence memory `z` (B, Q, D_lm) and global embedding `e` (B, D_lm).
pub struct AlignedOutputs {
    pub z: Tensor,
    pub e: Tensor,
}

pub struct EegAligner {
    proj: Linear,
    pool: QueryPool,
    d_in: usize,
}

impl EegAligner {
    /// Parameters under `aligner.eeg.*`. A square projection starts as the
    /// identity.
    pub fn new(ps: &mut ParamStore, d_in: usize, d_lm: usize) -> Result<Self> {
        let init = if d_in == d_lm {
            Init::Eye
        } else {
            Init::Normal(1.0 / (d_in as f64).sqrt())
        };
        Ok(EegAligner {
            proj: Linear::with_init(ps, "aligner.eeg.proj", d_in, d_lm, true, init)?,
            pool: QueryPool::new(ps, "aligner.eeg.pool", d_lm)?,
            d_in,
        })
    }

    pub fn forward(&self, hidden: &Tensor) -> Result<AlignedOutputs> {
        let (b, q, d) = hidden.dims3()?;
        if d != self.d_in {
            return Err(GlimError::config(format!("aligner expects encoder width {}, got {d}", self.d_in)));
        }
        let z = self.proj.forward(hidden)?;
        let e = self.pool.forward(&z, &vec![q; b])?;
        Ok(AlignedOutputs { z, e })
    }

    pub fn pool(&self) -> &QueryPool {
        &self.pool
    }
}

pub struct TextAligner {
    pool: QueryPool,
}

impl TextAligner {
    /// Parameters under `aligner.text.*`.
    pub fn new(ps: &mut ParamStore, d_lm: usize) -> Result<Self> {
        Ok(TextAligner {
            pool: QueryPool::new(ps, "aligner.text.pool", d_lm)?,
        })
    }

    /// Embeddings (B, D) of LM latents (B, T, D) with `lens` valid tokens.
    pub fn forward(&self, latents: &Tensor, lens: &[usize]) -> Result<Tensor> {
        self.pool.forward(latents, lens)
    }

    pub fn pool(&self) -> &QueryPool {
        &self.pool
    }
}

/// Right-pads per-text latent rows (each `len × d`, row-major) into (B, T, D).
pub fn stack_latents(rows: &[&(Vec<f32>, usize)], d: usize, dtype: candle_core::DType, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    let width = rows.iter().map(|r| r.1).max().unwrap_or(1).max(1);
    let mut flat = vec![0f32; rows.len() * width * d];
    for (i, (v, n)) in rows.iter().map(|r| (&r.0, r.1)).enumerate() {
        flat[i * width * d..i * width * d + n * d].copy_from_slice(&v[..n * d]);
    }
    let t = Tensor::from_vec(flat, (rows.len(), width, d), device)?.to_dtype(dtype)?;
    Ok((t, rows.iter().map(|r| r.1).collect()))
}
