//! Parameter storage, the named-tensor archive, and the layers shared by the
//! EEG encoder, the aligners and the stand-in language model.
//!
//! Softmax and normalization are composed from primitive tensor ops so that
//! reverse-mode gradients exist for every path.

pub mod archive;
pub mod optim;

use std::collections::BTreeMap;
use std::path::Path;

pub use candle_core::DType;
use candle_core::{Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GlimError, Result};

pub use archive::{archive_bytes, checksum, read_archive, write_archive, NamedTensors};

/// Large negative logit used for masked keys; exp() of it underflows to 0.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Uniform(f64),
    Zeros,
    Ones,
    /// Identity on the leading square block of a 2-D matrix.
    Eye,
}

/// Named parameters of one model. Parameters are either trainable `Var`s or
/// frozen constants, fixed at construction.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    trainable: bool,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Var>,
    frozen: BTreeMap<String, Tensor>,
    preload: NamedTensors,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, trainable: bool) -> Self {
        ParamStore {
            device: Device::Cpu,
            dtype,
            trainable,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            frozen: BTreeMap::new(),
            preload: NamedTensors::new(),
        }
    }

    /// A store whose parameters take their values from `tensors` instead of
    /// the initializer. Every requested name must be present.
    pub fn from_tensors(tensors: NamedTensors, dtype: DType, trainable: bool) -> Self {
        let mut s = ParamStore::new(0, dtype, trainable);
        s.preload = tensors;
        s
    }

    pub fn load(path: &Path, dtype: DType, trainable: bool) -> Result<Self> {
        Ok(Self::from_tensors(read_archive(path)?, dtype, trainable))
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.params.contains_key(name) || self.frozen.contains_key(name) {
            return Err(GlimError::config(format!("parameter {name} defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f32> = if self.preload.is_empty() {
            self.init_values(shape, n, init)
        } else {
            let (s, v) = self
                .preload
                .get(name)
                .ok_or_else(|| GlimError::config(format!("checkpoint lacks parameter {name}")))?;
            if s.as_slice() != shape {
                return Err(GlimError::config(format!("parameter {name}: checkpoint shape {s:?}, model shape {shape:?}")));
            }
            v.clone()
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        if self.trainable {
            let var = Var::from_tensor(&t)?;
            let out = var.as_tensor().clone();
            self.params.insert(name.to_string(), var);
            Ok(out)
        } else {
            self.frozen.insert(name.to_string(), t.clone());
            Ok(t)
        }
    }

    fn init_values(&mut self, shape: &[usize], n: usize, init: Init) -> Vec<f32> {
        match init {
            Init::Normal(std) => (0..n).map(|_| (self.rng.sample::<f64, _>(StandardNormal) * std) as f32).collect(),
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..a) as f32).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Eye => {
                let cols = *shape.last().unwrap_or(&1);
                let rows = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
                let mut v = vec![0.0; n];
                for i in 0..rows.min(cols) {
                    v[i * cols + i] = 1.0;
                }
                v
            }
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum::<usize>() + self.frozen.values().map(|t| t.elem_count()).sum::<usize>()
    }

    pub fn num_trainable(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Current values of every parameter, as f32.
    pub fn snapshot(&self) -> Result<NamedTensors> {
        let mut out = NamedTensors::new();
        let all = self
            .params
            .iter()
            .map(|(k, v)| (k, v.as_tensor()))
            .chain(self.frozen.iter());
        for (name, t) in all {
            let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            out.insert(name.clone(), (t.dims().to_vec(), v));
        }
        Ok(out)
    }

    /// Overwrites trainable parameters from a snapshot.
    pub fn restore(&self, snapshot: &NamedTensors) -> Result<()> {
        for (name, var) in &self.params {
            let (shape, v) = snapshot
                .get(name)
                .ok_or_else(|| GlimError::config(format!("snapshot lacks {name}")))?;
            let t = Tensor::from_vec(v.clone(), shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let snap = self.snapshot()?;
        write_archive(path, &snap)?;
        Ok(checksum(&snap))
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(checksum(&self.snapshot()?))
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Normalizes the last dimension to zero mean and unit variance.
pub fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(xc.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn rms_norm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(x.broadcast_div(&(ms + eps)?.sqrt()?)?.broadcast_mul(gain)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let std = 1.0 / (d_in as f64).sqrt();
        Self::with_init(ps, name, d_in, d_out, bias, Init::Normal(std))
    }

    pub fn with_init(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, init: Init) -> Result<Self> {
        let w = ps.param(&format!("{name}.weight"), &[d_in, d_out], init)?;
        let b = if bias {
            Some(ps.param(&format!("{name}.bias"), &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.w)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.w.dim(1)?;
        let y = y.reshape(out_dims)?;
        Ok(match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(GlimError::config(format!("d_model {d_model} not divisible by {heads} heads")));
        }
        Ok(Attention {
            wq: Linear::new(ps, &format!("{name}.q"), d_model, d_model, false)?,
            wk: Linear::new(ps, &format!("{name}.k"), d_model, d_model, false)?,
            wv: Linear::new(ps, &format!("{name}.v"), d_model, d_model, false)?,
            wo: Linear::new(ps, &format!("{name}.o"), d_model, d_model, false)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `q_in`: (B, Tq, D); `kv_in`: (B, Tk, D); `bias`: additive logits
    /// broadcastable to (B, H, Tq, Tk).
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, d) = q_in.dims3()?;
        let dh = d / self.heads;
        let q = self.split(&self.wq.forward(q_in)?)?;
        let k = self.split(&self.wk.forward(kv_in)?)?;
        let v = self.split(&self.wv.forward(kv_in)?)?;
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let p = softmax_last(&scores)?;
        let out = p.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, tq, d))?;
        self.wo.forward(&out)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, d_ff: usize) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d_model, d_ff, true)?,
            down: Linear::new(ps, &format!("{name}.down"), d_ff, d_model, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Additive key bias of shape (B, 1, 1, T): 0 for valid keys, a large
/// negative value for padding.
pub fn key_bias(valid: &[usize], t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; valid.len() * t];
    for (i, &n) in valid.iter().enumerate() {
        for j in n..t {
            v[i * t + j] = MASK_VALUE as f32;
        }
    }
    Ok(Tensor::from_vec(v, (valid.len(), 1, 1, t), device)?.to_dtype(dtype)?)
}

/// Causal bias of shape (1, 1, T, T).
pub fn causal_bias(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; t * t];
    for i in 0..t {
        for j in i + 1..t {
            v[i * t + j] = MASK_VALUE as f32;
        }
    }
    Ok(Tensor::from_vec(v, (1, 1, t, t), device)?.to_dtype(dtype)?)
}

/// Sinusoidal position table (T, D).
pub fn sinusoidal(t: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; t * d];
    for pos in 0..t {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            v[pos * d + 2 * i] = (pos as f64 * freq).sin() as f32;
            v[pos * d + 2 * i + 1] = (pos as f64 * freq).cos() as f32;
        }
    }
    Ok(Tensor::from_vec(v, (t, d), device)?.to_dtype(dtype)?)
}

/// Reads a scalar tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
