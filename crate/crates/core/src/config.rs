//! Flat `key = value` run configuration covering every stage.
//!
//! Keys are dotted (`loss.lambda`); nested TOML tables are accepted and
//! flattened. Unknown keys are rejected. [`RunConfig::to_toml`] writes every
//! key back out, so an archived file replays the run exactly.

use std::path::{Path, PathBuf};

use toml::Value;

use crate::data::split::{OverlapKey, SplitConfig};
use crate::encoder::EncoderConfig;
use crate::error::{GlimError, Result};
use crate::eval::EvalConfig;
use crate::synth::WorldConfig;
use crate::train::TrainConfig;

pub const ARCHIVE_NAME: &str = "run.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Master seed: drives batching, dropout and initialisation.
    pub seed: u64,
    pub world: WorldConfig,
    pub encoder: EncoderConfig,
    /// `loss.*`, `optim.*` and `train.*` keys all land here.
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub lm_dir: Option<PathBuf>,
    pub mtv_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            world: WorldConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            lm_dir: None,
            mtv_cache: None,
        }
    }
}

fn bad(key: &str, want: &str) -> GlimError {
    GlimError::config(format!("{key}: expected {want}"))
}

fn f64_of(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number")),
    }
}

fn u64_of(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "a non-negative integer")),
    }
}

fn usize_of(key: &str, v: &Value) -> Result<usize> {
    u64_of(key, v).map(|x| x as usize)
}

fn bool_of(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false"))
}

fn str_of<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string"))
}

fn f64_array<const N: usize>(key: &str, v: &Value) -> Result<[f64; N]> {
    let a = v.as_array().ok_or_else(|| bad(key, "an array"))?;
    if a.len() != N {
        return Err(bad(key, &format!("{N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(a) {
        *o = f64_of(key, x)?;
    }
    Ok(out)
}

fn int(x: u64) -> Value {
    Value::Integer(x as i64)
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn overlap_name(o: OverlapKey) -> &'static str {
    match o {
        OverlapKey::ParadigmDataset => "paradigm_dataset",
        OverlapKey::SubjectParadigmDataset => "subject_paradigm_dataset",
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| GlimError::config(format!("config syntax: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut cfg = RunConfig::default();
        for (k, v) in &flat {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let w = &mut self.world;
        let e = &mut self.encoder;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = u64_of(key, v)?,
            "world.n_sentences" => w.n_sentences = usize_of(key, v)?,
            "world.grammar_seed" => w.grammar_seed = u64_of(key, v)?,
            "world.snr_db" => w.snr_db = f64_of(key, v)?,
            "world.mixing_seed" => w.mixing_seed = u64_of(key, v)?,
            "world.noise_seed" => w.noise_seed = u64_of(key, v)?,
            "world.group_mixture" => w.group_mixture = f64_array(key, v)?,
            "world.sentiment_mixture" => w.sentiment_mixture = f64_array(key, v)?,
            "world.relation_mixture" => w.relation_mixture = f64_array(key, v)?,
            "world.subjects_per_dataset" => w.subjects_per_dataset = usize_of(key, v)?,
            "world.channels" => w.channels = usize_of(key, v)?,
            "world.embed_dim" => w.embed_dim = usize_of(key, v)?,
            "encoder.n_encoder_blocks" => e.n_encoder_blocks = usize_of(key, v)?,
            "encoder.n_decoder_blocks" => e.n_decoder_blocks = usize_of(key, v)?,
            "encoder.d_model" => e.d_model = usize_of(key, v)?,
            "encoder.n_heads" => e.n_heads = usize_of(key, v)?,
            "encoder.n_queries" => e.n_queries = usize_of(key, v)?,
            "encoder.dropout_probs" => e.dropout_probs = f64_array(key, v)?,
            "encoder.patch_len" => e.patch_len = usize_of(key, v)?,
            "encoder.d_ff" => e.d_ff = usize_of(key, v)?,
            "loss.lambda" => t.loss.lambda = f64_of(key, v)?,
            "loss.temperature" => t.loss.temperature = f64_of(key, v)?,
            "train.epochs" => t.epochs = usize_of(key, v)?,
            "train.batch_size" => t.batch_size = usize_of(key, v)?,
            "train.eval_batch" => t.eval_batch = usize_of(key, v)?,
            "optim.lr" => t.optim.lr = f64_of(key, v)?,
            "optim.beta1" => t.optim.beta1 = f64_of(key, v)?,
            "optim.beta2" => t.optim.beta2 = f64_of(key, v)?,
            "optim.eps" => t.optim.eps = f64_of(key, v)?,
            "optim.weight_decay" => t.optim.weight_decay = f64_of(key, v)?,
            "optim.warmup_frac" => t.optim.warmup_frac = f64_of(key, v)?,
            "optim.clip_norm" => t.optim.clip_norm = f64_of(key, v)?,
            "split.seed" => self.split.seed = u64_of(key, v)?,
            "split.ratios" => {
                let r = f64_array::<3>(key, v)?;
                if r.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                    return Err(bad(key, "three non-negative integers"));
                }
                self.split.ratios = r.map(|x| x as u32);
            }
            "split.overlap" => {
                self.split.overlap = match str_of(key, v)? {
                    "paradigm_dataset" => OverlapKey::ParadigmDataset,
                    "subject_paradigm_dataset" => OverlapKey::SubjectParadigmDataset,
                    _ => return Err(bad(key, "paradigm_dataset or subject_paradigm_dataset")),
                }
            }
            "eval.group_size" => self.eval.group_size = usize_of(key, v)?,
            "eval.beam_width" => self.eval.beam_width = usize_of(key, v)?,
            "eval.max_len" => self.eval.max_len = usize_of(key, v)?,
            "eval.generate" => self.eval.generate = bool_of(key, v)?,
            "eval.noise_seed" => self.eval.noise_seed = u64_of(key, v)?,
            "eval.noise_repeats" => self.eval.noise_repeats = usize_of(key, v)?,
            "eval.noise_matched" => self.eval.noise_matched = bool_of(key, v)?,
            "eval.distractor_seed" => self.eval.distractor_seed = u64_of(key, v)?,
            "eval.batch" => self.eval.batch = usize_of(key, v)?,
            "lm.dir" => self.lm_dir = Some(PathBuf::from(str_of(key, v)?)),
            "mtv.cache" => self.mtv_cache = Some(PathBuf::from(str_of(key, v)?)),
            _ => return Err(GlimError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, Value)> {
        let w = &self.world;
        let e = &self.encoder;
        let t = &self.train;
        let o = &t.optim;
        let ev = &self.eval;
        let mut v = vec![
            ("seed", int(self.seed)),
            ("world.n_sentences", int(w.n_sentences as u64)),
            ("world.grammar_seed", int(w.grammar_seed)),
            ("world.snr_db", Value::Float(w.snr_db)),
            ("world.mixing_seed", int(w.mixing_seed)),
            ("world.noise_seed", int(w.noise_seed)),
            ("world.group_mixture", floats(&w.group_mixture)),
            ("world.sentiment_mixture", floats(&w.sentiment_mixture)),
            ("world.relation_mixture", floats(&w.relation_mixture)),
            ("world.subjects_per_dataset", int(w.subjects_per_dataset as u64)),
            ("world.channels", int(w.channels as u64)),
            ("world.embed_dim", int(w.embed_dim as u64)),
            ("encoder.n_encoder_blocks", int(e.n_encoder_blocks as u64)),
            ("encoder.n_decoder_blocks", int(e.n_decoder_blocks as u64)),
            ("encoder.d_model", int(e.d_model as u64)),
            ("encoder.n_heads", int(e.n_heads as u64)),
            ("encoder.n_queries", int(e.n_queries as u64)),
            ("encoder.dropout_probs", floats(&e.dropout_probs)),
            ("encoder.patch_len", int(e.patch_len as u64)),
            ("encoder.d_ff", int(e.d_ff as u64)),
            ("loss.lambda", Value::Float(t.loss.lambda)),
            ("loss.temperature", Value::Float(t.loss.temperature)),
            ("train.epochs", int(t.epochs as u64)),
            ("train.batch_size", int(t.batch_size as u64)),
            ("train.eval_batch", int(t.eval_batch as u64)),
            ("optim.lr", Value::Float(o.lr)),
            ("optim.beta1", Value::Float(o.beta1)),
            ("optim.beta2", Value::Float(o.beta2)),
            ("optim.eps", Value::Float(o.eps)),
            ("optim.weight_decay", Value::Float(o.weight_decay)),
            ("optim.warmup_frac", Value::Float(o.warmup_frac)),
            ("optim.clip_norm", Value::Float(o.clip_norm)),
            ("split.seed", int(self.split.seed)),
            (
                "split.ratios",
                Value::Array(self.split.ratios.iter().map(|&r| int(r as u64)).collect()),
            ),
            ("split.overlap", Value::String(overlap_name(self.split.overlap).into())),
            ("eval.group_size", int(ev.group_size as u64)),
            ("eval.beam_width", int(ev.beam_width as u64)),
            ("eval.max_len", int(ev.max_len as u64)),
            ("eval.generate", Value::Boolean(ev.generate)),
            ("eval.noise_seed", int(ev.noise_seed)),
            ("eval.noise_repeats", int(ev.noise_repeats as u64)),
            ("eval.noise_matched", Value::Boolean(ev.noise_matched)),
            ("eval.distractor_seed", int(ev.distractor_seed)),
            ("eval.batch", int(ev.batch as u64)),
        ];
        if let Some(p) = &self.lm_dir {
            v.push(("lm.dir", Value::String(p.display().to_string())));
        }
        if let Some(p) = &self.mtv_cache {
            v.push(("mtv.cache", Value::String(p.display().to_string())));
        }
        v
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes the effective configuration next to a run's outputs.
    pub fn archive(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(ARCHIVE_NAME);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if self.split.ratios.iter().sum::<u32>() == 0 {
            return Err(GlimError::config("split.ratios must sum to a positive whole"));
        }
        if self.eval.group_size == 0 || self.eval.beam_width == 0 || self.eval.batch == 0 {
            return Err(GlimError::config("eval.group_size, eval.beam_width and eval.batch must be positive"));
        }
        if self.eval.noise_repeats == 0 {
            return Err(GlimError::config("eval.noise_repeats must be positive"));
        }
        Ok(())
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), cfg.entries().len());
    }

    #[test]
    fn nested_tables_flatten_to_dotted_keys() {
        let a = RunConfig::parse("loss.lambda = 0.25\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(a.train.loss.lambda, 0.25);
        assert_eq!(a.train.epochs, 3);
        let mut b = a.clone();
        b.world.snr_db = f64::INFINITY;
        b.lm_dir = Some("fixtures/lm".into());
        assert_eq!(RunConfig::parse(&b.to_toml()).unwrap(), b);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        assert!(RunConfig::parse("loss.lamda = 0.5").is_err());
        assert!(RunConfig::parse("train.epochs = \"ten\"").is_err());
        assert!(RunConfig::parse("loss.lambda = 1.5").is_err());
        assert!(RunConfig::parse("split.ratios = [0, 0, 0]").is_err());
    }

    #[test]
    fn master_seed_reaches_training() {
        let cfg = RunConfig::parse("seed = 9").unwrap();
        assert_eq!(cfg.train_config().seed, 9);
    }
}
