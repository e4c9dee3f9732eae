//! Joint training of the EEG encoder and both aligners against the frozen
//! language model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{stack_latents, AlignedOutputs, EegAligner, TextAligner};
use crate::data::split::SplitManifest;
use crate::data::{Dataset, PromptDictionaries, SampleRecord};
use crate::encoder::{EegEncoder, EncoderConfig, Mode};
use crate::error::{GlimError, Result};
use crate::lm::{FrozenLm, Tokenizer};
use crate::nn::optim::{OptimConfig, Trainer};
use crate::nn::{scalar, NamedTensors, ParamStore};
use crate::objectives::{cmc_loss, lm_loss, total_loss, LossConfig};
use crate::synth::derive_seed;

pub const MODEL_FILE: &str = "model.bin";
pub const MODEL_META_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    /// Retrieval group size at evaluation time.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            seed: 42,
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            eval_batch: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.eval_batch == 0 {
            return Err(GlimError::config("epochs, batch_size and eval_batch must be positive"));
        }
        if self.batch_size < 2 && self.loss.lambda < 1.0 {
            return Err(GlimError::config("the contrastive term needs batch_size >= 2"));
        }
        Ok(())
    }
}

/// Architecture metadata stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub encoder: EncoderConfig,
    pub d_lm: usize,
    pub dictionaries: PromptDictionaries,
}

/// Trainable part of the model: encoder plus both aligners.
pub struct GlimModel {
    pub meta: ModelMeta,
    pub store: ParamStore,
    pub encoder: EegEncoder,
    pub eeg: EegAligner,
    pub text: TextAligner,
}

impl GlimModel {
    fn build(meta: ModelMeta, mut store: ParamStore) -> Result<Self> {
        let encoder = EegEncoder::new(&mut store, meta.encoder.clone(), &meta.dictionaries)?;
        let eeg = EegAligner::new(&mut store, meta.encoder.d_model, meta.d_lm)?;
        let text = TextAligner::new(&mut store, meta.d_lm)?;
        Ok(GlimModel {
            meta,
            store,
            encoder,
            eeg,
            text,
        })
    }

    pub fn new(meta: ModelMeta, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(meta, ParamStore::new(seed, dtype, true))
    }

    pub fn from_tensors(meta: ModelMeta, tensors: NamedTensors, dtype: DType) -> Result<Self> {
        Self::build(meta, ParamStore::from_tensors(tensors, dtype, true))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_slice(&std::fs::read(dir.join(MODEL_META_FILE))?)
            .map_err(|e| GlimError::format(e.column() as u64, format!("{MODEL_META_FILE}: {e}")))?;
        Self::from_tensors(meta, crate::nn::read_archive(&dir.join(MODEL_FILE))?, DType::F32)
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::to_vec_pretty(&self.meta).expect("metadata serializes");
        std::fs::write(dir.join(MODEL_META_FILE), meta)?;
        self.store.save(&dir.join(MODEL_FILE))
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn eeg_forward<R: Rng + ?Sized>(
        &self,
        dataset: &Dataset,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<AlignedOutputs> {
        let trials: Vec<_> = ids.iter().map(|&i| &dataset.sample(i).trial).collect();
        let prompts: Vec<_> = ids.iter().map(|&i| dataset.sample(i).prompt).collect();
        let hidden = self.encoder.encode(&trials, &prompts, mode, rng)?;
        self.eeg.forward(&hidden)
    }

    /// Text-side embeddings for entries of `bank`.
    pub fn text_embed(&self, bank: &TextBank, entries: &[usize]) -> Result<Tensor> {
        let rows: Vec<_> = entries.iter().map(|&i| &bank.latents[i]).collect();
        let (lat, lens) = stack_latents(&rows, bank.d, self.dtype(), self.store.device())?;
        self.text.forward(&lat, &lens)
    }
}

/// Frozen-LM encodings of texts and tokenized variants, computed once.
pub struct TextBank {
    pub d: usize,
    /// Row-major `len × d` latents and `len`.
    pub latents: Vec<(Vec<f32>, usize)>,
    pub variant_ids: Vec<Vec<Vec<u32>>>,
}

impl TextBank {
    pub fn encode_texts(lm: &FrozenLm, tok: &Tokenizer, texts: &[String]) -> Result<Vec<(Vec<f32>, usize)>> {
        let mut out = Vec::with_capacity(texts.len());
        let ids: Vec<Vec<u32>> = texts.iter().map(|t| tok.tokenize(t).ids).collect();
        for chunk in ids.chunks(64) {
            let (h, lens) = lm.encode_ids(chunk)?;
            let h = h.to_dtype(DType::F32)?.to_vec3::<f32>()?;
            for (rows, n) in h.into_iter().zip(lens) {
                out.push((rows[..n].concat(), n));
            }
        }
        Ok(out)
    }

    /// Entries follow `records` order.
    pub fn build(lm: &FrozenLm, tok: &Tokenizer, records: &[SampleRecord]) -> Result<Self> {
        let texts: Vec<String> = records.iter().map(|r| r.stimulus_text.clone()).collect();
        let latents = Self::encode_texts(lm, tok, &texts)?;
        let variant_ids = records
            .iter()
            .map(|r| r.variants.iter().map(|v| tok.tokenize(&v.text).ids).collect())
            .collect();
        Ok(TextBank {
            d: lm.cfg.d_model,
            latents,
            variant_ids,
        })
    }

    /// Appends extra texts (label prompts, distractors) and returns their
    /// entry indices.
    pub fn extend(&mut self, lm: &FrozenLm, tok: &Tokenizer, texts: &[String]) -> Result<Vec<usize>> {
        let start = self.latents.len();
        self.latents.extend(Self::encode_texts(lm, tok, texts)?);
        self.variant_ids.extend(texts.iter().map(|_| Vec::new()));
        Ok((start..self.latents.len()).collect())
    }
}

/// Training samples grouped by stimulus text.
pub struct TextIndex {
    pub by_text: Vec<(usize, Vec<usize>)>,
}

impl TextIndex {
    pub fn new(dataset: &Dataset, sample_ids: &[usize]) -> Self {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &id in sample_ids {
            map.entry(dataset.sample(id).record).or_default().push(id);
        }
        TextIndex {
            by_text: map.into_iter().collect(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.by_text.iter().map(|(_, v)| v.len()).sum()
    }
}

/// Draws a batch of distinct stimulus texts, each with one of its
/// recordings chosen uniformly. Returns sample ids.
pub fn sample_batch<R: Rng + ?Sized>(index: &TextIndex, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = index.by_text.len();
    if n == 0 {
        return Err(GlimError::config("no training texts"));
    }
    if n < batch_size {
        log::warn!("only {n} unique texts for a batch of {batch_size}");
    }
    let picks = index::sample(rng, n, batch_size.min(n));
    Ok(picks
        .into_iter()
        .map(|t| {
            let recs = &index.by_text[t].1;
            recs[rng.random_range(0..recs.len())]
        })
        .collect())
}

/// Loss terms of one batch. A term whose weight is zero is not computed.
pub struct Losses {
    pub lm: Option<Tensor>,
    pub cmc: Option<Tensor>,
    pub total: Tensor,
}

pub fn batch_losses<R: Rng + ?Sized>(
    model: &GlimModel,
    lm: &FrozenLm,
    bank: &TextBank,
    dataset: &Dataset,
    ids: &[usize],
    mode: Mode,
    rng: &mut R,
    loss: &LossConfig,
    force_both: bool,
) -> Result<Losses> {
    let out = model.eeg_forward(dataset, ids, mode, rng)?;
    let records: Vec<usize> = ids.iter().map(|&i| dataset.sample(i).record).collect();
    let lm_term = if loss.lambda > 0.0 || force_both {
        let targets: Vec<Vec<Vec<u32>>> = records.iter().map(|&r| bank.variant_ids[r].clone()).collect();
        let z = out.z.to_dtype(lm.dtype())?;
        Some(lm_loss(lm, &z, &targets)?.to_dtype(model.dtype())?)
    } else {
        None
    };
    let cmc_term = if loss.lambda < 1.0 || force_both {
        let e_y = model.text_embed(bank, &records)?;
        Some(cmc_loss(&out.e, &e_y, loss.temperature)?)
    } else {
        None
    };
    let total = match (&lm_term, &cmc_term) {
        (Some(a), Some(b)) => total_loss(a, b, loss.lambda)?,
        (Some(a), None) => a.clone(),
        (None, Some(b)) => b.clone(),
        (None, None) => unreachable!("lambda lies in [0, 1]"),
    };
    Ok(Losses {
        lm: lm_term,
        cmc: cmc_term,
        total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lm_loss: Option<f64>,
    pub cmc_loss: Option<f64>,
    pub total_loss: f64,
    pub val_lm_loss: Option<f64>,
    pub val_cmc_loss: Option<f64>,
    pub val_total_loss: Option<f64>,
}

pub fn metrics_csv(log: &[EpochLog]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("epoch,lm_loss,cmc_loss,total_loss,val_lm_loss,val_cmc_loss,val_total_loss\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{},{}",
            e.epoch,
            f(e.lm_loss),
            f(e.cmc_loss),
            e.total_loss,
            f(e.val_lm_loss),
            f(e.val_cmc_loss),
            f(e.val_total_loss)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_val_total: Option<f64>,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub trainable_fraction: f64,
    pub lm_checksum_before: String,
    pub lm_checksum_after: String,
    pub model_checksum: String,
}

pub struct TrainOutcome {
    pub model: GlimModel,
    pub log: Vec<EpochLog>,
    pub summary: TrainSummary,
}

/// Validation batches: samples of one subject share no text, so each
/// subject's validation samples are cut into consecutive batches.
fn val_batches(dataset: &Dataset, ids: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut by_subject: BTreeMap<Option<u32>, Vec<usize>> = BTreeMap::new();
    for &id in ids {
        by_subject.entry(dataset.sample(id).prompt.subject).or_default().push(id);
    }
    let mut out = Vec::new();
    for (_, v) in by_subject {
        let mut cur: Vec<usize> = Vec::new();
        for id in v {
            let rec = dataset.sample(id).record;
            if cur.len() == batch || cur.iter().any(|&c| dataset.sample(c).record == rec) {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(id);
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn numerical(msg: String, ids: &[usize]) -> GlimError {
    GlimError::Numerical {
        msg,
        batch_ids: ids.to_vec(),
    }
}

/// Trains from scratch. When `out` is given, the best-validation weights,
/// metadata, metrics CSV and summary are written there.
pub fn train(
    cfg: &TrainConfig,
    encoder: &EncoderConfig,
    dataset: &Dataset,
    split: &SplitManifest,
    lm: &FrozenLm,
    tok: &Tokenizer,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let lm_before = lm.checksum()?;
    let meta = ModelMeta {
        encoder: encoder.clone(),
        d_lm: lm.cfg.d_model,
        dictionaries: dataset.dictionaries.clone(),
    };
    let model = GlimModel::new(meta, derive_seed(cfg.seed, 3), DType::F32)?;
    let bank = TextBank::build(lm, tok, &dataset.records)?;
    let index = TextIndex::new(dataset, &split.train);
    let steps_per_epoch = index.n_samples().div_ceil(cfg.batch_size).max(1);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = Trainer::new(model.store.vars(), cfg.optim.clone(), total_steps)?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let vals = val_batches(dataset, &split.val, cfg.batch_size);
    let trainable = model.store.num_trainable();
    let frozen = lm.store.num_params();
    log::info!(
        "training {trainable} parameters ({:.2}% of {}), {steps_per_epoch} steps per epoch",
        100.0 * trainable as f64 / (trainable + frozen) as f64,
        trainable + frozen
    );
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, NamedTensors)> = None;
    for epoch in 1..=cfg.epochs {
        let (mut sl, mut sc, mut st, mut n) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..steps_per_epoch {
            let ids = sample_batch(&index, cfg.batch_size, &mut batch_rng)?;
            let l = batch_losses(&model, lm, &bank, dataset, &ids, Mode::Train, &mut drop_rng, &cfg.loss, false)?;
            let total = scalar(&l.total)?;
            if !total.is_finite() {
                return Err(numerical(format!("non-finite loss at epoch {epoch}"), &ids));
            }
            opt.step(&l.total).map_err(|e| match e {
                GlimError::Numerical { msg, .. } => numerical(msg, &ids),
                other => other,
            })?;
            let w = ids.len() as f64;
            sl += l.lm.as_ref().map(scalar).transpose()?.unwrap_or(0.0) * w;
            sc += l.cmc.as_ref().map(scalar).transpose()?.unwrap_or(0.0) * w;
            st += total * w;
            n += w;
        }
        let (vl, vc, vt) = if vals.is_empty() {
            (None, None, None)
        } else {
            let (mut a, mut b, mut c, mut m) = (0.0, 0.0, 0.0, 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for ids in &vals {
                let l = batch_losses(&model, lm, &bank, dataset, ids, Mode::Eval, &mut rng, &cfg.loss, true)?;
                let w = ids.len() as f64;
                a += scalar(l.lm.as_ref().expect("forced"))? * w;
                b += scalar(l.cmc.as_ref().expect("forced"))? * w;
                c += scalar(&l.total)? * w;
                m += w;
            }
            (Some(a / m), Some(b / m), Some(c / m))
        };
        let entry = EpochLog {
            epoch,
            lm_loss: (cfg.loss.lambda > 0.0).then_some(sl / n),
            cmc_loss: (cfg.loss.lambda < 1.0).then_some(sc / n),
            total_loss: st / n,
            val_lm_loss: vl,
            val_cmc_loss: vc,
            val_total_loss: vt,
        };
        log::info!(
            "epoch {epoch} train {:.4} val {}",
            entry.total_loss,
            vt.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
        let score = vt.unwrap_or(entry.total_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.store.snapshot()?));
        }
        log.push(entry);
    }
    let (best_score, best_epoch, snap) = best.expect("at least one epoch");
    model.store.restore(&snap)?;
    let lm_after = lm.checksum()?;
    if lm_after != lm_before {
        return Err(GlimError::numerical("frozen language model parameters changed during training"));
    }
    let summary = TrainSummary {
        epochs: cfg.epochs,
        steps: opt.steps_taken(),
        best_epoch,
        best_val_total: (!vals.is_empty()).then_some(best_score),
        trainable_params: trainable,
        frozen_params: frozen,
        trainable_fraction: trainable as f64 / (trainable + frozen) as f64,
        lm_checksum_before: lm_before,
        lm_checksum_after: lm_after,
        model_checksum: model.store.checksum()?,
    };
    if let Some(dir) = out {
        model.save(dir)?;
        std::fs::write(dir.join(METRICS_FILE), metrics_csv(&log))?;
        std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary).expect("summary serializes"))?;
    }
    Ok(TrainOutcome { model, log, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainPrompt, EegTrial, Group, Sample, SampleRate, Task};
    use crate::mtv::VariantType;

    fn toy_dataset(n_texts: usize, subjects: usize) -> Dataset {
        let mut dictionaries = PromptDictionaries::default();
        let ds = dictionaries.dataset_id("D");
        let records: Vec<SampleRecord> = (0..n_texts)
            .map(|i| SampleRecord {
                id: i,
                stimulus_text: format!("text {i}"),
                variants: vec![crate::data::TextVariant {
                    tag: VariantType::Gr,
                    text: format!("text {i}"),
                }],
                sentiment: None,
                relation: None,
                corpus: crate::data::Corpus::Biography,
                group: Group::II,
            })
            .collect();
        let mut samples = Vec::new();
        for s in 0..subjects {
            let subj = dictionaries.subject_id(&format!("S{s}"));
            for r in 0..n_texts {
                let trial = EegTrial::from_valid(vec![0.5; 16 * 4], 16, 4, SampleRate::hz(128)).unwrap();
                samples.push(Sample {
                    id: samples.len(),
                    record: r,
                    prompt: DomainPrompt::new(Task::Nr, ds, subj),
                    trial,
                });
            }
        }
        Dataset {
            dictionaries,
            records,
            samples,
        }
    }

    #[test]
    fn batches_hold_distinct_texts_and_replay() {
        let d = toy_dataset(100, 3);
        let ids: Vec<usize> = (0..d.samples.len()).collect();
        let index = TextIndex::new(&d, &ids);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_batch(&index, 64, &mut rng).unwrap();
        let mut texts: Vec<usize> = b.iter().map(|&i| d.sample(i).record).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 64);
        let again = sample_batch(&index, 64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn short_pools_give_smaller_batches() {
        let d = toy_dataset(10, 2);
        let ids: Vec<usize> = (0..d.samples.len()).collect();
        let index = TextIndex::new(&d, &ids);
        let b = sample_batch(&index, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn validation_batches_never_repeat_a_text() {
        let d = toy_dataset(30, 3);
        let ids: Vec<usize> = (0..d.samples.len()).collect();
        for batch in val_batches(&d, &ids, 8) {
            let mut r: Vec<usize> = batch.iter().map(|&i| d.sample(i).record).collect();
            r.sort();
            r.dedup();
            assert_eq!(r.len(), batch.len());
            assert!(batch.len() <= 8);
        }
    }

    #[test]
    fn config_rejects_single_item_contrastive_batches() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let lm_only = TrainConfig {
            batch_size: 1,
            loss: LossConfig {
                lambda: 1.0,
                temperature: 1.0,
            },
            ..TrainConfig::default()
        };
        lm_only.validate().unwrap();
    }
}
