//! Synthetic EEG-text world: a template corpus with planted labels and
//! trials produced by a fixed linear mixing of each sentence's text
//! embedding, distorted by subject, dataset and task effects plus noise.

pub mod grammar;

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::preprocess::{preprocess_trial, PreprocessOptions, RawEeg};
use crate::data::{
    Corpus, Dataset, DomainPrompt, EegTrial, Group, PromptDictionaries, Relation, Sample, SampleRate, SampleRecord,
    Sentiment, Task, TARGET_RATE_HZ, TRIAL_LEN, ZUCO_CHANNELS,
};
use crate::error::{GlimError, Result};
use crate::mtv::{generate_variants, BuiltinParaphraser, Paraphraser, VariantLabels};
use grammar::Frame;

/// Derives an independent seed for item `id` under `master`.
pub fn derive_seed(master: u64, id: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(id.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_sentences: usize,
    pub grammar_seed: u64,
    /// Signal-to-noise power ratio in dB; `inf` is noise-free.
    pub snr_db: f64,
    pub mixing_seed: u64,
    pub noise_seed: u64,
    /// Relative frequency of evaluation groups I..V.
    pub group_mixture: [f64; 5],
    pub sentiment_mixture: [f64; 3],
    pub relation_mixture: [f64; 9],
    /// Subjects per dataset; every subject of a dataset reads all of its texts.
    pub subjects_per_dataset: usize,
    /// Channels carrying signal (the rest of the 128-channel layout is padding).
    pub channels: usize,
    /// Number of mixing components; must equal the text-embedding width.
    pub embed_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_sentences: 240,
            grammar_seed: 1,
            snr_db: 20.0,
            mixing_seed: 2,
            noise_seed: 3,
            group_mixture: [1.0; 5],
            sentiment_mixture: [1.0; 3],
            relation_mixture: [1.0; 9],
            subjects_per_dataset: 3,
            channels: ZUCO_CHANNELS,
            embed_dim: 64,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sentences < 24 {
            return Err(GlimError::config("n_sentences must be at least 24"));
        }
        if !(self.snr_db.is_finite() || self.snr_db == f64::INFINITY) {
            return Err(GlimError::config("snr_db must be finite or +inf"));
        }
        for (name, w) in [
            ("group_mixture", &self.group_mixture[..]),
            ("sentiment_mixture", &self.sentiment_mixture[..]),
            ("relation_mixture", &self.relation_mixture[..]),
        ] {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(GlimError::config(format!("{name} must be non-negative with positive mass")));
            }
        }
        if self.subjects_per_dataset == 0 || self.channels == 0 || self.channels > 128 || self.embed_dim == 0 {
            return Err(GlimError::config("subjects, channels and embed_dim must be positive (channels ≤ 128)"));
        }
        Ok(())
    }
}


/// Samples a labelled corpus of unique sentences with builtin variants.
pub fn gen_corpus(config: &WorldConfig) -> Result<Vec<SampleRecord>> {
    gen_corpus_with(config, &BuiltinParaphraser)
}

pub fn gen_corpus_with(config: &WorldConfig, paraphraser: &dyn Paraphraser) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.grammar_seed);
    let groups = WeightedIndex::new(config.group_mixture).map_err(|e| GlimError::config(e.to_string()))?;
    let sentiments = WeightedIndex::new(config.sentiment_mixture).map_err(|e| GlimError::config(e.to_string()))?;
    let relations = WeightedIndex::new(config.relation_mixture).map_err(|e| GlimError::config(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(config.n_sentences);
    let mut attempts = 0usize;
    while records.len() < config.n_sentences {
        attempts += 1;
        if attempts > config.n_sentences * 50 + 1000 {
            return Err(GlimError::config("grammar cannot produce that many unique sentences"));
        }
        let group = Group::ALL[groups.sample(&mut rng)];
        let frame = match group.corpus() {
            Corpus::MovieReview => {
                let s = Sentiment::ALL[sentiments.sample(&mut rng)];
                Frame::sample_movie(&mut rng, s)
            }
            Corpus::Biography => {
                let r = Relation::ALL[relations.sample(&mut rng)];
                Frame::sample_bio(&mut rng, r)
            }
        };
        let text = frame.render();
        if !seen.insert(text.clone()) {
            continue;
        }
        let labels = frame.labels();
        let id = records.len();
        let mut record = SampleRecord {
            id,
            stimulus_text: text,
            variants: Vec::new(),
            sentiment: labels.sentiment,
            // Biography sentences always plant a relation, but it is only
            // annotated for task-specific reading.
            relation: if group.has_relation() { labels.relation } else { None },
            corpus: group.corpus(),
            group,
        };
        let seed = derive_seed(config.grammar_seed, id as u64);
        record.variants = generate_variants(&record.stimulus_text, &VariantLabels::of(&record), paraphraser, seed)?;
        records.push(record);
    }
    Ok(records)
}

/// Maps texts to fixed-width embeddings (the frozen LM's pooled encoder
/// output in practice).
pub trait TextEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Centers and scales every embedding dimension across the corpus.
pub fn standardize(embeddings: &mut [Vec<f32>]) {
    let Some(dim) = embeddings.first().map(Vec::len) else { return };
    let n = embeddings.len() as f64;
    for d in 0..dim {
        let mean = embeddings.iter().map(|e| e[d] as f64).sum::<f64>() / n;
        let var = embeddings.iter().map(|e| (e[d] as f64 - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-20 { 1.0 / var.sqrt() } else { 0.0 };
        for e in embeddings.iter_mut() {
            e[d] = ((e[d] as f64 - mean) * scale) as f32;
        }
    }
}

/// Seconds per word while reading, by paradigm.
fn seconds_per_word(task: Option<Task>) -> f64 {
    match task {
        Some(Task::Tsr) => 0.4,
        _ => 0.3,
    }
}

pub fn valid_len_for(text: &str, task: Option<Task>) -> usize {
    let words = text.split_whitespace().count().max(1) as f64;
    let n = (words * seconds_per_word(task) * TARGET_RATE_HZ as f64).round() as usize;
    n.clamp(TARGET_RATE_HZ as usize, TRIAL_LEN)
}

/// The fixed random operators of a world.
#[derive(Clone, Debug)]
pub struct Mixing {
    pub channels: usize,
    pub embed_dim: usize,
    freq: Vec<f64>,
    phase: Vec<f64>,
    /// `embed_dim × channels`, row-major.
    patterns: Vec<f64>,
    mixing_seed: u64,
}

#[derive(Clone, Debug)]
struct SubjectEffect {
    gain: Vec<f64>,
    offset: Vec<f64>,
}

impl Mixing {
    pub fn new(mixing_seed: u64, embed_dim: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mixing_seed);
        let freq = (0..embed_dim).map(|_| rng.random_range(0.5..6.0)).collect();
        let phase = (0..embed_dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let scale = 1.0 / (embed_dim as f64).sqrt();
        let patterns = (0..embed_dim * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Mixing {
            channels,
            embed_dim,
            freq,
            phase,
            patterns,
            mixing_seed,
        }
    }

    /// Temporal warp exponent of a dataset; identity when unknown.
    fn warp(&self, dataset: Option<u32>) -> f64 {
        match dataset {
            Some(d) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.mixing_seed ^ 0xd5, d as u64));
                rng.random_range(0.8..1.25)
            }
            None => 1.0,
        }
    }

    fn envelope(task: Option<Task>, u: f64) -> f64 {
        match task {
            Some(Task::Nr) => 1.0 + 0.3 * (std::f64::consts::PI * u).sin(),
            Some(Task::Tsr) => 1.2 - 0.4 * u,
            None => 1.0,
        }
    }

    fn subject(&self, subject: Option<u32>) -> SubjectEffect {
        match subject {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.mixing_seed ^ 0x5b, s as u64));
                SubjectEffect {
                    gain: (0..self.channels).map(|_| rng.random_range(0.5..1.5)).collect(),
                    offset: (0..self.channels).map(|_| rng.random_range(-0.5..0.5)).collect(),
                }
            }
            None => SubjectEffect {
                gain: vec![1.0; self.channels],
                offset: vec![0.0; self.channels],
            },
        }
    }

    /// Noise-free signal, row-major `time_len × channels`.
    pub fn signal(&self, embedding: &[f32], prompt: &DomainPrompt, time_len: usize) -> Vec<f64> {
        assert_eq!(embedding.len(), self.embed_dim, "embedding width must match the mixing map");
        let gamma = self.warp(prompt.dataset);
        let subject = self.subject(prompt.subject);
        let c_n = self.channels;
        let mut out = vec![0.0f64; time_len * c_n];
        let denom = (time_len.max(2) - 1) as f64;
        let mut weights = vec![0.0f64; self.embed_dim];
        for t in 0..time_len {
            let u = (t as f64 / denom).powf(gamma);
            let env = Self::envelope(prompt.task, u);
            for k in 0..self.embed_dim {
                weights[k] = embedding[k] as f64 * (std::f64::consts::TAU * self.freq[k] * u + self.phase[k]).sin();
            }
            let row = &mut out[t * c_n..(t + 1) * c_n];
            for k in 0..self.embed_dim {
                let w = weights[k];
                if w == 0.0 {
                    continue;
                }
                let p = &self.patterns[k * c_n..(k + 1) * c_n];
                for c in 0..c_n {
                    row[c] += w * p[c];
                }
            }
            for c in 0..c_n {
                row[c] = row[c] * env * subject.gain[c] + subject.offset[c];
            }
        }
        out
    }

    /// Synthesizes one trial. The signal is scaled to unit power over the
    /// valid region and mixed with standard Gaussian noise so that the power
    /// ratio is `snr_db`; `+inf` is noise-free and `-inf` is pure noise.
    pub fn synth_eeg<R: Rng + ?Sized>(
        &self,
        embedding: &[f32],
        prompt: &DomainPrompt,
        time_len: usize,
        snr_db: f64,
        rng: &mut R,
        opts: &PreprocessOptions,
    ) -> Result<EegTrial> {
        if snr_db.is_nan() {
            return Err(GlimError::config("snr_db is NaN"));
        }
        let signal = self.signal(embedding, prompt, time_len);
        let power = signal.iter().map(|v| v * v).sum::<f64>() / signal.len().max(1) as f64;
        let r = 10f64.powf(snr_db / 10.0);
        let (ws, wn) = if r.is_infinite() {
            (1.0, 0.0)
        } else {
            ((r / (1.0 + r)).sqrt(), (1.0 / (1.0 + r)).sqrt())
        };
        let norm = if power > 0.0 { 1.0 / power.sqrt() } else { 0.0 };
        let samples: Vec<f32> = signal
            .iter()
            .map(|&s| {
                let n: f64 = if wn > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                (ws * s * norm + wn * n) as f32
            })
            .collect();
        let raw = RawEeg::new(samples, time_len, self.channels, SampleRate::hz(TARGET_RATE_HZ))?;
        preprocess_trial(&raw, opts)
    }
}

/// Builds a full dataset: corpus, dictionaries, and one trial per
/// (text, subject of the text's dataset).
pub fn build_world(config: &WorldConfig, embedder: &dyn TextEmbedder) -> Result<(Dataset, Vec<Vec<f32>>)> {
    let records = gen_corpus(config)?;
    build_world_from(config, records, embedder)
}

pub fn build_world_from(
    config: &WorldConfig,
    records: Vec<SampleRecord>,
    embedder: &dyn TextEmbedder,
) -> Result<(Dataset, Vec<Vec<f32>>)> {
    config.validate()?;
    let texts: Vec<String> = records.iter().map(|r| r.stimulus_text.clone()).collect();
    let mut embeddings = embedder.embed_texts(&texts)?;
    if embeddings.iter().any(|e| e.len() != config.embed_dim) {
        return Err(GlimError::config("embedder width does not match embed_dim"));
    }
    standardize(&mut embeddings);
    let mixing = Mixing::new(config.mixing_seed, config.embed_dim, config.channels);
    let mut dictionaries = PromptDictionaries::default();
    let mut samples = Vec::new();
    let opts = PreprocessOptions::default();
    for (ri, record) in records.iter().enumerate() {
        let group = record.group;
        let dataset = dictionaries.dataset_id(group.dataset_name());
        for s in 0..config.subjects_per_dataset {
            let subject = dictionaries.subject_id(&format!("{}-S{:02}", group.dataset_name(), s + 1));
            let prompt = DomainPrompt::new(group.task(), dataset, subject);
            let id = samples.len();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.noise_seed, id as u64));
            let len = valid_len_for(&record.stimulus_text, prompt.task);
            let trial = mixing.synth_eeg(&embeddings[ri], &prompt, len, config.snr_db, &mut rng, &opts)?;
            samples.push(Sample {
                id,
                record: ri,
                prompt,
                trial,
            });
        }
    }
    let dataset = Dataset {
        dictionaries,
        records,
        samples,
    };
    dataset.validate()?;
    Ok((dataset, embeddings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> WorldConfig {
        WorldConfig {
            n_sentences: n,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let a = gen_corpus(&small(24)).unwrap();
        let b = gen_corpus(&small(24)).unwrap();
        assert_eq!(a, b);
        let c = gen_corpus(&WorldConfig {
            grammar_seed: 9,
            ..small(24)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        assert!(gen_corpus(&small(23)).is_err());
    }

    #[test]
    fn records_satisfy_invariants_and_reparse() {
        for r in gen_corpus(&small(300)).unwrap() {
            r.validate(8).unwrap();
            let frame = grammar::parse(&r.stimulus_text).expect("parseable");
            let labels = grammar::extract_labels(&r.stimulus_text);
            assert_eq!(labels.corpus, Some(r.corpus));
            assert_eq!(frame.labels().corpus, Some(r.corpus));
            if r.sentiment.is_some() {
                assert_eq!(labels.sentiment, r.sentiment);
            }
            if r.relation.is_some() {
                assert_eq!(labels.relation, r.relation);
            }
        }
    }

    #[test]
    fn valid_length_follows_word_count() {
        assert_eq!(valid_len_for("one", Some(Task::Nr)), 128);
        let long = vec!["w"; 100].join(" ");
        assert_eq!(valid_len_for(&long, Some(Task::Nr)), 1280);
        assert_eq!(valid_len_for("a b c d e f g h i j", Some(Task::Nr)), 384);
    }

    fn embedding(seed: u64, dim: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
    }

    #[test]
    fn noise_free_trials_are_byte_identical() {
        let m = Mixing::new(4, 16, 8);
        let e = embedding(1, 16);
        let p = DomainPrompt::new(Task::Nr, 0, 1);
        let opts = PreprocessOptions::default();
        let a = m.synth_eeg(&e, &p, 300, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(1), &opts).unwrap();
        let b = m.synth_eeg(&e, &p, 300, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(2), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pure_noise_limit_ignores_the_text() {
        let m = Mixing::new(4, 16, 8);
        let p = DomainPrompt::new(Task::Nr, 0, 1);
        let opts = PreprocessOptions::default();
        let a = m
            .synth_eeg(&embedding(1, 16), &p, 300, f64::NEG_INFINITY, &mut ChaCha8Rng::seed_from_u64(3), &opts)
            .unwrap();
        let b = m
            .synth_eeg(&embedding(2, 16), &p, 300, f64::NEG_INFINITY, &mut ChaCha8Rng::seed_from_u64(3), &opts)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_prompt_is_identity_transform() {
        let m = Mixing::new(4, 16, 8);
        let e = embedding(1, 16);
        let s = m.signal(&e, &DomainPrompt::unknown(), 50);
        let c = m.channels;
        for t in [0usize, 17, 49] {
            let u = t as f64 / 49.0;
            for ch in 0..c {
                let mut want = 0.0;
                for k in 0..16 {
                    want += e[k] as f64 * (std::f64::consts::TAU * m.freq[k] * u + m.phase[k]).sin() * m.patterns[k * c + ch];
                }
                assert!((s[t * c + ch] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn domain_transforms_are_invertible() {
        let m = Mixing::new(4, 16, 8);
        for s in 0..20 {
            assert!(m.subject(Some(s)).gain.iter().all(|g| *g > 0.0));
            assert!(m.warp(Some(s)) > 0.0);
        }
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let mut e: Vec<Vec<f32>> = (0..50).map(|i| embedding(i, 4).iter().map(|v| v * 3.0 + 1.0).collect()).collect();
        standardize(&mut e);
        for d in 0..4 {
            let mean: f64 = e.iter().map(|v| v[d] as f64).sum::<f64>() / 50.0;
            let var: f64 = e.iter().map(|v| (v[d] as f64 - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
        }
    }
}
