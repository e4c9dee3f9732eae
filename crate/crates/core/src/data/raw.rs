//! Import of raw recordings described by a JSON manifest.
//!
//! ```json
//! {"samples": [{"text": "...", "group": "I", "subject": "ZAB",
//!               "rate_hz": 500, "channels": 104, "eeg": "t0.f32",
//!               "sentiment": "positive"}]}
//! ```
//!
//! `eeg` points at little-endian f32 values, time-major, relative to the
//! manifest. Records are keyed by (text, group); variants come from the
//! builtin paraphraser unless listed explicitly.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::preprocess::{preprocess_trial, PreprocessOptions, RawEeg};
use super::{Dataset, DomainPrompt, Group, PromptDictionaries, Relation, Sample, SampleRate, SampleRecord, Sentiment, TextVariant};
use crate::error::{GlimError, Result};
use crate::mtv::{generate_variants, BuiltinParaphraser, VariantLabels};
use crate::synth::derive_seed;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    pub samples: Vec<RawSample>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSample {
    pub text: String,
    pub group: Group,
    pub subject: String,
    pub rate_hz: u32,
    #[serde(default = "one")]
    pub rate_den: u32,
    pub channels: usize,
    pub eeg: String,
    #[serde(default)]
    pub sentiment: Option<Sentiment>,
    #[serde(default)]
    pub relation: Option<Relation>,
    #[serde(default)]
    pub variants: Option<Vec<TextVariant>>,
}

fn one() -> u32 {
    1
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(GlimError::format(
            bytes.len() as u64 - bytes.len() as u64 % 4,
            format!("{}: length is not a multiple of 4", path.display()),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn prepare(manifest: &Path, opts: &PreprocessOptions, variant_seed: u64) -> Result<Dataset> {
    let bytes = std::fs::read(manifest)?;
    let raw: RawManifest = serde_json::from_slice(&bytes)
        .map_err(|e| GlimError::format(e.column() as u64, format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut dictionaries = PromptDictionaries::default();
    let mut records: Vec<SampleRecord> = Vec::new();
    let mut by_key: HashMap<(String, Group), usize> = HashMap::new();
    let mut samples = Vec::new();
    for (i, s) in raw.samples.into_iter().enumerate() {
        let key = (s.text.clone(), s.group);
        let record = match by_key.get(&key) {
            Some(&r) => r,
            None => {
                let id = records.len();
                let mut rec = SampleRecord {
                    id,
                    stimulus_text: s.text.clone(),
                    variants: Vec::new(),
                    sentiment: s.sentiment,
                    relation: s.relation,
                    corpus: s.group.corpus(),
                    group: s.group,
                };
                rec.variants = match s.variants {
                    Some(v) => v,
                    None => generate_variants(
                        &rec.stimulus_text,
                        &VariantLabels::of(&rec),
                        &BuiltinParaphraser,
                        derive_seed(variant_seed, id as u64),
                    )?,
                };
                records.push(rec);
                by_key.insert(key, id);
                id
            }
        };
        let values = read_f32(&base.join(&s.eeg))?;
        if s.channels == 0 || values.len() % s.channels != 0 {
            return Err(GlimError::config(format!("sample {i}: {} values do not fill {} channels", values.len(), s.channels)));
        }
        let rate = SampleRate {
            num: s.rate_hz,
            den: s.rate_den,
        };
        let time_len = values.len() / s.channels;
        let rawe = RawEeg::new(values, time_len, s.channels, rate)?;
        let trial = preprocess_trial(&rawe, opts)?;
        let dataset = dictionaries.dataset_id(s.group.dataset_name());
        let subject = dictionaries.subject_id(&s.subject);
        samples.push(Sample {
            id: samples.len(),
            record,
            prompt: DomainPrompt::new(s.group.task(), dataset, subject),
            trial,
        });
    }
    let dataset = Dataset {
        dictionaries,
        records,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}
