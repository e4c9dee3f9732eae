//! Persistent domain types: EEG trials, domain prompts, stimulus records and
//! the dataset that ties recordings to their stimulus texts.

pub mod container;
pub mod preprocess;
pub mod raw;
pub mod split;

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{GlimError, Result};
use crate::mtv::VariantType;

/// Time points in a preprocessed trial (10 s at 128 Hz).
pub const TRIAL_LEN: usize = 1280;
/// Channels in a preprocessed trial.
pub const TRIAL_CHANNELS: usize = 128;
/// Sampling rate of preprocessed trials.
pub const TARGET_RATE_HZ: u32 = 128;
/// Channel count of ZuCo-format recordings once the all-NaN channel is dropped.
pub const ZUCO_CHANNELS: usize = 104;

/// Sampling rate as an exact rational `num / den` Hz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRate {
    pub num: u32,
    pub den: u32,
}

impl SampleRate {
    pub const fn hz(hz: u32) -> Self {
        SampleRate { num: hz, den: 1 }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// One sentence-level EEG segment.
///
/// The logical shape is always `TRIAL_LEN × TRIAL_CHANNELS`. Only the valid
/// region is stored; every sample outside it reads as zero, so the padding
/// invariant holds by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EegTrial {
    samples: Vec<f32>,
    sample_rate: SampleRate,
    valid_time_len: usize,
    valid_channels: usize,
}

impl EegTrial {
    /// Builds a trial from its valid region (row-major, `valid_time_len × valid_channels`).
    pub fn from_valid(
        samples: Vec<f32>,
        valid_time_len: usize,
        valid_channels: usize,
        sample_rate: SampleRate,
    ) -> Result<Self> {
        if valid_time_len > TRIAL_LEN {
            return Err(GlimError::DurationOverflow {
                time_points: valid_time_len,
                limit: TRIAL_LEN,
            });
        }
        if valid_channels > TRIAL_CHANNELS {
            return Err(GlimError::config(format!(
                "{valid_channels} channels exceed the {TRIAL_CHANNELS}-channel layout"
            )));
        }
        if samples.len() != valid_time_len * valid_channels {
            return Err(GlimError::config(format!(
                "valid region holds {} values, expected {valid_time_len}×{valid_channels}",
                samples.len()
            )));
        }
        Ok(EegTrial {
            samples,
            sample_rate,
            valid_time_len,
            valid_channels,
        })
    }

    /// Builds a trial from a full padded `TRIAL_LEN × TRIAL_CHANNELS` matrix,
    /// rejecting nonzero values in the padded region.
    pub fn from_padded(
        padded: &[f32],
        valid_time_len: usize,
        valid_channels: usize,
        sample_rate: SampleRate,
    ) -> Result<Self> {
        if padded.len() != TRIAL_LEN * TRIAL_CHANNELS {
            return Err(GlimError::config(format!(
                "padded trial holds {} values, expected {}",
                padded.len(),
                TRIAL_LEN * TRIAL_CHANNELS
            )));
        }
        if valid_time_len > TRIAL_LEN || valid_channels > TRIAL_CHANNELS {
            return Err(GlimError::config("validity exceeds trial shape"));
        }
        let mut samples = Vec::with_capacity(valid_time_len * valid_channels);
        for t in 0..TRIAL_LEN {
            let row = &padded[t * TRIAL_CHANNELS..(t + 1) * TRIAL_CHANNELS];
            for (c, &v) in row.iter().enumerate() {
                if t < valid_time_len && c < valid_channels {
                    samples.push(v);
                } else if v != 0.0 {
                    return Err(GlimError::format(
                        ((t * TRIAL_CHANNELS + c) * 4) as u64,
                        format!("nonzero value in padded region at time {t}, channel {c}"),
                    ));
                }
            }
        }
        Self::from_valid(samples, valid_time_len, valid_channels, sample_rate)
    }

    pub fn shape(&self) -> (usize, usize) {
        (TRIAL_LEN, TRIAL_CHANNELS)
    }

    pub fn valid_time_len(&self) -> usize {
        self.valid_time_len
    }

    pub fn valid_channels(&self) -> usize {
        self.valid_channels
    }

    pub fn sample_rate(&self) -> SampleRate {
        self.sample_rate
    }

    /// Row-major valid region.
    pub fn valid_region(&self) -> &[f32] {
        &self.samples
    }

    pub fn get(&self, t: usize, c: usize) -> f32 {
        if t < self.valid_time_len && c < self.valid_channels {
            self.samples[t * self.valid_channels + c]
        } else {
            0.0
        }
    }

    /// Materializes the padded `TRIAL_LEN × TRIAL_CHANNELS` matrix.
    pub fn to_padded(&self) -> Vec<f32> {
        self.to_padded_len(TRIAL_LEN)
    }

    /// Materializes the first `time_len` rows (zero beyond the valid region),
    /// with `TRIAL_CHANNELS` columns. `time_len` may exceed `TRIAL_LEN`.
    pub fn to_padded_len(&self, time_len: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; time_len * TRIAL_CHANNELS];
        for t in 0..self.valid_time_len.min(time_len) {
            let src = &self.samples[t * self.valid_channels..(t + 1) * self.valid_channels];
            out[t * TRIAL_CHANNELS..t * TRIAL_CHANNELS + self.valid_channels].copy_from_slice(src);
        }
        out
    }

    /// Same validity, new values in the valid region.
    pub fn with_valid_region(&self, samples: Vec<f32>) -> Result<Self> {
        Self::from_valid(
            samples,
            self.valid_time_len,
            self.valid_channels,
            self.sample_rate,
        )
    }
}

/// Reading paradigm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "TSR")]
    Tsr,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Nr, Task::Tsr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Nr => "NR",
            Task::Tsr => "TSR",
        }
    }
}

/// Condition triple `(task, dataset, subject)`. `None` is the UNKNOWN token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainPrompt {
    pub task: Option<Task>,
    pub dataset: Option<u32>,
    pub subject: Option<u32>,
}

impl DomainPrompt {
    pub fn new(task: Task, dataset: u32, subject: u32) -> Self {
        DomainPrompt {
            task: Some(task),
            dataset: Some(dataset),
            subject: Some(subject),
        }
    }

    pub fn unknown() -> Self {
        DomainPrompt::default()
    }
}

/// Append-only name dictionaries backing the dataset and subject prompt slots.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDictionaries {
    pub datasets: Vec<String>,
    pub subjects: Vec<String>,
}

impl PromptDictionaries {
    pub fn dataset_id(&mut self, name: &str) -> u32 {
        intern(&mut self.datasets, name)
    }

    pub fn subject_id(&mut self, name: &str) -> u32 {
        intern(&mut self.subjects, name)
    }

    /// Checks that every known slot indexes a dictionary entry.
    pub fn check(&self, prompt: &DomainPrompt) -> Result<()> {
        if let Some(d) = prompt.dataset {
            if d as usize >= self.datasets.len() {
                return Err(GlimError::config(format!("dataset index {d} not in dictionary")));
            }
        }
        if let Some(s) = prompt.subject {
            if s as usize >= self.subjects.len() {
                return Err(GlimError::config(format!("subject index {s} not in dictionary")));
            }
        }
        Ok(())
    }
}

fn intern(names: &mut Vec<String>, name: &str) -> u32 {
    match names.iter().position(|n| n == name) {
        Some(i) => i as u32,
        None => {
            names.push(name.to_string());
            (names.len() - 1) as u32
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Neutral,
    Negative,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Neutral, Sentiment::Negative, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Neutral => "neutral",
            Sentiment::Negative => "negative",
            Sentiment::Positive => "positive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Awarding,
    Education,
    Employment,
    Foundation,
    JobTitle,
    Nationality,
    PoliticalAffiliation,
    Visit,
    Marriage,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::Awarding,
        Relation::Education,
        Relation::Employment,
        Relation::Foundation,
        Relation::JobTitle,
        Relation::Nationality,
        Relation::PoliticalAffiliation,
        Relation::Visit,
        Relation::Marriage,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Awarding => "awarding",
            Relation::Education => "education",
            Relation::Employment => "employment",
            Relation::Foundation => "foundation",
            Relation::JobTitle => "job title",
            Relation::Nationality => "nationality",
            Relation::PoliticalAffiliation => "political affiliation",
            Relation::Visit => "visit",
            Relation::Marriage => "marriage",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    MovieReview,
    Biography,
}

impl Corpus {
    pub const ALL: [Corpus; 2] = [Corpus::MovieReview, Corpus::Biography];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Corpus::MovieReview => "movie review",
            Corpus::Biography => "biography",
        }
    }
}

/// Evaluation group: a fixed (dataset, paradigm, corpus) combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    I,
    II,
    III,
    IV,
    V,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::I, Group::II, Group::III, Group::IV, Group::V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn dataset_name(self) -> &'static str {
        match self {
            Group::I | Group::II | Group::III => "ZuCo1",
            Group::IV | Group::V => "ZuCo2",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Group::III | Group::V => Task::Tsr,
            _ => Task::Nr,
        }
    }

    pub fn corpus(self) -> Corpus {
        match self {
            Group::I => Corpus::MovieReview,
            _ => Corpus::Biography,
        }
    }

    pub fn has_sentiment(self) -> bool {
        self == Group::I
    }

    /// Relation labels exist only for task-specific reading of the Wiki corpus.
    pub fn has_relation(self) -> bool {
        self.task() == Task::Tsr
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::I => "I",
            Group::II => "II",
            Group::III => "III",
            Group::IV => "IV",
            Group::V => "V",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVariant {
    pub tag: VariantType,
    pub text: String,
}

/// A stimulus sentence with its paraphrased variants and semantic labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub stimulus_text: String,
    pub variants: Vec<TextVariant>,
    pub sentiment: Option<Sentiment>,
    pub relation: Option<Relation>,
    pub corpus: Corpus,
    pub group: Group,
}

impl SampleRecord {
    /// Checks the label invariants and the variant count against `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.relation.is_some() != self.group.has_relation() {
            return Err(GlimError::config(format!(
                "record {}: relation label must be present iff group is task-specific Wiki",
                self.id
            )));
        }
        if self.corpus != self.group.corpus() {
            return Err(GlimError::config(format!(
                "record {}: corpus {:?} inconsistent with group {}",
                self.id, self.corpus, self.group
            )));
        }
        if self.variants.len() != k {
            return Err(GlimError::config(format!(
                "record {}: {} variants, expected {k}",
                self.id,
                self.variants.len()
            )));
        }
        Ok(())
    }
}

/// One recording: a trial of a subject reading a stimulus under a paradigm.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// Index into `Dataset::records`.
    pub record: usize,
    /// Provenance `(task, dataset, subject)`; all slots known.
    pub prompt: DomainPrompt,
    pub trial: EegTrial,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub dictionaries: PromptDictionaries,
    pub records: Vec<SampleRecord>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn record_of(&self, sample: &Sample) -> &SampleRecord {
        &self.records[sample.record]
    }

    /// Sample ids equal their index (checked by `validate`).
    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    /// Structural checks: ids, record references, prompt slots.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.id != i {
                return Err(GlimError::config(format!("record at index {i} has id {}", r.id)));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(GlimError::config(format!("sample at index {i} has id {}", s.id)));
            }
            if s.record >= self.records.len() {
                return Err(GlimError::config(format!(
                    "sample {} references missing record {}",
                    s.id, s.record
                )));
            }
            if s.prompt.task.is_none() || s.prompt.dataset.is_none() || s.prompt.subject.is_none() {
                return Err(GlimError::config(format!("sample {} has incomplete provenance", s.id)));
            }
            self.dictionaries.check(&s.prompt)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_reads_as_zero() {
        let trial = EegTrial::from_valid(vec![1.0; 6], 3, 2, SampleRate::hz(128)).unwrap();
        assert_eq!(trial.shape(), (TRIAL_LEN, TRIAL_CHANNELS));
        assert_eq!(trial.get(2, 1), 1.0);
        assert_eq!(trial.get(3, 0), 0.0);
        assert_eq!(trial.get(0, 2), 0.0);
        let padded = trial.to_padded();
        assert_eq!(padded.iter().filter(|&&v| v != 0.0).count(), 6);
        let back = EegTrial::from_padded(&padded, 3, 2, SampleRate::hz(128)).unwrap();
        assert_eq!(back, trial);
    }

    #[test]
    fn padded_region_must_be_zero() {
        let mut padded = vec![0.0f32; TRIAL_LEN * TRIAL_CHANNELS];
        padded[5 * TRIAL_CHANNELS] = 1.0;
        let err = EegTrial::from_padded(&padded, 4, 4, SampleRate::hz(128)).unwrap_err();
        assert!(matches!(err, GlimError::Format { .. }));
    }

    #[test]
    fn dictionaries_are_append_only() {
        let mut d = PromptDictionaries::default();
        assert_eq!(d.subject_id("ZAB"), 0);
        assert_eq!(d.subject_id("ZDM"), 1);
        assert_eq!(d.subject_id("ZAB"), 0);
        assert!(d.check(&DomainPrompt { task: None, dataset: None, subject: Some(1) }).is_ok());
        assert!(d.check(&DomainPrompt { task: None, dataset: Some(0), subject: None }).is_err());
    }

    #[test]
    fn group_taxonomy() {
        assert_eq!(Group::I.corpus(), Corpus::MovieReview);
        assert!(Group::III.has_relation() && Group::V.has_relation());
        assert!(!Group::II.has_relation() && !Group::IV.has_relation());
        assert_eq!(Group::IV.dataset_name(), "ZuCo2");
    }
}
