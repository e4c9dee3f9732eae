//! Text-disjoint train/val/test split.
//!
//! Stimulus texts that were presented under more than one provenance
//! combination go to train wholesale. The remaining texts are stratified by
//! evaluation group and allocated by the configured ratios, ordered inside
//! each stratum by a seeded SHA-256 of the text.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DomainPrompt, Group};
use crate::error::{GlimError, Result};

/// Which provenance fields make two presentations of a text "different".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKey {
    /// A text read under several (paradigm, dataset) combinations overlaps.
    /// Several subjects reading it under one combination does not.
    ParadigmDataset,
    /// Any second (subject, paradigm, dataset) combination counts as overlap.
    SubjectParadigmDataset,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    /// train : val : test
    pub ratios: [u32; 3],
    pub overlap: OverlapKey,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 42,
            ratios: [8, 1, 1],
            overlap: OverlapKey::ParadigmDataset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mut s = format!("seed={}\n", self.seed);
            for id in ids {
                s.push_str(&id.to_string());
                s.push('\n');
            }
            fs::write(dir.join(format!("{name}.txt")), s)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut seed = None;
        let mut parts: Vec<Vec<usize>> = Vec::new();
        for name in ["train", "val", "test"] {
            let text = fs::read_to_string(dir.join(format!("{name}.txt")))?;
            let mut offset = 0u64;
            let mut ids = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 {
                    let s: u64 = line
                        .strip_prefix("seed=")
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| GlimError::format(0, format!("{name}.txt: missing seed header")))?;
                    if seed.is_some_and(|prev| prev != s) {
                        return Err(GlimError::format(0, format!("{name}.txt: seed disagrees with other splits")));
                    }
                    seed = Some(s);
                } else if !line.trim().is_empty() {
                    ids.push(line.trim().parse().map_err(|_| {
                        GlimError::format(offset, format!("{name}.txt: bad sample id {line:?}"))
                    })?);
                }
                offset += line.len() as u64 + 1;
            }
            parts.push(ids);
        }
        let test = parts.pop().unwrap_or_default();
        let val = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Ok(SplitManifest {
            seed: seed.unwrap_or(0),
            train,
            val,
            test,
        })
    }
}

fn provenance_key(prompt: &DomainPrompt, key: OverlapKey) -> (Option<u8>, Option<u32>, Option<u32>) {
    let task = prompt.task.map(|t| t as u8);
    match key {
        OverlapKey::ParadigmDataset => (task, prompt.dataset, None),
        OverlapKey::SubjectParadigmDataset => (task, prompt.dataset, prompt.subject),
    }
}

fn text_rank(seed: u64, text: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn split_dataset(dataset: &Dataset, cfg: &SplitConfig) -> Result<SplitManifest> {
    let total: u64 = cfg.ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(GlimError::config("split ratios must sum to a positive whole"));
    }
    if dataset.samples.is_empty() {
        return Err(GlimError::config("cannot split an empty dataset"));
    }

    struct TextInfo {
        samples: Vec<usize>,
        provenances: BTreeSet<(Option<u8>, Option<u32>, Option<u32>)>,
        group: Group,
    }
    let mut texts: BTreeMap<&str, TextInfo> = BTreeMap::new();
    for s in &dataset.samples {
        let rec = dataset
            .records
            .get(s.record)
            .ok_or_else(|| GlimError::config(format!("sample {} references missing record", s.id)))?;
        let info = texts.entry(rec.stimulus_text.as_str()).or_insert_with(|| TextInfo {
            samples: Vec::new(),
            provenances: BTreeSet::new(),
            group: rec.group,
        });
        info.samples.push(s.id);
        info.provenances.insert(provenance_key(&s.prompt, cfg.overlap));
        info.group = info.group.min(rec.group);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut strata: BTreeMap<Group, Vec<(u64, &str)>> = BTreeMap::new();
    for (text, info) in &texts {
        if info.provenances.len() > 1 {
            train.extend_from_slice(&info.samples);
        } else {
            strata.entry(info.group).or_default().push((text_rank(cfg.seed, text), text));
        }
    }

    for (_, mut members) in strata {
        members.sort_unstable();
        let n = members.len() as u64;
        let n_test = ((n * cfg.ratios[2] as u64) as f64 / total as f64).round() as usize;
        let n_val = ((n * cfg.ratios[1] as u64) as f64 / total as f64).round() as usize;
        for (i, (_, text)) in members.iter().enumerate() {
            let ids = &texts[text].samples;
            if i < n_test {
                test.extend_from_slice(ids);
            } else if i < n_test + n_val {
                val.extend_from_slice(ids);
            } else {
                train.extend_from_slice(ids);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitManifest {
        seed: cfg.seed,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Corpus, EegTrial, Sample, SampleRate, SampleRecord, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(id: usize, text: &str) -> SampleRecord {
        SampleRecord {
            id,
            stimulus_text: text.to_string(),
            variants: Vec::new(),
            sentiment: None,
            relation: None,
            corpus: Corpus::Biography,
            group: Group::II,
        }
    }

    fn sample(id: usize, record: usize, task: Task, dataset: u32, subject: u32) -> Sample {
        Sample {
            id,
            record,
            prompt: DomainPrompt::new(task, dataset, subject),
            trial: EegTrial::from_valid(vec![], 0, 0, SampleRate::hz(128)).unwrap(),
        }
    }

    fn texts_of(ds: &Dataset, ids: &[usize]) -> BTreeSet<String> {
        ids.iter()
            .map(|&i| ds.records[ds.samples[i].record].stimulus_text.clone())
            .collect()
    }

    #[test]
    fn ten_unique_texts_split_eight_one_one() {
        let mut ds = Dataset::default();
        for i in 0..10 {
            ds.records.push(record(i, &format!("sentence number {i}")));
            ds.samples.push(sample(i, i, Task::Nr, 0, 0));
        }
        let m = split_dataset(&ds, &SplitConfig::default()).unwrap();
        assert_eq!(m.counts(), (8, 1, 1));
    }

    fn twelve_subject_corpus() -> Dataset {
        let mut ds = Dataset::default();
        for i in 0..30 {
            ds.records.push(record(i, &format!("text {i}")));
        }
        let mut id = 0;
        for subj in 0..12 {
            ds.samples.push(sample(id, 0, Task::Nr, 0, subj));
            id += 1;
        }
        for r in 1..30 {
            ds.samples.push(sample(id, r, Task::Nr, 0, 0));
            id += 1;
        }
        ds
    }

    #[test]
    fn text_read_by_twelve_subjects_goes_to_train_under_subject_key() {
        let ds = twelve_subject_corpus();
        let cfg = SplitConfig {
            overlap: OverlapKey::SubjectParadigmDataset,
            ..SplitConfig::default()
        };
        let m = split_dataset(&ds, &cfg).unwrap();
        for id in 0..12 {
            assert!(m.train.contains(&id));
        }
    }

    #[test]
    fn subjects_of_one_text_stay_together_under_default_key() {
        let ds = twelve_subject_corpus();
        for seed in 0..20 {
            let m = split_dataset(&ds, &SplitConfig { seed, ..SplitConfig::default() }).unwrap();
            let in_split = |ids: &Vec<usize>| (0..12).filter(|i| ids.contains(i)).count();
            let counts = [in_split(&m.train), in_split(&m.val), in_split(&m.test)];
            assert!(counts.contains(&12), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn cross_paradigm_texts_go_to_train() {
        let mut ds = Dataset::default();
        for i in 0..20 {
            ds.records.push(record(i, &format!("t{i}")));
            ds.samples.push(sample(ds.samples.len(), i, Task::Nr, 0, 0));
        }
        for i in 0..20 {
            ds.samples.push(sample(ds.samples.len(), i, Task::Tsr, 0, 0));
        }
        let m = split_dataset(&ds, &SplitConfig::default()).unwrap();
        assert_eq!(m.counts(), (40, 0, 0));
    }

    #[test]
    fn randomized_corpora_are_text_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..100 {
            let mut ds = Dataset::default();
            let n_texts = rng.random_range(5..60);
            for i in 0..n_texts {
                // forced duplicates: several records share a text string
                let t = rng.random_range(0..n_texts.max(2) * 3 / 4);
                let mut r = record(i, &format!("text {t}"));
                r.group = Group::ALL[rng.random_range(0..5)];
                ds.records.push(r);
            }
            let n_samples = rng.random_range(10..200);
            for id in 0..n_samples {
                let task = if rng.random_bool(0.2) { Task::Tsr } else { Task::Nr };
                ds.samples.push(sample(
                    id,
                    rng.random_range(0..n_texts),
                    task,
                    rng.random_range(0..2),
                    rng.random_range(0..6),
                ));
            }
            let overlap = if round % 2 == 0 {
                OverlapKey::ParadigmDataset
            } else {
                OverlapKey::SubjectParadigmDataset
            };
            let m = split_dataset(&ds, &SplitConfig { seed: round, ratios: [8, 1, 1], overlap }).unwrap();
            let (a, b, c) = (texts_of(&ds, &m.train), texts_of(&ds, &m.val), texts_of(&ds, &m.test));
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            assert_eq!(m.train.len() + m.val.len() + m.test.len(), n_samples);
        }
    }

    #[test]
    fn reproducible_for_a_seed_and_sensitive_to_it() {
        let mut ds = Dataset::default();
        for i in 0..200 {
            ds.records.push(record(i, &format!("s{i}")));
            ds.samples.push(sample(i, i, Task::Nr, 0, 0));
        }
        let a = split_dataset(&ds, &SplitConfig::default()).unwrap();
        let b = split_dataset(&ds, &SplitConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ds, &SplitConfig { seed: 7, ..SplitConfig::default() }).unwrap();
        assert_ne!(a.test, c.test);
        assert_eq!(a.counts(), (160, 20, 20));
    }

    #[test]
    fn zero_ratios_are_a_config_error() {
        let mut ds = Dataset::default();
        ds.records.push(record(0, "x"));
        ds.samples.push(sample(0, 0, Task::Nr, 0, 0));
        let cfg = SplitConfig { ratios: [0, 0, 0], ..SplitConfig::default() };
        assert!(matches!(split_dataset(&ds, &cfg), Err(GlimError::Config(_))));
    }

    #[test]
    fn split_files_round_trip() {
        let m = SplitManifest { seed: 9, train: vec![0, 3], val: vec![1], test: vec![2] };
        let dir = tempfile::tempdir().unwrap();
        m.write_dir(dir.path()).unwrap();
        let first = fs::read_to_string(dir.path().join("train.txt")).unwrap();
        assert!(first.starts_with("seed=9\n"));
        assert_eq!(SplitManifest::read_dir(dir.path()).unwrap(), m);
    }
}
