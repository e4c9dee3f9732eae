//! Dataset container: `manifest.json` plus `trials.f32le`.
//!
//! The manifest is UTF-8 JSON holding dictionaries, records and per-sample
//! metadata. Each sample points at a byte offset in `trials.f32le`, where its
//! padded 1280 × 128 matrix is stored row-major as little-endian `f32`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DomainPrompt, EegTrial, PromptDictionaries, Sample, SampleRate, SampleRecord, TRIAL_CHANNELS, TRIAL_LEN};
use crate::error::{GlimError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_FILE: &str = "trials.f32le";
pub const FORMAT_NAME: &str = "glim-dataset";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes per stored trial.
pub const TRIAL_BYTES: u64 = (TRIAL_LEN * TRIAL_CHANNELS * 4) as u64;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    trial_shape: [usize; 2],
    dictionaries: PromptDictionaries,
    records: Vec<SampleRecord>,
    samples: Vec<SampleEntry>,
}

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    id: usize,
    record: usize,
    prompt: DomainPrompt,
    offset: u64,
    valid_time_len: usize,
    valid_channels: usize,
    sample_rate: SampleRate,
}

pub fn write_container(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = BufWriter::new(File::create(dir.join(TRIALS_FILE))?);
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        for v in s.trial.to_padded() {
            blob.write_all(&v.to_le_bytes())?;
        }
        samples.push(SampleEntry {
            id: s.id,
            record: s.record,
            prompt: s.prompt,
            offset: i as u64 * TRIAL_BYTES,
            valid_time_len: s.trial.valid_time_len(),
            valid_channels: s.trial.valid_channels(),
            sample_rate: s.trial.sample_rate(),
        });
    }
    blob.flush()?;
    let manifest = Manifest {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        trial_shape: [TRIAL_LEN, TRIAL_CHANNELS],
        dictionaries: dataset.dictionaries.clone(),
        records: dataset.records.clone(),
        samples,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| GlimError::config(format!("manifest serialization: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut current = 1;
    for (i, &b) in text.iter().enumerate() {
        if current == line {
            return (i + column.saturating_sub(1)) as u64;
        }
        if b == b'\n' {
            current += 1;
        }
    }
    text.len() as u64
}

fn field_offset(text: &[u8], field: &str) -> u64 {
    let needle = format!("\"{field}\"");
    text.windows(needle.len())
        .position(|w| w == needle.as_bytes())
        .unwrap_or(0) as u64
}

pub fn read_container(dir: &Path) -> Result<Dataset> {
    let text = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| GlimError::format(byte_offset(&text, e.line(), e.column()), format!("manifest: {e}")))?;
    if manifest.format != FORMAT_NAME {
        return Err(GlimError::format(
            field_offset(&text, "format"),
            format!("unexpected format tag {:?}", manifest.format),
        ));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(GlimError::format(
            field_offset(&text, "version"),
            format!("unsupported container version {}", manifest.version),
        ));
    }
    if manifest.trial_shape != [TRIAL_LEN, TRIAL_CHANNELS] {
        return Err(GlimError::format(
            field_offset(&text, "trial_shape"),
            format!("trial shape {:?} is not {TRIAL_LEN}×{TRIAL_CHANNELS}", manifest.trial_shape),
        ));
    }

    let mut blob = File::open(dir.join(TRIALS_FILE))?;
    let blob_len = blob.metadata()?.len();
    let mut buf = vec![0u8; TRIAL_BYTES as usize];
    let mut floats = vec![0f32; TRIAL_LEN * TRIAL_CHANNELS];
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in manifest.samples {
        let end = entry.offset.checked_add(TRIAL_BYTES);
        if entry.offset % 4 != 0 || end.is_none_or(|e| e > blob_len) {
            return Err(GlimError::format(
                entry.offset,
                format!("sample {}: trial blob out of range (blob is {blob_len} bytes)", entry.id),
            ));
        }
        if entry.valid_time_len > TRIAL_LEN || entry.valid_channels > TRIAL_CHANNELS {
            return Err(GlimError::format(
                field_offset(&text, "valid_time_len"),
                format!(
                    "sample {}: validity {}×{} exceeds the trial shape",
                    entry.id, entry.valid_time_len, entry.valid_channels
                ),
            ));
        }
        if entry.sample_rate.num == 0 || entry.sample_rate.den == 0 {
            return Err(GlimError::format(
                field_offset(&text, "sample_rate"),
                format!("sample {}: zero sample rate", entry.id),
            ));
        }
        blob.seek(SeekFrom::Start(entry.offset))?;
        blob.read_exact(&mut buf)?;
        for (f, b) in floats.iter_mut().zip(buf.chunks_exact(4)) {
            *f = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        if let Some(i) = floats.iter().position(|v| !v.is_finite()) {
            return Err(GlimError::format(
                entry.offset + 4 * i as u64,
                format!("sample {}: non-finite value", entry.id),
            ));
        }
        let trial = EegTrial::from_padded(&floats, entry.valid_time_len, entry.valid_channels, entry.sample_rate)
            .map_err(|e| match e {
                GlimError::Format { offset, msg } => GlimError::format(entry.offset + offset, msg),
                other => other,
            })?;
        samples.push(Sample {
            id: entry.id,
            record: entry.record,
            prompt: entry.prompt,
            trial,
        });
    }
    let dataset = Dataset {
        dictionaries: manifest.dictionaries,
        records: manifest.records,
        samples,
    };
    dataset
        .validate()
        .map_err(|e| GlimError::format(field_offset(&text, "samples"), e.to_string()))?;
    Ok(dataset)
}
