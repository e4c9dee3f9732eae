//! Unified trial preprocessing: resample the time axis to 128 Hz, pad to
//! 1280 × 128, optionally z-score each channel over its valid region.
//!
//! Resampling is plain linear interpolation evaluated at exact rational
//! positions, so the output is bit-identical across runs and platforms.
//! No anti-aliasing filter is applied.

use serde::{Deserialize, Serialize};

use super::{EegTrial, SampleRate, TARGET_RATE_HZ, TRIAL_CHANNELS, TRIAL_LEN};
use crate::error::{GlimError, Result};

/// A raw recording, row-major `time_len × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEeg {
    pub samples: Vec<f32>,
    pub time_len: usize,
    pub channels: usize,
    pub rate: SampleRate,
}

impl RawEeg {
    pub fn new(samples: Vec<f32>, time_len: usize, channels: usize, rate: SampleRate) -> Result<Self> {
        if samples.len() != time_len * channels {
            return Err(GlimError::config(format!(
                "raw recording holds {} values, expected {time_len}×{channels}",
                samples.len()
            )));
        }
        Ok(RawEeg {
            samples,
            time_len,
            channels,
            rate,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKernel {
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub kernel: ResampleKernel,
    /// Per-channel standardization over the valid region.
    pub zscore: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            kernel: ResampleKernel::Linear,
            zscore: true,
        }
    }
}

/// Number of output points when resampling `n_in` points from `rate` to 128 Hz:
/// every output instant `k / 128` s that lies within the input span.
pub fn resampled_len(n_in: usize, rate: SampleRate) -> usize {
    if n_in == 0 {
        return 0;
    }
    let num = rate.num as u128;
    let den = rate.den as u128;
    ((n_in as u128 - 1) * TARGET_RATE_HZ as u128 * den / num) as usize + 1
}

pub fn preprocess_trial(raw: &RawEeg, opts: &PreprocessOptions) -> Result<EegTrial> {
    let rate = raw.rate;
    if rate.num == 0 || rate.den == 0 {
        return Err(GlimError::config("sample rate must be positive"));
    }
    if (rate.num as u64) < TARGET_RATE_HZ as u64 * rate.den as u64 {
        return Err(GlimError::config(format!(
            "source rate {} Hz is below the {TARGET_RATE_HZ} Hz target",
            rate.as_f64()
        )));
    }
    if raw.channels > TRIAL_CHANNELS {
        return Err(GlimError::config(format!(
            "{} channels exceed the {TRIAL_CHANNELS}-channel layout",
            raw.channels
        )));
    }
    if raw.samples.len() != raw.time_len * raw.channels {
        return Err(GlimError::config("raw sample count does not match its shape"));
    }
    if let Some(i) = raw.samples.iter().position(|v| v.is_nan()) {
        return Err(GlimError::NanInput {
            time: i / raw.channels.max(1),
            channel: i % raw.channels.max(1),
        });
    }

    let out_len = resampled_len(raw.time_len, rate);
    if out_len > TRIAL_LEN {
        return Err(GlimError::DurationOverflow {
            time_points: out_len,
            limit: TRIAL_LEN,
        });
    }

    let channels = raw.channels;
    let step_num = rate.num as u128;
    let step_den = TARGET_RATE_HZ as u128 * rate.den as u128;
    let mut out = vec![0.0f32; out_len * channels];
    match opts.kernel {
        ResampleKernel::Linear => {
            for k in 0..out_len {
                let pos = k as u128 * step_num;
                let i = (pos / step_den) as usize;
                let rem = pos % step_den;
                let row = &mut out[k * channels..(k + 1) * channels];
                if rem == 0 {
                    row.copy_from_slice(&raw.samples[i * channels..(i + 1) * channels]);
                } else {
                    let frac = rem as f64 / step_den as f64;
                    let a = &raw.samples[i * channels..(i + 1) * channels];
                    let b = &raw.samples[(i + 1) * channels..(i + 2) * channels];
                    for c in 0..channels {
                        row[c] = (a[c] as f64 * (1.0 - frac) + b[c] as f64 * frac) as f32;
                    }
                }
            }
        }
    }

    if opts.zscore {
        zscore_channels(&mut out, out_len, channels);
    }
    EegTrial::from_valid(out, out_len, channels, SampleRate::hz(TARGET_RATE_HZ))
}

/// Standardizes each channel over `time_len` rows. Constant channels are
/// centered only.
pub fn zscore_channels(data: &mut [f32], time_len: usize, channels: usize) {
    if time_len == 0 {
        return;
    }
    for c in 0..channels {
        let mut sum = 0.0f64;
        for t in 0..time_len {
            sum += data[t * channels + c] as f64;
        }
        let mean = sum / time_len as f64;
        let mut ss = 0.0f64;
        for t in 0..time_len {
            let d = data[t * channels + c] as f64 - mean;
            ss += d * d;
        }
        let std = (ss / time_len as f64).sqrt();
        let scale = if std > 1e-12 { 1.0 / std } else { 0.0 };
        for t in 0..time_len {
            let v = &mut data[t * channels + c];
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ZUCO_CHANNELS;

    fn ramp(time_len: usize, channels: usize) -> Vec<f32> {
        (0..time_len * channels)
            .map(|i| ((i / channels) as f32) * 0.01 + (i % channels) as f32)
            .collect()
    }

    const RAW_ONLY: PreprocessOptions = PreprocessOptions {
        kernel: ResampleKernel::Linear,
        zscore: false,
    };

    #[test]
    fn zuco_rate_fills_the_window() {
        let raw = RawEeg::new(ramp(5000, ZUCO_CHANNELS), 5000, ZUCO_CHANNELS, SampleRate::hz(500)).unwrap();
        let trial = preprocess_trial(&raw, &PreprocessOptions::default()).unwrap();
        assert_eq!(trial.valid_time_len(), 1280);
        assert_eq!(trial.valid_channels(), 104);
        assert_eq!(trial.shape(), (1280, 128));
        assert_eq!(trial.sample_rate(), SampleRate::hz(128));
    }

    #[test]
    fn identity_at_target_rate() {
        let data: Vec<f32> = (0..1280 * 128).map(|i| (i as f32 * 0.37).sin()).collect();
        let raw = RawEeg::new(data.clone(), 1280, 128, SampleRate::hz(128)).unwrap();
        let trial = preprocess_trial(&raw, &RAW_ONLY).unwrap();
        assert_eq!(trial.valid_time_len(), 1280);
        assert_eq!(trial.valid_channels(), 128);
        assert_eq!(trial.to_padded(), data);
    }

    #[test]
    fn half_window_is_zero_padded() {
        let raw = RawEeg::new(vec![1.0; 2500 * 104], 2500, 104, SampleRate::hz(500)).unwrap();
        let trial = preprocess_trial(&raw, &RAW_ONLY).unwrap();
        assert_eq!(trial.valid_time_len(), 640);
        let padded = trial.to_padded();
        for t in 640..1280 {
            assert!(padded[t * 128..(t + 1) * 128].iter().all(|&v| v == 0.0));
        }
        for t in 0..640 {
            assert!(padded[t * 128 + 104..(t + 1) * 128].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn overlong_input_is_rejected() {
        let raw = RawEeg::new(vec![0.0; 5010 * 2], 5010, 2, SampleRate::hz(500)).unwrap();
        let err = preprocess_trial(&raw, &RAW_ONLY).unwrap_err();
        assert!(matches!(err, GlimError::DurationOverflow { .. }));
    }

    #[test]
    fn nan_is_rejected() {
        let mut data = vec![0.0; 100 * 3];
        data[3 * 42 + 2] = f32::NAN;
        let raw = RawEeg::new(data, 100, 3, SampleRate::hz(500)).unwrap();
        match preprocess_trial(&raw, &RAW_ONLY).unwrap_err() {
            GlimError::NanInput { time, channel } => assert_eq!((time, channel), (42, 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn low_rate_and_wide_inputs_are_rejected() {
        let raw = RawEeg::new(vec![0.0; 10], 10, 1, SampleRate::hz(100)).unwrap();
        assert!(preprocess_trial(&raw, &RAW_ONLY).is_err());
        let raw = RawEeg::new(vec![0.0; 129], 1, 129, SampleRate::hz(500)).unwrap();
        assert!(preprocess_trial(&raw, &RAW_ONLY).is_err());
    }

    #[test]
    fn linear_signals_are_reproduced_exactly_at_grid_points() {
        // 256 Hz → 128 Hz keeps every second sample.
        let data: Vec<f32> = (0..512).map(|i| i as f32).collect();
        let raw = RawEeg::new(data, 512, 1, SampleRate::hz(256)).unwrap();
        let trial = preprocess_trial(&raw, &RAW_ONLY).unwrap();
        assert_eq!(trial.valid_time_len(), 256);
        for k in 0..256 {
            assert_eq!(trial.get(k, 0), (2 * k) as f32);
        }
        // 500 Hz: output k sits at input position k * 500 / 128.
        let data: Vec<f32> = (0..1000).map(|i| i as f32).collect();
        let raw = RawEeg::new(data, 1000, 1, SampleRate::hz(500)).unwrap();
        let trial = preprocess_trial(&raw, &RAW_ONLY).unwrap();
        for k in 0..trial.valid_time_len() {
            let expect = k as f64 * 500.0 / 128.0;
            assert!((trial.get(k, 0) as f64 - expect).abs() < 1e-3);
        }
    }

    #[test]
    fn zscore_standardizes_valid_region() {
        let raw = RawEeg::new(ramp(700, 5), 700, 5, SampleRate::hz(500)).unwrap();
        let trial = preprocess_trial(&raw, &PreprocessOptions::default()).unwrap();
        let n = trial.valid_time_len();
        for c in 0..5 {
            let vals: Vec<f64> = (0..n).map(|t| trial.get(t, c) as f64).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn deterministic_bytes() {
        let data: Vec<f32> = (0..3000 * 7).map(|i| ((i * 7919) % 1013) as f32 / 17.0).collect();
        let raw = RawEeg::new(data, 3000, 7, SampleRate { num: 1000, den: 2 }).unwrap();
        let a = preprocess_trial(&raw, &PreprocessOptions::default()).unwrap();
        let b = preprocess_trial(&raw, &PreprocessOptions::default()).unwrap();
        let bits = |t: &EegTrial| t.valid_region().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
