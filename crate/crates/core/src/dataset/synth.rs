//! Synthetic subjects with a known EEG-to-kinematics mapping.
//!
//! EEG is seeded Gaussian noise smoothed by a short lowpass FIR, with a
//! random per-channel gain and offset. Each kinematic axis is driven by a
//! projection of the lagged EEG,
//!
//! ```text
//! s_d[t] = offset_d + sum_n sum_j coef[d][n][j] * eeg[n][t - far + j]
//! ```
//!
//! scaled so that `s_d` has zero mean and unit variance over the recording.
//! The linear mapping emits `intercept_d + s_d`; the nonlinear one emits
//! `intercept_d + tanh(s_d + gain * (s_d^2 - 1))`. Gaussian noise of
//! `noise_std` is added last. Samples are rounded to f32 before the mapping
//! is evaluated so the stored recording satisfies it exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LagWindowSpec, SubjectRecording, TrialMarker, DEFAULT_CHANNELS};
use crate::error::{Error, Result};
use crate::signal::{apply_fir, design_fir, mean_std, ChannelSeries, FilterKind};

const SMOOTHING_TAPS: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mapping {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub subject_id: String,
    pub n_channels: usize,
    pub n_trials: usize,
    pub samples_per_trial: usize,
    /// Rest samples before movement onset within each trial period.
    pub pre_onset_samples: usize,
    pub rate_hz: f64,
    pub mapping: Mapping,
    pub noise_std: f64,
    pub seed: u64,
    pub lag_far_ms: f64,
    pub lag_near_ms: f64,
    /// Upper edge of the EEG noise spectrum.
    pub eeg_bandwidth_hz: f64,
    /// Weight of the quadratic term inside the nonlinear squashing.
    pub quadratic_gain: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subject_id: "SYN01".into(),
            n_channels: 21,
            n_trials: 20,
            samples_per_trial: 100,
            pre_onset_samples: 40,
            rate_hz: 100.0,
            mapping: Mapping::Linear,
            noise_std: 0.01,
            seed: 0,
            lag_far_ms: 150.0,
            lag_near_ms: 0.0,
            eeg_bandwidth_hz: 20.0,
            quadratic_gain: 0.75,
        }
    }
}

impl SyntheticConfig {
    pub fn lag_spec(&self) -> Result<LagWindowSpec> {
        LagWindowSpec::new(self.lag_far_ms, self.lag_near_ms, self.rate_hz)
    }

    pub fn total_samples(&self) -> usize {
        self.n_trials * self.samples_per_trial
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1".into());
        }
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.pre_onset_samples + 2 > self.samples_per_trial {
            return bad(format!(
                "samples_per_trial {} leaves no movement after {} rest samples",
                self.samples_per_trial, self.pre_onset_samples
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if !(self.eeg_bandwidth_hz > 0.0 && self.eeg_bandwidth_hz < self.rate_hz / 2.0) {
            return bad(format!(
                "eeg_bandwidth_hz {} must lie below Nyquist {}",
                self.eeg_bandwidth_hz,
                self.rate_hz / 2.0
            ));
        }
        let spec = self.lag_spec()?;
        if spec.far_samples() > self.pre_onset_samples {
            return bad(format!(
                "first trial onset {} is shorter than the {}-sample lag window",
                self.pre_onset_samples,
                spec.far_samples()
            ));
        }
        Ok(())
    }
}

/// The mapping a synthetic subject was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mapping: Mapping,
    pub lag: LagWindowSpec,
    pub n_channels: usize,
    /// Lags per channel.
    pub window_len: usize,
    /// Per axis, `n_channels * window_len` weights in feature-column order.
    pub coefficients: [Vec<f64>; 3],
    pub offsets: [f64; 3],
    pub intercepts: [f64; 3],
    pub quadratic_gain: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl GroundTruth {
    /// Noise-free kinematic value for one feature row in raw EEG units.
    pub fn evaluate(&self, features: &[f64]) -> [f64; 3] {
        std::array::from_fn(|d| {
            let s = self.offsets[d]
                + self.coefficients[d].iter().zip(features).map(|(c, x)| c * x).sum::<f64>();
            self.intercepts[d] + self.squash(s)
        })
    }

    fn squash(&self, s: f64) -> f64 {
        match self.mapping {
            Mapping::Linear => s,
            Mapping::Nonlinear => (s + self.quadratic_gain * (s * s - 1.0)).tanh(),
        }
    }
}

fn channel_names(n: usize) -> Vec<String> {
    if n <= DEFAULT_CHANNELS.len() {
        DEFAULT_CHANNELS[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("E{i:03}")).collect()
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates a subject and the exact mapping behind its kinematics.
pub fn generate_synthetic_subject(config: &SyntheticConfig) -> Result<(SubjectRecording, GroundTruth)> {
    config.validate()?;
    let spec = config.lag_spec()?;
    let far = spec.far_samples();
    let near = spec.near_samples();
    let window = spec.window_len();
    let n_samples = config.total_samples();
    // History before sample 0 so the mapping holds from the first sample on.
    let burn_in = far + SMOOTHING_TAPS;
    let padded = n_samples + burn_in;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let smoother = design_fir(
        FilterKind::Lowpass,
        0.0,
        config.eeg_bandwidth_hz,
        config.rate_hz,
        SMOOTHING_TAPS,
    )?;
    let mut eeg_padded = Vec::with_capacity(config.n_channels);
    for _ in 0..config.n_channels {
        let white: Vec<f64> = (0..padded).map(|_| rng.sample(StandardNormal)).collect();
        let smooth = apply_fir(&ChannelSeries::new(white, config.rate_hz)?, &smoother)?.into_samples();
        let (_, std) = mean_std(&smooth[SMOOTHING_TAPS..]);
        let gain = rng.random_range(5.0..20.0) / std;
        let offset = rng.random_range(-10.0..10.0);
        eeg_padded.push(smooth.iter().map(|v| round_f32(v * gain + offset)).collect::<Vec<_>>());
    }

    // Projection of the lagged EEG at padded index `p`.
    let project = |coef: &[f64], p: usize| -> f64 {
        eeg_padded
            .iter()
            .enumerate()
            .map(|(n, row)| {
                coef[n * window..(n + 1) * window]
                    .iter()
                    .zip(&row[p - far..=p - near])
                    .map(|(c, v)| c * v)
                    .sum::<f64>()
            })
            .sum()
    };

    let mut coefficients: [Vec<f64>; 3] = Default::default();
    let mut offsets = [0.0; 3];
    let mut intercepts = [0.0; 3];
    let mut clean: [Vec<f64>; 3] = Default::default();
    for d in 0..3 {
        let coef: Vec<f64> = (0..config.n_channels * window).map(|_| rng.sample(StandardNormal)).collect();
        let raw: Vec<f64> = (burn_in..padded).map(|p| project(&coef, p)).collect();
        let (mean, std) = mean_std(&raw);
        coefficients[d] = coef.iter().map(|c| c / std).collect();
        offsets[d] = -mean / std;
        intercepts[d] = rng.random_range(-1.0..1.0);
        clean[d] = raw.iter().map(|r| (r - mean) / std).collect();
    }

    let truth = GroundTruth {
        mapping: config.mapping,
        lag: spec,
        n_channels: config.n_channels,
        window_len: window,
        coefficients,
        offsets,
        intercepts,
        quadratic_gain: config.quadratic_gain,
        noise_std: config.noise_std,
        seed: config.seed,
    };

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Argument(e.to_string()))?;
    let kinematics: [Vec<f64>; 3] = std::array::from_fn(|d| {
        clean[d]
            .iter()
            .map(|&s| round_f32(truth.intercepts[d] + truth.squash(s) + noise.sample(&mut rng)))
            .collect()
    });

    let eeg = eeg_padded.into_iter().map(|row| row[burn_in..].to_vec()).collect();
    let trials = (0..config.n_trials)
        .map(|k| {
            let start = k * config.samples_per_trial;
            TrialMarker::new(start + config.pre_onset_samples, start + config.samples_per_trial - 1)
        })
        .collect();
    let recording = SubjectRecording::new(
        config.subject_id.clone(),
        channel_names(config.n_channels),
        eeg,
        kinematics,
        config.rate_hz,
        trials,
    )?;
    Ok((recording, truth))
}
