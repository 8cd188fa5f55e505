//! Recording-level preprocessing and normalization fitted on training trials.
//!
//! EEG: optional broadband prefilter, common average reference, decimation to
//! the target rate, optional band filter. Kinematics: optional lowpass
//! smoothing and decimation. All EEG filters are causal, so the EEG lags the
//! kinematics by [`PreprocessConfig::eeg_delay_ms`]; the kinematics lowpass
//! is delay-compensated since targets are never model inputs.
//!
//! z-score and min-max parameters are estimated by [`Normalization::fit`] on
//! training trials only and then applied unchanged to validation and test
//! data.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_lag_features, FeatureMatrix, LagWindowSpec, SubjectRecording, TargetMatrix};
use crate::error::{Error, Result};
use crate::signal::{
    apply_fir, average_rereference, band_filter, default_num_taps, design_fir, downsample,
    ChannelSeries, FilterKind, FirKernel, FrequencyBand, MinMaxParams, ZScoreParams,
};

const RATE_TOLERANCE: f64 = 1e-9;
/// Anti-alias cutoff as a fraction of the target rate.
const ANTI_ALIAS_FRACTION: f64 = 0.4;
const LOWPASS_TRANSITION_HZ: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub rereference: bool,
    /// Broadband EEG bandpass `[low, high]` applied at the source rate.
    pub prefilter_hz: Option<[f64; 2]>,
    pub target_rate_hz: Option<f64>,
    pub kinematics_lowpass_hz: Option<f64>,
    pub band: Option<FrequencyBand>,
    /// Band filter length; `None` picks the band's default.
    pub num_taps: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            rereference: true,
            prefilter_hz: Some([0.1, 40.0]),
            target_rate_hz: Some(100.0),
            kinematics_lowpass_hz: Some(2.0),
            band: None,
            num_taps: None,
        }
    }
}

impl PreprocessConfig {
    /// No filtering, referencing or resampling; only a band filter if set.
    pub fn passthrough() -> Self {
        Self {
            rereference: false,
            prefilter_hz: None,
            target_rate_hz: None,
            kinematics_lowpass_hz: None,
            band: None,
            num_taps: None,
        }
    }

    pub fn with_band(mut self, band: Option<FrequencyBand>) -> Self {
        self.band = band;
        self
    }

    fn prefilter(&self, rate_hz: f64) -> Result<Option<FirKernel>> {
        self.prefilter_hz
            .map(|[low, high]| {
                let taps = default_num_taps(rate_hz, (low / 2.0).min(LOWPASS_TRANSITION_HZ));
                design_fir(FilterKind::Bandpass, low, high, rate_hz, taps)
            })
            .transpose()
    }

    fn decimation(&self, rate_hz: f64) -> Result<usize> {
        let Some(target) = self.target_rate_hz else {
            return Ok(1);
        };
        let ratio = rate_hz / target;
        let factor = ratio.round();
        if !(target > 0.0) || factor < 1.0 || (ratio - factor).abs() > RATE_TOLERANCE * ratio {
            return Err(Error::Argument(format!(
                "cannot decimate {rate_hz} Hz to {target} Hz by an integer factor"
            )));
        }
        Ok(factor as usize)
    }

    fn needs_anti_alias(&self, factor: usize, rate_hz: f64) -> bool {
        let target_nyquist = rate_hz / factor as f64 / 2.0;
        factor > 1 && self.prefilter_hz.is_none_or(|[_, high]| high >= target_nyquist)
    }

    fn anti_alias(&self, factor: usize, rate_hz: f64) -> Result<FirKernel> {
        let cutoff = ANTI_ALIAS_FRACTION * rate_hz / factor as f64;
        design_fir(
            FilterKind::Lowpass,
            0.0,
            cutoff,
            rate_hz,
            default_num_taps(rate_hz, LOWPASS_TRANSITION_HZ.max(cutoff / 10.0)),
        )
    }

    /// Total causal delay the EEG filters add for a recording at
    /// `source_rate_hz`.
    pub fn eeg_delay_ms(&self, source_rate_hz: f64) -> Result<f64> {
        let factor = self.decimation(source_rate_hz)?;
        let mut delay_s = 0.0;
        if let Some(k) = self.prefilter(source_rate_hz)? {
            delay_s += k.group_delay_samples() as f64 / source_rate_hz;
        }
        if self.needs_anti_alias(factor, source_rate_hz) {
            delay_s += self.anti_alias(factor, source_rate_hz)?.group_delay_samples() as f64 / source_rate_hz;
        }
        if let Some(band) = self.band {
            let rate = source_rate_hz / factor as f64;
            delay_s += band.kernel(rate, self.num_taps)?.group_delay_samples() as f64 / rate;
        }
        Ok(delay_s * 1000.0)
    }
}

fn filter_rows(rows: &mut [Vec<f64>], kernel: &FirKernel, rate_hz: f64) -> Result<()> {
    for row in rows {
        let series = ChannelSeries::new(std::mem::take(row), rate_hz)?;
        *row = apply_fir(&series, kernel)?.into_samples();
    }
    Ok(())
}

/// Linear-phase smoothing without delay: the causal output is read
/// `group_delay` samples ahead, with edge values held beyond both ends.
fn filter_centered(x: &[f64], kernel: &FirKernel, rate_hz: f64) -> Result<Vec<f64>> {
    let d = kernel.group_delay_samples();
    let (first, last) = (x[0], x[x.len() - 1]);
    let mut extended = Vec::with_capacity(x.len() + 2 * d);
    extended.extend(std::iter::repeat_n(first, d));
    extended.extend_from_slice(x);
    extended.extend(std::iter::repeat_n(last, d));
    let y = apply_fir(&ChannelSeries::new(extended, rate_hz)?, kernel)?.into_samples();
    Ok(y[2 * d..].to_vec())
}

/// Applies every enabled preprocessing step. Normalization is separate.
pub fn preprocess(recording: &SubjectRecording, config: &PreprocessConfig) -> Result<SubjectRecording> {
    let rate = recording.rate_hz();
    let factor = config.decimation(rate)?;
    let mut eeg = recording.eeg().to_vec();
    let mut kin = recording.kinematics().clone();

    if let Some(kernel) = config.prefilter(rate)? {
        filter_rows(&mut eeg, &kernel, rate)?;
    }
    if config.rereference {
        let series = eeg
            .into_iter()
            .map(|row| ChannelSeries::new(row, rate))
            .collect::<Result<Vec<_>>>()?;
        eeg = average_rereference(&series)?.into_iter().map(ChannelSeries::into_samples).collect();
    }
    if let Some(cutoff) = config.kinematics_lowpass_hz {
        let kernel = design_fir(
            FilterKind::Lowpass,
            0.0,
            cutoff,
            rate,
            default_num_taps(rate, LOWPASS_TRANSITION_HZ),
        )?;
        for axis in &mut kin {
            *axis = filter_centered(axis, &kernel, rate)?;
        }
    }

    let mut out = if factor > 1 {
        if config.needs_anti_alias(factor, rate) {
            let kernel = config.anti_alias(factor, rate)?;
            filter_rows(&mut eeg, &kernel, rate)?;
            if config.kinematics_lowpass_hz.is_none_or(|c| c >= rate / factor as f64 / 2.0) {
                for axis in &mut kin {
                    *axis = filter_centered(axis, &kernel, rate)?;
                }
            }
        }
        let decimate = |row: Vec<f64>| -> Result<Vec<f64>> {
            Ok(downsample(&ChannelSeries::new(row, rate)?, factor)?.into_samples())
        };
        let eeg = eeg.into_iter().map(decimate).collect::<Result<Vec<_>>>()?;
        let [kx, ky, kz] = kin;
        recording.resampled(eeg, [decimate(kx)?, decimate(ky)?, decimate(kz)?], factor)?
    } else {
        let mut out = recording.clone();
        out.eeg_mut().clone_from_slice(&eeg);
        *out.kinematics_mut() = kin;
        out
    };
    if let Some(band) = config.band {
        out = band_filter(&out, band, config.num_taps)?;
    }
    Ok(out)
}

/// Per-channel z-score and per-axis min-max parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub eeg: Vec<ZScoreParams>,
    pub kinematics: [MinMaxParams; 3],
}

impl Normalization {
    /// Fits on the listed training trials of one or more recordings, pooled.
    ///
    /// EEG statistics use the samples the lag features of those trials read,
    /// `[onset - lag_far, end - lag_near]`; kinematic ranges use the
    /// movement segments `[onset, end]`.
    pub fn fit(parts: &[(&SubjectRecording, &[usize])], spec: &LagWindowSpec) -> Result<Self> {
        let Some((first, _)) = parts.first() else {
            return Err(Error::Argument("normalization needs at least one recording".into()));
        };
        let channels = first.n_channels();
        let mut eeg: Vec<Vec<f64>> = vec![Vec::new(); channels];
        let mut kin: [Vec<f64>; 3] = Default::default();
        for (rec, trials) in parts {
            if rec.n_channels() != channels {
                return Err(Error::Shape(format!(
                    "subject {} has {} channels, expected {channels}",
                    rec.subject_id(),
                    rec.n_channels()
                )));
            }
            for &i in *trials {
                let trial = rec.trials().get(i).ok_or_else(|| {
                    Error::Argument(format!("subject {} has no trial {i}", rec.subject_id()))
                })?;
                let from = trial.onset_sample.saturating_sub(spec.far_samples());
                let to = trial.end_sample.saturating_sub(spec.near_samples());
                for (acc, row) in eeg.iter_mut().zip(rec.eeg()) {
                    acc.extend_from_slice(&row[from..=to]);
                }
                for (acc, row) in kin.iter_mut().zip(rec.kinematics()) {
                    acc.extend_from_slice(&row[trial.onset_sample..=trial.end_sample]);
                }
            }
        }
        let eeg = eeg
            .iter()
            .enumerate()
            .map(|(n, v)| {
                ZScoreParams::fit(v).map_err(|e| match e {
                    Error::DegenerateChannel(m) => {
                        Error::DegenerateChannel(format!("{}: {m}", first.channel_names()[n]))
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let [kx, ky, kz] = &kin;
        Ok(Self {
            eeg,
            kinematics: [MinMaxParams::fit(kx)?, MinMaxParams::fit(ky)?, MinMaxParams::fit(kz)?],
        })
    }

    /// Normalized copy of `recording`.
    pub fn apply(&self, recording: &SubjectRecording) -> Result<SubjectRecording> {
        if recording.n_channels() != self.eeg.len() {
            return Err(Error::Shape(format!(
                "normalization has {} channels, subject {} has {}",
                self.eeg.len(),
                recording.subject_id(),
                recording.n_channels()
            )));
        }
        let mut out = recording.clone();
        for (row, p) in out.eeg_mut().iter_mut().zip(&self.eeg) {
            *row = p.apply(row);
        }
        for (row, p) in out.kinematics_mut().iter_mut().zip(&self.kinematics) {
            *row = p.apply(row);
        }
        Ok(out)
    }

    /// Maps normalized positions back to recording units.
    pub fn invert_targets(&self, targets: &TargetMatrix) -> TargetMatrix {
        TargetMatrix::new(
            targets
                .as_rows()
                .iter()
                .map(|r| {
                    std::array::from_fn(|d| {
                        let p = &self.kinematics[d];
                        r[d] * (p.max - p.min) + p.min
                    })
                })
                .collect(),
        )
    }
}

/// Stacked lag features of several trials with each trial's row range.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub features: FeatureMatrix,
    pub targets: TargetMatrix,
    pub trials: Vec<usize>,
    pub rows: Vec<Range<usize>>,
}

impl TrialData {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn append(&mut self, other: &TrialData) -> Result<()> {
        let offset = self.len();
        self.features.append(&other.features)?;
        self.targets.append(&other.targets);
        self.trials.extend_from_slice(&other.trials);
        self.rows.extend(other.rows.iter().map(|r| r.start + offset..r.end + offset));
        Ok(())
    }
}

/// Lag features for `trials` of `recording`, in the given order.
pub fn assemble(recording: &SubjectRecording, trials: &[usize], spec: &LagWindowSpec) -> Result<TrialData> {
    let mut data = TrialData {
        features: FeatureMatrix::empty(spec.window_len(), recording.n_channels()),
        targets: TargetMatrix::default(),
        trials: Vec::with_capacity(trials.len()),
        rows: Vec::with_capacity(trials.len()),
    };
    for &i in trials {
        let trial = recording.trials().get(i).ok_or_else(|| {
            Error::Argument(format!("subject {} has no trial {i}", recording.subject_id()))
        })?;
        let (x, y) = build_lag_features(recording, trial, spec)?;
        let start = data.len();
        data.features.append(&x)?;
        data.targets.append(&y);
        data.trials.push(i);
        data.rows.push(start..data.len());
    }
    Ok(data)
}
