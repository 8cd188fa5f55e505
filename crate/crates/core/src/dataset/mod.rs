//! Subject recordings and everything that turns them into supervised data:
//! the on-disk interchange format, channel selection, lag-window features,
//! trial splits, and a synthetic generator with known ground truth.

mod io;
mod lag;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{load_subject, save_subject, validate_subject_dir, Diagnostic, DiagnosticKind};
pub use lag::{build_lag_features, FeatureMatrix, LagWindowSpec, TargetMatrix};
pub use split::{
    proportional_split_sizes, split_loso, split_subject_dependent, LosoFold, SplitPlan,
    SubjectPartition, REFERENCE_TEST_TRIALS, REFERENCE_TRIALS_PER_SUBJECT, REFERENCE_VAL_TRIALS,
};
pub use synth::{generate_synthetic_subject, GroundTruth, Mapping, SyntheticConfig};

use crate::error::{Error, Result};
use crate::signal::{ChannelSeries, FrequencyBand};

/// Motor-cortex and occipital electrodes used by default, in this order.
pub const DEFAULT_CHANNELS: [&str; 21] = [
    "F3", "Fz", "F4", "FC5", "FC1", "FC2", "FC6", "C3", "Cz", "C4", "CP5", "CP1", "CP2", "CP6",
    "P7", "P3", "Pz", "P4", "O1", "Oz", "O2",
];

/// Movement segment of one trial. Both ends are inclusive sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMarker {
    pub onset_sample: usize,
    pub end_sample: usize,
}

impl TrialMarker {
    pub fn new(onset_sample: usize, end_sample: usize) -> Self {
        Self { onset_sample, end_sample }
    }

    /// Number of kinematic samples in `[onset, end]`.
    pub fn len(&self) -> usize {
        self.end_sample + 1 - self.onset_sample
    }

    pub fn is_empty(&self) -> bool {
        self.end_sample < self.onset_sample
    }
}

/// Synchronized EEG and 3-D hand position for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    subject_id: String,
    channel_names: Vec<String>,
    eeg: Vec<Vec<f64>>,
    kinematics: [Vec<f64>; 3],
    rate_hz: f64,
    trials: Vec<TrialMarker>,
    band: Option<FrequencyBand>,
}

impl SubjectRecording {
    pub fn new(
        subject_id: impl Into<String>,
        channel_names: Vec<String>,
        eeg: Vec<Vec<f64>>,
        kinematics: [Vec<f64>; 3],
        rate_hz: f64,
        trials: Vec<TrialMarker>,
    ) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            channel_names,
            eeg,
            kinematics,
            rate_hz,
            trials,
            band: None,
        };
        if let Some(problem) = rec.problems().into_iter().next() {
            return Err(Error::validation(format!("subject {}", rec.subject_id), problem));
        }
        Ok(rec)
    }

    /// Every violated invariant, in a stable order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            out.push(format!("sampling rate {} is not positive", self.rate_hz));
        }
        if self.eeg.is_empty() {
            out.push("recording has no EEG channels".into());
        }
        if self.channel_names.len() != self.eeg.len() {
            out.push(format!(
                "{} channel names for {} EEG rows",
                self.channel_names.len(),
                self.eeg.len()
            ));
        }
        for (i, name) in self.channel_names.iter().enumerate() {
            if self.channel_names[..i].contains(name) {
                out.push(format!("channel name {name:?} appears twice"));
            }
        }
        let n = self.n_samples();
        for (i, row) in self.eeg.iter().enumerate() {
            if row.len() != n {
                out.push(format!("EEG channel {i} has {} samples, expected {n}", row.len()));
            }
        }
        for (axis, row) in self.kinematics.iter().enumerate() {
            if row.len() != n {
                out.push(format!("kinematic axis {axis} has {} samples, EEG has {n}", row.len()));
            }
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.onset_sample >= t.end_sample {
                out.push(format!(
                    "trial {i}: onset {} is not before end {}",
                    t.onset_sample, t.end_sample
                ));
            }
            if t.end_sample >= n {
                out.push(format!("trial {i}: end {} is outside {n} samples", t.end_sample));
            }
            if i > 0 && t.onset_sample <= self.trials[i - 1].end_sample {
                out.push(format!(
                    "trial {i}: onset {} overlaps or precedes trial {} ending at {}",
                    t.onset_sample,
                    i - 1,
                    self.trials[i - 1].end_sample
                ));
            }
        }
        out
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.len()
    }

    pub fn n_samples(&self) -> usize {
        self.eeg.first().map_or(0, Vec::len)
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn eeg(&self) -> &[Vec<f64>] {
        &self.eeg
    }

    pub(crate) fn eeg_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.eeg
    }

    pub fn kinematics(&self) -> &[Vec<f64>; 3] {
        &self.kinematics
    }

    pub(crate) fn kinematics_mut(&mut self) -> &mut [Vec<f64>; 3] {
        &mut self.kinematics
    }

    pub fn trials(&self) -> &[TrialMarker] {
        &self.trials
    }

    pub fn band(&self) -> Option<FrequencyBand> {
        self.band
    }

    pub(crate) fn set_band(&mut self, band: Option<FrequencyBand>) {
        self.band = band;
    }

    pub fn channel_series(&self, index: usize) -> Result<ChannelSeries> {
        let row = self
            .eeg
            .get(index)
            .ok_or_else(|| Error::Argument(format!("channel index {index} out of range")))?;
        ChannelSeries::new(row.clone(), self.rate_hz)
    }

    /// Replaces the sample data and rate after decimation by `factor`. Trial
    /// markers shrink inward: onsets round up, ends round down.
    pub(crate) fn resampled(
        &self,
        eeg: Vec<Vec<f64>>,
        kinematics: [Vec<f64>; 3],
        factor: usize,
    ) -> Result<Self> {
        let trials = self
            .trials
            .iter()
            .map(|t| TrialMarker::new(t.onset_sample.div_ceil(factor), t.end_sample / factor))
            .collect();
        let mut out = Self::new(
            self.subject_id.clone(),
            self.channel_names.clone(),
            eeg,
            kinematics,
            self.rate_hz / factor as f64,
            trials,
        )?;
        out.band = self.band;
        Ok(out)
    }
}

/// Keeps the named channels, in the requested order.
pub fn select_channels<S: AsRef<str>>(
    recording: &SubjectRecording,
    names: &[S],
) -> Result<SubjectRecording> {
    let mut rows = Vec::with_capacity(names.len());
    let mut kept = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref();
        let idx = recording
            .channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Channel(name.to_string()))?;
        rows.push(recording.eeg[idx].clone());
        kept.push(name.to_string());
    }
    let mut out = SubjectRecording::new(
        recording.subject_id.clone(),
        kept,
        rows,
        recording.kinematics.clone(),
        recording.rate_hz,
        recording.trials.clone(),
    )?;
    out.band = recording.band;
    Ok(out)
}
