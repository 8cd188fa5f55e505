use serde::{Deserialize, Serialize};

use super::{SubjectRecording, TrialMarker};
use crate::error::{Error, Result};

const GRID_TOLERANCE: f64 = 1e-9;

/// EEG history `[t - lag_far, t - lag_near]` used to predict the kinematic
/// sample at `t`. Both ends must fall on the sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagWindowSpec {
    pub lag_far_ms: f64,
    pub lag_near_ms: f64,
    pub rate_hz: f64,
}

impl LagWindowSpec {
    pub fn new(lag_far_ms: f64, lag_near_ms: f64, rate_hz: f64) -> Result<Self> {
        let spec = Self { lag_far_ms, lag_near_ms, rate_hz };
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Argument(format!("lag spec rate {rate_hz} is not positive")));
        }
        if !(lag_near_ms >= 0.0 && lag_far_ms >= lag_near_ms && lag_far_ms.is_finite()) {
            return Err(Error::Argument(format!(
                "lag window {lag_far_ms}-{lag_near_ms} ms needs lag_far >= lag_near >= 0"
            )));
        }
        for ms in [lag_far_ms, lag_near_ms] {
            let samples = ms * rate_hz / 1000.0;
            if (samples - samples.round()).abs() > GRID_TOLERANCE {
                return Err(Error::Argument(format!(
                    "lag {ms} ms is not a whole number of samples at {rate_hz} Hz"
                )));
            }
        }
        Ok(spec)
    }

    /// Window that ends at the kinematic sample, `[lag_ms, 0]`.
    pub fn ending_at_sample(lag_ms: f64, rate_hz: f64) -> Result<Self> {
        Self::new(lag_ms, 0.0, rate_hz)
    }

    /// Window of `window_ms` whose far end lies `lag_ms` before the sample.
    pub fn from_lag_and_window(lag_ms: f64, window_ms: f64, rate_hz: f64) -> Result<Self> {
        Self::new(lag_ms, lag_ms - window_ms, rate_hz)
    }

    pub fn from_samples(far: usize, near: usize, rate_hz: f64) -> Result<Self> {
        let ms = |s: usize| s as f64 * 1000.0 / rate_hz;
        Self::new(ms(far), ms(near), rate_hz)
    }

    pub fn far_samples(&self) -> usize {
        (self.lag_far_ms * self.rate_hz / 1000.0).round() as usize
    }

    pub fn near_samples(&self) -> usize {
        (self.lag_near_ms * self.rate_hz / 1000.0).round() as usize
    }

    /// Lags per channel, `L`.
    pub fn window_len(&self) -> usize {
        self.far_samples() - self.near_samples() + 1
    }

    pub fn window_ms(&self) -> f64 {
        self.lag_far_ms - self.lag_near_ms
    }

    /// Short label such as `150-50`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.lag_far_ms, self.lag_near_ms)
    }
}

/// `D x (L*N)` lagged EEG, row-major. Columns are channel-major: the `L`
/// lags of channel 0 in chronological order, then channel 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    lags: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(lags: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let cols = lags * channels;
        if cols == 0 || values.len() % cols != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {lags} x {channels}",
                values.len()
            )));
        }
        Ok(Self { rows: values.len() / cols, lags, channels, values })
    }

    pub fn empty(lags: usize, channels: usize) -> Self {
        Self { rows: 0, lags, channels, values: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.lags * self.channels
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    /// Row `i` as an `L x N` time-major matrix (row-major).
    pub fn time_major(&self, i: usize) -> Vec<f64> {
        let row = self.row(i);
        let mut out = vec![0.0; row.len()];
        for n in 0..self.channels {
            for l in 0..self.lags {
                out[l * self.channels + n] = row[n * self.lags + l];
            }
        }
        out
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), lags: self.lags, channels: self.channels, values }
    }

    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.lags != self.lags || other.channels != self.channels {
            return Err(Error::Shape(format!(
                "cannot stack {}x{} features onto {}x{}",
                other.lags, other.channels, self.lags, self.channels
            )));
        }
        self.values.extend_from_slice(&other.values);
        self.rows += other.rows;
        Ok(())
    }
}

/// `D x 3` hand positions (x, y, z), row-aligned with a [`FeatureMatrix`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetMatrix {
    rows: Vec<[f64; 3]>,
}

impl TargetMatrix {
    pub fn new(rows: Vec<[f64; 3]>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn as_rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[axis]).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self { rows: indices.iter().map(|&i| self.rows[i]).collect() }
    }

    pub fn append(&mut self, other: &TargetMatrix) {
        self.rows.extend_from_slice(&other.rows);
    }
}

/// Lagged features and targets for one trial: one row per kinematic sample
/// `t` in `[onset, end]`, built from EEG at `t - lag_far ..= t - lag_near`.
pub fn build_lag_features(
    recording: &SubjectRecording,
    trial: &TrialMarker,
    spec: &LagWindowSpec,
) -> Result<(FeatureMatrix, TargetMatrix)> {
    if (spec.rate_hz - recording.rate_hz()).abs() > GRID_TOLERANCE {
        return Err(Error::Argument(format!(
            "lag spec is on a {} Hz grid, recording is {} Hz",
            spec.rate_hz,
            recording.rate_hz()
        )));
    }
    if trial.is_empty() || trial.end_sample >= recording.n_samples() {
        return Err(Error::Argument(format!(
            "trial [{}, {}] is outside the recording",
            trial.onset_sample, trial.end_sample
        )));
    }
    let far = spec.far_samples();
    let near = spec.near_samples();
    if trial.onset_sample < far {
        return Err(Error::History { onset: trial.onset_sample, needed: far });
    }
    let lags = spec.window_len();
    let channels = recording.n_channels();
    let mut values = Vec::with_capacity(trial.len() * lags * channels);
    let mut targets = Vec::with_capacity(trial.len());
    let kin = recording.kinematics();
    for t in trial.onset_sample..=trial.end_sample {
        for row in recording.eeg() {
            values.extend_from_slice(&row[t - far..=t - near]);
        }
        targets.push([kin[0][t], kin[1][t], kin[2][t]]);
    }
    Ok((FeatureMatrix::from_rows(lags, channels, values)?, TargetMatrix::new(targets)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DEFAULT_CHANNELS;

    /// EEG value encodes (channel, sample) so every entry is identifiable.
    fn labeled(channels: usize, samples: usize, trials: Vec<TrialMarker>) -> SubjectRecording {
        let eeg = (0..channels)
            .map(|c| (0..samples).map(|t| ((c + 1) * 1000 + t) as f64).collect())
            .collect();
        let kin = [
            (0..samples).map(|t| t as f64).collect(),
            (0..samples).map(|t| 2.0 * t as f64).collect(),
            (0..samples).map(|t| 3.0 * t as f64).collect(),
        ];
        let names = DEFAULT_CHANNELS[..channels].iter().map(|s| s.to_string()).collect();
        SubjectRecording::new("L", names, eeg, kin, 100.0, trials).unwrap()
    }

    #[test]
    fn window_lengths() {
        assert_eq!(LagWindowSpec::new(150.0, 50.0, 100.0).unwrap().window_len(), 11);
        assert_eq!(LagWindowSpec::ending_at_sample(250.0, 100.0).unwrap().window_len(), 26);
        let w = LagWindowSpec::from_lag_and_window(350.0, 100.0, 100.0).unwrap();
        assert_eq!((w.far_samples(), w.near_samples()), (35, 25));
        assert_eq!(w.label(), "350-250");
    }

    #[test]
    fn off_grid_or_inverted_specs_rejected() {
        assert!(LagWindowSpec::new(155.0, 50.0, 100.0).is_err());
        assert!(LagWindowSpec::new(50.0, 150.0, 100.0).is_err());
        assert!(LagWindowSpec::new(50.0, -10.0, 100.0).is_err());
    }

    #[test]
    fn smallest_case() {
        let rec = labeled(1, 10, vec![TrialMarker::new(4, 6)]);
        let spec = LagWindowSpec::from_samples(1, 1, 100.0).unwrap();
        let (x, y) = build_lag_features(&rec, &rec.trials()[0], &spec).unwrap();
        assert_eq!((x.rows(), x.cols()), (3, 1));
        assert_eq!(x.values(), &[1003.0, 1004.0, 1005.0]);
        assert_eq!(y.as_rows()[0], [4.0, 8.0, 12.0]);
    }

    #[test]
    fn index_oracle_two_channels() {
        let onset = 20;
        let rec = labeled(2, 40, vec![TrialMarker::new(onset, onset + 9)]);
        let spec = LagWindowSpec::from_samples(5, 3, 100.0).unwrap();
        let (x, y) = build_lag_features(&rec, &rec.trials()[0], &spec).unwrap();
        assert_eq!((x.rows(), x.cols()), (10, 6));
        assert_eq!(y.rows(), 10);
        // Enumerate (row, col) -> (channel, lag) independently.
        for r in 0..10 {
            for c in 0..6 {
                let (channel, lag_idx) = (c / 3, c % 3);
                let sample = onset + r - 5 + lag_idx;
                let expected = ((channel + 1) * 1000 + sample) as f64;
                assert_eq!(x.row(r)[c], expected, "({r},{c})");
            }
        }
        assert_eq!(x.row(0)[4], rec.eeg()[1][onset - 5 + 1]);
    }

    #[test]
    fn insufficient_history() {
        let rec = labeled(1, 40, vec![TrialMarker::new(3, 10)]);
        let spec = LagWindowSpec::from_samples(5, 0, 100.0).unwrap();
        assert!(matches!(
            build_lag_features(&rec, &rec.trials()[0], &spec),
            Err(Error::History { onset: 3, needed: 5 })
        ));
    }

    #[test]
    fn time_major_view_transposes() {
        let x = FeatureMatrix::from_rows(3, 2, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(x.time_major(0), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
    }
}
