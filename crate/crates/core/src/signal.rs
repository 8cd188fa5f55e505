//! Deterministic DSP primitives: Hamming-windowed FIR design and causal
//! application, common average reference, decimation, and the two
//! normalizations (per-channel z-score for EEG, min-max for kinematics).
//!
//! Every function here is pure. Filtering is causal single-pass convolution
//! with a zero-padded left edge, so an output sample never depends on input
//! samples after it. The price is a group delay of `(num_taps - 1) / 2`
//! samples, reported by [`FirKernel::group_delay_samples`].
//!
//! Sample statistics use the `T - 1` denominator throughout.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::SubjectRecording;
use crate::error::{Error, Result};

/// Channels whose sample standard deviation falls below this are rejected.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Smallest kernel [`design_fir`] accepts.
pub const MIN_TAPS: usize = 11;

/// Upper bound applied by [`default_num_taps`].
pub const MAX_DEFAULT_TAPS: usize = 1001;

/// A single channel of uniformly sampled data.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    samples: Vec<f64>,
    rate_hz: f64,
}

impl ChannelSeries {
    pub fn new(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Argument(format!("sampling rate must be positive, got {rate_hz}")));
        }
        Ok(Self { samples, rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Sample mean and `T - 1` standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Parameters removed by [`zscore`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mean: f64,
    pub std: f64,
}

impl ZScoreParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > DEGENERATE_STD) || !mean.is_finite() {
            return Err(Error::DegenerateChannel(format!("std {std} is not positive")));
        }
        Ok(Self { mean, std })
    }

    /// Fits mean and sample standard deviation.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Length { needed: 2, got: values.len() });
        }
        let (mean, std) = mean_std(values);
        if !(std > DEGENERATE_STD) {
            return Err(Error::DegenerateChannel(format!(
                "sample std {std:e} over {} samples",
                values.len()
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std + self.mean).collect()
    }
}

/// Range used by [`minmax_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub min: f64,
    pub max: f64,
}

impl MinMaxParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::DegenerateChannel(format!("min-max range [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Length { needed: 1, got: 0 });
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min, max)
    }

    /// `(v - min) / (max - min)`, no clipping.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let span = self.max - self.min;
        values.iter().map(|v| (v - self.min) / span).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        let span = self.max - self.min;
        values.iter().map(|v| v * span + self.min).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// How a [`FirKernel`] was produced. `low_hz` is ignored for lowpass kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirDesign {
    pub kind: FilterKind,
    pub low_hz: f64,
    pub high_hz: f64,
    pub rate_hz: f64,
    pub num_taps: usize,
}

/// Symmetric (Type-I, linear-phase) FIR kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FirKernel {
    taps: Vec<f64>,
    design: FirDesign,
}

impl FirKernel {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn design(&self) -> &FirDesign {
        &self.design
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    /// Delay, in samples, that causal application adds to every frequency.
    pub fn group_delay_samples(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Magnitude of the kernel's frequency response at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.design.rate_hz;
        let (re, im) = self.taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, h)| {
            let phase = omega * n as f64;
            (re + h * phase.cos(), im - h * phase.sin())
        });
        re.hypot(im)
    }

    pub fn magnitude_db_at(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude_at(freq_hz).log10()
    }
}

/// Odd tap count from the Hamming rule `3.3 * rate / transition`, clamped to
/// `[MIN_TAPS, MAX_DEFAULT_TAPS]`.
pub fn default_num_taps(rate_hz: f64, transition_hz: f64) -> usize {
    let raw = (3.3 * rate_hz / transition_hz).ceil();
    let raw = if raw.is_finite() { raw as usize } else { MAX_DEFAULT_TAPS };
    let odd = if raw % 2 == 0 { raw + 1 } else { raw };
    odd.clamp(MIN_TAPS, MAX_DEFAULT_TAPS)
}

fn hamming_lowpass(cutoff_hz: f64, rate_hz: f64, num_taps: usize) -> Vec<f64> {
    let half = (num_taps - 1) / 2;
    let fc = cutoff_hz / rate_hz;
    // Built from |n - center| so mirrored taps are bit-identical.
    let half_taps: Vec<f64> = (0..=half)
        .map(|k| {
            let kf = k as f64;
            let ideal = if k == 0 { 2.0 * fc } else { (2.0 * PI * fc * kf).sin() / (PI * kf) };
            let window = 0.54 + 0.46 * (PI * kf / half as f64).cos();
            ideal * window
        })
        .collect();
    let dc: f64 = half_taps[0] + 2.0 * half_taps[1..].iter().sum::<f64>();
    (0..num_taps)
        .map(|n| half_taps[n.abs_diff(half)] / dc)
        .collect()
}

/// Designs a Hamming-windowed FIR kernel.
///
/// Lowpass kernels are normalized to unit DC gain. Bandpass kernels are the
/// difference of two unit-DC lowpass kernels at `high_hz` and `low_hz`, so
/// their DC gain is zero. A bandpass upper edge may sit exactly at Nyquist,
/// which turns it into a highpass above `low_hz`.
pub fn design_fir(
    kind: FilterKind,
    low_hz: f64,
    high_hz: f64,
    rate_hz: f64,
    num_taps: usize,
) -> Result<FirKernel> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::Design(format!("sampling rate must be positive, got {rate_hz}")));
    }
    if num_taps % 2 == 0 {
        return Err(Error::Design(format!("num_taps must be odd, got {num_taps}")));
    }
    if num_taps < MIN_TAPS {
        return Err(Error::Design(format!("num_taps must be at least {MIN_TAPS}, got {num_taps}")));
    }
    let nyquist = rate_hz / 2.0;
    let taps = match kind {
        FilterKind::Lowpass => {
            if !(high_hz > 0.0 && high_hz < nyquist) {
                return Err(Error::Design(format!(
                    "lowpass cutoff {high_hz} Hz must lie in (0, {nyquist}) Hz"
                )));
            }
            hamming_lowpass(high_hz, rate_hz, num_taps)
        }
        FilterKind::Bandpass => {
            if !(low_hz > 0.0 && low_hz < high_hz && high_hz <= nyquist) {
                return Err(Error::Design(format!(
                    "band edges {low_hz}-{high_hz} Hz must satisfy 0 < low < high <= {nyquist} Hz"
                )));
            }
            let upper = hamming_lowpass(high_hz, rate_hz, num_taps);
            let lower = hamming_lowpass(low_hz, rate_hz, num_taps);
            upper.iter().zip(&lower).map(|(u, l)| u - l).collect()
        }
    };
    Ok(FirKernel {
        taps,
        design: FirDesign { kind, low_hz, high_hz, rate_hz, num_taps },
    })
}

/// Causal direct-form convolution; samples before the start are zero.
pub fn apply_fir(x: &ChannelSeries, kernel: &FirKernel) -> Result<ChannelSeries> {
    let taps = kernel.taps();
    if x.len() < taps.len() {
        return Err(Error::Length { needed: taps.len(), got: x.len() });
    }
    let input = x.samples();
    let output = (0..input.len())
        .map(|n| {
            let reach = taps.len().min(n + 1);
            taps[..reach]
                .iter()
                .zip(input[n + 1 - reach..=n].iter().rev())
                .map(|(h, v)| h * v)
                .sum()
        })
        .collect();
    ChannelSeries::new(output, x.rate_hz())
}

/// Subtracts the per-sample mean across channels from every channel.
pub fn average_rereference(channels: &[ChannelSeries]) -> Result<Vec<ChannelSeries>> {
    if channels.len() < 2 {
        return Err(Error::Shape(format!(
            "average reference needs at least 2 channels, got {}",
            channels.len()
        )));
    }
    let len = channels[0].len();
    let rate = channels[0].rate_hz();
    if let Some((i, c)) = channels
        .iter()
        .enumerate()
        .find(|(_, c)| c.len() != len || c.rate_hz() != rate)
    {
        return Err(Error::Shape(format!(
            "channel {i} has {} samples at {} Hz, channel 0 has {len} at {rate} Hz",
            c.len(),
            c.rate_hz()
        )));
    }
    let count = channels.len() as f64;
    let reference: Vec<f64> = (0..len)
        .map(|t| channels.iter().map(|c| c.samples()[t]).sum::<f64>() / count)
        .collect();
    channels
        .iter()
        .map(|c| {
            let out = c.samples().iter().zip(&reference).map(|(v, r)| v - r).collect();
            ChannelSeries::new(out, rate)
        })
        .collect()
}

/// Keeps every `factor`-th sample starting at index 0. The caller is
/// responsible for band-limiting first.
pub fn downsample(x: &ChannelSeries, factor: usize) -> Result<ChannelSeries> {
    if factor == 0 {
        return Err(Error::Argument("downsampling factor must be at least 1".into()));
    }
    let out = x.samples().iter().step_by(factor).copied().collect();
    ChannelSeries::new(out, x.rate_hz() / factor as f64)
}

pub fn zscore(x: &ChannelSeries) -> Result<(ChannelSeries, ZScoreParams)> {
    let params = ZScoreParams::fit(x.samples())?;
    Ok((ChannelSeries::new(params.apply(x.samples()), x.rate_hz())?, params))
}

/// Scales into `[0, 1]` with `params`, or with the series' own range when
/// `params` is `None`. Values outside a supplied range pass through unclipped.
pub fn minmax_normalize(
    x: &ChannelSeries,
    params: Option<MinMaxParams>,
) -> Result<(ChannelSeries, MinMaxParams)> {
    let params = match params {
        Some(p) => MinMaxParams::new(p.min, p.max)?,
        None => MinMaxParams::fit(x.samples())?,
    };
    Ok((ChannelSeries::new(params.apply(x.samples()), x.rate_hz())?, params))
}

/// The seven spectral groupings used as filter-bank settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrequencyBand {
    #[serde(rename = "FB1")]
    Fb1,
    #[serde(rename = "FB2")]
    Fb2,
    #[serde(rename = "FB3")]
    Fb3,
    #[serde(rename = "FB4")]
    Fb4,
    #[serde(rename = "FB5")]
    Fb5,
    #[serde(rename = "FB6")]
    Fb6,
    #[serde(rename = "FB7")]
    Fb7,
}

impl FrequencyBand {
    pub const ALL: [FrequencyBand; 7] = [
        FrequencyBand::Fb1,
        FrequencyBand::Fb2,
        FrequencyBand::Fb3,
        FrequencyBand::Fb4,
        FrequencyBand::Fb5,
        FrequencyBand::Fb6,
        FrequencyBand::Fb7,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FrequencyBand::Fb1 => "FB1",
            FrequencyBand::Fb2 => "FB2",
            FrequencyBand::Fb3 => "FB3",
            FrequencyBand::Fb4 => "FB4",
            FrequencyBand::Fb5 => "FB5",
            FrequencyBand::Fb6 => "FB6",
            FrequencyBand::Fb7 => "FB7",
        }
    }

    /// `(low_hz, high_hz)`.
    pub fn edges(self) -> (f64, f64) {
        match self {
            FrequencyBand::Fb1 => (0.5, 3.0),
            FrequencyBand::Fb2 => (4.0, 8.0),
            FrequencyBand::Fb3 => (9.0, 12.0),
            FrequencyBand::Fb4 => (13.0, 30.0),
            FrequencyBand::Fb5 => (30.0, 50.0),
            FrequencyBand::Fb6 => (0.5, 8.0),
            FrequencyBand::Fb7 => (0.5, 12.0),
        }
    }

    pub fn low_hz(self) -> f64 {
        self.edges().0
    }

    pub fn high_hz(self) -> f64 {
        self.edges().1
    }

    /// Transition width used for the default kernel length: 1 Hz, narrowed
    /// to half the lower edge for bands starting below 2 Hz.
    pub fn transition_hz(self) -> f64 {
        (self.low_hz() / 2.0).min(1.0)
    }

    pub fn default_num_taps(self, rate_hz: f64) -> usize {
        default_num_taps(rate_hz, self.transition_hz())
    }

    /// Bandpass kernel for this band. The upper edge is clamped to Nyquist.
    pub fn kernel(self, rate_hz: f64, num_taps: Option<usize>) -> Result<FirKernel> {
        let (low, high) = self.edges();
        let taps = num_taps.unwrap_or_else(|| self.default_num_taps(rate_hz));
        design_fir(FilterKind::Bandpass, low, high.min(rate_hz / 2.0), rate_hz, taps)
    }
}

impl fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FrequencyBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrequencyBand::ALL
            .into_iter()
            .find(|b| b.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Argument(format!("unknown frequency band {s:?} (expected FB1..FB7)")))
    }
}

/// Filters every EEG channel of `recording` into `band`. Kinematics and trial
/// markers are untouched; the band is recorded on the result.
pub fn band_filter(
    recording: &SubjectRecording,
    band: FrequencyBand,
    num_taps: Option<usize>,
) -> Result<SubjectRecording> {
    let kernel = band.kernel(recording.rate_hz(), num_taps)?;
    let mut out = recording.clone();
    for channel in out.eeg_mut() {
        let series = ChannelSeries::new(std::mem::take(channel), recording.rate_hz())?;
        *channel = apply_fir(&series, &kernel)?.into_samples();
    }
    out.set_band(Some(band));
    Ok(out)
}
