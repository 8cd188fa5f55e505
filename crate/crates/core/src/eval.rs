//! Pearson correlation between measured and decoded trajectories, sweep
//! reports, and trajectory export.
//!
//! Numbers in report CSVs are written with six significant digits
//! ([`fmt_sig`]); trajectory CSVs carry the shortest text that reproduces
//! each value at f32 precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{LagWindowSpec, TargetMatrix};
use crate::decoders::DecoderKind;
use crate::error::{Error, Result};
use crate::signal::{FrequencyBand, MinMaxParams, DEGENERATE_STD};

pub const AXES: [&str; 3] = ["x", "y", "z"];

/// Text for an undefined PCC in CSV output.
pub const UNDEFINED: &str = "NA";

/// Formats `v` with six significant digits, rounding to nearest on the
/// exact binary value. Magnitudes outside `[1e-5, 1e6)` use exponent form.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Pearson correlation with `T - 1` sample statistics:
///
/// ```text
/// r = 1/(T-1) * sum_i ((x_i - mean_x) / s_x) * ((y_i - mean_y) / s_y)
/// ```
///
/// clamped to `[-1, 1]`.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("series lengths {} and {} differ", x.len(), y.len())));
    }
    let t = x.len();
    if t < 2 {
        return Err(Error::Length { needed: 2, got: t });
    }
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / t as f64;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (t - 1) as f64;
        (mean, var.sqrt())
    };
    let (mx, sx) = stats(x);
    let (my, sy) = stats(y);
    for (name, s, m) in [("first", sx, mx), ("second", sy, my)] {
        if !(s > DEGENERATE_STD * m.abs().max(1.0)) {
            return Err(Error::DegenerateSeries(format!("{name} series is constant over {t} samples")));
        }
    }
    let sum: f64 = x.iter().zip(y).map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy)).sum();
    Ok((sum / (t - 1) as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PccMode {
    /// One correlation over all test samples concatenated.
    #[default]
    Concatenated,
    /// Mean of per-trial correlations.
    PerTrial,
}

impl PccMode {
    pub fn id(self) -> &'static str {
        match self {
            PccMode::Concatenated => "concatenated",
            PccMode::PerTrial => "per_trial",
        }
    }
}

/// Per-direction correlation. `None` marks an undefined value, e.g. a
/// decoder whose output is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PccReport {
    pub pcc: [Option<f64>; 3],
    pub samples: usize,
    pub mode: PccMode,
}

impl PccReport {
    pub fn is_defined(&self) -> bool {
        self.pcc.iter().all(Option::is_some)
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateSeries(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Correlation between measured and predicted rows. `trials` gives each
/// trial's row range and is only used in [`PccMode::PerTrial`].
pub fn evaluate(
    measured: &TargetMatrix,
    predicted: &TargetMatrix,
    trials: &[Range<usize>],
    mode: PccMode,
) -> Result<PccReport> {
    if measured.rows() != predicted.rows() {
        return Err(Error::Shape(format!(
            "{} measured rows vs {} predicted rows",
            measured.rows(),
            predicted.rows()
        )));
    }
    let mut pcc_axes = [None; 3];
    for (d, slot) in pcc_axes.iter_mut().enumerate() {
        let (m, p) = (measured.axis(d), predicted.axis(d));
        *slot = match mode {
            PccMode::Concatenated => defined(pcc(&m, &p))?,
            PccMode::PerTrial => {
                let mut values = Vec::with_capacity(trials.len());
                for r in trials {
                    if r.end > m.len() || r.start > r.end {
                        return Err(Error::Shape(format!("trial rows {r:?} exceed {} samples", m.len())));
                    }
                    values.push(defined(pcc(&m[r.clone()], &p[r.clone()]))?);
                }
                if values.is_empty() || values.iter().any(Option::is_none) {
                    None
                } else {
                    Some(values.iter().flatten().sum::<f64>() / values.len() as f64)
                }
            }
        };
    }
    Ok(PccReport { pcc: pcc_axes, samples: measured.rows(), mode })
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub band: Option<FrequencyBand>,
    pub lag: LagWindowSpec,
    pub decoder: DecoderKind,
    pub subject: String,
    pub report: PccReport,
}

type GroupKey = (Option<FrequencyBand>, u64, u64, DecoderKind, PccMode);

impl SweepCell {
    fn group(&self) -> GroupKey {
        (self.band, self.lag.lag_far_ms.to_bits(), self.lag.lag_near_ms.to_bits(), self.decoder, self.report.mode)
    }

    fn sort_key(&self) -> (Option<FrequencyBand>, f64, f64, DecoderKind, PccMode, String) {
        (self.band, self.lag.lag_far_ms, self.lag.lag_near_ms, self.decoder, self.report.mode, self.subject.clone())
    }
}

/// Mean over subjects of one `(band, lag, decoder, mode)` group. Undefined
/// cells are left out; `subjects[d]` counts those that contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub band: Option<FrequencyBand>,
    pub lag: LagWindowSpec,
    pub decoder: DecoderKind,
    pub mode: PccMode,
    pub pcc: [Option<f64>; 3],
    pub subjects: [usize; 3],
}

/// Cells in canonical order plus their group means.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    cells: Vec<SweepCell>,
    means: Vec<SweepMean>,
}

pub const SWEEP_CSV_HEADER: &str =
    "band,window_ms,lag_far_ms,lag_near_ms,decoder,subject,pcc_mode,direction,pcc,n";

fn band_label(band: Option<FrequencyBand>) -> &'static str {
    band.map_or("none", FrequencyBand::id)
}

fn fmt_pcc(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), fmt_sig)
}

pub fn build_sweep_report(mut cells: Vec<SweepCell>) -> Result<SweepReport> {
    if cells.is_empty() {
        return Err(Error::EmptyReport);
    }
    cells.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).expect("finite lags"));
    let mut groups: BTreeMap<GroupKey, Vec<&SweepCell>> = BTreeMap::new();
    for c in &cells {
        groups.entry(c.group()).or_default().push(c);
    }
    let mut means: Vec<SweepMean> = groups
        .values()
        .map(|members| {
            let first = members[0];
            let mut pcc = [None; 3];
            let mut subjects = [0; 3];
            for d in 0..3 {
                let values: Vec<f64> = members.iter().filter_map(|c| c.report.pcc[d]).collect();
                subjects[d] = values.len();
                if !values.is_empty() {
                    pcc[d] = Some(values.iter().sum::<f64>() / values.len() as f64);
                }
            }
            SweepMean { band: first.band, lag: first.lag, decoder: first.decoder, mode: first.report.mode, pcc, subjects }
        })
        .collect();
    means.sort_by(|a, b| {
        (a.band, a.lag.lag_far_ms, a.lag.lag_near_ms, a.decoder, a.mode)
            .partial_cmp(&(b.band, b.lag.lag_far_ms, b.lag.lag_near_ms, b.decoder, b.mode))
            .expect("finite lags")
    });
    Ok(SweepReport { cells, means })
}

impl SweepReport {
    pub fn cells(&self) -> &[SweepCell] {
        &self.cells
    }

    pub fn means(&self) -> &[SweepMean] {
        &self.means
    }

    /// One row per cell and direction, then one `subject = mean` row per
    /// group and direction. `n` is the sample count for cells and the number
    /// of contributing subjects for means.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        let lag_cols = |lag: &LagWindowSpec| {
            format!("{},{},{}", fmt_sig(lag.window_ms()), fmt_sig(lag.lag_far_ms), fmt_sig(lag.lag_near_ms))
        };
        for c in &self.cells {
            for (d, axis) in AXES.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{axis},{},{}",
                    band_label(c.band),
                    lag_cols(&c.lag),
                    c.decoder,
                    c.subject,
                    c.report.mode.id(),
                    fmt_pcc(c.report.pcc[d]),
                    c.report.samples
                );
            }
        }
        for m in &self.means {
            for (d, axis) in AXES.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},mean,{},{axis},{},{}",
                    band_label(m.band),
                    lag_cols(&m.lag),
                    m.decoder,
                    m.mode.id(),
                    fmt_pcc(m.pcc[d]),
                    m.subjects[d]
                );
            }
        }
        out
    }
}

/// Shortest decimal text that parses back to the same f32.
fn fmt_f32(v: f64) -> String {
    format!("{}", v as f32)
}

pub const TRAJECTORY_CSV_HEADER: &str = "time_s,meas_x,meas_y,meas_z,pred_x,pred_y,pred_z";

/// Plot-ready CSV of measured and predicted positions in recording units.
/// `range` maps normalized values back with `v * (max - min) + min`.
/// `time_s` counts from `start_s` in steps of `1 / rate_hz`.
pub fn trajectory_csv(
    measured: &TargetMatrix,
    predicted: &TargetMatrix,
    range: &[MinMaxParams; 3],
    rate_hz: f64,
    start_s: f64,
) -> Result<String> {
    if measured.rows() != predicted.rows() {
        return Err(Error::Shape(format!(
            "{} measured rows vs {} predicted rows",
            measured.rows(),
            predicted.rows()
        )));
    }
    let mut out = format!("{TRAJECTORY_CSV_HEADER}\n");
    for (i, (m, p)) in measured.as_rows().iter().zip(predicted.as_rows()).enumerate() {
        let _ = write!(out, "{}", fmt_f32(start_s + i as f64 / rate_hz));
        for (row, d) in [(m, 0), (m, 1), (m, 2), (p, 0), (p, 1), (p, 2)] {
            let r = range[d];
            let _ = write!(out, ",{}", fmt_f32(row[d] * (r.max - r.min) + r.min));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_trajectory(
    measured: &TargetMatrix,
    predicted: &TargetMatrix,
    range: &[MinMaxParams; 3],
    rate_hz: f64,
    start_s: f64,
    path: &Path,
) -> Result<()> {
    let text = trajectory_csv(measured, predicted, range, rate_hz, start_s)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
