//! Run configuration: a TOML file, then environment and flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use kinetrace::decoders::{DecoderKind, TrainConfig};
use kinetrace::eval::PccMode;
use kinetrace::experiment::LagMs;
use kinetrace::nn::AdamConfig;
use kinetrace::pipeline::PreprocessConfig;
use kinetrace::signal::FrequencyBand;
use serde::{Deserialize, Serialize};

use crate::exit::invalid;

/// A band-filter setting; `none` skips band filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BandSetting(pub Option<FrequencyBand>);

impl FromStr for BandSetting {
    type Err = kinetrace::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("none") {
            Ok(Self(None))
        } else {
            s.parse().map(|b| Self(Some(b)))
        }
    }
}

impl TryFrom<String> for BandSetting {
    type Error = kinetrace::Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BandSetting> for String {
    fn from(b: BandSetting) -> String {
        b.to_string()
    }
}

impl fmt::Display for BandSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.map_or("none", FrequencyBand::id))
    }
}

/// Training hyperparameters; the seed comes from [`RunConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { max_epochs: t.max_epochs, batch_size: t.batch_size, patience: t.patience, adam: t.adam }
    }
}

impl TrainSection {
    pub fn with_seed(self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            adam: self.adam,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Interchange subject directories; relative paths resolve against the
    /// config file's directory.
    pub subjects: Vec<PathBuf>,
    /// EEG channels to keep, in order; all channels when absent.
    pub channels: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    /// Seed for trial splits and network training.
    pub seed: u64,
    /// Sweep worker threads; available cores when absent.
    pub jobs: Option<usize>,
    pub bands: Vec<BandSetting>,
    pub lags: Vec<LagMs>,
    pub decoders: Vec<DecoderKind>,
    /// Leave-one-subject-out instead of per-subject splits.
    pub loso: bool,
    /// Held-out subject id for `train` in LOSO mode.
    pub held_out: Option<String>,
    pub pcc_mode: PccMode,
    pub preprocess: PreprocessConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subjects: Vec::new(),
            channels: None,
            out: None,
            seed: 0,
            jobs: None,
            bands: vec![BandSetting(Some(FrequencyBand::Fb1))],
            lags: vec![LagMs::new(250.0, 0.0)],
            decoders: vec![DecoderKind::Mlr],
            loso: false,
            held_out: None,
            pcc_mode: PccMode::Concatenated,
            preprocess: PreprocessConfig::default(),
            train: TrainSection::default(),
        }
    }
}

/// Values given on the command line or through `KINETRACE_*` variables.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub bands: Vec<BandSetting>,
    pub lag_ms: Option<f64>,
    pub window_ms: Option<f64>,
    pub decoders: Vec<DecoderKind>,
    pub subjects: Vec<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut config.subjects {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        if let Some(out) = &mut config.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: Overrides) -> anyhow::Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if !o.bands.is_empty() {
            self.bands = o.bands;
        }
        if !o.decoders.is_empty() {
            self.decoders = o.decoders;
        }
        if !o.subjects.is_empty() {
            self.subjects = o.subjects;
        }
        match (o.lag_ms, o.window_ms) {
            (Some(lag), Some(window)) => self.lags = vec![LagMs::new(lag, lag - window)],
            (Some(lag), None) => self.lags = vec![LagMs::new(lag, 0.0)],
            (None, Some(_)) => return Err(invalid("--window-ms needs --lag-ms")),
            (None, None) => {}
        }
        Ok(())
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.subjects.is_empty() {
            return Err(invalid("no subjects configured"));
        }
        for (i, s) in self.subjects.iter().enumerate() {
            if self.subjects[..i].contains(s) {
                return Err(invalid(format!("subject {} listed twice", s.display())));
            }
        }
        if self.out.is_none() {
            return Err(invalid("no output directory (set `out` or pass --out)"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be at least 1"));
        }
        if let Some(channels) = &self.channels {
            if channels.is_empty() {
                return Err(invalid("channel list is empty"));
            }
        }
        for (what, empty) in
            [("bands", self.bands.is_empty()), ("lags", self.lags.is_empty()), ("decoders", self.decoders.is_empty())]
        {
            if empty {
                return Err(invalid(format!("{what} list is empty")));
            }
        }
        for lag in &self.lags {
            if !(lag.lag_near_ms >= 0.0 && lag.lag_far_ms >= lag.lag_near_ms && lag.lag_far_ms.is_finite()) {
                return Err(invalid(format!(
                    "lag window {}-{} ms needs lag_far >= lag_near >= 0",
                    lag.lag_far_ms, lag.lag_near_ms
                )));
            }
            if let Some(rate) = self.preprocess.target_rate_hz {
                lag.at_rate(rate).map_err(|e| invalid(e.to_string()))?;
            }
        }
        if self.preprocess.band.is_some() {
            return Err(invalid("set the band through `bands`, not `preprocess.band`"));
        }
        if self.loso && self.subjects.len() < 2 {
            return Err(invalid("leave-one-subject-out needs at least 2 subjects"));
        }
        if self.held_out.is_some() && !self.loso {
            return Err(invalid("held_out is only meaningful with loso = true"));
        }
        self.training().validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn training(&self) -> TrainConfig {
        self.train.with_seed(self.seed)
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated config has an output directory")
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn single_cell(&self) -> anyhow::Result<(BandSetting, LagMs, DecoderKind)> {
        if self.bands.len() != 1 || self.lags.len() != 1 || self.decoders.len() != 1 {
            bail!(invalid(format!(
                "train needs exactly one band, lag and decoder, got {}, {} and {}",
                self.bands.len(),
                self.lags.len(),
                self.decoders.len()
            )));
        }
        Ok((self.bands[0], self.lags[0], self.decoders[0]))
    }
}
