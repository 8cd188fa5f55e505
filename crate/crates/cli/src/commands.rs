use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use kinetrace::dataset::{
    generate_synthetic_subject, load_subject, save_subject, select_channels, validate_subject_dir, DiagnosticKind,
    SubjectRecording, SyntheticConfig,
};
use kinetrace::decoders::{load_model, save_model};
use kinetrace::eval::{build_sweep_report, trajectory_csv, SweepCell, AXES};
use kinetrace::experiment::{apply_model, prepare, run_loso, run_subject_dependent, ExperimentConfig, ExperimentOutcome};
use kinetrace::pipeline::PreprocessConfig;

use crate::config::{BandSetting, RunConfig};
use crate::exit::{self, invalid};

pub const MODEL_FILE: &str = "model.ktm";
pub const TRAIN_REPORT_FILE: &str = "train_report.csv";
pub const PCC_FILE: &str = "pcc.csv";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub fn validate(dirs: &[PathBuf]) -> u8 {
    let mut code = exit::OK;
    for dir in dirs {
        let diagnostics = validate_subject_dir(dir);
        if diagnostics.is_empty() {
            println!("{}: ok", dir.display());
            continue;
        }
        for d in &diagnostics {
            println!("{}: {d}", dir.display());
        }
        let io = diagnostics.iter().any(|d| d.kind == DiagnosticKind::Io);
        code = code.max(if io { exit::IO } else { exit::INVALID });
    }
    code
}

pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SyntheticConfig>(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (recording, truth) = generate_synthetic_subject(&cfg)?;
    save_subject(&recording, out)?;
    let json = serde_json::to_string_pretty(&truth)?;
    write(&out.join(GROUND_TRUTH_FILE), format!("{json}\n"))?;
    println!(
        "{}: {} channels, {} trials, {} samples at {} Hz",
        out.display(),
        recording.n_channels(),
        recording.trials().len(),
        recording.n_samples(),
        recording.rate_hz()
    );
    Ok(())
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Loads every configured subject, keeping the configured channels.
pub fn load_subjects(config: &RunConfig) -> anyhow::Result<Vec<SubjectRecording>> {
    let mut out: Vec<SubjectRecording> = Vec::with_capacity(config.subjects.len());
    for dir in &config.subjects {
        let mut rec = load_subject(dir).with_context(|| format!("loading subject {}", dir.display()))?;
        if let Some(channels) = &config.channels {
            rec = select_channels(&rec, channels).with_context(|| format!("subject {}", dir.display()))?;
        }
        if out.iter().any(|o| o.subject_id() == rec.subject_id()) {
            return Err(invalid(format!("subject id {} appears twice", rec.subject_id())));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn preprocess_config(config: &RunConfig, band: BandSetting) -> PreprocessConfig {
    config.preprocess.clone().with_band(band.0)
}

pub fn cell(band: BandSetting, decoder: kinetrace::decoders::DecoderKind, outcome: &ExperimentOutcome) -> SweepCell {
    SweepCell {
        band: band.0,
        lag: outcome.model.meta.lag,
        decoder,
        subject: outcome.test_subject.clone(),
        report: outcome.pcc,
    }
}

pub fn prepare_dir(out: &Path, config: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(EFFECTIVE_CONFIG_FILE), config.to_toml()?)
}

pub fn train(config: &RunConfig) -> anyhow::Result<()> {
    let (band, lag, decoder) = config.single_cell()?;
    let raw = load_subjects(config)?;
    let held_out = match (&config.held_out, config.loso) {
        (Some(id), true) => {
            if !raw.iter().any(|r| r.subject_id() == id) {
                return Err(invalid(format!("held-out subject {id} is not among the loaded subjects")));
            }
            Some(id.clone())
        }
        (None, true) => return Err(invalid("train with loso = true needs held_out")),
        _ => {
            if raw.len() != 1 {
                return Err(invalid(format!("subject-dependent train needs one subject, got {}", raw.len())));
            }
            None
        }
    };
    let out = config.out_dir();
    prepare_dir(out, config)?;
    let pre = preprocess_config(config, band);
    let prepared = raw.iter().map(|r| prepare(r, &pre)).collect::<kinetrace::Result<Vec<_>>>()?;
    let experiment = ExperimentConfig {
        lag,
        decoder,
        train: config.training(),
        split_seed: config.seed,
        pcc_mode: config.pcc_mode,
    };
    let outcome = match &held_out {
        Some(id) => run_loso(&prepared, id, &experiment)?,
        None => run_subject_dependent(&prepared[0], &experiment)?,
    };
    save_model(&outcome.model, &out.join(MODEL_FILE))?;
    if let Some(report) = &outcome.train_report {
        write(&out.join(TRAIN_REPORT_FILE), report.to_csv())?;
    }
    let report = build_sweep_report(vec![cell(band, decoder, &outcome)])?;
    write(&out.join(PCC_FILE), report.to_csv())?;
    let pcc: Vec<String> = AXES
        .iter()
        .zip(outcome.pcc.pcc)
        .map(|(a, p)| format!("{a} {}", p.map_or("undefined".into(), |v| format!("{v:.3}"))))
        .collect();
    println!("{decoder} {band} {}: test subject {}, PCC {}", outcome.model.meta.lag.label(), outcome.test_subject, pcc.join(", "));
    Ok(())
}

pub fn export(model: &Path, subject: &Path, trial: usize, out: &Path) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let rec = load_subject(subject).with_context(|| format!("loading subject {}", subject.display()))?;
    if trial >= rec.trials().len() {
        return Err(invalid(format!("subject {} has {} trials, no trial {trial}", rec.subject_id(), rec.trials().len())));
    }
    let (measured, predicted, _) = apply_model(&model, &rec, &[trial])?;
    let meta = &model.meta;
    let csv = trajectory_csv(&measured, &predicted, &meta.normalization.kinematics, meta.lag.rate_hz, 0.0)?;
    write(out, csv)?;
    println!("{}: {} samples of trial {trial}", out.display(), measured.rows());
    Ok(())
}
