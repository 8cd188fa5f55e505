//! One decoder fit and evaluation, subject-dependent or leave-one-subject-out.
//!
//! Every step that learns from data (normalization, decoder fit, early
//! stopping) sees only training or validation trials. Test rows are touched
//! once, for prediction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    select_channels, split_loso, split_subject_dependent, LagWindowSpec, SubjectRecording, TargetMatrix,
};
use crate::decoders::{fit_decoder, DecoderKind, ModelMeta, TrainConfig, TrainReport, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, PccMode, PccReport};
use crate::pipeline::{assemble, preprocess, Normalization, PreprocessConfig, TrialData};

/// Lag window in milliseconds; the sample grid comes from the processed rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagMs {
    pub lag_far_ms: f64,
    pub lag_near_ms: f64,
}

impl LagMs {
    pub fn new(lag_far_ms: f64, lag_near_ms: f64) -> Self {
        Self { lag_far_ms, lag_near_ms }
    }

    pub fn at_rate(self, rate_hz: f64) -> Result<LagWindowSpec> {
        LagWindowSpec::new(self.lag_far_ms, self.lag_near_ms, rate_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lag: LagMs,
    pub decoder: DecoderKind,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub pcc_mode: PccMode,
}

/// A recording after preprocessing, tagged with the settings used.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    recording: SubjectRecording,
    config: PreprocessConfig,
}

impl Prepared {
    pub fn recording(&self) -> &SubjectRecording {
        &self.recording
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }
}

pub fn prepare(recording: &SubjectRecording, config: &PreprocessConfig) -> Result<Prepared> {
    Ok(Prepared { recording: preprocess(recording, config)?, config: config.clone() })
}

pub struct ExperimentOutcome {
    pub model: TrainedModel,
    pub train_report: Option<TrainReport>,
    pub pcc: PccReport,
    /// Normalized test targets and predictions, row-aligned.
    pub measured: TargetMatrix,
    pub predicted: TargetMatrix,
    pub test_subject: String,
    pub test_trials: Vec<usize>,
    pub test_rows: Vec<Range<usize>>,
    pub rate_hz: f64,
}

fn stack(parts: Vec<TrialData>) -> Result<TrialData> {
    let mut iter = parts.into_iter();
    let mut out = iter.next().ok_or_else(|| Error::Argument("no trials to stack".into()))?;
    for p in iter {
        out.append(&p)?;
    }
    Ok(out)
}

fn finish(
    config: &ExperimentConfig,
    meta: ModelMeta,
    train: TrialData,
    val: TrialData,
    test: TrialData,
    test_subject: String,
    rate_hz: f64,
) -> Result<ExperimentOutcome> {
    let (decoder, train_report) = fit_decoder(
        config.decoder,
        (&train.features, &train.targets),
        (&val.features, &val.targets),
        &config.train,
    )?;
    let model = TrainedModel { decoder, meta };
    let predicted = model.predict(&test.features)?;
    let pcc = evaluate(&test.targets, &predicted, &test.rows, config.pcc_mode)?;
    Ok(ExperimentOutcome {
        model,
        train_report,
        pcc,
        measured: test.targets,
        predicted,
        test_subject,
        test_trials: test.trials,
        test_rows: test.rows,
        rate_hz,
    })
}

/// Seeded train/val/test split of one subject's trials.
pub fn run_subject_dependent(subject: &Prepared, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let rec = &subject.recording;
    let spec = config.lag.at_rate(rec.rate_hz())?;
    let plan = split_subject_dependent(rec.trials().len(), config.split_seed)?;
    let normalization = Normalization::fit(&[(rec, &plan.train)], &spec)?;
    let normed = normalization.apply(rec)?;
    let meta = ModelMeta {
        subject_ids: vec![rec.subject_id().to_string()],
        channel_names: rec.channel_names().to_vec(),
        lag: spec,
        preprocess: subject.config.clone(),
        normalization,
    };
    finish(
        config,
        meta,
        assemble(&normed, &plan.train, &spec)?,
        assemble(&normed, &plan.val, &spec)?,
        assemble(&normed, &plan.test, &spec)?,
        rec.subject_id().to_string(),
        rec.rate_hz(),
    )
}

/// Trains on every subject except `held_out` and tests on all of its trials.
/// Normalization is pooled over the training subjects' training trials.
pub fn run_loso(subjects: &[Prepared], held_out: &str, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let first = subjects.first().ok_or_else(|| Error::Argument("no subjects".into()))?;
    let channels = first.recording.channel_names().to_vec();
    let rate = first.recording.rate_hz();
    for s in subjects {
        if s.config != first.config {
            return Err(Error::Argument("subjects were preprocessed with different settings".into()));
        }
        if (s.recording.rate_hz() - rate).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "subject {} is at {} Hz, expected {rate} Hz",
                s.recording.subject_id(),
                s.recording.rate_hz()
            )));
        }
    }
    let spec = config.lag.at_rate(rate)?;
    let aligned = subjects
        .iter()
        .map(|s| select_channels(&s.recording, &channels))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<(String, usize)> =
        aligned.iter().map(|r| (r.subject_id().to_string(), r.trials().len())).collect();
    let fold = split_loso(&counts, held_out, config.split_seed)?;
    let by_id = |id: &str| aligned.iter().find(|r| r.subject_id() == id).expect("fold subject exists");

    let parts: Vec<(&SubjectRecording, &[usize])> =
        fold.train_subjects.iter().map(|p| (by_id(&p.subject_id), p.train.as_slice())).collect();
    let normalization = Normalization::fit(&parts, &spec)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for p in &fold.train_subjects {
        let normed = normalization.apply(by_id(&p.subject_id))?;
        train.push(assemble(&normed, &p.train, &spec)?);
        val.push(assemble(&normed, &p.val, &spec)?);
    }
    let test = assemble(&normalization.apply(by_id(held_out))?, &fold.test_trials, &spec)?;
    let meta = ModelMeta {
        subject_ids: fold.train_subjects.iter().map(|p| p.subject_id.clone()).collect(),
        channel_names: channels,
        lag: spec,
        preprocess: first.config.clone(),
        normalization,
    };
    finish(config, meta, stack(train)?, stack(val)?, test, held_out.to_string(), rate)
}

/// Runs a saved model on `trials` of a raw recording: same preprocessing,
/// channel order and normalization as at training time. Returns normalized
/// targets, predictions and each trial's row range.
pub fn apply_model(
    model: &TrainedModel,
    recording: &SubjectRecording,
    trials: &[usize],
) -> Result<(TargetMatrix, TargetMatrix, Vec<Range<usize>>)> {
    let meta = &model.meta;
    let selected = select_channels(recording, &meta.channel_names)?;
    let processed = preprocess(&selected, &meta.preprocess)?;
    if (processed.rate_hz() - meta.lag.rate_hz).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "processed rate {} Hz does not match the model's {} Hz",
            processed.rate_hz(),
            meta.lag.rate_hz
        )));
    }
    let data = assemble(&meta.normalization.apply(&processed)?, trials, &meta.lag)?;
    let predicted = model.predict(&data.features)?;
    Ok((data.targets, predicted, data.rows))
}
