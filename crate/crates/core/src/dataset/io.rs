//! Subject directory layout:
//!
//! ```text
//! <dir>/manifest.json   subject metadata, trial markers, blob checksums
//! <dir>/eeg.f32         channels x samples, row-major, little-endian f32
//! <dir>/kin.f32         3 x samples (x, y, z), row-major, little-endian f32
//! ```
//!
//! Checksums are lowercase hex SHA-256 of the blob bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SubjectRecording, TrialMarker};
use crate::error::{Error, Result};
use crate::signal::FrequencyBand;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EEG_FILE: &str = "eeg.f32";
pub const KIN_FILE: &str = "kin.f32";
const FORMAT_TAG: &str = "kinetrace-subject/1";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    subject_id: String,
    rate_hz: f64,
    channel_names: Vec<String>,
    n_samples: usize,
    trials: Vec<TrialMarker>,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    band: Option<FrequencyBand>,
    checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_rows<'a>(rows: impl IntoIterator<Item = &'a Vec<f64>>) -> Vec<u8> {
    rows.into_iter()
        .flatten()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

fn decode_rows(bytes: &[u8], n_rows: usize, n_samples: usize) -> Vec<Vec<f64>> {
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if n_samples == 0 {
        return vec![Vec::new(); n_rows];
    }
    values.chunks(n_samples).map(<[f64]>::to_vec).collect()
}

/// Writes `recording` as an interchange directory, creating `dir` if needed.
///
/// Samples are stored as f32; loading returns exactly what was saved
/// whenever the samples were f32-representable, which holds for anything
/// previously loaded or produced by the synthetic generator.
pub fn save_subject(recording: &SubjectRecording, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let eeg = encode_rows(recording.eeg());
    let kin = encode_rows(recording.kinematics());
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        subject_id: recording.subject_id().into(),
        rate_hz: recording.rate_hz(),
        channel_names: recording.channel_names().to_vec(),
        n_samples: recording.n_samples(),
        trials: recording.trials().to_vec(),
        dtype: DTYPE.into(),
        band: recording.band(),
        checksums: BTreeMap::from([
            (EEG_FILE.to_string(), sha256_hex(&eeg)),
            (KIN_FILE.to_string(), sha256_hex(&kin)),
        ]),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(EEG_FILE), &eeg)?;
    write(&dir.join(KIN_FILE), &kin)?;
    write(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Io,
    Format,
    Validation,
}

/// One problem found in a subject directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DiagnosticKind::Io => "io",
            DiagnosticKind::Format => "format",
            DiagnosticKind::Validation => "invalid",
        };
        write!(f, "{}: {kind}: {}", self.file, self.message)
    }
}

impl Diagnostic {
    fn new(file: &str, kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self { file: file.into(), kind, message: message.into() }
    }
}

struct Scan {
    recording: Option<SubjectRecording>,
    diagnostics: Vec<Diagnostic>,
}

fn scan(dir: &Path) -> Scan {
    use DiagnosticKind::*;
    let mut diagnostics = Vec::new();
    let fail = |diagnostics: Vec<Diagnostic>| Scan { recording: None, diagnostics };

    let text = match fs::read_to_string(dir.join(MANIFEST_FILE)) {
        Ok(t) => t,
        Err(e) => return fail(vec![Diagnostic::new(MANIFEST_FILE, Io, e.to_string())]),
    };
    let manifest: Manifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return fail(vec![Diagnostic::new(MANIFEST_FILE, Format, e.to_string())]),
    };
    if manifest.format != FORMAT_TAG {
        diagnostics.push(Diagnostic::new(
            MANIFEST_FILE,
            Format,
            format!("format tag {:?}, expected {FORMAT_TAG:?}", manifest.format),
        ));
    }
    if manifest.dtype != DTYPE {
        diagnostics.push(Diagnostic::new(
            MANIFEST_FILE,
            Format,
            format!("dtype {:?}, expected {DTYPE:?}", manifest.dtype),
        ));
    }

    let mut blob = |name: &str, rows: usize| -> Option<Vec<Vec<f64>>> {
        let bytes = match fs::read(dir.join(name)) {
            Ok(b) => b,
            Err(e) => {
                diagnostics.push(Diagnostic::new(name, Io, e.to_string()));
                return None;
            }
        };
        let expected = rows * manifest.n_samples * 4;
        if bytes.len() != expected {
            diagnostics.push(Diagnostic::new(
                name,
                Format,
                format!(
                    "{} bytes, manifest declares {rows} x {} f32 samples = {expected} bytes",
                    bytes.len(),
                    manifest.n_samples
                ),
            ));
            return None;
        }
        match manifest.checksums.get(name) {
            None => {
                diagnostics.push(Diagnostic::new(name, Format, "no checksum in manifest"));
                return None;
            }
            Some(sum) if *sum != sha256_hex(&bytes) => {
                diagnostics.push(Diagnostic::new(name, Format, "checksum mismatch"));
                return None;
            }
            Some(_) => {}
        }
        Some(decode_rows(&bytes, rows, manifest.n_samples))
    };
    let eeg = blob(EEG_FILE, manifest.channel_names.len());
    let kin = blob(KIN_FILE, 3);

    let (Some(eeg), Some(kin)) = (eeg, kin) else {
        return fail(diagnostics);
    };
    if !diagnostics.is_empty() {
        return fail(diagnostics);
    }
    let [kx, ky, kz]: [Vec<f64>; 3] = kin.try_into().expect("three kinematic rows");
    let rec = SubjectRecording {
        subject_id: manifest.subject_id,
        channel_names: manifest.channel_names,
        eeg,
        kinematics: [kx, ky, kz],
        rate_hz: manifest.rate_hz,
        trials: manifest.trials,
        band: manifest.band,
    };
    let problems = rec.problems();
    if problems.is_empty() {
        Scan { recording: Some(rec), diagnostics }
    } else {
        fail(
            problems
                .into_iter()
                .map(|p| Diagnostic::new(MANIFEST_FILE, Validation, p))
                .collect(),
        )
    }
}

/// Runs every format and invariant check on a subject directory and reports
/// all problems found, one per file and issue. Empty means valid.
pub fn validate_subject_dir(dir: &Path) -> Vec<Diagnostic> {
    scan(dir).diagnostics
}

/// Loads and fully validates a subject directory.
pub fn load_subject(dir: &Path) -> Result<SubjectRecording> {
    let scan = scan(dir);
    if let Some(rec) = scan.recording {
        return Ok(rec);
    }
    let first = scan.diagnostics.into_iter().next().expect("failed scan has diagnostics");
    let context = dir.join(&first.file);
    Err(match first.kind {
        DiagnosticKind::Io => Error::io(
            context,
            std::io::Error::new(std::io::ErrorKind::NotFound, first.message),
        ),
        DiagnosticKind::Format => Error::format(context.display(), first.message),
        DiagnosticKind::Validation => Error::validation(context.display(), first.message),
    })
}
