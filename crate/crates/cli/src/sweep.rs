//! Band x lag x decoder sweeps on a worker pool, resumable through an
//! append-only ledger of finished cells keyed by a hash of their inputs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::Context;
use kinetrace::decoders::DecoderKind;
use kinetrace::eval::{build_sweep_report, SweepCell};
use kinetrace::experiment::{prepare, run_loso, run_subject_dependent, ExperimentConfig, LagMs, Prepared};
use kinetrace::pipeline::PreprocessConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{cell, load_subjects, prepare_dir, preprocess_config, write};
use crate::config::{BandSetting, RunConfig, TrainSection};
use crate::exit::invalid;

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Everything that determines a cell's result.
#[derive(Serialize)]
struct CellKey<'a> {
    band: BandSetting,
    lag: LagMs,
    decoder: DecoderKind,
    /// Subject split for subject-dependent cells, held-out subject for LOSO.
    subject: &'a str,
    loso: bool,
    seed: u64,
    pcc_mode: kinetrace::eval::PccMode,
    preprocess: &'a PreprocessConfig,
    train: &'a TrainSection,
    channels: &'a Option<Vec<String>>,
    subjects: &'a [String],
}

#[derive(Debug, Clone)]
struct PendingCell {
    band: BandSetting,
    lag: LagMs,
    decoder: DecoderKind,
    subject: String,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct LedgerEntry {
    hash: String,
    cell: SweepCell,
}

fn cell_hash(key: &CellKey) -> String {
    let json = serde_json::to_vec(key).expect("cell key serializes");
    hex::encode(Sha256::digest(json))
}

/// Finished cells by hash. A torn final line from an interrupted append is
/// cut off so later appends start on a fresh line.
fn read_ledger(path: &Path) -> anyhow::Result<HashMap<String, SweepCell>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        log::warn!("{}: dropping incomplete final line", path.display());
        write(path, &text[..complete])?;
    }
    let mut done = HashMap::new();
    for (i, line) in text[..complete].lines().enumerate() {
        let entry: LedgerEntry = serde_json::from_str(line)
            .map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        done.insert(entry.hash, entry.cell);
    }
    Ok(done)
}

/// Runs `f` over `items` on up to `jobs` threads. After the first failure no
/// new items start; the error of the lowest failing index is returned.
fn parallel_for<T: Sync>(items: &[T], jobs: usize, f: impl Fn(&T) -> anyhow::Result<()> + Sync) -> anyhow::Result<()> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let errors = Mutex::new(Vec::new());
    thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                if let Err(e) = f(item) {
                    stop.store(true, Ordering::SeqCst);
                    errors.lock().expect("error list lock").push((i, e));
                }
            });
        }
    });
    let mut errors = errors.into_inner().expect("error list lock");
    errors.sort_by_key(|(i, _)| *i);
    errors.into_iter().next().map_or(Ok(()), |(_, e)| Err(e))
}

pub fn sweep(config: &RunConfig) -> anyhow::Result<()> {
    let out = config.out_dir();
    let raw = load_subjects(config)?;
    let ids: Vec<String> = raw.iter().map(|r| r.subject_id().to_string()).collect();
    let subject_paths: Vec<String> = config.subjects.iter().map(|p| p.display().to_string()).collect();
    prepare_dir(out, config)?;

    let mut grid = Vec::new();
    for &band in &config.bands {
        let pre = preprocess_config(config, band);
        for &lag in &config.lags {
            for &decoder in &config.decoders {
                for id in &ids {
                    let key = CellKey {
                        band,
                        lag,
                        decoder,
                        subject: id,
                        loso: config.loso,
                        seed: config.seed,
                        pcc_mode: config.pcc_mode,
                        preprocess: &pre,
                        train: &config.train,
                        channels: &config.channels,
                        subjects: &subject_paths,
                    };
                    grid.push(PendingCell { band, lag, decoder, subject: id.clone(), hash: cell_hash(&key) });
                }
            }
        }
    }

    let ledger_path = out.join(LEDGER_FILE);
    let done = read_ledger(&ledger_path)?;
    let skipped = grid.iter().filter(|c| done.contains_key(&c.hash)).count();
    if skipped > 0 {
        log::info!("{skipped} of {} cells already in the ledger", grid.len());
    }
    let ledger = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ledger_path)
        .with_context(|| format!("opening {}", ledger_path.display()))?;
    let ledger: Mutex<File> = Mutex::new(ledger);
    let finished = Mutex::new(done);
    let jobs = config.jobs();

    for &band in &config.bands {
        let pending: Vec<&PendingCell> = grid
            .iter()
            .filter(|c| c.band == band && !finished.lock().expect("ledger map lock").contains_key(&c.hash))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let pre = preprocess_config(config, band);
        let slots: Mutex<Vec<Option<Prepared>>> = Mutex::new(vec![None; raw.len()]);
        let indices: Vec<usize> = (0..raw.len()).collect();
        parallel_for(&indices, jobs, |&i| {
            let p = prepare(&raw[i], &pre).with_context(|| format!("preprocessing {} for {band}", ids[i]))?;
            slots.lock().expect("slot lock")[i] = Some(p);
            Ok(())
        })?;
        let prepared: Vec<Prepared> =
            slots.into_inner().expect("slot lock").into_iter().map(|p| p.expect("prepared")).collect();

        parallel_for(&pending, jobs, |c| {
            let experiment = ExperimentConfig {
                lag: c.lag,
                decoder: c.decoder,
                train: config.training(),
                split_seed: config.seed,
                pcc_mode: config.pcc_mode,
            };
            let context = || format!("cell {band} {}-{} ms {} {}", c.lag.lag_far_ms, c.lag.lag_near_ms, c.decoder, c.subject);
            let outcome = if config.loso {
                run_loso(&prepared, &c.subject, &experiment)
            } else {
                let i = ids.iter().position(|id| *id == c.subject).expect("grid subject is loaded");
                run_subject_dependent(&prepared[i], &experiment)
            }
            .with_context(context)?;
            let entry = LedgerEntry { hash: c.hash.clone(), cell: cell(band, c.decoder, &outcome) };
            let line = serde_json::to_string(&entry)? + "\n";
            {
                let mut file = ledger.lock().expect("ledger lock");
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .with_context(|| format!("appending to {}", ledger_path.display()))?;
            }
            finished.lock().expect("ledger map lock").insert(entry.hash, entry.cell);
            log::info!("{} done", context());
            Ok(())
        })?;
    }

    let finished = finished.into_inner().expect("ledger map lock");
    let cells: Vec<SweepCell> = grid.iter().map(|c| finished[&c.hash].clone()).collect();
    let report = build_sweep_report(cells)?;
    write(&out.join(SWEEP_FILE), report.to_csv())?;
    for m in report.means() {
        let pcc: Vec<String> = m.pcc.iter().map(|p| p.map_or("NA".into(), |v| format!("{v:.3}"))).collect();
        println!(
            "{} {} {}: mean PCC x {} y {} z {}",
            m.band.map_or("none", |b| b.id()),
            m.lag.label(),
            m.decoder,
            pcc[0],
            pcc[1],
            pcc[2]
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_reports_lowest_failing_index() {
        let items: Vec<usize> = (0..20).collect();
        let seen = Mutex::new(Vec::new());
        parallel_for(&items, 4, |&i| {
            seen.lock().unwrap().push(i);
            Ok(())
        })
        .unwrap();
        let mut seen = seen.into_inner().unwrap();
        seen.sort();
        assert_eq!(seen, items);
        let err = parallel_for(&items, 1, |&i| if i >= 3 { anyhow::bail!("item {i}") } else { Ok(()) }).unwrap_err();
        assert_eq!(err.to_string(), "item 3");
    }

    #[test]
    fn torn_ledger_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LEDGER_FILE);
        assert!(read_ledger(&path).unwrap().is_empty());
        fs::write(&path, "{\"hash\":\"ab").unwrap();
        assert!(read_ledger(&path).unwrap().is_empty());
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        fs::write(&path, "not json\n").unwrap();
        assert!(read_ledger(&path).is_err());
    }
}
