mod commands;
mod config;
mod exit;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinetrace::decoders::DecoderKind;

use config::{BandSetting, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "kinetrace", version, about = "Decode 3-D hand kinematics from pre-movement EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check interchange subject directories and print per-file diagnostics.
    Validate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Write a synthetic subject with a known EEG-to-kinematics mapping.
    Synth(SynthArgs),
    /// Fit one decoder and write the model, training curve and PCC.
    Train(RunArgs),
    /// Evaluate every band x lag x decoder cell; resumable.
    Sweep(RunArgs),
    /// Sweep with leave-one-subject-out folds.
    Loso(RunArgs),
    /// Write measured and predicted trajectories of one trial as CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with synthetic-subject settings.
    #[arg(long, env = "KINETRACE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "KINETRACE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "KINETRACE_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, env = "KINETRACE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "KINETRACE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "KINETRACE_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, env = "KINETRACE_JOBS")]
    jobs: Option<usize>,
    /// Band ids (FB1..FB7 or none), comma-separated.
    #[arg(long, env = "KINETRACE_BAND", value_delimiter = ',')]
    band: Vec<BandSetting>,
    /// Far end of the lag window before each kinematic sample.
    #[arg(long, env = "KINETRACE_LAG_MS")]
    lag_ms: Option<f64>,
    /// Window length; the near end is lag_ms - window_ms (0 when omitted).
    #[arg(long, env = "KINETRACE_WINDOW_MS")]
    window_ms: Option<f64>,
    /// Decoders (mlr, mlp, cnnlstm), comma-separated.
    #[arg(long, env = "KINETRACE_DECODER", value_delimiter = ',')]
    decoder: Vec<DecoderKind>,
    /// Subject directory; repeat to list several. Replaces the config list.
    #[arg(long = "subject")]
    subjects: Vec<PathBuf>,
    /// Held-out subject id for `train` with leave-one-subject-out.
    #[arg(long)]
    held_out: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Interchange directory of the subject to decode.
    #[arg(long)]
    subject: PathBuf,
    /// Trial index within the subject.
    #[arg(long)]
    trial: usize,
    #[arg(long, env = "KINETRACE_OUT")]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(self, force_loso: bool) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply(Overrides {
            seed: self.seed,
            out: self.out,
            jobs: self.jobs,
            bands: self.band,
            lag_ms: self.lag_ms,
            window_ms: self.window_ms,
            decoders: self.decoder,
            subjects: self.subjects,
        })?;
        if self.held_out.is_some() {
            config.held_out = self.held_out;
        }
        if force_loso {
            config.loso = true;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate { dirs } => Ok(commands::validate(&dirs)),
        Command::Synth(a) => commands::synth(a.config.as_deref(), a.seed, &a.out).map(|_| exit::OK),
        Command::Train(a) => commands::train(&a.resolve(false)?).map(|_| exit::OK),
        Command::Sweep(a) => sweep::sweep(&a.resolve(false)?).map(|_| exit::OK),
        Command::Loso(a) => sweep::sweep(&a.resolve(true)?).map(|_| exit::OK),
        Command::Export(a) => commands::export(&a.model, &a.subject, a.trial, &a.out).map(|_| exit::OK),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
