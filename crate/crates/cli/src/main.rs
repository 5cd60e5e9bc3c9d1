//! `kerromech`: config-driven batch runs over the Kerr optomechanics model.
//!
//! Exit status: 0 success, 1 I/O, 2 invalid input or config, 3 no
//! convergence, 4 physical instability.

mod commands;
mod config;
mod error;
mod fit;
mod oracle;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde::Serialize;

use kerromech::backaction::Method;
use kerromech::SweepDirection;

use crate::config::{overlay, render, Loaded};
use crate::error::{CliError, Result};
use crate::output::Sink;

#[derive(Debug, Parser)]
#[command(name = "kerromech", version, about = "Kerr cavity optomechanics: steady states, spectra, backaction, fits")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; never changes the output bytes.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output format; only `csv`.
    #[arg(long, global = true)]
    format: Option<String>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state branches over a detuning grid for each drive.
    Steady {
        /// Drive relative to threshold (repeatable).
        #[arg(long = "ratio")]
        ratios: Vec<f64>,
        /// Input photon flux in photons/s (repeatable).
        #[arg(long = "n-in")]
        n_in: Vec<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Photon-number spectra per Kerr constant and stable branch.
    Spectrum {
        #[arg(long)]
        ratio: Option<f64>,
        /// Add absolute frequencies to the output.
        #[arg(long)]
        lab_frame: bool,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Stokes and anti-Stokes rates over detuning per Kerr constant.
    Rates {
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Mechanical occupation traces per drive and sweep direction.
    CoolingTrace {
        #[arg(long = "ratio")]
        ratios: Vec<f64>,
        #[arg(long = "direction")]
        directions: Vec<SweepDirectionArg>,
        #[arg(long)]
        method: Option<MethodArg>,
        #[arg(long)]
        points: Option<usize>,
        /// Relative Gaussian scatter on the occupation.
        #[arg(long)]
        noise_rel: Option<f64>,
        /// Fail on mechanical instability (exit 4).
        #[arg(long)]
        strict: bool,
    },
    /// Fit measured traces.
    Fit {
        /// circle, kerr-circle, sideband, g0-ramp, relaxation or pipeline.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Pipeline prediction drives (repeatable).
        #[arg(long = "predict-ratio")]
        predict_ratios: Vec<f64>,
    },
    /// Linearised spectrum against the Lindblad steady-state reference.
    Oracle {
        #[arg(long)]
        allow_bistable: bool,
        /// Also re-solve at larger cutoffs.
        #[arg(long)]
        convergence: bool,
        #[arg(long)]
        cutoff: Option<usize>,
    },
    /// Coupling calibration from a temperature ramp.
    Calibrate {
        #[arg(long)]
        input: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SweepDirectionArg {
    Up,
    Down,
    None,
}

impl From<SweepDirectionArg> for SweepDirection {
    fn from(d: SweepDirectionArg) -> Self {
        match d {
            SweepDirectionArg::Up => SweepDirection::Up,
            SweepDirectionArg::Down => SweepDirection::Down,
            SweepDirectionArg::None => SweepDirection::None,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    QuantumNoise,
    Eigenvalue,
    Auto,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::QuantumNoise => Method::QuantumNoise,
            MethodArg::Eigenvalue => Method::Eigenvalue,
            MethodArg::Auto => Method::Auto,
        }
    }
}

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn start<T: Serialize>(
    loaded: &Loaded,
    params: &kerromech::ValidatedParams,
    command: &str,
    section: &str,
    block: &T,
) -> Result<Sink> {
    let run = &loaded.config.run;
    let resolved = render(params, run, section, block)?;
    let out = run.out.clone().unwrap_or_else(|| "out".into());
    Sink::new(std::path::Path::new(&out), command, &resolved)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let mut loaded = match &cli.config {
        Some(p) => Loaded::from_path(p)?,
        None => Loaded::default(),
    };
    {
        let mut run = loaded.config.run.clone();
        overlay(&loaded, "run", "out", cli.out.clone().map(Some), &mut run.out);
        overlay(&loaded, "run", "jobs", cli.jobs.map(Some), &mut run.jobs);
        overlay(&loaded, "run", "seed", cli.seed, &mut run.seed);
        overlay(&loaded, "run", "format", cli.format.clone(), &mut run.format);
        loaded.config.run = run;
    }
    let run = &loaded.config.run;
    if run.format != "csv" {
        return Err(CliError::Usage(format!("unsupported format `{}`; only csv", run.format)));
    }
    let jobs = run.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::debug!("thread pool already set up: {e}");
    }
    let seed = run.seed;

    let sink = match cli.command {
        Command::Steady { ratios, n_in, points } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.steady.clone();
            overlay(&loaded, "steady", "ratios", non_empty(ratios).map(Some), &mut c.ratios);
            overlay(&loaded, "steady", "n_in", non_empty(n_in).map(Some), &mut c.n_in);
            overlay(&loaded, "steady", "points", points, &mut c.points);
            commands::resolve_steady(&mut c, &params)?;
            let mut sink = start(&loaded, &params, "steady", "steady", &c)?;
            commands::steady(&mut sink, &c, &params)?;
            sink
        }
        Command::Spectrum { ratio, lab_frame, points } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.spectrum.clone();
            overlay(&loaded, "spectrum", "ratio", ratio, &mut c.ratio);
            overlay(&loaded, "spectrum", "lab_frame", lab_frame.then_some(true), &mut c.lab_frame);
            overlay(&loaded, "spectrum", "points", points, &mut c.points);
            commands::resolve_spectrum(&mut c, &params)?;
            let mut sink = start(&loaded, &params, "spectrum", "spectrum", &c)?;
            commands::spectrum(&mut sink, &c, &params)?;
            sink
        }
        Command::Rates { ratio, points } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.rates.clone();
            overlay(&loaded, "rates", "ratio", ratio, &mut c.ratio);
            overlay(&loaded, "rates", "points", points, &mut c.points);
            commands::resolve_rates(&mut c, &params)?;
            let mut sink = start(&loaded, &params, "rates", "rates", &c)?;
            commands::rates(&mut sink, &c, &params)?;
            sink
        }
        Command::CoolingTrace { ratios, directions, method, points, noise_rel, strict } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.cooling.clone();
            overlay(&loaded, "cooling", "ratios", non_empty(ratios), &mut c.ratios);
            let dirs = non_empty(directions.into_iter().map(SweepDirection::from).collect());
            overlay(&loaded, "cooling", "directions", dirs, &mut c.directions);
            overlay(&loaded, "cooling", "method", method.map(Method::from), &mut c.method);
            overlay(&loaded, "cooling", "points", points, &mut c.points);
            overlay(&loaded, "cooling", "noise_rel", noise_rel, &mut c.noise_rel);
            overlay(&loaded, "cooling", "strict", strict.then_some(true), &mut c.strict);
            commands::resolve_cooling(&mut c, &params)?;
            let mut sink = start(&loaded, &params, "cooling-trace", "cooling", &c)?;
            commands::cooling(&mut sink, &c, &params, seed)?;
            sink
        }
        Command::Fit { kind, inputs, predict_ratios } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.fit.clone();
            overlay(&loaded, "fit", "kind", kind.map(Some), &mut c.kind);
            overlay(&loaded, "fit", "inputs", non_empty(inputs), &mut c.inputs);
            overlay(&loaded, "fit", "predict_ratios", non_empty(predict_ratios), &mut c.predict_ratios);
            fit::resolve_fit(&c)?;
            let mut sink = start(&loaded, &params, "fit", "fit", &c)?;
            fit::fit(&mut sink, &c, &params)?;
            sink
        }
        Command::Oracle { allow_bistable, convergence, cutoff } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.oracle.clone();
            overlay(&loaded, "oracle", "allow_bistable", allow_bistable.then_some(true), &mut c.allow_bistable);
            overlay(&loaded, "oracle", "convergence", convergence.then_some(true), &mut c.convergence);
            overlay(&loaded, "oracle", "cutoff", cutoff.map(Some), &mut c.cutoff);
            oracle::resolve_oracle(&mut c)?;
            let mut sink = start(&loaded, &params, "oracle", "oracle", &c)?;
            oracle::oracle(&mut sink, &c)?;
            sink
        }
        Command::Calibrate { input } => {
            let params = loaded.system_params()?;
            let mut c = loaded.config.calibrate.clone();
            overlay(&loaded, "calibrate", "input", input.map(Some), &mut c.input);
            fit::resolve_calibrate(&c)?;
            let mut sink = start(&loaded, &params, "calibrate", "calibrate", &c)?;
            fit::calibrate(&mut sink, &c, &params)?;
            sink
        }
    };
    Ok(sink.written().to_vec())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
