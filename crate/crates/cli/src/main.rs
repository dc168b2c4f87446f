//! `invrte`: runs one study per invocation and writes `<study>.csv` plus a
//! manifest into the output directory.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical failures.

mod config;
mod output;
mod studies;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use invrte::Error;

use crate::config::ExperimentConfig;
use crate::output::{sha256_hex, write_outputs, Manifest};

#[derive(Debug, Parser)]
#[command(name = "invrte", version, about = "Inverse radiative transfer experiments in the diffusive and forward-peaked regimes")]
struct Cli {
    /// TOML experiment file; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the sweeps.
    #[arg(long, global = true, env = "INVRTE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Outgoing boundary currents of one forward solve.
    Forward,
    /// Density of the adjoint solution for one measurement.
    Adjoint,
    /// Kinetic density against the heat equation over a Kn list.
    DiffusionCheck,
    /// Sensitivity kernel of one measurement.
    Gamma,
    /// Linearized prediction against the measured perturbation.
    Duality,
    /// One Tikhonov reconstruction.
    Invert,
    /// Kernel size, spectrum, kappa and Tikhonov error over a Kn list.
    SweepKn,
    /// Collision spectrum against the Fokker-Planck limit.
    FpSpectrum,
    /// Legendre moments, xi moments and eigenvalues of one kernel.
    XiMoments,
    /// Least-squares recovery of xi from manufactured kernels.
    MomentInvert,
    /// Distinguishability of the rescaled kernel over an eps list.
    KappaEpsilon,
    /// Row scaling of the Hermite moment map.
    HermiteCond,
    /// Number of recoverable moments for a noise level.
    RecoverableTerms {
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        smoothness: Option<u32>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Adjoint => "adjoint",
            Command::DiffusionCheck => "diffusion-check",
            Command::Gamma => "gamma",
            Command::Duality => "duality",
            Command::Invert => "invert",
            Command::SweepKn => "sweep-kn",
            Command::FpSpectrum => "fp-spectrum",
            Command::XiMoments => "xi-moments",
            Command::MomentInvert => "moment-invert",
            Command::KappaEpsilon => "kappa-epsilon",
            Command::HermiteCond => "hermite-cond",
            Command::RecoverableTerms { .. } => "recoverable-terms",
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("invrte: {msg}");
    ExitCode::from(code)
}

fn classify(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Resolution { .. } => EXIT_CONFIG,
        Error::NumericalBreakdown { .. } | Error::InternalConsistency(_) => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let study = cli.command.name();

    let mut cfg = match &cli.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())),
            };
            match ExperimentConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, format!("config error in {}: {e}", path.display())),
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Command::RecoverableTerms { delta, eps, smoothness } = cli.command {
        let r = &mut cfg.recoverable;
        r.delta = delta.unwrap_or(r.delta);
        r.eps = eps.unwrap_or(r.eps);
        r.smoothness = smoothness.unwrap_or(r.smoothness);
    }
    if let Some(s) = &cfg.study {
        if s != study {
            return fail(EXIT_CONFIG, format!("config error: key `study` is {s:?} but the subcommand is {study:?}"));
        }
    }
    if let Some(r) = cfg.regime {
        if r != studies::regime_of(study) {
            return fail(EXIT_CONFIG, format!("config error: key `regime` = {r:?} does not match study {study:?}"));
        }
    }
    if let Err(e) = studies::validate(study, &cfg) {
        return fail(classify(&e), format!("config error: {e}"));
    }

    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(EXIT_CONFIG, "--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_CONFIG, format!("thread pool: {e}"));
        }
    }

    let start = Instant::now();
    let outcome = match studies::run(study, &cfg) {
        Ok(o) => o,
        Err(e) => return fail(classify(&e), format!("{study} failed: {e}")),
    };
    let wall = start.elapsed().as_secs_f64();

    let effective = match toml::to_string(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, format!("cannot serialize config: {e}")),
    };
    let dir = cli.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let manifest = Manifest {
        study,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(effective.as_bytes()),
        threads: rayon::current_num_threads(),
        wall_time_seconds: wall,
        table: format!("{study}.csv"),
        rows: outcome.table.rows.len(),
        summary: outcome.summary,
    };
    if let Err(e) = write_outputs(&dir, study, &outcome.table, &manifest) {
        return fail(EXIT_CONFIG, format!("cannot write to {}: {e}", dir.display()));
    }
    if let Some(line) = outcome.stdout {
        println!("{line}");
    }
    ExitCode::SUCCESS
}
