use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ris_core::simulator::output::{write_table, Meta, Table};
use ris_core::simulator::scenario::{InitMode, Model};
use ris_core::Scenario;

mod commands;
mod selfcheck;

/// Parametric ML channel estimation for RIS-assisted links.
///
/// Every subcommand writes one CSV table (header row, `.` decimals, LF line
/// endings) to stdout, or to `--out` with a `.meta` sidecar holding the
/// scenario, seed and version. Output depends only on the subcommand, the
/// scenario and the seed.
///
/// Exit codes: 0 success, 1 invalid input (arguments or scenario file),
/// 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "ris", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). Missing keys keep the defaults: 28 GHz, 32x32
    /// array at half-wavelength spacing, pilot SNR -10 dB, data SNR -20 dB.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Master seed, overriding the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials, overriding the scenario.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// CSV output path; a `.meta` sidecar is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the trial pool.
    #[arg(long, global = true, env = "RIS_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Exact,
    Far,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Wide,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    /// Adaptive maximum-likelihood loop.
    Mle,
    /// Least squares with DFT pilot configurations.
    Ls,
    /// Hierarchical beam training against the adaptive loop.
    Hier,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Orthogonal pilot codebook of the scenario's array.
    #[command(after_help = "CSV columns: index, azimuth_rad, elevation_rad")]
    Codebook,
    /// Gain of the isotropic and the two half-space initial beams.
    #[command(
        after_help = "CSV columns: azimuth_deg, elevation_deg, gain_db_isotropic, gain_db_beam1, gain_db_beam2\n\
        Gains are in dB relative to one element."
    )]
    Beams {
        /// Angle step of the grid in degrees.
        #[arg(long, default_value_t = 2.0)]
        step_deg: f64,
    },
    /// One adaptive estimation run on the first trial's link.
    #[command(
        after_help = "CSV columns: pilots, se, capacity, nmse_g, nmse_d, azimuth_rad, elevation_rad, distance_m, beta, alpha\n\
        distance_m is nan for far-field estimates."
    )]
    Estimate {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, value_enum)]
        init: Option<InitArg>,
    },
    /// Mean spectral efficiency and NMSE against the pilot count.
    #[command(after_help = "CSV columns by method:\n  \
        mle:  pilots, se, se_stderr, capacity, nmse_g, nmse_d, feedback_bits\n  \
        ls:   pilots, se, capacity, nmse_g, nmse_d, full_rank_share\n  \
        hier: pilots, mle_se, hier_se, capacity\n\
        Means over trials; nan marks budgets a method cannot use.")]
    Sweep {
        #[arg(long, value_enum, default_value = "mle")]
        method: Method,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        /// Levels of the hierarchical codebook (4 pilots each).
        #[arg(long, default_value_t = 4)]
        depth: usize,
    },
    /// Empirical CDF of the SNR of the first two pilots, for both
    /// initializations.
    #[command(after_help = "CSV columns: init, rank, snr_db, probability")]
    Cdf,
    /// Random walk of a user in a room with periodic re-estimation.
    #[command(after_help = "CSV columns: t_ms, x, y, se, capacity, reestimated")]
    Track {
        /// Pilots per re-estimation; defaults to the scenario's value.
        #[arg(long)]
        pilots: Option<usize>,
    },
    /// Noise-free exact recovery and codebook orthogonality checks on an
    /// 8x8 array.
    #[command(after_help = "CSV columns: check, passed, detail")]
    Selfcheck,
}

/// Failure of a run, with its exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<ris_core::Error> for Failure {
    fn from(e: ris_core::Error) -> Self {
        use ris_core::Error::*;
        match e {
            InvalidArgument(_) | UnsupportedGeometry(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_scenario(common: &Common) -> Result<Scenario, Failure> {
    let mut s = match &common.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            Scenario::from_toml(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        s.master_seed = seed;
    }
    if let Some(t) = common.trials {
        s.trials = t;
    }
    s.validate()?;
    Ok(s)
}

fn model(arg: Option<ModelArg>, s: &Scenario) -> Model {
    match arg {
        Some(ModelArg::Exact) => Model::Exact,
        Some(ModelArg::Far) => Model::Far,
        None => s.model,
    }
}

fn init(arg: Option<InitArg>, s: &Scenario) -> InitMode {
    match arg {
        Some(InitArg::Wide) => InitMode::Wide,
        Some(InitArg::Random) => InitMode::Random,
        None => s.init,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Failure::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let scenario = load_scenario(&cli.common)?;
    let (name, table): (&str, Table) = match cli.command {
        Command::Codebook => ("codebook", commands::codebook(&scenario)?),
        Command::Beams { step_deg } => ("beams", commands::beams(&scenario, step_deg)?),
        Command::Estimate { model: m, init: i } => {
            ("estimate", commands::estimate(&scenario, model(m, &scenario), init(i, &scenario))?)
        }
        Command::Sweep { method, model: m, init: i, depth } => {
            let (m, i) = (model(m, &scenario), init(i, &scenario));
            match method {
                Method::Mle => ("sweep", commands::sweep(&scenario, m, i)?),
                Method::Ls => ("sweep-ls", commands::ls(&scenario)?),
                Method::Hier => {
                    ("sweep-hier", commands::hier(&Scenario { model: m, init: i, ..scenario.clone() }, depth)?)
                }
            }
        }
        Command::Cdf => ("cdf", commands::cdf(&scenario)?),
        Command::Track { pilots } => {
            ("track", commands::track(&scenario, pilots.unwrap_or(scenario.tracking.reestimation_pilots))?)
        }
        Command::Selfcheck => {
            let (table, passed) = selfcheck::run();
            emit(&cli.common, "selfcheck", &scenario, &table)?;
            return if passed { Ok(()) } else { Err(Failure::Runtime("self-check failed".into())) };
        }
    };
    emit(&cli.common, name, &scenario, &table)
}

fn emit(common: &Common, name: &str, scenario: &Scenario, table: &Table) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    match &common.out {
        Some(path) => write_table(path, table, &Meta::new(name, scenario)).map_err(io),
        None => std::io::stdout().lock().write_all(&table.to_csv()).map_err(io),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(Failure::from(ris_core::Error::InvalidArgument("x".into())).code(), 1);
        let s = Scenario { trials: 0, ..Scenario::default() };
        let common = Common { scenario: None, seed: None, trials: Some(0), out: None, threads: None };
        assert!(s.validate().is_err());
        assert_eq!(load_scenario(&common).unwrap_err().code(), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
