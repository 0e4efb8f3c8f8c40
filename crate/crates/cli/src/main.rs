//! Command-line runner: `dynwalk <estimator> --config FILE`.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ESTIMATORS};
use run::RunOptions;

#[derive(Parser)]
#[command(name = "dynwalk", version, about = "Random walks in a dynamical random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Invariant density and spectral gap of the Ulam matrix.
    Spectrum(CommonArgs),
    Drift(CommonArgs),
    /// Green–Kubo and endpoint variance.
    Variance(CommonArgs),
    /// Characteristic-function distance to the Gaussian.
    CltAnnealed(CommonArgs),
    /// Across-environment spread of conditional expectations.
    CltQuenched(CommonArgs),
    Ldp(CommonArgs),
    Encounters(CommonArgs),
    Excursions(CommonArgs),
    Crossings(CommonArgs),
    Gambler(CommonArgs),
    EllipticityCheck(CommonArgs),
    /// Hölder and finite-dimensional checks of the rescaled path.
    Path(CommonArgs),
    /// Cross-correlation of two walks against their separation.
    Decorrelation(CommonArgs),
    /// Every estimator present in the config.
    All(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn split(&self) -> (Option<&'static str>, &CommonArgs) {
        match self {
            Command::Spectrum(a) => (Some("spectrum"), a),
            Command::Drift(a) => (Some("drift"), a),
            Command::Variance(a) => (Some("variance"), a),
            Command::CltAnnealed(a) => (Some("clt-annealed"), a),
            Command::CltQuenched(a) => (Some("clt-quenched"), a),
            Command::Ldp(a) => (Some("ldp"), a),
            Command::Encounters(a) => (Some("encounters"), a),
            Command::Excursions(a) => (Some("excursions"), a),
            Command::Crossings(a) => (Some("crossings"), a),
            Command::Gambler(a) => (Some("gambler"), a),
            Command::EllipticityCheck(a) => (Some("ellipticity-check"), a),
            Command::Path(a) => (Some("path"), a),
            Command::Decorrelation(a) => (Some("decorrelation"), a),
            Command::All(a) => (None, a),
        }
    }
}

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (selected, args) = cli.command.split();
    let cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let names: Vec<&str> = match selected {
        Some(name) if cfg.estimators.is_present(name) => vec![name],
        Some(name) => {
            eprintln!("config has no '{name}' section; it selects {}", cfg.estimators.present().join(", "));
            return ExitCode::from(EXIT_CONFIG);
        }
        None => cfg.estimators.present(),
    };
    debug_assert!(names.iter().all(|n| ESTIMATORS.contains(n)));
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        eprintln!("--threads must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let opts = RunOptions {
        out_dir: args
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out")),
        seed: args.seed.unwrap_or(cfg.seed),
        threads,
        quiet: args.quiet,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    match pool.install(|| run::run(&cfg, &names, &opts)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
