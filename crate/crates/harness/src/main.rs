use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srcinv_harness::config::{builtin, ExperimentConfig, EXPERIMENTS};
use srcinv_harness::data::generate_measurements;
use srcinv_harness::experiments::run_experiment;
use srcinv_harness::output::{bundle_dir, read_checks, read_manifest, write_bundle, Outcome};
use srcinv_harness::HarnessError;

#[derive(Parser)]
#[command(name = "srcinv", version, about = "Boundary source identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write clean and noisy measurements for the configured truth.
    Generate(Select),
    /// Run an experiment and write its result bundle.
    Run(Select),
    /// Print the checks of an existing bundle.
    Report {
        dir: PathBuf,
    },
    ListExperiments,
}

#[derive(Args)]
struct Select {
    #[arg(long, conflicts_with = "experiment", required_unless_present = "experiment")]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Select {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, &self.experiment) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => builtin(name).ok_or_else(|| HarnessError::Config {
                path: "--experiment".into(),
                msg: format!("unknown experiment {name}; known: {}", EXPERIMENTS.join(", ")),
            })?,
            (None, None) => unreachable!("clap requires one of --config and --experiment"),
        };
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        cfg.validate()?;
        if let Some(jobs) = self.jobs {
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }
        Ok(cfg)
    }
}

fn print_checks(outcome: &Outcome) {
    for c in &outcome.checks {
        println!("[{}] criterion {:>2} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail);
    }
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Generate(sel) => {
            let cfg = sel.load()?;
            let dir = bundle_dir(&cfg, sel.out.as_deref());
            let meas = generate_measurements(&cfg)?;
            let mut outcome = Outcome::new(cfg.experiment.name());
            outcome.tables.extend([meas.table("measurements_clean", false), meas.table("measurements_noisy", true)]);
            write_bundle(&dir, &cfg, &outcome)?;
            println!("measurements written to {}", dir.display());
            Ok(true)
        }
        Command::Run(sel) => {
            let cfg = sel.load()?;
            let dir = bundle_dir(&cfg, sel.out.as_deref());
            let outcome = run_experiment(&cfg)?;
            write_bundle(&dir, &cfg, &outcome)?;
            print_checks(&outcome);
            println!("bundle written to {}", dir.display());
            Ok(outcome.passed())
        }
        Command::Report { dir } => {
            let manifest = read_manifest(&dir)?;
            let checks = read_checks(&dir)?;
            println!("{} (config sha256 {}, seed {})", manifest.experiment, manifest.config_sha256, manifest.seed);
            print_checks(&Outcome { checks, ..Outcome::new(&manifest.experiment) });
            Ok(manifest.passed)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
