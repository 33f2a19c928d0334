use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spsfair::config::{ExperimentConfig, LoadedConfig};
use spsfair::experiment::{self, ASSUMPTIONS};
use spsfair::Error;

#[derive(Parser)]
#[command(
    name = "spsfair",
    version,
    about = "Speed-aware SPS selection windows: experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a config, then print the effective values.
    ValidateConfig(Common),
    /// Per-generation optimiser quality indicators.
    Fig3(Common),
    /// Optimal window per lane across the average-speed sweep.
    Fig4(Common),
    /// Objective sum of the optimal and the fixed-window scheme.
    Fig5(Common),
    /// Closed-form collision/PRR model against the simulator.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Run {
    loaded: LoadedConfig,
    seed: u64,
    out: PathBuf,
}

impl Run {
    fn prepare(args: &Common) -> Result<Self, Error> {
        let loaded = ExperimentConfig::load(&args.config)?;
        let seed = args.seed.unwrap_or(loaded.config.experiment.seed);
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| loaded.config.experiment.output_dir.clone());
        Ok(Self { loaded, seed, out })
    }

    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn start(&self, verb: &str) -> Result<(), Error> {
        fs::create_dir_all(&self.out)?;
        let path = experiment::write_manifest(
            self.config(),
            verb,
            self.seed,
            &self.out,
            &self.loaded.defaulted,
        )?;
        println!("manifest {}", path.display());
        Ok(())
    }

    fn csv_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::ValidateConfig(args) => {
            let run = Run::prepare(&args)?;
            print!("{}", run.config().to_toml_string()?);
            for key in &run.loaded.defaulted {
                println!("# default: {key}");
            }
            if args.out.is_some() {
                run.start("validate-config")?;
            }
        }
        Command::Fig3(args) => {
            let run = Run::prepare(&args)?;
            run.start("fig3")?;
            let out = experiment::run_fig3_metrics(run.config(), run.seed)?;
            let path = run.csv_path("fig3.csv");
            experiment::write_csv(&path, &out.rows)?;
            report(&path);
        }
        Command::Fig4(args) => {
            let run = Run::prepare(&args)?;
            run.start("fig4")?;
            let rows = experiment::run_fig4_sweep(run.config(), run.seed)?;
            let path = run.csv_path("fig4.csv");
            experiment::write_csv(&path, &rows)?;
            report(&path);
        }
        Command::Fig5(args) => {
            let run = Run::prepare(&args)?;
            run.start("fig5")?;
            let rows = experiment::run_fig5_comparison(run.config(), run.seed)?;
            let path = run.csv_path("fig5.csv");
            experiment::write_csv(&path, &rows)?;
            report(&path);
        }
        Command::Oracle(args) => {
            let run = Run::prepare(&args)?;
            run.start("oracle")?;
            let result = experiment::run_oracle_validation(run.config(), run.seed)?;
            let path = run.csv_path("oracle.csv");
            experiment::write_csv(&path, &result.rows)?;
            report(&path);
            for r in &result.rows {
                println!(
                    "case {} {:?} n={} sc={} w={}: analytic {:.5} simulated {:.5} [{:.5}, {:.5}] {}",
                    r.case,
                    r.metric,
                    r.num_vehicles,
                    r.num_subchannels,
                    r.windows,
                    r.analytic,
                    r.simulated,
                    r.ci_low,
                    r.ci_high,
                    if r.pass { "ok" } else { "FAIL" }
                );
            }
            if !result.passed() {
                eprint!("{ASSUMPTIONS}");
                let failed = result.rows.iter().filter(|r| !r.pass).count();
                emit_error(
                    "oracle_mismatch",
                    None,
                    &format!("{failed} comparisons outside tolerance"),
                );
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn emit_error(kind: &str, key: Option<&str>, message: &str) {
    let line = serde_json::json!({ "error": kind, "key": key, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error(
                "usage",
                None,
                e.to_string().lines().next().unwrap_or_default(),
            );
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            emit_error(e.kind(), e.key(), &e.to_string());
            ExitCode::from(1)
        }
    }
}
