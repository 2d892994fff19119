use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lowrank_als::harness::{self, output, ExperimentConfig, RateSummary};
use lowrank_als::Error;

/// ALS on fixed-rank matrices: experiment runner and rate analysis.
#[derive(Parser, Debug)]
#[command(name = "lowrank-als", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's output.dir, else ./results).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override solver.max_sweeps.
    #[arg(long, global = true)]
    max_sweeps: Option<usize>,
    /// Override solver.grad_tol.
    #[arg(long, global = true)]
    grad_tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment: writes <name>.csv and <name>.json.
    Run { config: PathBuf },
    /// Vary one spectrum entry over the config's [sweep] values.
    Sweep { config: PathBuf },
    /// Run the invariant suite on seeded instances.
    Verify,
    /// Rate analysis at the reference point only: writes <name>_rate.json.
    Rate { config: PathBuf },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl Cli {
    fn load(&self, path: &Path) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(max_sweeps) = self.max_sweeps {
            cfg.solver.max_sweeps = max_sweeps;
        }
        if let Some(tol) = self.grad_tol {
            cfg.solver.grad_tol = tol;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| cfg.out_dir())
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = cli.load(config)?;
            let result = harness::run_experiment(&cfg)?;
            let (csv, json) = output::write_run(&result, &cli.out_dir(&cfg))?;
            let r = &result.report;
            println!(
                "{}: {} sweeps ({:?}), final rel_error {:.3e}, rho_assembled {:.6e}, slope {}",
                cfg.name,
                result.sweeps(),
                result.stop_reason,
                result.final_rel_error(),
                r.rho_assembled,
                r.slope_observed
                    .map_or("n/a".into(), |s| format!("{s:.6e}")),
            );
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Sweep { config } => {
            let cfg = cli.load(config)?;
            let (summary, path) = harness::run_sweep(&cfg, &cli.out_dir(&cfg))?;
            for run in &summary.runs {
                println!(
                    "{}: value {:e}, rho_assembled {:.6e}, slope {}",
                    run.name,
                    run.value,
                    run.report.rho_assembled,
                    run.report
                        .slope_observed
                        .map_or("n/a".into(), |s| format!("{s:.6e}")),
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Rate { config } => {
            let cfg = cli.load(config)?;
            let (report, reference) = harness::rate_only(&cfg)?;
            println!(
                "{}: rho_assembled {:.6e}, rho_theoretical {}",
                cfg.name,
                report.rho_assembled,
                report
                    .rho_theoretical
                    .map_or("n/a".into(), |t| format!("{t:.6e}")),
            );
            let dir = cli.out_dir(&cfg);
            let path = output::write_rate(
                &RateSummary {
                    config: cfg,
                    reference,
                    report,
                },
                &dir,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Verify => {
            let outcomes = harness::verify::run_suite();
            let failed = outcomes.iter().filter(|o| !o.passed()).count();
            for o in &outcomes {
                match &o.result {
                    Ok(detail) => println!("PASS {}: {detail}", o.name),
                    Err(detail) => println!("FAIL {}: {detail}", o.name),
                }
            }
            println!(
                "verify: {} passed, {failed} failed",
                outcomes.len() - failed
            );
            if failed > 0 {
                return Err(Failure::Runtime(format!(
                    "{failed} invariant check(s) failed"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
