use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metric_stitch::commands::{self, Overrides};
use metric_stitch::{with_jobs, ExperimentId, HarnessError};

/// Metric recovery from few comparisons per user over a union of subspaces.
#[derive(Debug, Parser)]
#[command(name = "metric-stitch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Record per-run wall time (output is then not byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario file.
    Generate(Common),
    /// Fit every subspace of a scenario.
    Fit(Common),
    /// Stitch subspace fits into one metric.
    Stitch(Common),
    /// Sweep users per subspace and comparisons per user.
    Exp1(ExperimentArgs),
    /// Sweep the number of subspaces.
    Exp2(ExperimentArgs),
    /// Sweep off-subspace item noise.
    Exp3(ExperimentArgs),
    /// Fit with a loss that differs from the data's response model.
    Misspec(ExperimentArgs),
    /// Recompute stored relative errors from saved artifacts.
    Verify(Common),
}

fn overrides(c: &Common, timing: bool) -> Overrides {
    Overrides {
        seed: c.seed,
        out: c.out.clone(),
        timing,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let experiment = |args: &ExperimentArgs, id: ExperimentId| -> Result<(), HarnessError> {
        let spec = commands::load_experiment(
            &args.common.config,
            id,
            &overrides(&args.common, args.timing),
        )?;
        let (out, written) = with_jobs(args.common.jobs, || commands::experiment(&spec))??;
        let failures: usize = out.summary.iter().map(|s| s.failures).sum();
        for path in written {
            println!("wrote {}", path.display());
        }
        if failures > 0 {
            log::warn!("{failures} run(s) failed; see rows with rel_error = nan");
        }
        Ok(())
    };
    match &cli.command {
        Command::Generate(c) => {
            let path = with_jobs(c.jobs, || {
                commands::generate(&c.config, &overrides(c, false))
            })??;
            println!("wrote {}", path.display());
        }
        Command::Fit(c) => {
            let path = with_jobs(c.jobs, || commands::fit(&c.config, &overrides(c, false)))??;
            println!("wrote {}", path.display());
        }
        Command::Stitch(c) => {
            let (path, est) =
                with_jobs(c.jobs, || commands::stitch(&c.config, &overrides(c, false)))??;
            println!("wrote {}", path.display());
            if let Some(e) = est.rel_error {
                println!("rel_error {}", metric_stitch::output::fmt_float(e));
            }
        }
        Command::Exp1(a) => experiment(a, ExperimentId::Exp1)?,
        Command::Exp2(a) => experiment(a, ExperimentId::Exp2)?,
        Command::Exp3(a) => experiment(a, ExperimentId::Exp3)?,
        Command::Misspec(a) => experiment(a, ExperimentId::Misspec)?,
        Command::Verify(c) => {
            let report = with_jobs(c.jobs, || commands::verify(&c.config, &overrides(c, false)))??;
            println!(
                "verified {} rows ({} failed runs skipped)",
                report.checked, report.skipped
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
