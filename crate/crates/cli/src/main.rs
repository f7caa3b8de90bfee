use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use superband_cli::commands::{
    cmd_compare, cmd_husimi, cmd_oracle, cmd_run, cmd_sweep, resolve_config, resolve_out_dir,
    ConfigSource, Overrides,
};
use superband_cli::config::Precision;

/// Stochastic simulator for driven atoms radiating into a structured
/// photonic band, with an exact small-system reference for validation.
#[derive(Debug, Parser)]
#[command(name = "superband", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in configuration: desk-benchmark, reduced, or paper-full.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Reuse the resolved configuration stored in an earlier run's meta.json.
    #[arg(long, value_name = "FILE")]
    from_meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured floating-point precision.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Output directory (default: $SUPERBAND_OUT/<command>-<name>-seed<seed>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Size of the worker thread pool (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propagate the stochastic batch and write the observable series.
    Run(RunArgs),
    /// Propagate the exact reference on the same grid and schema.
    Oracle(RunArgs),
    /// Compare a stochastic run against an oracle run (z-scores).
    Compare {
        /// Directory holding the stochastic run's series.csv.
        #[arg(long, value_name = "DIR")]
        stochastic: PathBuf,
        /// Directory holding the oracle run's series.csv.
        #[arg(long, value_name = "DIR")]
        oracle: PathBuf,
        /// Where to write compare.json (default: the stochastic directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Refine one axis at a time (modes, photon cutoff, batch, rtol) and
    /// report convergence of the final observables.
    Sweep(RunArgs),
    /// Rebuild a field-quadrature histogram from a raw sample dump.
    Husimi {
        /// alpha_t*.bin file written by `run`.
        #[arg(long, value_name = "FILE")]
        dump: PathBuf,
        /// Mode index within the dump.
        #[arg(long)]
        mode: usize,
        /// Bins per quadrature axis.
        #[arg(long, default_value_t = 101)]
        bins: usize,
        /// Gaussian smoothing width in bins (0 = none).
        #[arg(long, default_value_t = 0.0)]
        smooth: f64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Size of the worker thread pool (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("failed to size the thread pool")?;
    }
    Ok(())
}

fn source(args: &SourceArgs) -> ConfigSource {
    ConfigSource {
        config: args.config.clone(),
        preset: args.preset.clone(),
        from_meta: args.from_meta.clone(),
    }
}

fn run_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            init_threads(args.threads)?;
            let (cfg, name) = resolve_config(
                &source(&args.source),
                Overrides { seed: args.seed, precision: args.precision },
            )?;
            let out_dir = resolve_out_dir(args.out, "run", &name, cfg.seed);
            let meta = cmd_run(&cfg, &out_dir)?;
            println!(
                "run: wrote {} ({} outputs, {:.1} s, {} steps)",
                out_dir.display(),
                meta.outputs.len(),
                meta.summary.wall_seconds,
                meta.summary.steps_accepted,
            );
            if !meta.summary.dropped_trajectories.is_empty() {
                println!(
                    "run: dropped {} trajectories: {:?}",
                    meta.summary.dropped_trajectories.len(),
                    meta.summary.dropped_trajectories,
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(args) => {
            init_threads(args.threads)?;
            let (cfg, name) = resolve_config(
                &source(&args.source),
                Overrides { seed: args.seed, precision: args.precision },
            )?;
            let out_dir = resolve_out_dir(args.out, "oracle", &name, cfg.seed);
            let meta = cmd_oracle(&cfg, &out_dir)?;
            println!(
                "oracle: wrote {} ({:.1} s, max norm drift {:.2e})",
                out_dir.display(),
                meta.summary.wall_seconds,
                meta.summary.max_norm_drift.unwrap_or(f64::NAN),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { stochastic, oracle, out } => {
            let outcome = cmd_compare(&stochastic, &oracle, out.as_deref())?;
            println!(
                "compare: max |z_n| = {:.3}, max |z_x| = {:.3}, rel err at peak (t = {:.3} cycles) = {:.4}",
                outcome.report.max_abs_z_n_mean,
                outcome.report.max_abs_z_excited,
                outcome.report.peak_t_cycles,
                outcome.report.rel_err_at_peak,
            );
            println!(
                "compare: {} (thresholds: |z| <= {}, rel <= {})",
                if outcome.pass { "pass" } else { "fail" },
                outcome.z_threshold,
                outcome.rel_threshold,
            );
            Ok(if outcome.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep(args) => {
            init_threads(args.threads)?;
            let (cfg, name) = resolve_config(
                &source(&args.source),
                Overrides { seed: args.seed, precision: args.precision },
            )?;
            let out_dir = resolve_out_dir(args.out, "sweep", &name, cfg.seed);
            let report = cmd_sweep(&cfg, &out_dir)?;
            for ax in &report.axes {
                println!("sweep axis {}:", ax.axis);
                for (k, &v) in ax.values.iter().enumerate() {
                    let delta = if k == 0 {
                        String::from("      -")
                    } else {
                        format!("{:.3e}", ax.deltas[k - 1])
                    };
                    println!(
                        "  {:>12.6}  n = {:.6} +- {:.1e}  delta = {}",
                        v, ax.n_final[k], ax.n_final_se[k], delta
                    );
                }
                println!(
                    "  convergence {}",
                    if ax.monotone { "monotone" } else { "NOT monotone" }
                );
            }
            println!("sweep: wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Husimi { dump, mode, bins, smooth, out, threads } => {
            init_threads(threads)?;
            cmd_husimi(&dump, mode, bins, smooth, &out)?;
            println!("husimi: wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
