mod checks;
mod config;
mod output;
mod plot;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::output::{ErrorReport, Status, Writer};
use crate::runner::Settings;

/// Quantum sensitive-dependence experiments on the 2-torus.
#[derive(Parser)]
#[command(name = "qsens", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write SVG charts (overrides `output.plot`).
    #[arg(long, global = true, overrides_with = "no_plot")]
    plot: bool,

    #[arg(long = "no-plot", global = true, overrides_with = "plot")]
    no_plot: bool,

    /// Seed for the randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Record wall time in the summaries (makes them run-dependent).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one trace series, fit it and classify the growth.
    Run { config: PathBuf },
    /// Run every `[[sweep]]` block of a config.
    Sweep { config: PathBuf },
    /// Diagonalize the truncated Floquet operator and check the spectral form.
    Spectrum { config: PathBuf },
    /// Run the invariant suite at small cutoffs.
    Check {
        #[arg(long, hide = true)]
        corrupt_cat_orientation: bool,
    },
}

fn fail(report: ErrorReport) -> ExitCode {
    eprintln!("{}", report.to_json());
    ExitCode::from(report.exit_code())
}

fn load(path: &Path) -> Result<ExperimentConfig, ErrorReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ErrorReport::other("io", format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| ErrorReport::from_config(&e))
}

fn writer(cli: &Cli, config: &ExperimentConfig) -> Result<Writer, ErrorReport> {
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(&config.output.dir));
    Writer::new(&dir).map_err(|e| ErrorReport::other("io", format!("{e:#}")))
}

fn io(e: anyhow::Error) -> ErrorReport {
    ErrorReport::other("io", format!("{e:#}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            return fail(ErrorReport::other("invalid_config", "--workers must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            return fail(ErrorReport::other("io", e.to_string()));
        }
    }
    let settings = Settings {
        plot: if cli.plot {
            Some(true)
        } else if cli.no_plot {
            Some(false)
        } else {
            None
        },
        timing: cli.timing,
    };
    let outcome = match &cli.command {
        Command::Run { config } => (|| {
            let cfg = load(config)?;
            let s = runner::run(&cfg, &writer(&cli, &cfg)?, settings).map_err(io)?;
            match (&s.report, s.error) {
                (Some(r), None) => {
                    println!(
                        "{}: verdict {}, lambda_hat {:.6}/kick ({:.6}/time), degree {:.4}, window [{}, {}]",
                        cfg.name, r.verdict, r.lambda_hat, r.lambda_per_time, r.degree_hat, r.window[0], r.window[1]
                    );
                    Ok(())
                }
                (_, Some(e)) => Err(e),
                _ => Err(ErrorReport::other("computation", "no report")),
            }
        })(),
        Command::Sweep { config } => (|| {
            let cfg = load(config)?;
            let summaries = match runner::sweep(&cfg, &writer(&cli, &cfg)?, settings) {
                Ok(s) => s,
                Err(e) => return Err(ErrorReport::other("invalid_config", format!("{e:#}"))),
            };
            for s in &summaries {
                for p in &s.points {
                    let verdict = p.verdict.map(|v| v.to_string()).unwrap_or_else(|| "failed".into());
                    println!(
                        "{} = {}: {verdict}, lambda_hat {}, degree {}",
                        s.parameter.key(),
                        p.value,
                        p.lambda_hat.map(|x| format!("{x:.6}")).unwrap_or("-".into()),
                        p.degree_hat.map(|x| format!("{x:.4}")).unwrap_or("-".into()),
                    );
                }
                for o in &s.fd_order {
                    println!(
                        "fd_step {} -> {}: error ratio {:.3} (second order: {:.3})",
                        o.h_large, o.h_small, o.ratio, o.expected
                    );
                }
            }
            Ok(())
        })(),
        Command::Spectrum { config } => (|| {
            let cfg = load(config)?;
            let s = runner::spectrum(&cfg, &writer(&cli, &cfg)?, settings).map_err(io)?;
            if let Some(e) = s.error {
                return Err(e);
            }
            if let Some(r) = &s.reconstruction {
                println!(
                    "{}: K={} d={}, reconstruction max rel error {:.3e} over n <= {}",
                    cfg.name, s.cutoff, s.dim, r.max_rel_error, r.max_n
                );
            }
            if let Some(p) = &s.profile {
                let frac: Vec<String> = p.fraction.iter().map(|f| format!("{f:.3}")).collect();
                println!("kernel profile [{}]: {}", p.label, frac.join(" "));
            }
            debug_assert_eq!(s.status, Status::Ok);
            Ok(())
        })(),
        Command::Check { corrupt_cat_orientation } => {
            let rows = checks::run_checks(checks::CheckOptions {
                seed: cli.seed,
                corrupt_cat_orientation: *corrupt_cat_orientation,
            });
            print!("{}", checks::table(&rows));
            let n = rows.iter().filter(|r| !r.passed).count();
            if n == 0 {
                Ok(())
            } else {
                Err(ErrorReport::other("check_failed", format!("{n} checks failed")))
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
