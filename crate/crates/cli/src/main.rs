use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmstat::experiment::{run_compare, run_limit, run_norms, run_simulate, run_verify, ExperimentConfig};
use vmstat::{par, Error};

/// Simulate degenerate von Mises statistics of mixing sequences and their
/// multiple-integral limits.
#[derive(Parser)]
#[command(name = "vmstat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `run.reps`.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample V_n replications (simulate.csv).
    Simulate,
    /// Sample the limit law (limit_msi.csv, and the eigen-series for IID data).
    Limit,
    /// Compare V_n with the limit law (compare.json).
    Compare,
    /// Print seminorm and combined-norm tables for the kernel.
    Norms,
    /// Run the invariant battery (verify.json); exits with 4 on failure.
    Verify,
}

const EXIT_VERIFY_FAILED: u8 = 4;

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_toml_str("", &std::env::current_dir()?)?,
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    if let Some(reps) = common.reps {
        cfg.run.reps = reps;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            return Err(Error::Input("--threads must be positive".into()));
        }
        par::set_threads(threads)?;
    }
    let cfg = load(&cli.common)?;
    let out = cfg.run.out.display().to_string();
    match cli.command {
        Command::Simulate => {
            let s = run_simulate(&cfg)?;
            println!("{} replications, mean {:.6} (se {:.6}) -> {out}", s.values.len(), s.metadata.summary.mean, s.metadata.summary.mean_se);
        }
        Command::Limit => {
            let l = run_limit(&cfg)?;
            println!("{} limit replications, mean {:.6} (se {:.6}) -> {out}", l.msi.len(), l.metadata.summary.mean, l.metadata.summary.mean_se);
            if let Some(eig) = &l.eigenvalues {
                println!("leading eigenvalue {:.6}", eig[0]);
            }
        }
        Command::Compare => {
            let r = run_compare(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.pass {
                return Ok(EXIT_VERIFY_FAILED);
            }
        }
        Command::Norms => {
            let r = run_norms(&cfg)?;
            print!("{}", r.to_table());
        }
        Command::Verify => {
            let r = run_verify(&cfg)?;
            for e in &r.entries {
                println!("{:<34} {:>14.6e} {:>14.6e} {}", e.name, e.measured, e.bound, if e.pass { "pass" } else { "FAIL" });
            }
            if let Some(t) = r.failure_onset {
                println!("tube-decay sweep fails from threshold {t}");
            }
            if !r.pass {
                return Ok(EXIT_VERIFY_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
