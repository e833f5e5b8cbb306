//! Batch command-line interface: every subcommand reads a flat
//! `key = value` config, runs one experiment, and writes CSV files plus
//! a text summary. Re-running with identical config and seed produces
//! byte-identical outputs.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::Config;
use std::path::PathBuf;

const SEED_ENV: &str = "FRACEVOL_SEED";
const DEFAULT_SEED: u64 = 1;

const AFTER_HELP: &str = "\
Seed precedence: --seed, then the `seed` config key, then the
FRACEVOL_SEED environment variable, then the default 1.

Config keys by command (all optional; defaults in parentheses):
  sample     hurst (0.75), horizon (1.0), steps (64), paths (1000),
             method (circulant | dense | wiener), wiener.refine (8),
             compare_with (none | dense | circulant | wiener)
  verify     hurst (0.75), paths (20000)            [isometry]
             hurst (0.75), model.a (1.0), model.b (1.0),
             grid.min_pow (8), grid.max_pow (11)    [counterexample]
             hurst (0.75), model.a (0.0), model.b (1.0), steps (8)
                                                    [composition]
             steps (16)                             [reduction]
  solve      hurst (0.7), horizon (1.0), steps (128), paths (1),
             model.a (-1.0), model.b (0.5), model.x (1.0),
             forcing.kind (none | constant), forcing.value (1.0),
             method (quadrature | picard), picard.tol (1e-10),
             picard.max_sweeps (200)
  spde       nu (1.0), c (0.0), b (1.0), modes (16), hurst (0.75),
             T (1.0), steps (256), paths (1),
             x0.kind (parabola | mode1 | zero),
             f.kind (zero | constant), f.value (1.0),
             space.points (257), projection.tol (1e-10)
  moments    hurst (0.7), horizon (1.0), steps (64), paths (100000),
             model.a (-1.0), model.b (0.5), model.x (1.0),
             p (1,2), times.count (9)
  stability  hurst (0.75), horizon (4.0), steps (256), paths (100000),
             model.a (-0.5), model.b (1.5), p (2)
Common keys: seed, threads.

Exit status: 0 on success (verify: all checks pass), 1 on failure,
2 when a verification is inconclusive.";

#[derive(Parser)]
#[command(
    name = "fracevol",
    about = "Samplers, solvers and verification harnesses for affine evolution \
             equations driven by fractional Brownian motion",
    after_help = AFTER_HELP,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to a flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config and the environment.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker-thread cap; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a fractional Brownian ensemble and self-check its
    /// covariance.
    Sample,
    /// Run a named verification suite.
    Verify {
        #[arg(long)]
        suite: Suite,
    },
    /// Solve the scalar affine mild equation over an ensemble of paths.
    Solve,
    /// Solve the spectral heat equation with multiplicative noise.
    Spde,
    /// Estimate solution moments against the exact law and the growth
    /// bound.
    Moments,
    /// Probe the moment-growth / pathwise-decay dichotomy.
    Stability,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Isometry,
    Counterexample,
    Composition,
    Reduction,
}

fn resolve_seed(cli: Option<u64>, cfg: &Config) -> Result<u64, config::ConfigError> {
    if let Some(s) = cli {
        let _ = cfg.get_u64("seed")?; // consume so it is not "unknown"
        return Ok(s);
    }
    if let Some(s) = cfg.get_u64("seed")? {
        return Ok(s);
    }
    if let Ok(env) = std::env::var(SEED_ENV) {
        if let Ok(s) = env.parse() {
            return Ok(s);
        }
    }
    Ok(DEFAULT_SEED)
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        1
    });
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, Box<dyn std::error::Error>> {
    let cfg = Config::load(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &cfg)?;
    let threads = match cli.threads {
        Some(t) => t,
        None => cfg.get_usize("threads", 0)?,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let (name, result): (&str, fn(&Config, u64, &std::path::Path) -> commands::CmdResult) =
        match &cli.command {
            Command::Sample => ("sample", commands::cmd_sample),
            Command::Verify { suite } => match suite {
                Suite::Isometry => ("verify-isometry", commands::verify_isometry),
                Suite::Counterexample => {
                    ("verify-counterexample", commands::verify_counterexample)
                }
                Suite::Composition => ("verify-composition", commands::verify_composition),
                Suite::Reduction => ("verify-reduction", commands::verify_reduction),
            },
            Command::Solve => ("solve", commands::cmd_solve),
            Command::Spde => ("spde", commands::cmd_spde),
            Command::Moments => ("moments", commands::cmd_moments),
            Command::Stability => ("stability", commands::cmd_stability),
        };
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out)?;
    result(&cfg, seed, &out)
}
