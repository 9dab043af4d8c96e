//! `cclab`: run rate, allocation, bound and simulation experiments from a
//! JSON config and write CSV.

mod commands;
mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cclab::allocation::Method;
use cclab::cache::CacheDistribution;
use cclab::rate::Scheme;
use clap::{Parser, Subcommand};

use commands::Context;
use config::{ArrivalMode, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Config(String),
    /// Failed self check or delivery: exit code 3.
    Internal(String),
}

impl CliError {
    fn io(e: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("write failed: {e}"))
    }

    /// Simulation errors other than bad input are internal failures.
    fn from_run(e: cclab::Error) -> Self {
        match e {
            cclab::Error::DecodeFailure(_) => CliError::Internal(e.to_string()),
            other => other.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<cclab::Error> for CliError {
    fn from(e: cclab::Error) -> Self {
        use cclab::Error::*;
        match e {
            InvalidConfig(_) | DegenerateChunk { .. } | Domain(_) | TooManyUsers { .. } | Json(_) => {
                CliError::Config(e.to_string())
            }
            Csv(_) => CliError::Config(e.to_string()),
            DecodeFailure(_) | Io(_) => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "cclab", version, about = "Coded caching experiments for chunked video with asynchronous demands")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; defaults to the config's `output` or stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Arrival pattern for simulations.
    #[arg(long, global = true, value_enum)]
    mode: Option<ArrivalMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form rates per scheme.
    Rate {
        /// Single cache size instead of the config grid.
        #[arg(long)]
        capacity: Option<f64>,
        /// Cache distribution CSV (file_index,chunk_index,q).
        #[arg(long)]
        q: Option<PathBuf>,
    },
    /// Cache allocation at one cache size; writes Q as CSV.
    Optimize {
        #[arg(long)]
        capacity: f64,
        /// PCA or OCA; defaults to the first configured allocation.
        #[arg(long)]
        method: Option<String>,
        /// Scheme whose rate is minimized.
        #[arg(long, default_value = "PCC")]
        objective: String,
        /// Where to write the solver trace (JSON); defaults to stderr.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Lower bound on the average rate.
    Bound {
        #[arg(long)]
        capacity: Option<f64>,
    },
    /// Monte Carlo simulation; writes the per-scheme summary.
    Simulate {
        /// Cache size for a PCA allocation when no Q is given.
        #[arg(long)]
        capacity: Option<f64>,
        #[arg(long)]
        q: Option<PathBuf>,
        /// Per-slot trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Allocation, rates, bound and optional simulation over the cache grid.
    Sweep,
    /// Chunk popularity grid `p_i * p_ij`.
    ChunkReport,
}

fn create(path: &Path) -> Result<Box<dyn Write>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn read_q(path: &Path, cfg: &ExperimentConfig) -> Result<CacheDistribution, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(CacheDistribution::read_csv(f, cfg.model.num_files, cfg.model.num_chunks)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out: Box<dyn Write> = match cli.out.as_ref().or(cfg.output.as_ref()) {
        Some(p) => create(p)?,
        None => Box::new(io::stdout().lock()),
    };

    if let Command::ChunkReport = cli.command {
        return commands::chunk_report(&cfg, out);
    }
    let explicit = cfg.explicit_cache()?;
    let ctx = Context::new(cfg, cli.mode)?;
    match cli.command {
        Command::Rate { capacity, q } => {
            let q = match q {
                Some(p) => Some(read_q(&p, &ctx.config)?),
                None if capacity.is_none() => explicit,
                None => None,
            };
            commands::rate(&ctx, capacity, q, out)
        }
        Command::Optimize { capacity, method, objective, trace } => {
            let method = match method {
                Some(m) => m.parse::<Method>()?,
                None => ctx.config.allocations[0],
            };
            let objective: Scheme = objective.parse()?;
            let result = commands::optimize(&ctx, capacity, method, objective, out)?;
            let summary = serde_json::json!({
                "method": result.method,
                "objective": result.objective,
                "capacity": capacity,
                "achieved_rate": result.achieved_rate,
                "solver_trace": result.solver_trace,
            });
            let mut w: Box<dyn Write> = match trace {
                Some(p) => create(&p)?,
                None => Box::new(io::stderr().lock()),
            };
            serde_json::to_writer_pretty(&mut w, &summary).map_err(CliError::io)?;
            writeln!(w).map_err(CliError::io)
        }
        Command::Bound { capacity } => commands::bound(&ctx, capacity, out),
        Command::Simulate { capacity, q, trace } => {
            let q = match (q, capacity) {
                (Some(p), _) => read_q(&p, &ctx.config)?,
                (None, Some(m)) => {
                    let opts = ctx.config.oca_options();
                    cclab::allocation::allocate(&ctx.stats, m, Method::Pca, Scheme::Pcc, &opts)?.q
                }
                (None, None) => explicit.ok_or_else(|| {
                    CliError::Config("simulate needs --q, --capacity or a cache in the config".into())
                })?,
            };
            let trace = trace.map(|p| create(&p)).transpose()?;
            commands::simulate_cmd(&ctx, &q, out, trace)
        }
        Command::Sweep => commands::sweep(&ctx, out),
        Command::ChunkReport => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cclab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
