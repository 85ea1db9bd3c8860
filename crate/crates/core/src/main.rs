use clap::{Args, Parser, Subcommand};
use paraprec::bench::export_problem;
use paraprec::experiment::{
    read_state, run_build_precond, run_eim_inspect, run_greedy_precond, run_rb_greedy, run_sweep, sketch_bounds_table,
    ExperimentConfig,
};
use paraprec::precond::ConstraintMode;
use paraprec::sketch::{min_sketch_columns, SketchKind, SketchMatrix};
use paraprec::{Error, Result};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "paraprec", version, about = "Interpolated inverse preconditioners for parameter-dependent systems")]
struct Cli {
    /// Number of worker threads for parallel sweeps (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal number of sketch columns K; prints the full table without --n/--m.
    SketchBounds {
        #[arg(long, default_value = "rademacher")]
        dist: SketchKind,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        /// Also write the sketch matrix (n×K, Matrix Market) here; needs --n and --k.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, requires = "export")]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Preconditioner from fixed points (or an LHS sample) plus a sweep over the grid.
    BuildPrecond(RunArgs),
    /// Greedy point selection.
    GreedyPrecond {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a saved preconditioner state (precond.json).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reduced basis greedy.
    RbGreedy(RunArgs),
    /// Per-point residual/κ sweep of a saved preconditioner.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        state: PathBuf,
    },
    /// EIM of the operator coefficients and their products.
    EimInspect(RunArgs),
    /// Write the configured problem as Matrix Market files + manifest.
    ExportProblem {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// none | nonneg | kappa:<value>
    #[arg(long)]
    constraint: Option<ConstraintMode>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// First greedy point, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed_point: Option<Vec<f64>>,
    #[arg(long)]
    diagnostics: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(c) = self.constraint {
            cfg.constraint = c;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        if let Some(p) = &self.seed_point {
            cfg.seed_point = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.diagnostics |= self.diagnostics;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    match cli.command {
        Command::SketchBounds { dist, n, m, ratio, delta, export, k, seed } => {
            let exported = export.is_some();
            if let Some(path) = export {
                let (Some(n), Some(k)) = (n, k) else {
                    return Err(Error::InvalidArgument("--export needs --n and --k".into()));
                };
                let v = SketchMatrix::new(dist, n, k, seed)?;
                paraprec::mmio::write_dense(path, v.matrix())?;
            }
            match (n, m) {
                (Some(n), Some(m)) => println!("{}", min_sketch_columns(dist, n, m, ratio, delta)?),
                (None, None) => {
                    let table = sketch_bounds_table(dist, ratio, delta)?;
                    println!("{:>10} {:>4} {:>10}", "n", "m", "K");
                    for (n, m, k) in table {
                        println!("{n:>10} {m:>4} {k:>10}");
                    }
                }
                (Some(_), None) if exported => {}
                _ => return Err(Error::InvalidArgument("give both --n and --m, or neither for the table".into())),
            }
        }
        Command::BuildPrecond(a) => print_json(&run_build_precond(&a.load()?)?)?,
        Command::GreedyPrecond { run, resume } => {
            let cfg = run.load()?;
            let state = resume.map(read_state).transpose()?;
            print_json(&run_greedy_precond(&cfg, state.as_ref())?)?
        }
        Command::RbGreedy(a) => print_json(&run_rb_greedy(&a.load()?)?)?,
        Command::Sweep { run, state } => {
            let cfg = run.load()?;
            print_json(&run_sweep(&cfg, &read_state(state)?)?)?
        }
        Command::EimInspect(a) => {
            let s = run_eim_inspect(&a.load()?)?;
            println!("products: rank {} magic points {:?}", s.operator_products.rank(), s.operator_products.magic_points);
            println!("coefficients: rank {} magic points {:?}", s.coefficients.rank(), s.coefficients.magic_points);
        }
        Command::ExportProblem { run } => {
            let cfg = run.load()?;
            export_problem(&cfg.build_problem()?, cfg.output_dir())?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) | Error::Io(_) | Error::Csv(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
