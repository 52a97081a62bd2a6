//! `dgnn`: run the benchmark problems with the network solver, the
//! reference DG solver, or both, and study mesh convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dgnn::experiments::{experiment_by_name, EXPERIMENT_NAMES};
use dgnn::parallel::Execution;
use dgnn::runner::{convergence_study, run, scaled_dt, RunConfig, SolverKind};
use dgnn::DgError;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dgnn",
    version,
    about = "DG residual-trained network solver for 1-D conservation laws"
)]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one experiment and write snapshots, metrics and logs.
    Run(Box<RunArgs>),
    /// Reference-solver error and observed order over a list of meshes.
    Convergence(ConvergenceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Network,
    Oracle,
    Both,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = EXPERIMENT_NAMES)]
    experiment: Option<String>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $DGNN_OUTPUT_ROOT/<experiment> or runs/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config; its entries take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    growth: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, value_parser = EXPERIMENT_NAMES, default_value = "advection-smooth")]
    experiment: String,
    #[arg(long = "K", value_delimiter = ',', default_values_t = [32usize, 64, 128, 256])]
    k: Vec<usize>,
    #[arg(long = "T", default_value_t = 1.0)]
    t_final: f64,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn build_config(a: &RunArgs) -> Result<RunConfig, DgError> {
    let file = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| DgError::Config(format!("{}: {e}", p.display())))?;
            Some(toml::from_str::<toml::Value>(&text).map_err(|e| DgError::Config(e.to_string()))?)
        }
        None => None,
    };
    let experiment = a
        .experiment
        .clone()
        .or_else(|| {
            file.as_ref()
                .and_then(|f| f.get("experiment"))
                .and_then(|v| v.as_str())
                .map(String::from)
        })
        .ok_or_else(|| DgError::Config("--experiment is required".into()))?;
    let mut c = RunConfig::new(experiment);
    if let Some(s) = a.solver {
        c.solver = match s {
            Solver::Network => SolverKind::Network,
            Solver::Oracle => SolverKind::Oracle,
            Solver::Both => SolverKind::Both,
        };
    }
    c.k = a.k;
    c.dt = a.dt;
    c.t_final = a.t_final;
    c.snapshots = a.snapshots.clone();
    c.seed = a.seed.unwrap_or(0);
    c.output_dir = a.out.clone();
    if a.sequential {
        c.execution = Execution::Sequential;
    }
    c.train.epochs = a.epochs;
    c.train.initial_lr = a.lr;
    c.train.tol = a.tol;
    c.network.blocks = a.blocks;
    c.network.layers = a.layers;
    c.network.growth = a.growth;
    c.network.features = a.features;
    c.network.kernel = a.kernel;
    if let Some(f) = file {
        let mut v = toml::Value::try_from(&c).map_err(|e| DgError::Config(e.to_string()))?;
        merge(&mut v, f);
        c = v
            .try_into()
            .map_err(|e: toml::de::Error| DgError::Config(e.to_string()))?;
    }
    Ok(c)
}

fn exit_for(e: &DgError) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_solver_abort() {
        ExitCode::from(EXIT_SOLVER)
    } else if matches!(e, DgError::Io(_)) {
        ExitCode::FAILURE
    } else {
        ExitCode::from(EXIT_CONFIG)
    }
}

fn cmd_run(a: &RunArgs) -> Result<(), DgError> {
    let cfg = build_config(a)?;
    let outcome = run(&cfg)?;
    for s in &outcome.metrics.snapshots {
        let mut line = format!("t = {:.4}", s.t);
        if let Some(m) = s.network {
            line += &format!("  network mse {:.3e} l2 {:.3e}", m.mse, m.l2);
        }
        if let Some(m) = s.oracle {
            line += &format!("  oracle mse {:.3e} l2 {:.3e}", m.mse, m.l2);
        }
        if let Some(m) = s.network_vs_oracle {
            line += &format!("  |nn - oracle|_inf {:.3e}", m.linf);
        }
        println!("{line}");
    }
    println!("wrote {}", outcome.output_dir.display());
    Ok(())
}

fn cmd_convergence(a: &ConvergenceArgs) -> Result<(), DgError> {
    let e = experiment_by_name(&a.experiment)?;
    let report = convergence_study(&e, &a.k, scaled_dt, a.t_final)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = &a.out {
        std::fs::write(p, table)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let r = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Convergence(a) => cmd_convergence(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
