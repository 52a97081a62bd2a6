//! Run configuration, the end-to-end solve/report pipeline, and the mesh
//! convergence study.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::experiments::{
    compare_fields, error_metrics, experiment_by_name, sample_exact, ErrorMetrics, ExperimentSpec,
};
use crate::field::ElementField;
use crate::mesh::Mesh1D;
use crate::network::{save_checkpoint, InitOptions, NetworkParams};
use crate::optimize::{EpochRecord, StepReport, Trainer};
use crate::parallel::Execution;
use crate::timestep::{OracleSolver, BLOW_UP_LIMIT};
use crate::weakform::{apply_dirichlet_in_place, Discretization};

/// Environment variable naming the directory under which runs are written
/// when no output directory is given.
pub const OUTPUT_ROOT_ENV: &str = "DGNN_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Network,
    Oracle,
    Both,
}

impl SolverKind {
    pub fn network(self) -> bool {
        self != SolverKind::Oracle
    }

    pub fn oracle(self) -> bool {
        self != SolverKind::Network
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_weights: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
}

/// Everything needed to reproduce a run. Unset fields take the
/// experiment's defaults; [`RunConfig::effective`] fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub network: NetworkOverrides,
}

impl RunConfig {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            solver: SolverKind::default(),
            k: None,
            dt: None,
            t_final: None,
            snapshots: None,
            seed: 0,
            execution: Execution::default(),
            output_dir: None,
            train: TrainOverrides::default(),
            network: NetworkOverrides::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DgError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DgError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DgError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The experiment with all overrides applied.
    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let mut e = experiment_by_name(&self.experiment)?;
        if let Some(k) = self.k {
            e.k = k;
        }
        if let Some(dt) = self.dt {
            e.dt = dt;
        }
        match (self.t_final, &self.snapshots) {
            (_, Some(s)) => {
                e.snapshots = s.clone();
                e.t_final = self.t_final.unwrap_or_else(|| s.iter().copied().fold(0.0, f64::max));
            }
            (Some(t), None) => {
                // keep the default snapshots that still fit, plus the end
                e.t_final = t;
                e.snapshots.retain(|&s| s <= t);
                e.snapshots.push(t);
            }
            (None, None) => {}
        }
        e.snapshots.sort_by(f64::total_cmp);
        e.snapshots.dedup();
        let t = &self.train;
        let tc = &mut e.train;
        tc.seed = self.seed;
        tc.initial_lr = t.initial_lr.unwrap_or(tc.initial_lr);
        tc.min_lr = t.min_lr.unwrap_or(tc.min_lr.min(tc.initial_lr));
        tc.epochs = t.epochs.unwrap_or(tc.epochs);
        tc.tol = t.tol.unwrap_or(tc.tol);
        tc.factor = t.factor.unwrap_or(tc.factor);
        tc.patience = t.patience.unwrap_or(tc.patience);
        tc.stage_weights = t.stage_weights.unwrap_or(tc.stage_weights);
        let n = &self.network;
        let nc = &mut e.network;
        nc.blocks = n.blocks.unwrap_or(nc.blocks);
        nc.layers = n.layers.unwrap_or(nc.layers);
        nc.growth = n.growth.unwrap_or(nc.growth);
        nc.features = n.features.unwrap_or(nc.features);
        nc.kernel = n.kernel.unwrap_or(nc.kernel);
        e.validate()?;
        e.mesh()?;
        Ok(e)
    }

    /// A copy with every experiment-dependent field made explicit.
    pub fn effective(&self) -> Result<Self> {
        let e = self.experiment_spec()?;
        let mut c = self.clone();
        c.k = Some(e.k);
        c.dt = Some(e.dt);
        c.t_final = Some(e.t_final);
        c.snapshots = Some(e.snapshots.clone());
        c.output_dir = Some(self.output_path());
        c.train = TrainOverrides {
            initial_lr: Some(e.train.initial_lr),
            epochs: Some(e.train.epochs),
            tol: Some(e.train.tol),
            factor: Some(e.train.factor),
            patience: Some(e.train.patience),
            min_lr: Some(e.train.min_lr),
            stage_weights: Some(e.train.stage_weights),
        };
        c.network = NetworkOverrides {
            blocks: Some(e.network.blocks),
            layers: Some(e.network.layers),
            growth: Some(e.network.growth),
            features: Some(e.network.features),
            kernel: Some(e.network.kernel),
        };
        Ok(c)
    }

    /// `output_dir`, else `$DGNN_OUTPUT_ROOT/<experiment>`, else
    /// `runs/<experiment>`.
    pub fn output_path(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(&self.experiment)
    }
}

/// Step boundaries from 0 to `t_final`: multiples of `dt`, with every
/// snapshot time inserted exactly (steps ending on a snapshot are shortened).
pub fn time_grid(dt: f64, t_final: f64, snapshots: &[f64]) -> Vec<f64> {
    let tol = 1e-6 * dt;
    let mut pts: Vec<f64> = snapshots.to_vec();
    pts.push(0.0);
    pts.push(t_final);
    let n = (t_final / dt).ceil() as usize;
    for i in 1..n {
        let t = i as f64 * dt;
        if t < t_final - tol && snapshots.iter().all(|s| (s - t).abs() > tol) {
            pts.push(t);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    pts
}

/// Network-solver trajectory.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub snapshots: Vec<ElementField>,
    pub reports: Vec<StepReport>,
    pub log: Vec<EpochRecord>,
    pub params: NetworkParams,
}

/// Marches the network solver over the experiment's time grid, keeping a
/// copy of the state at each snapshot time.
pub fn run_network(
    spec: &ExperimentSpec,
    disc: &Discretization,
    exec: Execution,
    mut on_step: impl FnMut(&StepReport, &ElementField),
) -> Result<NetworkRun> {
    let prob = &spec.problem;
    let mut u = disc.project(|x, s| (prob.u0)(x, s));
    apply_dirichlet_in_place(&mut u.data, &prob.bc, 0.0);
    let params = NetworkParams::init(
        spec.network,
        InitOptions {
            seed: spec.train.seed,
            zero_output: true,
        },
    )?;
    let mut trainer = Trainer::new(disc, prob, params, spec.train)?.with_execution(exec);
    let grid = time_grid(spec.dt, spec.t_final, &spec.snapshots);
    let mut snaps = Vec::new();
    if spec.snapshots.first() == Some(&0.0) {
        snaps.push(u.clone());
    }
    let mut reports = Vec::new();
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let (mut next, rep) = trainer.train_time_step(&u, t0, t1 - t0)?;
        next.time = t1;
        let m = next.max_abs();
        if m.is_nan() || m > BLOW_UP_LIMIT {
            return Err(DgError::BlowUp { t: t1, max_abs: m });
        }
        on_step(&rep, &next);
        reports.push(rep);
        u = next;
        if spec.snapshots.contains(&t1) {
            snaps.push(u.clone());
        }
    }
    Ok(NetworkRun {
        snapshots: snaps,
        reports,
        log: std::mem::take(&mut trainer.log),
        params: trainer.params,
    })
}

/// Reference-solver trajectory on the same time grid. `on_step` sees every
/// accepted step.
pub fn run_oracle(
    spec: &ExperimentSpec,
    disc: &Discretization,
    mut on_step: impl FnMut(&OracleSolver<'_>),
) -> Result<Vec<ElementField>> {
    let mut solver = OracleSolver::new(disc, &spec.problem, spec.dt)?;
    let grid = time_grid(spec.dt, spec.t_final, &spec.snapshots);
    let mut snaps = Vec::new();
    if spec.snapshots.first() == Some(&0.0) {
        snaps.push(solver.u.clone());
    }
    for w in grid.windows(2) {
        solver.step_by(w[1] - w[0])?;
        solver.t = w[1];
        solver.u.time = w[1];
        on_step(&solver);
        if spec.snapshots.contains(&w[1]) {
            snaps.push(solver.u.clone());
        }
    }
    Ok(snaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<ErrorMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<ErrorMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network_vs_oracle: Option<ErrorMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub epochs_per_step: Vec<usize>,
    pub final_loss_per_step: Vec<f64>,
    pub converged_steps: usize,
    pub mean_epochs: f64,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub experiment: String,
    pub solver: SolverKind,
    #[serde(rename = "K")]
    pub k: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub snapshots: Vec<SnapshotMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    /// Excluded from reproducibility comparisons.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub metrics: RunMetrics,
    pub network: Option<NetworkRun>,
    pub oracle: Option<Vec<ElementField>>,
    pub output_dir: PathBuf,
}

/// Solves, evaluates and writes all artifacts into the output directory.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let effective = config.effective()?;
    let spec = config.experiment_spec()?;
    let out = effective.output_path();
    fs::create_dir_all(&out).map_err(|e| DgError::Config(format!("cannot create {}: {e}", out.display())))?;
    let mesh = spec.mesh()?;
    let disc = Discretization::new(mesh.clone(), spec.n_quad)?.with_execution(config.execution);

    let oracle = if config.solver.oracle() {
        log::info!("{}: reference solver to t = {}", spec.name, spec.t_final);
        Some(run_oracle(&spec, &disc, |_| {})?)
    } else {
        None
    };
    let network = if config.solver.network() {
        log::info!("{}: network solver to t = {}", spec.name, spec.t_final);
        let mut log_file = std::io::BufWriter::new(fs::File::create(out.join("train_log.jsonl"))?);
        let run = run_network(&spec, &disc, config.execution, |rep, _| {
            log::info!(
                "step {} t = {:.4}: {} epochs, loss {:.3e}",
                rep.step,
                rep.t + spec.dt,
                rep.epochs,
                rep.final_loss
            );
        })?;
        for rec in &run.log {
            serde_json::to_writer(&mut log_file, rec)?;
            log_file.write_all(b"\n")?;
        }
        log_file.flush()?;
        save_checkpoint(&out.join("checkpoint.bin"), &run.params)?;
        Some(run)
    } else {
        None
    };

    let exact = spec.problem.analytic.clone();
    let mut snaps = Vec::new();
    for (i, &t) in spec.snapshots.iter().enumerate() {
        let metric = |u: &ElementField| -> Result<Option<ErrorMetrics>> {
            match &exact {
                Some(a) => error_metrics(u, |x, s| a(x, t, s), &mesh).map(Some),
                None => Ok(None),
            }
        };
        let nn = network.as_ref().map(|r| &r.snapshots[i]);
        let or = oracle.as_ref().map(|s| &s[i]);
        let mut sm = SnapshotMetrics {
            t,
            network: None,
            oracle: None,
            network_vs_oracle: None,
        };
        if let Some(u) = nn {
            sm.network = metric(u)?;
            write_snapshot_csv(&out.join(snapshot_file("network", t)), u, &mesh, &spec, t)?;
        }
        if let Some(u) = or {
            sm.oracle = metric(u)?;
            write_snapshot_csv(&out.join(snapshot_file("oracle", t)), u, &mesh, &spec, t)?;
        }
        if let (Some(a), Some(b)) = (nn, or) {
            sm.network_vs_oracle = Some(compare_fields(a, b, &mesh)?);
        }
        snaps.push(sm);
    }

    let training = network.as_ref().map(|r| {
        let epochs: Vec<usize> = r.reports.iter().map(|s| s.epochs).collect();
        TrainingSummary {
            steps: r.reports.len(),
            mean_epochs: epochs.iter().sum::<usize>() as f64 / epochs.len().max(1) as f64,
            epochs_per_step: epochs,
            final_loss_per_step: r.reports.iter().map(|s| s.final_loss).collect(),
            converged_steps: r.reports.iter().filter(|s| s.converged).count(),
            parameters: r.params.param_count(),
        }
    });
    let metrics = RunMetrics {
        experiment: spec.name.clone(),
        solver: config.solver,
        k: spec.k,
        dt: spec.dt,
        t_final: spec.t_final,
        snapshots: snaps,
        training,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    let manifest = serde_json::json!({
        "version": format!("dgnn {}", env!("CARGO_PKG_VERSION")),
        "seed": config.seed,
        "config": &effective,
        "config_toml": effective.to_toml()?,
        "snapshot_times_note": "snapshot times are fixed per experiment unless overridden",
        "wall_time_s": metrics.wall_time_s,
        "final_metrics": metrics.snapshots.last(),
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(RunOutcome {
        config: effective,
        metrics,
        network,
        oracle,
        output_dir: out,
    })
}

pub fn snapshot_file(solver: &str, t: f64) -> String {
    format!("{solver}_t{t:.4}.csv")
}

/// One row per DOF: `x,u_numeric,u_exact,abs_error`.
pub fn write_snapshot_csv(path: &Path, u: &ElementField, mesh: &Mesh1D, spec: &ExperimentSpec, t: f64) -> Result<()> {
    let coords = mesh.dof_layout().coords;
    let exact = match &spec.problem.analytic {
        Some(a) => sample_exact(|x, s| a(x, t, s), mesh).data,
        None => vec![f64::NAN; u.len()],
    };
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,u_numeric,u_exact,abs_error")?;
    for ((x, un), ue) in coords.iter().zip(&u.data).zip(&exact) {
        writeln!(w, "{x},{un},{ue},{}", (un - ue).abs())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub dt: f64,
    pub l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub rows: Vec<ConvergenceRow>,
    /// False when the exact solution is not smooth and orders are omitted.
    pub orders_reported: bool,
}

impl ConvergenceReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("K,dt,l2_error,observed_order\n");
        for r in &self.rows {
            let o = r.order.map_or(String::new(), |o| format!("{o:.4}"));
            s += &format!("{},{},{:.6e},{}\n", r.k, r.dt, r.l2, o);
        }
        s
    }
}

/// Oracle L2 errors at `t_final` for each `K`, with the observed order
/// `log(e_prev / e) / log(K / K_prev)` between consecutive entries.
pub fn convergence_study(
    experiment: &ExperimentSpec,
    ks: &[usize],
    dt_rule: impl Fn(usize) -> f64,
    t_final: f64,
) -> Result<ConvergenceReport> {
    let Some(exact) = experiment.problem.analytic.clone() else {
        return Err(DgError::Config(format!("{} has no exact solution", experiment.name)));
    };
    if !experiment.smooth {
        log::warn!("{} is not smooth; observed orders are not reported", experiment.name);
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &k in ks {
        let mut spec = experiment.clone();
        spec.k = k;
        spec.dt = dt_rule(k);
        spec.t_final = t_final;
        spec.snapshots = vec![t_final];
        let disc = Discretization::new(spec.mesh()?, spec.n_quad)?;
        let u = run_oracle(&spec, &disc, |_| {})?.pop().expect("final snapshot");
        let l2 = error_metrics(&u, |x, s| exact(x, t_final, s), &disc.mesh)?.l2;
        let order = match rows.last() {
            Some(prev) if experiment.smooth => Some((prev.l2 / l2).ln() / (k as f64 / prev.k as f64).ln()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            k,
            dt: spec.dt,
            l2,
            order,
        });
    }
    Ok(ConvergenceReport {
        experiment: experiment.name.clone(),
        t_final,
        rows,
        orders_reported: experiment.smooth,
    })
}

/// `dt = 0.004 · 128 / K`, the default step scaled with the mesh width.
pub fn scaled_dt(k: usize) -> f64 {
    0.004 * 128.0 / k as f64
}
