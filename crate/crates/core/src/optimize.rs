//! Residual-minimisation training: the L1 objective, Adam, plateau-based
//! learning-rate decay, and the time-marching trainer.
//!
//! Each time step minimises the mean absolute weak-form residual of both
//! SSP-RK2 stages, with the network output standing in for `u̇`:
//!
//! ```text
//! w₀ = NN(uᵗ)          v¹ = D(uᵗ + Δt w₀)          w₁ = NN(v¹)
//! loss = α₀ |R(uᵗ, w₀, t)|₁ + α₁ |R(v¹, w₁, t + Δt)|₁
//! uᵗ⁺ᐩᵗ = D(uᵗ + Δt/2 (w₀ + w₁))
//! ```
//!
//! where `D` overwrites Dirichlet DOFs. Parameters, Adam moments and the
//! learning rate carry over from one step to the next.

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::field::ElementField;
use crate::network::{rdn_forward_on_tape, CustomOp, NetworkParams, NodeId, ParamNodes, RDNConfig, Tape};
use crate::parallel::Execution;
use crate::weakform::{apply_dirichlet_in_place, BoundaryCondition, Discretization, ProblemSpec, ResidualVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epoch budget per time step.
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub seed: u64,
    /// Stop a time step once the loss drops below this.
    pub tol: f64,
    pub stage_weights: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            factor: 0.5,
            patience: 50,
            min_lr: 1e-6,
            seed: 0,
            tol: 1e-8,
            stage_weights: (1.0, 1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("initial_lr", self.initial_lr),
            ("eps", self.eps),
            ("min_lr", self.min_lr),
            ("tol", self.tol),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DgError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs == 0 || self.patience == 0 {
            return Err(DgError::Config("epochs and patience must be positive".into()));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("factor", self.factor)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DgError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.min_lr > self.initial_lr {
            return Err(DgError::Config("min_lr exceeds initial_lr".into()));
        }
        let (a, b) = self.stage_weights;
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
            return Err(DgError::Config(format!(
                "stage weights must be non-negative, got ({a}, {b})"
            )));
        }
        Ok(())
    }
}

/// Rows of the residual that enter the loss: everything except rows tested
/// against Dirichlet-overwritten DOFs.
pub fn loss_mask(prob: &ProblemSpec, n_dofs: usize) -> Vec<bool> {
    let mut m = vec![true; n_dofs];
    for i in prob.bc.dirichlet_dofs(n_dofs) {
        m[i] = false;
    }
    m
}

/// Mean `|r|` over the rows selected by `mask` (all rows if `None`).
pub fn l1_loss(r: &ResidualVector, mask: Option<&[bool]>) -> f64 {
    let (s, n) = r
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v.abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// Bias-corrected Adam update; clears the gradients it consumed. Missing
/// gradients count as zero.
pub fn adam_step(params: &mut NetworkParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.tensors.len() {
        return Err(DgError::shape(state.m.len(), params.tensors.len()));
    }
    for (t, name) in params.tensors.iter().zip(&params.names) {
        if let Some(g) = &t.grad {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(DgError::NonFinite(format!("gradient of {name}")));
            }
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for ((t, m), v) in params.tensors.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = t.grad.take();
        for i in 0..t.data.len() {
            let gi = g.as_ref().map_or(0.0, |g| g[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            t.data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerState {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl SchedulerState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.initial_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            factor: cfg.factor,
            patience: cfg.patience,
            min_lr: cfg.min_lr,
        }
    }

    /// Forget the best loss (the learning rate is kept).
    pub fn reset_plateau(&mut self) {
        self.best = f64::INFINITY;
        self.bad_epochs = 0;
    }
}

/// Reduce-on-plateau: strict improvement resets the counter; once more than
/// `patience` epochs pass without one, the rate is multiplied by `factor`.
pub fn scheduler_update(s: &mut SchedulerState, loss: f64) {
    if loss < s.best {
        s.best = loss;
        s.bad_epochs = 0;
    } else {
        s.bad_epochs += 1;
    }
    if s.bad_epochs > s.patience {
        s.lr = (s.lr * s.factor).max(s.min_lr);
        s.bad_epochs = 0;
    }
}

/// The weak-form residual as a tape op with inputs `(u, u̇)`.
struct ResidualOp<'a> {
    disc: &'a Discretization,
    prob: &'a ProblemSpec,
    t: f64,
}

impl CustomOp for ResidualOp<'_> {
    fn name(&self) -> &str {
        "weak_form_residual"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (gu, gw) = self.disc.residual_vjp(inputs[0], grad_out, self.prob, self.t);
        vec![Some(gu), Some(gw)]
    }
}

fn residual_node<'a>(
    tape: &mut Tape<'a>,
    disc: &'a Discretization,
    prob: &'a ProblemSpec,
    u: NodeId,
    w: NodeId,
    t: f64,
) -> NodeId {
    let r = disc.residual_raw(tape.value(u), tape.value(w), prob, t);
    let shape = tape.shape(u).to_vec();
    let op = ResidualOp { disc, prob, t };
    tape.custom(&[u, w], shape, r, Box::new(op))
}

fn dirichlet_entries(prob: &ProblemSpec, n: usize, t: f64) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    if let BoundaryCondition::Dirichlet(g) = &prob.bc.left {
        idx.push(0);
        vals.push(g(t));
    }
    if let BoundaryCondition::Dirichlet(g) = &prob.bc.right {
        idx.push(n - 1);
        vals.push(g(t));
    }
    (idx, vals)
}

/// Nodes of one recorded step-loss graph.
#[derive(Debug, Clone, Copy)]
pub struct StepGraph {
    pub loss: NodeId,
    pub stage_losses: (NodeId, NodeId),
    pub w0: NodeId,
    pub v1: NodeId,
    pub w1: NodeId,
}

/// Records the two-stage loss on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn record_step_loss<'a>(
    tape: &mut Tape<'a>,
    p: &ParamNodes,
    config: &RDNConfig,
    disc: &'a Discretization,
    prob: &'a ProblemSpec,
    u_t: &ElementField,
    t: f64,
    dt: f64,
    weights: (f64, f64),
) -> Result<StepGraph> {
    disc_check(disc, u_t)?;
    let n = u_t.len();
    let mask = loss_mask(prob, n);
    let u = tape.input(vec![1, n], u_t.data.clone(), false)?;
    let w0 = rdn_forward_on_tape(tape, p, config, u)?;
    let r0 = residual_node(tape, disc, prob, u, w0, t);
    let l0 = tape.mean_abs(r0, Some(&mask))?;
    let stepped = tape.axpy(u, w0, dt)?;
    let (idx, vals) = dirichlet_entries(prob, n, t + dt);
    let v1 = tape.overwrite(stepped, &idx, &vals);
    let w1 = rdn_forward_on_tape(tape, p, config, v1)?;
    let r1 = residual_node(tape, disc, prob, v1, w1, t + dt);
    let l1 = tape.mean_abs(r1, Some(&mask))?;
    let a = tape.scale(l0, weights.0);
    let loss = tape.axpy(a, l1, weights.1)?;
    Ok(StepGraph {
        loss,
        stage_losses: (l0, l1),
        w0,
        v1,
        w1,
    })
}

fn disc_check(disc: &Discretization, u: &ElementField) -> Result<()> {
    if u.k != disc.mesh.k || u.n_p != disc.mesh.n_p {
        return Err(DgError::shape(
            format!("{}x{}", disc.mesh.k, disc.mesh.n_p),
            format!("{}x{}", u.k, u.n_p),
        ));
    }
    Ok(())
}

/// Value of the two-stage loss for the current parameters.
#[allow(clippy::too_many_arguments)]
pub fn step_loss(
    u_t: &ElementField,
    params: &NetworkParams,
    disc: &Discretization,
    prob: &ProblemSpec,
    t: f64,
    dt: f64,
    weights: (f64, f64),
    exec: Execution,
) -> Result<f64> {
    let mut tape = Tape::with_execution(exec);
    let p = ParamNodes::load(&mut tape, params);
    let g = record_step_loss(&mut tape, &p, &params.config, disc, prob, u_t, t, dt, weights)?;
    Ok(tape.scalar(g.loss))
}

/// The same two-stage loss with an arbitrary predictor in place of the
/// network, e.g. the oracle right-hand side.
pub fn step_loss_with<P>(
    u_t: &ElementField,
    mut predictor: P,
    disc: &Discretization,
    prob: &ProblemSpec,
    t: f64,
    dt: f64,
    weights: (f64, f64),
) -> Result<f64>
where
    P: FnMut(&ElementField, f64) -> Result<ElementField>,
{
    let mask = loss_mask(prob, u_t.len());
    let w0 = predictor(u_t, t)?;
    let l0 = l1_loss(&disc.assemble_residual(u_t, &w0, prob, t)?, Some(&mask));
    let mut v1 = u_t.axpy(dt, &w0);
    apply_dirichlet_in_place(&mut v1.data, &prob.bc, t + dt);
    let w1 = predictor(&v1, t + dt)?;
    let l1 = l1_loss(&disc.assemble_residual(&v1, &w1, prob, t + dt)?, Some(&mask));
    Ok(weights.0 * l0 + weights.1 * l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    /// Parameter updates performed.
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
}

/// Owns the parameters and optimiser state across time steps.
pub struct Trainer<'a> {
    pub disc: &'a Discretization,
    pub prob: &'a ProblemSpec,
    pub params: NetworkParams,
    pub adam: AdamState,
    pub sched: SchedulerState,
    pub cfg: TrainConfig,
    pub exec: Execution,
    pub log: Vec<EpochRecord>,
    steps: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        disc: &'a Discretization,
        prob: &'a ProblemSpec,
        params: NetworkParams,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&params, cfg.beta1, cfg.beta2, cfg.eps);
        Ok(Self {
            disc,
            prob,
            params,
            adam,
            sched: SchedulerState::new(&cfg),
            cfg,
            exec: Execution::default(),
            log: Vec::new(),
            steps: 0,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Trains on the step `t → t + dt` and returns the network's `u^{t+dt}`.
    pub fn train_time_step(&mut self, u_t: &ElementField, t: f64, dt: f64) -> Result<(ElementField, StepReport)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DgError::InvalidTimeStep(format!("dt must be positive, got {dt}")));
        }
        let step = self.steps;
        self.steps += 1;
        self.sched.reset_plateau();
        let mut initial_loss = f64::NAN;
        let mut final_loss;
        let mut epochs = 0;
        let (w0, w1) = loop {
            let mut tape = Tape::with_execution(self.exec);
            let p = ParamNodes::load(&mut tape, &self.params);
            let g = record_step_loss(
                &mut tape,
                &p,
                &self.params.config,
                self.disc,
                self.prob,
                u_t,
                t,
                dt,
                self.cfg.stage_weights,
            )?;
            final_loss = tape.scalar(g.loss);
            if !final_loss.is_finite() {
                return Err(DgError::NonFinite(format!(
                    "training loss at step {step}, epoch {epochs}"
                )));
            }
            if epochs == 0 {
                initial_loss = final_loss;
            }
            self.log.push(EpochRecord {
                step,
                epoch: epochs,
                loss: final_loss,
                lr: self.sched.lr,
            });
            if final_loss < self.cfg.tol || epochs == self.cfg.epochs {
                break (tape.value(g.w0).to_vec(), tape.value(g.w1).to_vec());
            }
            tape.backward(g.loss)?.accumulate_into(&mut self.params.tensors);
            drop(tape);
            adam_step(&mut self.params, &mut self.adam, self.sched.lr)?;
            scheduler_update(&mut self.sched, final_loss);
            epochs += 1;
        };
        let converged = final_loss < self.cfg.tol;
        if !converged {
            log::warn!("step {step} (t = {t:.4}): loss {final_loss:.3e} above tolerance after {epochs} epochs");
        }
        let mut next = u_t.clone();
        for ((u, a), b) in next.data.iter_mut().zip(&w0).zip(&w1) {
            *u += 0.5 * dt * (a + b);
        }
        apply_dirichlet_in_place(&mut next.data, &self.prob.bc, t + dt);
        next.time = t + dt;
        next.check_finite("network update")?;
        Ok((
            next,
            StepReport {
                step,
                t,
                epochs,
                initial_loss,
                final_loss,
                converged,
            },
        ))
    }
}
