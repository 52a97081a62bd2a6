//! Two-stage SSP Runge-Kutta stepping and the classical method-of-lines
//! DG reference solver.

use crate::error::{DgError, Result};
use crate::field::ElementField;
use crate::weakform::{apply_dirichlet_in_place, Discretization, ProblemSpec};

/// Magnitude beyond which a run is declared unstable.
pub const BLOW_UP_LIMIT: f64 = 1e6;
/// Default Courant number used for the advisory stability check.
pub const DEFAULT_CFL: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct RKState {
    pub u_t: ElementField,
    pub v1: ElementField,
    pub t: f64,
    pub dt: f64,
}

/// One SSP-RK2 step:
/// `v¹ = u + dt L(u, t)`, `u⁺ = u + dt/2 (L(u, t) + L(v¹, t + dt))`.
/// `post` is applied to `v¹` and to the result (Dirichlet post-processing).
pub fn ssprk2_step<R, P>(rhs: R, post: P, u: &ElementField, t: f64, dt: f64) -> Result<RKState>
where
    R: Fn(&ElementField, f64) -> Result<ElementField>,
    P: Fn(&mut ElementField, f64),
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DgError::InvalidTimeStep(format!("dt must be positive, got {dt}")));
    }
    let l0 = rhs(u, t)?;
    l0.check_finite("rhs at stage 1")?;
    let mut v1 = u.axpy(dt, &l0);
    v1.time = t + dt;
    post(&mut v1, t + dt);
    let l1 = rhs(&v1, t + dt)?;
    l1.check_finite("rhs at stage 2")?;
    let mut next = u.clone();
    for ((n, a), b) in next.data.iter_mut().zip(&l0.data).zip(&l1.data) {
        *n += 0.5 * dt * (a + b);
    }
    next.time = t + dt;
    post(&mut next, t + dt);
    Ok(RKState {
        u_t: next,
        v1,
        t: t + dt,
        dt,
    })
}

/// `u̇ = M⁻¹ b(u, t)`, the exact solution of the weak form for the time
/// derivative.
pub fn oracle_rhs(disc: &Discretization, u: &ElementField, prob: &ProblemSpec, t: f64) -> Result<ElementField> {
    let b = disc.weak_rhs(u, prob, t)?;
    let data = disc.solve_mass(&b);
    Ok(ElementField {
        k: u.k,
        n_p: u.n_p,
        data,
        time: t,
    })
}

/// Largest stable-looking step for the given state: `cfl h / max |F'(u)|`.
pub fn cfl_limit(disc: &Discretization, u: &ElementField, prob: &ProblemSpec, cfl: f64) -> f64 {
    let smax = u.data.iter().fold(0.0f64, |m, &v| m.max(prob.flux.speed(v).abs()));
    if smax == 0.0 {
        f64::INFINITY
    } else {
        cfl * disc.mesh.h / smax
    }
}

/// Step-by-step driver for the reference solver.
pub struct OracleSolver<'a> {
    pub disc: &'a Discretization,
    pub prob: &'a ProblemSpec,
    pub dt: f64,
    pub u: ElementField,
    pub t: f64,
    pub steps: usize,
    warned: bool,
}

impl<'a> OracleSolver<'a> {
    pub fn new(disc: &'a Discretization, prob: &'a ProblemSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DgError::InvalidTimeStep(format!("dt must be positive, got {dt}")));
        }
        let mut u = disc.project(|x, s| (prob.u0)(x, s));
        apply_dirichlet_in_place(&mut u.data, &prob.bc, 0.0);
        Ok(Self {
            disc,
            prob,
            dt,
            u,
            t: 0.0,
            steps: 0,
            warned: false,
        })
    }

    pub fn with_state(mut self, u: ElementField, t: f64) -> Self {
        self.u = u;
        self.t = t;
        self
    }

    /// Advance by `dt` (or less, if given), checking for blow-up.
    pub fn step_by(&mut self, dt: f64) -> Result<()> {
        if !self.warned {
            let lim = cfl_limit(self.disc, &self.u, self.prob, DEFAULT_CFL);
            if dt > lim {
                log::warn!("dt = {dt} exceeds the advisory CFL limit {lim:.3e}");
                self.warned = true;
            }
        }
        let disc = self.disc;
        let prob = self.prob;
        let st = ssprk2_step(
            |u, t| oracle_rhs(disc, u, prob, t),
            |u, t| apply_dirichlet_in_place(&mut u.data, &prob.bc, t),
            &self.u,
            self.t,
            dt,
        )?;
        self.u = st.u_t;
        self.t = st.t;
        self.steps += 1;
        let m = self.u.max_abs();
        if m.is_nan() || m > BLOW_UP_LIMIT {
            return Err(DgError::BlowUp { t: self.t, max_abs: m });
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.step_by(self.dt)
    }

    /// Step until `target`, shortening the final step to land on it exactly.
    pub fn advance_to(&mut self, target: f64, mut on_step: impl FnMut(&Self)) -> Result<()> {
        let eps = 1e-12 * self.dt.max(target.abs());
        while self.t < target - eps {
            let dt = self.dt.min(target - self.t);
            self.step_by(dt)?;
            on_step(self);
        }
        self.t = self.t.max(target);
        self.u.time = self.t;
        Ok(())
    }
}

/// Runs the reference solver to `t_final`, returning the state at every
/// requested snapshot time (sorted, each in `[0, t_final]`).
pub fn oracle_solve(
    disc: &Discretization,
    prob: &ProblemSpec,
    dt: f64,
    t_final: f64,
    snapshot_times: &[f64],
) -> Result<Vec<ElementField>> {
    let mut solver = OracleSolver::new(disc, prob, dt)?;
    let mut times = snapshot_times.to_vec();
    times.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(times.len());
    for &ts in &times {
        if !(0.0..=t_final).contains(&ts) {
            return Err(DgError::Config(format!("snapshot time {ts} outside [0, {t_final}]")));
        }
        solver.advance_to(ts, |_| {})?;
        out.push(solver.u.clone());
    }
    Ok(out)
}
