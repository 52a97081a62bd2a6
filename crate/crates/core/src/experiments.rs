//! Benchmark problems, their exact solutions, and error metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::node_side;
use crate::error::{DgError, Result};
use crate::field::{ElementField, Side};
use crate::flux::{advection_flux, burgers_flux, zero_flux};
use crate::mesh::Mesh1D;
use crate::network::RDNConfig;
use crate::optimize::TrainConfig;
use crate::weakform::{BCSpec, BoundaryCondition, ProblemSpec};

pub const EXPERIMENT_NAMES: [&str; 4] = ["static-discontinuity", "advection-smooth", "advection-jump", "burgers"];

/// A problem together with the discretisation and solver settings used to
/// run it.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub problem: ProblemSpec,
    pub k: usize,
    pub n_p: usize,
    pub n_quad: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
    pub train: TrainConfig,
    pub network: RDNConfig,
    /// Also run the reference solver and report the discrepancy.
    pub compare_oracle: bool,
    /// Exact solution is smooth, so convergence orders are meaningful.
    pub smooth: bool,
}

impl ExperimentSpec {
    fn new(name: &str, problem: ProblemSpec, snapshots: Vec<f64>, smooth: bool) -> Self {
        let t_final = snapshots.iter().copied().fold(0.0, f64::max);
        Self {
            name: name.to_string(),
            problem,
            k: 128,
            n_p: 2,
            n_quad: 2,
            dt: 0.004,
            t_final,
            snapshots,
            train: TrainConfig::default(),
            network: RDNConfig::default(),
            compare_oracle: false,
            smooth,
        }
    }

    pub fn mesh(&self) -> Result<Mesh1D> {
        Mesh1D::new(self.problem.x_min, self.problem.x_max, self.k, self.n_p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DgError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(DgError::Config(format!("T must be positive, got {}", self.t_final)));
        }
        if let Some(&s) = self.snapshots.iter().find(|&&s| !(0.0..=self.t_final).contains(&s)) {
            return Err(DgError::Config(format!("snapshot {s} outside [0, {}]", self.t_final)));
        }
        self.train.validate()?;
        self.network.validate()
    }
}

/// Looks up one of [`EXPERIMENT_NAMES`].
pub fn experiment_by_name(name: &str) -> Result<ExperimentSpec> {
    match name {
        "static-discontinuity" => Ok(static_discontinuity_problem()),
        "advection-smooth" => Ok(advection_smooth_problem()),
        "advection-jump" => Ok(advection_jump_problem()),
        "burgers" => Ok(burgers_problem()),
        _ => Err(DgError::Config(format!(
            "unknown experiment '{name}' (expected one of {})",
            EXPERIMENT_NAMES.join(", ")
        ))),
    }
}

/// Whether `x` belongs to the `x ≥ 0` branch, using the one-sided limit at 0.
fn right_of(x: f64, at: f64, side: Side) -> bool {
    x > at || (x == at && side == Side::Right)
}

/// `u̇ = G(x)` with `G = cos 12x` for `x ≥ 0`, `sin 6x` otherwise; no flux.
pub fn static_discontinuity_problem() -> ExperimentSpec {
    let bc = BCSpec::new(BoundaryCondition::Outflow, BoundaryCondition::Outflow).unwrap();
    let u0 = Arc::new(|x: f64, s: Side| {
        if right_of(x, 0.0, s) {
            0.5 * (12.0 * x).cos()
        } else {
            0.2 * (6.0 * x).sin()
        }
    });
    let mut p = ProblemSpec::new(-2.0, 2.0, zero_flux(), u0, bc);
    // quadrature points never sit on x = 0, so the sided choice there is moot
    p.source = Some(Arc::new(
        |_u, x, _t| if x >= 0.0 { (12.0 * x).cos() } else { (6.0 * x).sin() },
    ));
    p.analytic = Some(Arc::new(|x, t, s| {
        if right_of(x, 0.0, s) {
            (0.5 + t) * (12.0 * x).cos()
        } else {
            (0.2 + t) * (6.0 * x).sin()
        }
    }));
    ExperimentSpec::new("static-discontinuity", p, vec![0.1, 0.5, 1.0], false)
}

/// Gaussian pulse advected at unit speed.
pub fn advection_smooth_problem() -> ExperimentSpec {
    let bc = BCSpec::new(BoundaryCondition::dirichlet_const(0.0), BoundaryCondition::Outflow).unwrap();
    let mut p = ProblemSpec::new(
        -2.0,
        2.0,
        advection_flux(1.0),
        Arc::new(|x, _| (-5.0 * x * x).exp()),
        bc,
    );
    p.analytic = Some(Arc::new(|x, t, _| (-5.0 * (x - t) * (x - t)).exp()));
    ExperimentSpec::new("advection-smooth", p, vec![0.25, 0.75, 1.25], true)
}

const STAIR_BREAKS: [f64; 3] = [-1.5, -0.5, 0.5];
const STAIR_LEVELS: [f64; 4] = [0.25, 0.0, -0.25, -0.5];

/// The four-level staircase: 0.25 up to −1.5, then 0, −0.25, −0.5.
pub fn staircase(x: f64, side: Side) -> f64 {
    let i = STAIR_BREAKS.iter().filter(|&&b| right_of(x, b, side)).count();
    STAIR_LEVELS[i]
}

/// Jump locations of the advected staircase at time `t`.
pub fn staircase_jumps(t: f64) -> [f64; 3] {
    STAIR_BREAKS.map(|b| b + t)
}

/// Piecewise-constant staircase advected at unit speed.
pub fn advection_jump_problem() -> ExperimentSpec {
    let bc = BCSpec::new(BoundaryCondition::dirichlet_const(0.25), BoundaryCondition::Outflow).unwrap();
    let mut p = ProblemSpec::new(-2.0, 2.0, advection_flux(1.0), Arc::new(staircase), bc);
    p.analytic = Some(Arc::new(|x, t, s| staircase(x - t, s)));
    ExperimentSpec::new("advection-jump", p, vec![0.25, 0.75, 1.25], false)
}

/// Inviscid Burgers from `−sin πx` with homogeneous Dirichlet ends; a
/// stationary shock forms at `x = 0` at `t = 1/π`.
pub fn burgers_problem() -> ExperimentSpec {
    let bc = BCSpec::new(
        BoundaryCondition::dirichlet_const(0.0),
        BoundaryCondition::dirichlet_const(0.0),
    )
    .unwrap();
    let u0 = Arc::new(|x: f64, _| -(std::f64::consts::PI * x).sin());
    let mut p = ProblemSpec::new(-1.0, 1.0, burgers_flux(), u0, bc);
    p.analytic = Some(Arc::new(burgers_reference));
    let mut e = ExperimentSpec::new("burgers", p, vec![0.2, 0.5, 0.8], false);
    e.compare_oracle = true;
    e
}

pub const BURGERS_SHOCK_TIME: f64 = 1.0 / std::f64::consts::PI;

/// Root of a function increasing on `[lo, hi]`: Newton steps, falling back
/// to bisection whenever a step leaves the bracket.
fn safeguarded_newton(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-12 * (1.0 + x.abs()) || hi - lo <= 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

/// Entropy solution of Burgers from `u₀ = −sin πx` on `[−1, 1]`, built from
/// characteristics `x = x₀ − t sin πx₀` on each side of the stationary shock.
pub fn burgers_reference(x: f64, t: f64, side: Side) -> f64 {
    use std::f64::consts::PI;
    if x < 0.0 {
        return -burgers_reference(-x, t, side);
    }
    let foot = shock_foot(t);
    if x == 0.0 {
        // one-sided shock values; zero before the shock forms
        let u = (PI * foot).sin();
        return match side {
            Side::Left => u,
            Side::Right => -u,
        };
    }
    if t == 0.0 {
        return -(PI * x).sin();
    }
    let f = |x0: f64| (x0 - t * (PI * x0).sin() - x, 1.0 - PI * t * (PI * x0).cos());
    let x0 = safeguarded_newton(f, foot, 1.0);
    -(PI * x0).sin()
}

/// Foot `x₀ > 0` of the characteristic that reaches the shock at time `t`
/// (the non-zero root of `x₀ = t sin πx₀`), or 0 before the shock forms.
fn shock_foot(t: f64) -> f64 {
    use std::f64::consts::PI;
    if t <= BURGERS_SHOCK_TIME {
        return 0.0;
    }
    // x₀ − t sin πx₀ is increasing past its minimum at cos πx₀ = 1/(πt)
    let xm = (1.0 / (PI * t)).acos() / PI;
    safeguarded_newton(|x0| (x0 - t * (PI * x0).sin(), 1.0 - PI * t * (PI * x0).cos()), xm, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Node-wise errors against `exact`, sampled with the one-sided limit that
/// belongs to each duplicated interface node. `L1` and `L2` weight each
/// node by `h / N_p`.
pub fn error_metrics(numeric: &ElementField, exact: impl Fn(f64, Side) -> f64, mesh: &Mesh1D) -> Result<ErrorMetrics> {
    let sampled = sample_exact(exact, mesh);
    error_metrics_indexed(numeric, |i| sampled.data[i], mesh)
}

/// Node-wise discrepancy between two fields on the same mesh.
pub fn compare_fields(a: &ElementField, b: &ElementField, mesh: &Mesh1D) -> Result<ErrorMetrics> {
    b.check_shape(mesh)?;
    error_metrics_indexed(a, |i| b.data[i], mesh)
}

fn error_metrics_indexed(numeric: &ElementField, exact: impl Fn(usize) -> f64, mesh: &Mesh1D) -> Result<ErrorMetrics> {
    numeric.check_shape(mesh)?;
    let w = mesh.h / mesh.n_p as f64;
    let (mut s1, mut s2, mut inf) = (0.0, 0.0, 0.0f64);
    for (i, &u) in numeric.data.iter().enumerate() {
        let e = (u - exact(i)).abs();
        s1 += e;
        s2 += e * e;
        inf = inf.max(e);
    }
    Ok(ErrorMetrics {
        mse: s2 / numeric.len() as f64,
        l1: w * s1,
        l2: (w * s2).sqrt(),
        linf: inf,
    })
}

/// Samples `exact` at every DOF with the matching one-sided limit.
pub fn sample_exact(exact: impl Fn(f64, Side) -> f64, mesh: &Mesh1D) -> ElementField {
    let coords = mesh.dof_layout().coords;
    let data = coords
        .iter()
        .enumerate()
        .map(|(i, &x)| exact(x, node_side(i % mesh.n_p, mesh.n_p)))
        .collect();
    ElementField {
        k: mesh.k,
        n_p: mesh.n_p,
        data,
        time: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(e: &ExperimentSpec) -> impl Fn(f64, f64) -> f64 + '_ {
        let a = e.problem.analytic.clone().unwrap();
        move |x, t| a(x, t, Side::Right)
    }

    #[test]
    fn static_values() {
        let e = static_discontinuity_problem();
        let a = e.problem.analytic.clone().unwrap();
        assert!((a(0.0, 0.3, Side::Right) - 0.8).abs() < 1e-15);
        assert_eq!(a(0.0, 0.3, Side::Left), 0.0);
        assert!(((e.problem.u0)(std::f64::consts::PI / 12.0, Side::Right) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn advection_values() {
        let e = advection_smooth_problem();
        let a = exact(&e);
        for t in [0.0, 0.3, 1.1] {
            assert_eq!(a(t, t), 1.0);
            assert!(a(-2.0, t) <= 2.1e-9);
        }
        assert_eq!((e.problem.u0)(0.0, Side::Left), 1.0);
    }

    #[test]
    fn staircase_values() {
        let e = advection_jump_problem();
        let a = e.problem.analytic.clone().unwrap();
        for (j, want) in staircase_jumps(0.3).iter().zip([-1.2, -0.2, 0.8]) {
            assert!((j - want).abs() < 1e-15);
        }
        for t in [0.0, 0.2, 0.45] {
            assert_eq!(a(-2.0, t, Side::Right), 0.25);
        }
        for (j, b) in staircase_jumps(0.4).iter().enumerate() {
            assert_eq!(a(*b, 0.4, Side::Left), STAIR_LEVELS[j]);
            assert_eq!(a(*b + 1e-9, 0.4, Side::Right), STAIR_LEVELS[j + 1]);
        }
        let m = Mesh1D::new(-2.0, 2.0, 128, 2).unwrap();
        let u = sample_exact(|x, s| a(x, 0.3, s), &m);
        assert!((crate::weakform::total_variation(&u) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn burgers_reference_properties() {
        let e = burgers_problem();
        let a = exact(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in (0..41).map(|i| -1.0 + 0.05 * i as f64) {
            assert!((a(x, 0.0) + (std::f64::consts::PI * x).sin()).abs() < 1e-15);
        }
        for t in [0.1, 0.2, 0.3, 0.5, 0.8, 1.2] {
            assert_eq!(
                burgers_reference(0.0, t, Side::Right) + burgers_reference(0.0, t, Side::Left),
                0.0
            );
            for _ in 0..50 {
                let x: f64 = rng.gen_range(-1.0..1.0);
                assert!((a(x, t) + a(-x, t)).abs() < 1e-10);
            }
        }
        assert_eq!(burgers_reference(0.0, 0.2, Side::Left), 0.0);
        assert!(burgers_reference(0.0, 0.8, Side::Left) > 0.5);
        assert!((BURGERS_SHOCK_TIME * std::f64::consts::PI - 1.0).abs() < 1e-15);
    }

    #[test]
    fn burgers_reference_solves_implicit_equation() {
        use std::f64::consts::PI;
        for t in [0.15, 0.3, 0.6] {
            for x in [0.05, 0.3, 0.7, 0.95] {
                let u = burgers_reference(x, t, Side::Right);
                assert!((u + (PI * (x - u * t)).sin()).abs() < 1e-11, "{x} {t}");
            }
        }
    }

    /// `u_t + F(u)_x − G` by central differences at random smooth points.
    #[test]
    fn exact_solutions_satisfy_their_pdes() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in EXPERIMENT_NAMES {
            let e = experiment_by_name(name).unwrap();
            let p = &e.problem;
            let a = p.analytic.clone().unwrap();
            let mut checked = 0;
            while checked < 20 {
                let x: f64 = rng.gen_range(p.x_min + 0.1..p.x_max - 0.1);
                let t: f64 = rng.gen_range(0.05..0.9);
                // keep away from jumps and shocks
                let near_jump = match name {
                    "static-discontinuity" | "burgers" => x.abs() < 0.05,
                    "advection-jump" => staircase_jumps(t).iter().any(|j| (x - j).abs() < 0.05),
                    _ => false,
                };
                if near_jump {
                    continue;
                }
                let u = |x, t| a(x, t, Side::Right);
                let ut = (u(x, t + h) - u(x, t - h)) / (2.0 * h);
                let fx = (p.flux.flux(u(x + h, t)) - p.flux.flux(u(x - h, t))) / (2.0 * h);
                let g = p.source.as_ref().map_or(0.0, |g| g(u(x, t), x, t));
                assert!((ut + fx - g).abs() < 1e-5, "{name} at ({x}, {t}): {}", ut + fx - g);
                checked += 1;
            }
        }
    }

    #[test]
    fn advection_exact_at_zero_is_initial_condition() {
        let m = Mesh1D::new(-2.0, 2.0, 128, 2).unwrap();
        for e in [advection_smooth_problem(), advection_jump_problem()] {
            let a = e.problem.analytic.clone().unwrap();
            let u0 = e.problem.u0.clone();
            assert_eq!(sample_exact(|x, s| a(x, 0.0, s), &m), sample_exact(|x, s| u0(x, s), &m));
        }
    }

    #[test]
    fn metrics_trivial_cases() {
        let m = Mesh1D::new(-2.0, 2.0, 16, 2).unwrap();
        let f = |x: f64, _| x.sin();
        let u = sample_exact(f, &m);
        let z = error_metrics(&u, f, &m).unwrap();
        assert_eq!((z.mse, z.l1, z.l2, z.linf), (0.0, 0.0, 0.0, 0.0));
        let mut off = u.clone();
        off.data.iter_mut().for_each(|v| *v += 0.1);
        let e = error_metrics(&off, f, &m).unwrap();
        assert!((e.mse - 0.01).abs() < 1e-15);
        assert!((e.linf - 0.1).abs() < 1e-15);
        // over a domain of length 4
        assert!((e.l1 - 0.4).abs() < 1e-13);
        assert!((e.l2 - 0.2).abs() < 1e-13);
    }

    #[test]
    fn defaults_and_lookup() {
        for name in EXPERIMENT_NAMES {
            let e = experiment_by_name(name).unwrap();
            assert_eq!((e.k, e.n_p, e.dt), (128, 2, 0.004));
            assert_eq!(e.network.blocks, 4);
            e.validate().unwrap();
        }
        assert!(experiment_by_name("heat").is_err());
    }
}
