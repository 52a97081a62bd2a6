//! Element residual of the DG weak form
//!
//! ```text
//! R_kn = ∫ u̇ Φ_n − ∫ F(u) dΦ_n/dx + [F̂·n Φ_n]_∂D^k − ∫ G(u, x, t) Φ_n
//! ```
//!
//! evaluated with Gauss quadrature through the strided value/derivative
//! kernels of [`crate::basis`]. The residual is linear in `u̇`:
//! `R = M u̇ − b(u, t)`, where `b` collects the flux, surface and source
//! terms. [`Discretization::weak_rhs`] exposes `b` so the reference solver
//! and the residual agree term by term.

use std::fmt;
use std::sync::Arc;

use crate::basis::{gauss_rule, lagrange_basis, linear_basis, make_kernels, BasisTable, ConvKernel};
use crate::error::{DgError, Result};
use crate::field::{ElementField, Side};
use crate::flux::{lax_friedrichs_with, FluxModel, InterfaceState, LaxFriedrichs};
use crate::mesh::{Boundary, DofLayout, Mesh1D};
use crate::parallel::Execution;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type ProfileFn = Arc<dyn Fn(f64, Side) -> f64 + Send + Sync>;
pub type SolutionFn = Arc<dyn Fn(f64, f64, Side) -> f64 + Send + Sync>;

/// Condition imposed at one end of the domain.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// Prescribed value; enters the flux as the exterior trace and overwrites
    /// the boundary DOF after every update.
    Dirichlet(TimeFn),
    /// Prescribed outward normal flux `F·n`, replacing the surface term.
    Neumann(TimeFn),
    Periodic,
    /// Exterior trace equals the interior trace.
    Outflow,
}

impl BoundaryCondition {
    pub fn dirichlet_const(value: f64) -> Self {
        BoundaryCondition::Dirichlet(Arc::new(move |_| value))
    }

    pub fn neumann_const(value: f64) -> Self {
        BoundaryCondition::Neumann(Arc::new(move |_| value))
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet(_))
    }
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Dirichlet(g) => write!(f, "Dirichlet(g(0)={})", g(0.0)),
            BoundaryCondition::Neumann(q) => write!(f, "Neumann(q(0)={})", q(0.0)),
            BoundaryCondition::Periodic => write!(f, "Periodic"),
            BoundaryCondition::Outflow => write!(f, "Outflow"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BCSpec {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
}

impl BCSpec {
    pub fn new(left: BoundaryCondition, right: BoundaryCondition) -> Result<Self> {
        let lp = matches!(left, BoundaryCondition::Periodic);
        let rp = matches!(right, BoundaryCondition::Periodic);
        if lp != rp {
            return Err(DgError::InvalidBoundary(
                "periodic must be specified at both ends or neither".into(),
            ));
        }
        Ok(Self { left, right })
    }

    pub fn periodic() -> Self {
        Self {
            left: BoundaryCondition::Periodic,
            right: BoundaryCondition::Periodic,
        }
    }

    pub fn side(&self, b: Boundary) -> &BoundaryCondition {
        match b {
            Boundary::Left => &self.left,
            Boundary::Right => &self.right,
        }
    }

    /// DOFs overwritten by Dirichlet post-processing for a field with
    /// `n_dofs` entries.
    pub fn dirichlet_dofs(&self, n_dofs: usize) -> Vec<usize> {
        let mut v = Vec::new();
        if self.left.is_dirichlet() {
            v.push(0);
        }
        if self.right.is_dirichlet() {
            v.push(n_dofs - 1);
        }
        v
    }
}

/// A scalar conservation law `u̇ + F(u)_x = G(u, x, t)` on `[x_min, x_max]`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub flux: FluxModel,
    pub lf: LaxFriedrichs,
    pub source: Option<SourceFn>,
    /// `∂G/∂u`; `None` means the source does not depend on `u`.
    pub source_du: Option<SourceFn>,
    pub u0: ProfileFn,
    pub bc: BCSpec,
    pub analytic: Option<SolutionFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("domain", &(self.x_min, self.x_max))
            .field("flux", &self.flux)
            .field("lf", &self.lf)
            .field("has_source", &self.source.is_some())
            .field("bc", &self.bc)
            .field("has_analytic", &self.analytic.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(x_min: f64, x_max: f64, flux: FluxModel, u0: ProfileFn, bc: BCSpec) -> Self {
        Self {
            x_min,
            x_max,
            flux,
            lf: LaxFriedrichs::Local,
            source: None,
            source_du: None,
            u0,
            bc,
            analytic: None,
        }
    }

    #[inline]
    fn source_at(&self, u: f64, x: f64, t: f64) -> f64 {
        self.source.as_ref().map_or(0.0, |g| g(u, x, t))
    }

    #[inline]
    fn source_du_at(&self, u: f64, x: f64, t: f64) -> f64 {
        self.source_du.as_ref().map_or(0.0, |g| g(u, x, t))
    }
}

/// Residual of the weak form, one entry per (element, test function).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub k: usize,
    pub n_p: usize,
    pub data: Vec<f64>,
}

impl ResidualVector {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `M_ij = ∫ Φ_i Φ_j dx` over an element of width `h`, row-major.
pub fn element_mass_matrix(h: f64, basis: &BasisTable) -> Vec<f64> {
    let np = basis.n_p;
    let mut m = vec![0.0; np * np];
    for i in 0..np {
        for j in 0..np {
            let mut acc = 0.0;
            for q in 0..basis.n_q() {
                acc += basis.rule.weights[q] * basis.value(q, i) * basis.value(q, j);
            }
            m[i * np + j] = 0.5 * h * acc;
        }
    }
    m
}

/// Inverse of a small dense row-major matrix by Gauss-Jordan elimination.
pub(crate) fn invert_small(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| m[r1 * n + col].abs().total_cmp(&m[r2 * n + col].abs()))
            .unwrap();
        if m[piv * n + col].abs() < 1e-300 {
            return Err(DgError::SingularMatrix);
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Mesh, basis, quadrature kernels and element matrices bundled together.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh1D,
    pub layout: DofLayout,
    pub basis: BasisTable,
    pub values: ConvKernel,
    pub derivs: ConvKernel,
    pub mass: Vec<f64>,
    pub mass_inv: Vec<f64>,
    /// Physical coordinates of every quadrature point, `k * n_q + q`.
    pub quad_x: Vec<f64>,
    pub exec: Execution,
}

/// Interface flux values (already contracted with the outward normal of the
/// element on the left of each face) and their trace sensitivities.
struct FaceFluxes {
    /// `right[k]`: contracted flux on the right face of element `k`.
    right: Vec<f64>,
    /// `left[k]`: contracted flux on the left face of element `k`.
    left: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: Mesh1D, n_quad: usize) -> Result<Self> {
        let rule = gauss_rule(n_quad)?;
        let basis = if mesh.n_p == 2 {
            linear_basis(&rule)
        } else {
            lagrange_basis(mesh.n_p, &rule)
        };
        let (values, derivs) = make_kernels(&basis);
        let mass = element_mass_matrix(mesh.h, &basis);
        let mass_inv = invert_small(&mass, mesh.n_p)?;
        let mut quad_x = Vec::with_capacity(mesh.k * rule.len());
        for k in 0..mesh.k {
            for &xi in &rule.points {
                quad_x.push(mesh.to_physical(k, xi));
            }
        }
        let layout = mesh.dof_layout();
        Ok(Self {
            mesh,
            layout,
            basis,
            values,
            derivs,
            mass,
            mass_inv,
            quad_x,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    #[inline]
    fn jac(&self) -> f64 {
        0.5 * self.mesh.h
    }

    fn check(&self, f: &ElementField, what: &str) -> Result<()> {
        f.check_shape(&self.mesh)?;
        f.check_finite(what)
    }

    #[inline]
    fn left_trace(&self, u: &[f64], k: usize) -> f64 {
        let np = self.mesh.n_p;
        dot(&self.basis.left_values, &u[k * np..(k + 1) * np])
    }

    #[inline]
    fn right_trace(&self, u: &[f64], k: usize) -> f64 {
        let np = self.mesh.n_p;
        dot(&self.basis.right_values, &u[k * np..(k + 1) * np])
    }

    /// Exterior trace beyond `side` of the domain, `None` for Neumann.
    fn ghost(&self, prob: &ProblemSpec, u: &[f64], side: Boundary, t: f64) -> Option<f64> {
        let last = self.mesh.k - 1;
        match (prob.bc.side(side), side) {
            (BoundaryCondition::Dirichlet(g), _) => Some(g(t)),
            (BoundaryCondition::Neumann(_), _) => None,
            (BoundaryCondition::Outflow, Boundary::Left) => Some(self.left_trace(u, 0)),
            (BoundaryCondition::Outflow, Boundary::Right) => Some(self.right_trace(u, last)),
            (BoundaryCondition::Periodic, Boundary::Left) => Some(self.right_trace(u, last)),
            (BoundaryCondition::Periodic, Boundary::Right) => Some(self.left_trace(u, 0)),
        }
    }

    fn lf(&self, prob: &ProblemSpec, a: f64, b: f64, n: f64) -> f64 {
        lax_friedrichs_with(&prob.flux, InterfaceState::new(a, b, n), prob.lf).value
    }

    fn face_fluxes(&self, prob: &ProblemSpec, u: &[f64], t: f64) -> FaceFluxes {
        let kk = self.mesh.k;
        let mut right = vec![0.0; kk];
        let mut left = vec![0.0; kk];
        for k in 0..kk.saturating_sub(1) {
            let phi = self.lf(prob, self.right_trace(u, k), self.left_trace(u, k + 1), 1.0);
            right[k] = phi;
            left[k + 1] = -phi;
        }
        if matches!(prob.bc.left, BoundaryCondition::Periodic) {
            let phi = self.lf(prob, self.right_trace(u, kk - 1), self.left_trace(u, 0), 1.0);
            right[kk - 1] = phi;
            left[0] = -phi;
        } else {
            left[0] = match &prob.bc.left {
                BoundaryCondition::Neumann(q) => q(t),
                _ => {
                    let g = self.ghost(prob, u, Boundary::Left, t).unwrap();
                    self.lf(prob, self.left_trace(u, 0), g, -1.0)
                }
            };
            right[kk - 1] = match &prob.bc.right {
                BoundaryCondition::Neumann(q) => q(t),
                _ => {
                    let g = self.ghost(prob, u, Boundary::Right, t).unwrap();
                    self.lf(prob, self.right_trace(u, kk - 1), g, 1.0)
                }
            };
        }
        FaceFluxes { right, left }
    }

    /// The non-mass terms `b` with `R = M u̇ − b`:
    /// `b_kn = ∫ F dΦ_n/dx − [F̂·n Φ_n] + ∫ G Φ_n`.
    pub fn weak_rhs(&self, u: &ElementField, prob: &ProblemSpec, t: f64) -> Result<Vec<f64>> {
        self.check(u, "state")?;
        Ok(self.weak_rhs_raw(&u.data, prob, t))
    }

    pub(crate) fn weak_rhs_raw(&self, u: &[f64], prob: &ProblemSpec, t: f64) -> Vec<f64> {
        let np = self.mesh.n_p;
        let nq = self.basis.n_q();
        let faces = self.face_fluxes(prob, u, t);
        let jac = self.jac();
        let w = &self.basis.rule.weights;
        let mut b = vec![0.0; u.len()];
        self.exec.for_each_chunk(&mut b, np, |k, bk| {
            let mut uq = [0.0; 8];
            let uq = &mut uq[..nq];
            self.values.apply_block(&u[k * np..(k + 1) * np], uq);
            for (n, out) in bk.iter_mut().enumerate() {
                let mut vol = 0.0;
                let mut src = 0.0;
                for q in 0..nq {
                    vol += w[q] * prob.flux.flux(uq[q]) * self.basis.deriv(q, n);
                    if prob.source.is_some() {
                        let x = self.quad_x[k * nq + q];
                        src += w[q] * prob.source_at(uq[q], x, t) * self.basis.value(q, n);
                    }
                }
                let surf = faces.right[k] * self.basis.right_values[n] + faces.left[k] * self.basis.left_values[n];
                *out = vol - surf + jac * src;
            }
        });
        b
    }

    /// `M u̇` per element, with the mass integral evaluated by quadrature.
    fn mass_apply(&self, udot: &[f64]) -> Vec<f64> {
        let np = self.mesh.n_p;
        let nq = self.basis.n_q();
        let jac = self.jac();
        let w = &self.basis.rule.weights;
        let mut out = vec![0.0; udot.len()];
        self.exec.for_each_chunk(&mut out, np, |k, ok| {
            let mut dq = [0.0; 8];
            let dq = &mut dq[..nq];
            self.values.apply_block(&udot[k * np..(k + 1) * np], dq);
            for (n, o) in ok.iter_mut().enumerate() {
                let mut acc = 0.0;
                for q in 0..nq {
                    acc += w[q] * dq[q] * self.basis.value(q, n);
                }
                *o = jac * acc;
            }
        });
        out
    }

    pub fn assemble_residual(
        &self,
        u: &ElementField,
        udot: &ElementField,
        prob: &ProblemSpec,
        t: f64,
    ) -> Result<ResidualVector> {
        self.check(u, "state")?;
        self.check(udot, "time derivative")?;
        let data = self.residual_raw(&u.data, &udot.data, prob, t);
        Ok(ResidualVector {
            k: self.mesh.k,
            n_p: self.mesh.n_p,
            data,
        })
    }

    pub(crate) fn residual_raw(&self, u: &[f64], udot: &[f64], prob: &ProblemSpec, t: f64) -> Vec<f64> {
        let mut r = self.mass_apply(udot);
        let b = self.weak_rhs_raw(u, prob, t);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri -= bi;
        }
        r
    }

    /// Vector-Jacobian products of the residual: given `g = ∂L/∂R`, returns
    /// `(∂L/∂u, ∂L/∂u̇)`.
    pub fn residual_vjp(&self, u: &[f64], g: &[f64], prob: &ProblemSpec, t: f64) -> (Vec<f64>, Vec<f64>) {
        let np = self.mesh.n_p;
        let nq = self.basis.n_q();
        let kk = self.mesh.k;
        let jac = self.jac();
        let w = &self.basis.rule.weights;

        // mass term is symmetric, so its adjoint is the same operator
        let g_udot = self.mass_apply(g);

        // volume and source terms, element-local
        let mut g_u = vec![0.0; u.len()];
        self.exec.for_each_chunk(&mut g_u, np, |k, gk| {
            let mut uq = [0.0; 8];
            let uq = &mut uq[..nq];
            self.values.apply_block(&u[k * np..(k + 1) * np], uq);
            let gr = &g[k * np..(k + 1) * np];
            let mut gq = [0.0; 8];
            let gq = &mut gq[..nq];
            for q in 0..nq {
                let mut s_vol = 0.0;
                let mut s_src = 0.0;
                for (n, g) in gr.iter().enumerate().take(np) {
                    s_vol += g * self.basis.deriv(q, n);
                    s_src += g * self.basis.value(q, n);
                }
                let mut acc = -w[q] * prob.flux.speed(uq[q]) * s_vol;
                if prob.source_du.is_some() {
                    let x = self.quad_x[k * nq + q];
                    acc -= jac * w[q] * prob.source_du_at(uq[q], x, t) * s_src;
                }
                gq[q] = acc;
            }
            self.values.transpose_block(gq, gk);
        });

        // surface terms: sensitivities of L to each face value
        let s_right: Vec<f64> = (0..kk)
            .map(|k| dot(&self.basis.right_values, &g[k * np..(k + 1) * np]))
            .collect();
        let s_left: Vec<f64> = (0..kk)
            .map(|k| dot(&self.basis.left_values, &g[k * np..(k + 1) * np]))
            .collect();
        let lv = &self.basis.left_values;
        let rv = &self.basis.right_values;
        let add_trace = |g_u: &mut [f64], k: usize, vals: &[f64], s: f64| {
            for n in 0..np {
                g_u[k * np + n] += vals[n] * s;
            }
        };
        let partial = |a: f64, b: f64, n: f64| lax_friedrichs_with(&prob.flux, InterfaceState::new(a, b, n), prob.lf);

        for k in 0..kk.saturating_sub(1) {
            let a = self.right_trace(u, k);
            let b = self.left_trace(u, k + 1);
            let p = partial(a, b, 1.0);
            let s = s_right[k] - s_left[k + 1];
            add_trace(&mut g_u, k, rv, s * p.d_minus);
            add_trace(&mut g_u, k + 1, lv, s * p.d_plus);
        }
        if matches!(prob.bc.left, BoundaryCondition::Periodic) {
            let a = self.right_trace(u, kk - 1);
            let b = self.left_trace(u, 0);
            let p = partial(a, b, 1.0);
            let s = s_right[kk - 1] - s_left[0];
            add_trace(&mut g_u, kk - 1, rv, s * p.d_minus);
            add_trace(&mut g_u, 0, lv, s * p.d_plus);
        } else {
            match &prob.bc.left {
                BoundaryCondition::Neumann(_) => {}
                bc => {
                    let a = self.left_trace(u, 0);
                    let b = self.ghost(prob, u, Boundary::Left, t).unwrap();
                    let p = partial(a, b, -1.0);
                    let d = if matches!(bc, BoundaryCondition::Outflow) {
                        p.d_minus + p.d_plus
                    } else {
                        p.d_minus
                    };
                    add_trace(&mut g_u, 0, lv, s_left[0] * d);
                }
            }
            match &prob.bc.right {
                BoundaryCondition::Neumann(_) => {}
                bc => {
                    let a = self.right_trace(u, kk - 1);
                    let b = self.ghost(prob, u, Boundary::Right, t).unwrap();
                    let p = partial(a, b, 1.0);
                    let d = if matches!(bc, BoundaryCondition::Outflow) {
                        p.d_minus + p.d_plus
                    } else {
                        p.d_minus
                    };
                    add_trace(&mut g_u, kk - 1, rv, s_right[kk - 1] * d);
                }
            }
        }
        (g_u, g_udot)
    }

    /// `M⁻¹ b`, element by element.
    pub fn solve_mass(&self, b: &[f64]) -> Vec<f64> {
        let np = self.mesh.n_p;
        let mut out = vec![0.0; b.len()];
        self.exec.for_each_chunk(&mut out, np, |k, ok| {
            let bk = &b[k * np..(k + 1) * np];
            for (i, o) in ok.iter_mut().enumerate() {
                *o = dot(&self.mass_inv[i * np..(i + 1) * np], bk);
            }
        });
        out
    }

    /// `Σ_k ∫ u_h dx`.
    pub fn total_mass(&self, u: &ElementField) -> f64 {
        let jac = self.jac();
        let w = &self.basis.rule.weights;
        let uq = self.values.apply(&u.data);
        uq.chunks_exact(self.basis.n_q())
            .map(|c| jac * c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// Element averages `(1/h) ∫_{D^k} u_h dx`.
    pub fn element_means(&self, u: &ElementField) -> Vec<f64> {
        let w = &self.basis.rule.weights;
        let uq = self.values.apply(&u.data);
        uq.chunks_exact(self.basis.n_q())
            .map(|c| 0.5 * c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Total variation of the element averages.
    pub fn mean_total_variation(&self, u: &ElementField) -> f64 {
        variation(&self.element_means(u))
    }

    /// Project `u0` onto the nodes of this discretization.
    pub fn project(&self, u0: impl Fn(f64, Side) -> f64) -> ElementField {
        crate::basis::project_initial_condition(u0, &self.mesh, &self.basis)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Overwrites the boundary DOF at every Dirichlet end with its prescribed value.
pub fn apply_dirichlet(u: &ElementField, bc: &BCSpec, t: f64) -> ElementField {
    let mut out = u.clone();
    apply_dirichlet_in_place(&mut out.data, bc, t);
    out
}

pub fn apply_dirichlet_in_place(u: &mut [f64], bc: &BCSpec, t: f64) {
    if let BoundaryCondition::Dirichlet(g) = &bc.left {
        u[0] = g(t);
    }
    if let BoundaryCondition::Dirichlet(g) = &bc.right {
        let last = u.len() - 1;
        u[last] = g(t);
    }
}

/// Sum of absolute differences between consecutive DOFs, interface jumps
/// included.
pub fn total_variation(u: &ElementField) -> f64 {
    variation(&u.data)
}

pub fn total_mass(u: &ElementField, disc: &Discretization) -> f64 {
    disc.total_mass(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{advection_flux, burgers_flux, zero_flux};

    fn disc(x0: f64, x1: f64, k: usize) -> Discretization {
        Discretization::new(Mesh1D::new(x0, x1, k, 2).unwrap(), 2).unwrap()
    }

    fn const_profile(c: f64) -> ProfileFn {
        Arc::new(move |_, _| c)
    }

    #[test]
    fn mass_matrix_linear() {
        let d = disc(0.0, 1.0, 4);
        let h = 0.25;
        let m = &d.mass;
        let want = [h / 3.0, h / 6.0, h / 6.0, h / 3.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-16);
        }
        assert!((m[0] + m[1] - h / 2.0).abs() < 1e-16);
        // eigenvalues of [[a, b], [b, a]] are a ± b
        assert!((m[0] - m[1] - h / 6.0).abs() < 1e-16);
        assert!((m[0] + m[1] - h / 2.0).abs() < 1e-16);
        assert_eq!(m[1], m[2]);
    }

    #[test]
    fn inverse_is_inverse() {
        let d = Discretization::new(Mesh1D::new(0.0, 1.0, 3, 4).unwrap(), 4).unwrap();
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|l| d.mass[i * n + l] * d.mass_inv[l * n + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(invert_small(&[1.0, 2.0, 2.0, 4.0], 2).is_err());
    }

    #[test]
    fn constant_state_is_steady_for_advection() {
        let d = disc(-2.0, 2.0, 32);
        let c = 0.37;
        let bc = BCSpec::new(BoundaryCondition::dirichlet_const(c), BoundaryCondition::Outflow).unwrap();
        let prob = ProblemSpec::new(-2.0, 2.0, advection_flux(1.0), const_profile(c), bc);
        let u = d.project(|_, _| c);
        let udot = ElementField::zeros(32, 2);
        let r = d.assemble_residual(&u, &udot, &prob, 0.0).unwrap();
        assert!(r.max_abs() <= 1e-14, "{}", r.max_abs());
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let d = disc(-1.0, 1.0, 8);
        let prob = ProblemSpec::new(-1.0, 1.0, burgers_flux(), const_profile(0.0), BCSpec::periodic());
        let u = ElementField::zeros(8, 2);
        assert!(d.assemble_residual(&u, &ElementField::zeros(7, 2), &prob, 0.0).is_err());
        let mut bad = u.clone();
        bad.data[3] = f64::NAN;
        assert!(d.assemble_residual(&bad, &u, &prob, 0.0).is_err());
    }

    #[test]
    fn periodic_residual_telescopes() {
        let d = disc(-1.0, 1.0, 20);
        for flux in [advection_flux(1.0), burgers_flux(), advection_flux(-0.4)] {
            let prob = ProblemSpec::new(-1.0, 1.0, flux, const_profile(0.0), BCSpec::periodic());
            let u = d.project(|x, _| (3.0 * x).sin() + 0.3 * (7.0 * x).cos() + if x > 0.1 { 0.5 } else { 0.0 });
            let r = d
                .assemble_residual(&u, &ElementField::zeros(20, 2), &prob, 0.0)
                .unwrap();
            let s: f64 = r.data.iter().sum();
            assert!(s.abs() <= 1e-12, "{s}");
        }
    }

    #[test]
    fn residual_linear_in_udot() {
        let d = disc(-1.0, 1.0, 10);
        let prob = ProblemSpec::new(-1.0, 1.0, burgers_flux(), const_profile(0.0), BCSpec::periodic());
        let u = d.project(|x, _| x.sin());
        let w1 = d.project(|x, _| x.cos());
        let w2 = d.project(|x, _| x * x);
        let (a, b) = (0.7, -1.9);
        let zero = ElementField::zeros(10, 2);
        let r0 = d.assemble_residual(&u, &zero, &prob, 0.0).unwrap();
        let r1 = d.assemble_residual(&u, &w1, &prob, 0.0).unwrap();
        let r2 = d.assemble_residual(&u, &w2, &prob, 0.0).unwrap();
        let mix = zero.axpy(a, &w1).axpy(b, &w2);
        let rm = d.assemble_residual(&u, &mix, &prob, 0.0).unwrap();
        for i in 0..20 {
            let want = a * r1.data[i] + b * r2.data[i] + (1.0 - a - b) * r0.data[i];
            assert!((rm.data[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_post_processing() {
        let bc = BCSpec::new(BoundaryCondition::dirichlet_const(0.25), BoundaryCondition::Outflow).unwrap();
        let u = ElementField::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = apply_dirichlet(&u, &bc, 0.0);
        assert_eq!(v.data, vec![0.25, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(apply_dirichlet(&v, &bc, 1.0), v);
        let both = BCSpec::new(
            BoundaryCondition::dirichlet_const(0.0),
            BoundaryCondition::dirichlet_const(0.0),
        )
        .unwrap();
        let w = apply_dirichlet(&u, &both, 0.0);
        assert_eq!(w.data, vec![0.0, 2.0, 3.0, 4.0, 5.0, 0.0]);
        assert_eq!(both.dirichlet_dofs(6), vec![0, 5]);
        assert!(BCSpec::new(BoundaryCondition::Periodic, BoundaryCondition::Outflow).is_err());
    }

    #[test]
    fn mass_and_variation_diagnostics() {
        let d = disc(-2.0, 2.0, 128);
        assert!((d.total_mass(&d.project(|_, _| 1.0)) - 4.0).abs() < 1e-13);
        let d1 = disc(-1.0, 1.0, 128);
        assert!(d1.total_mass(&d1.project(|x, _| x)).abs() < 1e-14);
        let s = d1.project(|x, _| -(std::f64::consts::PI * x).sin());
        assert!(d1.total_mass(&s).abs() <= 1e-3);

        assert_eq!(total_variation(&d.project(|_, _| 0.3)), 0.0);
        let step = d.project(|x, s| {
            if x > 0.0 || (x == 0.0 && s == Side::Right) {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(total_variation(&step), 1.0);
        let stair = d.project(|x, s| {
            let left = s == Side::Left;
            let le = |c: f64| x < c || (x == c && left);
            if le(-1.5) {
                0.25
            } else if le(-0.5) {
                0.0
            } else if le(0.5) {
                -0.25
            } else {
                -0.5
            }
        });
        // three jumps of 0.25
        assert!((total_variation(&stair) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        use crate::flux::LaxFriedrichs;
        let d = disc(-1.0, 1.0, 6);
        let bcs = [
            BCSpec::periodic(),
            BCSpec::new(BoundaryCondition::dirichlet_const(0.1), BoundaryCondition::Outflow).unwrap(),
            BCSpec::new(BoundaryCondition::Outflow, BoundaryCondition::dirichlet_const(-0.2)).unwrap(),
            BCSpec::new(BoundaryCondition::neumann_const(0.3), BoundaryCondition::Outflow).unwrap(),
        ];
        for bc in bcs {
            for lf in [LaxFriedrichs::Local, LaxFriedrichs::Global { c: 2.0 }] {
                let mut prob = ProblemSpec::new(-1.0, 1.0, burgers_flux(), const_profile(0.0), bc.clone());
                prob.lf = lf;
                prob.source = Some(Arc::new(|u: f64, x: f64, t: f64| (u * x).sin() + t));
                prob.source_du = Some(Arc::new(|u: f64, x: f64, _t: f64| x * (u * x).cos()));
                let u: Vec<f64> = (0..12)
                    .map(|i| 0.9 * ((i as f64) * 1.7).sin() + 0.05 * i as f64)
                    .collect();
                let w: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.3).cos()).collect();
                let g: Vec<f64> = (0..12).map(|i| ((i as f64) * 2.1 + 0.4).sin()).collect();
                let loss = |u: &[f64], w: &[f64]| -> f64 {
                    d.residual_raw(u, w, &prob, 0.3)
                        .iter()
                        .zip(&g)
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let (gu, gw) = d.residual_vjp(&u, &g, &prob, 0.3);
                let eps = 1e-6;
                for i in 0..12 {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[i] += eps;
                    um[i] -= eps;
                    let fd = (loss(&up, &w) - loss(&um, &w)) / (2.0 * eps);
                    assert!((fd - gu[i]).abs() < 1e-7, "{:?} u[{i}]: {fd} vs {}", bc, gu[i]);
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += eps;
                    wm[i] -= eps;
                    let fd = (loss(&u, &wp) - loss(&u, &wm)) / (2.0 * eps);
                    assert!((fd - gw[i]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn neumann_replaces_surface_term() {
        let d = disc(0.0, 1.0, 4);
        let bc = BCSpec::new(
            BoundaryCondition::neumann_const(-0.5),
            BoundaryCondition::neumann_const(0.75),
        )
        .unwrap();
        let prob = ProblemSpec::new(0.0, 1.0, zero_flux(), const_profile(0.0), bc);
        let u = ElementField::zeros(4, 2);
        let r = d.assemble_residual(&u, &u, &prob, 0.0).unwrap();
        assert_eq!(r.data[0], -0.5);
        assert_eq!(r.data[7], 0.75);
        assert!(r.data[1..7].iter().all(|&v| v == 0.0));
    }
}
