//! Reference-element shape functions and Gauss quadrature.
//!
//! Quadrature-point values of a field are obtained with a strided
//! convolution: for every quadrature point the filter is the row of basis
//! values at that point, applied to each element's block of `n_p` nodal
//! values with stride `n_p`, so no filter ever straddles two elements.

use crate::error::{DgError, Result};
use crate::field::{ElementField, Side};
use crate::mesh::Mesh1D;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of `f` over the reference interval [-1, 1].
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule with `n_points` points on [-1, 1], points ascending.
pub fn gauss_rule(n_points: usize) -> Result<QuadratureRule> {
    if !(1..=5).contains(&n_points) {
        return Err(DgError::UnsupportedQuadrature(n_points));
    }
    let n = n_points;
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, refined by Newton
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Ok(QuadratureRule { points, weights })
}

/// Equispaced Lagrange nodes on [-1, 1] (the endpoints for `n_p = 2`).
pub fn lagrange_nodes(n_p: usize) -> Vec<f64> {
    assert!(n_p >= 2, "need at least two nodes");
    (0..n_p)
        .map(|i| match i {
            0 => -1.0,
            _ if i == n_p - 1 => 1.0,
            _ => -1.0 + 2.0 * i as f64 / (n_p - 1) as f64,
        })
        .collect()
}

/// Values and derivatives of every Lagrange polynomial on `nodes` at `xi`.
fn lagrange_eval(nodes: &[f64], xi: f64) -> (Vec<f64>, Vec<f64>) {
    let np = nodes.len();
    let mut vals = vec![0.0; np];
    let mut ders = vec![0.0; np];
    for n in 0..np {
        let mut v = 1.0;
        for m in 0..np {
            if m != n {
                v *= (xi - nodes[m]) / (nodes[n] - nodes[m]);
            }
        }
        vals[n] = v;
        let mut d = 0.0;
        for j in 0..np {
            if j == n {
                continue;
            }
            let mut term = 1.0 / (nodes[n] - nodes[j]);
            for m in 0..np {
                if m != n && m != j {
                    term *= (xi - nodes[m]) / (nodes[n] - nodes[m]);
                }
            }
            d += term;
        }
        ders[n] = d;
    }
    (vals, ders)
}

/// Shape functions tabulated at the quadrature points of `rule`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub n_p: usize,
    pub nodes: Vec<f64>,
    pub rule: QuadratureRule,
    /// `values[q * n_p + n] = Φ_n(ξ_q)`.
    pub values: Vec<f64>,
    /// `derivs[q * n_p + n] = dΦ_n/dξ(ξ_q)`.
    pub derivs: Vec<f64>,
    /// `Φ_n(-1)` and `Φ_n(+1)`.
    pub left_values: Vec<f64>,
    pub right_values: Vec<f64>,
}

impl BasisTable {
    pub fn n_q(&self) -> usize {
        self.rule.len()
    }

    #[inline]
    pub fn value(&self, q: usize, n: usize) -> f64 {
        self.values[q * self.n_p + n]
    }

    #[inline]
    pub fn deriv(&self, q: usize, n: usize) -> f64 {
        self.derivs[q * self.n_p + n]
    }

    /// Evaluate all shape functions at an arbitrary reference coordinate.
    pub fn eval(&self, xi: f64) -> Vec<f64> {
        lagrange_eval(&self.nodes, xi).0
    }

    pub fn endpoint_values(&self, side: Side) -> &[f64] {
        match side {
            Side::Left => &self.left_values,
            Side::Right => &self.right_values,
        }
    }
}

/// Lagrange basis with `n_p` equispaced nodes, tabulated on `rule`.
pub fn lagrange_basis(n_p: usize, rule: &QuadratureRule) -> BasisTable {
    let nodes = lagrange_nodes(n_p);
    let mut values = Vec::with_capacity(rule.len() * n_p);
    let mut derivs = Vec::with_capacity(rule.len() * n_p);
    for &xi in &rule.points {
        let (v, d) = lagrange_eval(&nodes, xi);
        values.extend(v);
        derivs.extend(d);
    }
    let left_values = lagrange_eval(&nodes, -1.0).0;
    let right_values = lagrange_eval(&nodes, 1.0).0;
    BasisTable {
        n_p,
        nodes,
        rule: rule.clone(),
        values,
        derivs,
        left_values,
        right_values,
    }
}

/// Linear shape functions `(1 - ξ)/2`, `(1 + ξ)/2`.
pub fn linear_basis(rule: &QuadratureRule) -> BasisTable {
    let mut values = Vec::with_capacity(rule.len() * 2);
    let mut derivs = Vec::with_capacity(rule.len() * 2);
    for &xi in &rule.points {
        values.extend([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0]);
        derivs.extend([-0.5, 0.5]);
    }
    BasisTable {
        n_p: 2,
        nodes: vec![-1.0, 1.0],
        rule: rule.clone(),
        values,
        derivs,
        left_values: vec![1.0, 0.0],
        right_values: vec![0.0, 1.0],
    }
}

/// Strided 1-D convolution filter bank: one filter of length `n_p` per
/// quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub n_q: usize,
    pub n_p: usize,
    /// `weights[q * n_p + n]`.
    pub weights: Vec<f64>,
}

impl ConvKernel {
    /// Applies the filters with stride `n_p` over a flat nodal array, giving
    /// `out[k * n_q + q]`.
    pub fn apply(&self, nodal: &[f64]) -> Vec<f64> {
        let n_el = nodal.len() / self.n_p;
        let mut out = vec![0.0; n_el * self.n_q];
        self.apply_into(nodal, &mut out);
        out
    }

    pub fn apply_into(&self, nodal: &[f64], out: &mut [f64]) {
        for (block, dst) in nodal.chunks_exact(self.n_p).zip(out.chunks_exact_mut(self.n_q)) {
            self.apply_block(block, dst);
        }
    }

    /// Filters a single element block.
    #[inline]
    pub fn apply_block(&self, block: &[f64], out: &mut [f64]) {
        for (q, o) in out.iter_mut().enumerate() {
            let row = &self.weights[q * self.n_p..(q + 1) * self.n_p];
            let mut acc = 0.0;
            for (w, u) in row.iter().zip(block) {
                acc += w * u;
            }
            *o = acc;
        }
    }

    /// Adjoint of [`ConvKernel::apply_block`]: scatters quadrature-point
    /// sensitivities back to nodal sensitivities (accumulating).
    #[inline]
    pub fn transpose_block(&self, gq: &[f64], out: &mut [f64]) {
        for (q, &g) in gq.iter().enumerate() {
            let row = &self.weights[q * self.n_p..(q + 1) * self.n_p];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
    }
}

/// Value and reference-derivative filter banks for `basis`.
pub fn make_kernels(basis: &BasisTable) -> (ConvKernel, ConvKernel) {
    let values = ConvKernel {
        n_q: basis.n_q(),
        n_p: basis.n_p,
        weights: basis.values.clone(),
    };
    let derivs = ConvKernel {
        n_q: basis.n_q(),
        n_p: basis.n_p,
        weights: basis.derivs.clone(),
    };
    (values, derivs)
}

/// Evaluates `u_h(x)`. Interface coordinates return the trace of the element
/// on the left.
pub fn interpolate(field: &ElementField, mesh: &Mesh1D, basis: &BasisTable, x: f64) -> Result<f64> {
    let k = mesh.element_of(x)?;
    Ok(evaluate_in_element(field, mesh, basis, k, x))
}

/// One-sided evaluation: `Side::Right` at an interface returns the trace of
/// the element on the right.
pub fn interpolate_sided(field: &ElementField, mesh: &Mesh1D, basis: &BasisTable, x: f64, side: Side) -> Result<f64> {
    let mut k = mesh.element_of(x)?;
    if side == Side::Right && k + 1 < mesh.k && x == mesh.vertex(k + 1) {
        k += 1;
    }
    Ok(evaluate_in_element(field, mesh, basis, k, x))
}

fn evaluate_in_element(field: &ElementField, mesh: &Mesh1D, basis: &BasisTable, k: usize, x: f64) -> f64 {
    let xi = mesh.to_reference(k, x).clamp(-1.0, 1.0);
    basis.eval(xi).iter().zip(field.element(k)).map(|(p, u)| p * u).sum()
}

/// Which one-sided limit a node of an element should sample: the first node
/// sees the function from inside its element, i.e. from the right.
pub fn node_side(n: usize, n_p: usize) -> Side {
    if n + 1 == n_p {
        Side::Left
    } else {
        Side::Right
    }
}

/// Nodal interpolation of `u0`; at a jump the left element takes the left
/// limit and the right element the right limit.
pub fn project_initial_condition(u0: impl Fn(f64, Side) -> f64, mesh: &Mesh1D, basis: &BasisTable) -> ElementField {
    let mut field = ElementField::zeros(mesh.k, basis.n_p);
    for k in 0..mesh.k {
        for (n, &xi) in basis.nodes.iter().enumerate() {
            let x = mesh.to_physical(k, xi);
            field.data[k * basis.n_p + n] = u0(x, node_side(n, basis.n_p));
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_rule(2).unwrap();
        assert!(close(r.points[0], -0.5773502692, 1e-10));
        assert!(close(r.points[1], 0.5773502692, 1e-10));
        assert!(close(r.weights[0], 1.0, 1e-15));
        assert!(close(r.weights[1], 1.0, 1e-15));
        assert!(close(r.integrate(|x| x * x), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn midpoint_rule() {
        let r = gauss_rule(1).unwrap();
        assert_eq!(r.points, vec![0.0]);
        assert_eq!(r.weights, vec![2.0]);
    }

    #[test]
    fn unsupported_orders() {
        assert!(gauss_rule(0).is_err());
        assert!(gauss_rule(6).is_err());
    }

    #[test]
    fn moments_are_exact() {
        for n in 1..=5 {
            let r = gauss_rule(n).unwrap();
            assert!(close(r.weights.iter().sum::<f64>(), 2.0, 1e-14));
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for m in 0..=(2 * n - 1) {
                let exact = if m % 2 == 1 { 0.0 } else { 2.0 / (m as f64 + 1.0) };
                let got = r.integrate(|x| x.powi(m as i32));
                assert!(close(got, exact, 1e-13), "n={n} m={m}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn linear_basis_values() {
        let r = gauss_rule(2).unwrap();
        let b = linear_basis(&r);
        assert!(close(b.value(0, 0), 0.7886751346, 1e-10));
        assert!(close(b.value(0, 1), 0.2113248654, 1e-10));
        assert_eq!(b.eval(-1.0), vec![1.0, 0.0]);
        for q in 0..2 {
            assert!(close(b.value(q, 0) + b.value(q, 1), 1.0, 1e-15));
            assert_eq!(b.deriv(q, 0), -0.5);
            assert_eq!(b.deriv(q, 1), 0.5);
        }
        // general Lagrange construction agrees
        let g = lagrange_basis(2, &r);
        for (a, c) in b.values.iter().zip(&g.values) {
            assert!(close(*a, *c, 1e-15));
        }
    }

    #[test]
    fn higher_order_basis_properties() {
        for np in 2..=5 {
            let r = gauss_rule(4).unwrap();
            let b = lagrange_basis(np, &r);
            for q in 0..b.n_q() {
                let s: f64 = (0..np).map(|n| b.value(q, n)).sum();
                let d: f64 = (0..np).map(|n| b.deriv(q, n)).sum();
                assert!(close(s, 1.0, 1e-13));
                assert!(close(d, 0.0, 1e-12));
            }
            for (m, &xm) in b.nodes.iter().enumerate() {
                let v = b.eval(xm);
                for (n, vn) in v.iter().enumerate() {
                    assert!(close(*vn, if n == m { 1.0 } else { 0.0 }, 1e-14));
                }
            }
        }
    }

    #[test]
    fn kernel_gauss_values() {
        let b = linear_basis(&gauss_rule(2).unwrap());
        let (vk, dk) = make_kernels(&b);
        let g = vk.apply(&[0.0, 1.0]);
        assert!(close(g[0], 0.2113248654, 1e-10));
        assert!(close(g[1], 0.7886751346, 1e-10));
        assert_eq!(vk.apply(&[0.3, 0.3]), vec![0.3, 0.3]);
        assert_eq!(dk.apply(&[0.0, 1.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn kernel_matches_direct_loop() {
        let mesh = Mesh1D::new(-1.0, 1.0, 9, 3).unwrap();
        let b = lagrange_basis(3, &gauss_rule(3).unwrap());
        let (vk, _) = make_kernels(&b);
        let data: Vec<f64> = (0..27).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let via_kernel = vk.apply(&data);
        for k in 0..mesh.k {
            for q in 0..b.n_q() {
                let mut acc = 0.0;
                for n in 0..3 {
                    acc += b.value(q, n) * data[k * 3 + n];
                }
                assert_eq!(acc, via_kernel[k * 3 + q]);
            }
        }
    }

    #[test]
    fn interpolation() {
        let mesh = Mesh1D::new(0.0, 1.0, 1, 2).unwrap();
        let b = linear_basis(&gauss_rule(2).unwrap());
        let f = ElementField::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(interpolate(&f, &mesh, &b, 0.5).unwrap(), 0.5);
        assert!(interpolate(&f, &mesh, &b, 1.5).is_err());

        let mesh = Mesh1D::new(-1.0, 3.0, 16, 2).unwrap();
        let u = project_initial_condition(|x, _| 3.0 * x + 2.0, &mesh, &b);
        for i in 0..=200 {
            let x = -1.0 + 4.0 * i as f64 / 200.0;
            let exact = 3.0 * x + 2.0;
            let got = interpolate(&u, &mesh, &b, x).unwrap();
            assert!((got - exact).abs() <= 1e-14 * exact.abs().max(1.0), "{x}");
        }
    }

    #[test]
    fn one_sided_traces() {
        let mesh = Mesh1D::new(-1.0, 1.0, 2, 2).unwrap();
        let b = linear_basis(&gauss_rule(2).unwrap());
        let u = project_initial_condition(
            |x, s| {
                if x < 0.0 || (x == 0.0 && s == Side::Left) {
                    1.0
                } else {
                    3.0
                }
            },
            &mesh,
            &b,
        );
        assert_eq!(u.data, vec![1.0, 1.0, 3.0, 3.0]);
        let l = interpolate_sided(&u, &mesh, &b, 0.0, Side::Left).unwrap();
        let r = interpolate_sided(&u, &mesh, &b, 0.0, Side::Right).unwrap();
        assert_eq!(r - l, 2.0);
        assert_eq!(interpolate(&u, &mesh, &b, 0.0).unwrap(), l);
    }

    #[test]
    fn zero_projection() {
        let mesh = Mesh1D::new(-1.0, 1.0, 8, 2).unwrap();
        let b = linear_basis(&gauss_rule(2).unwrap());
        let u = project_initial_condition(|_, _| 0.0, &mesh, &b);
        assert!(u.data.iter().all(|&v| v == 0.0));
    }
}
