use crate::error::{DgError, Result};
use crate::mesh::Mesh1D;

/// One-sided limit selector used when sampling functions that may jump.
///
/// `Left` means the limit `x -> x0⁻`, i.e. the value seen from the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Nodal values of a discontinuous piecewise polynomial, element-major:
/// entry `k * n_p + n` is the coefficient of basis function `n` on element `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub k: usize,
    pub n_p: usize,
    pub data: Vec<f64>,
    pub time: f64,
}

impl ElementField {
    pub fn zeros(k: usize, n_p: usize) -> Self {
        Self {
            k,
            n_p,
            data: vec![0.0; k * n_p],
            time: 0.0,
        }
    }

    pub fn zeros_like_mesh(mesh: &Mesh1D) -> Self {
        Self::zeros(mesh.k, mesh.n_p)
    }

    pub fn from_vec(k: usize, n_p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * n_p {
            return Err(DgError::shape(format!("{k}x{n_p}"), data.len()));
        }
        Ok(Self {
            k,
            n_p,
            data,
            time: 0.0,
        })
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.data[k * self.n_p + n]
    }

    #[inline]
    pub fn element(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_p..(k + 1) * self.n_p]
    }

    pub fn same_shape(&self, other: &ElementField) -> bool {
        self.k == other.k && self.n_p == other.n_p
    }

    pub fn check_shape(&self, mesh: &Mesh1D) -> Result<()> {
        if self.k != mesh.k || self.n_p != mesh.n_p || self.data.len() != mesh.n_dofs() {
            return Err(DgError::shape(
                format!("{}x{}", mesh.k, mesh.n_p),
                format!("{}x{} ({} values)", self.k, self.n_p, self.data.len()),
            ));
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DgError::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ElementField) -> ElementField {
        debug_assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        ElementField {
            k: self.k,
            n_p: self.n_p,
            data,
            time: self.time,
        }
    }
}
