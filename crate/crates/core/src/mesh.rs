//! Uniform 1-D element partitions with per-element (discontinuous) DOF storage.
//!
//! Every interior interface carries two DOFs, one owned by each neighbouring
//! element, so the represented field may jump there. The domain ends carry a
//! single ghost slot each, holding the exterior trace used by the interface
//! flux (see [`crate::weakform`]).

use crate::error::{DgError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    pub x_min: f64,
    pub x_max: f64,
    /// Element count.
    pub k: usize,
    /// Element width.
    pub h: f64,
    /// Nodes per element.
    pub n_p: usize,
}

/// Which side of the domain a boundary quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Left,
    Right,
}

/// Pair of DOFs meeting at an interior interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterfacePair {
    /// Right-most DOF of the element on the left.
    pub left_dof: usize,
    /// Left-most DOF of the element on the right.
    pub right_dof: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    /// Node coordinates, element-major (`k * n_p + n`).
    pub coords: Vec<f64>,
    pub interfaces: Vec<InterfacePair>,
    /// DOF whose trace sits on the left/right domain boundary.
    pub left_boundary_dof: usize,
    pub right_boundary_dof: usize,
}

impl DofLayout {
    pub fn n_dofs(&self) -> usize {
        self.coords.len()
    }

    pub fn boundary_dof(&self, side: Boundary) -> usize {
        match side {
            Boundary::Left => self.left_boundary_dof,
            Boundary::Right => self.right_boundary_dof,
        }
    }
}

/// Builds the mesh and its DOF layout. Nodes are equispaced Lagrange points of
/// each element, which for `n_p = 2` are the element endpoints.
pub fn build_mesh(x_min: f64, x_max: f64, k: usize, n_p: usize) -> Result<(Mesh1D, DofLayout)> {
    let mesh = Mesh1D::new(x_min, x_max, k, n_p)?;
    let layout = mesh.dof_layout();
    Ok((mesh, layout))
}

impl Mesh1D {
    pub fn new(x_min: f64, x_max: f64, k: usize, n_p: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(DgError::InvalidMesh(format!(
                "need x_max > x_min, got [{x_min}, {x_max}]"
            )));
        }
        if k == 0 {
            return Err(DgError::InvalidMesh("element count must be positive".into()));
        }
        if n_p < 2 {
            return Err(DgError::InvalidMesh(format!(
                "need at least 2 nodes per element, got {n_p}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            k,
            h: (x_max - x_min) / k as f64,
            n_p,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.k * self.n_p
    }

    /// Coordinate of the `i`-th element vertex, `0 <= i <= K`.
    pub fn vertex(&self, i: usize) -> f64 {
        if i == self.k {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h
        }
    }

    pub fn element_bounds(&self, k: usize) -> (f64, f64) {
        (self.vertex(k), self.vertex(k + 1))
    }

    pub fn element_center(&self, k: usize) -> f64 {
        let (a, b) = self.element_bounds(k);
        0.5 * (a + b)
    }

    /// Maps a reference coordinate in [-1, 1] into element `k`.
    pub fn to_physical(&self, k: usize, xi: f64) -> f64 {
        let (a, b) = self.element_bounds(k);
        if xi == -1.0 {
            a
        } else if xi == 1.0 {
            b
        } else {
            0.5 * (a + b) + 0.5 * (b - a) * xi
        }
    }

    /// Reference coordinate of `x` inside element `k`.
    pub fn to_reference(&self, k: usize, x: f64) -> f64 {
        let (a, b) = self.element_bounds(k);
        (2.0 * x - a - b) / (b - a)
    }

    /// Element containing `x`; interface coordinates go to the left element.
    pub fn element_of(&self, x: f64) -> Result<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return Err(DgError::OutOfDomain {
                x,
                x_min: self.x_min,
                x_max: self.x_max,
            });
        }
        let guess = ((x - self.x_min) / self.h).ceil() as isize - 1;
        let mut k = guess.clamp(0, self.k as isize - 1) as usize;
        // correct for rounding in the division
        while k > 0 && x <= self.vertex(k) {
            k -= 1;
        }
        while k + 1 < self.k && x > self.vertex(k + 1) {
            k += 1;
        }
        Ok(k)
    }

    pub fn dof_layout(&self) -> DofLayout {
        let nodes = crate::basis::lagrange_nodes(self.n_p);
        let mut coords = Vec::with_capacity(self.n_dofs());
        for k in 0..self.k {
            for &xi in &nodes {
                coords.push(self.to_physical(k, xi));
            }
        }
        let interfaces = (0..self.k.saturating_sub(1))
            .map(|k| InterfacePair {
                left_dof: k * self.n_p + self.n_p - 1,
                right_dof: (k + 1) * self.n_p,
            })
            .collect();
        DofLayout {
            coords,
            interfaces,
            left_boundary_dof: 0,
            right_boundary_dof: self.n_dofs() - 1,
        }
    }
}
