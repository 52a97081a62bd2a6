//! Discontinuous Galerkin machinery and residual-trained convolutional
//! networks for one-dimensional scalar hyperbolic conservation laws.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] and [`basis`] describe the discrete space (elements, duplicated
//!   interface DOFs, Lagrange shape functions, Gauss rules and the
//!   convolution kernels that evaluate fields at quadrature points).
//! * [`flux`] holds the physical flux models and the Lax-Friedrichs
//!   interface flux.
//! * [`weakform`] assembles the element residual of the weak form.
//! * [`timestep`] provides SSP-RK2 stepping and the classical method-of-lines
//!   reference solver.
//! * [`network`] is a small reverse-mode autodiff engine with the layers of a
//!   residual dense network.
//! * [`optimize`] trains the network time step by time step against the L1
//!   norm of the weak-form residual.
//! * [`experiments`] and [`runner`] define the benchmark problems and the
//!   run/report pipeline used by the command-line tool.

pub mod basis;
pub mod error;
pub mod experiments;
pub mod field;
pub mod flux;
pub mod mesh;
pub mod network;
pub mod optimize;
pub mod parallel;
pub mod runner;
pub mod timestep;
pub mod weakform;

pub use error::{DgError, Result};
pub use field::ElementField;
