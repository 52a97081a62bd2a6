use thiserror::Error;

pub type Result<T> = std::result::Result<T, DgError>;

#[derive(Debug, Error)]
pub enum DgError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("coordinate {x} lies outside the domain [{x_min}, {x_max}]")]
    OutOfDomain { x: f64, x_min: f64, x_max: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("unsupported quadrature order {0} (supported: 1..=5)")]
    UnsupportedQuadrature(usize),
    #[error("invalid boundary specification: {0}")]
    InvalidBoundary(String),
    #[error("singular element matrix")]
    SingularMatrix,
    #[error("solution blew up at t = {t}: max |u| = {max_abs}")]
    BlowUp { t: f64, max_abs: f64 },
    #[error("invalid time step: {0}")]
    InvalidTimeStep(String),
    #[error("autodiff: {0}")]
    Autodiff(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DgError {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        DgError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors raised by a solver during time integration or training.
    pub fn is_solver_abort(&self) -> bool {
        matches!(
            self,
            DgError::BlowUp { .. } | DgError::NonFinite(_) | DgError::SingularMatrix | DgError::Autodiff(_)
        )
    }
}
