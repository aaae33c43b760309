use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("log-gamma pole at {0}")]
    Pole(f64),
    #[error("size out of range: {0}")]
    Size(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("singular operator: {0}")]
    Singular(String),
    #[error("Newton iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("grid too small for stencil: {0}")]
    Stencil(String),
    #[error("requested point outside the tabulated grid: {0}")]
    OutOfGrid(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("contour error: {0}")]
    Contour(String),
    #[error("solver blow-up: {0}")]
    BlowUp(String),
    #[error("periodization error: {0}")]
    Periodization(String),
    #[error("insufficient range: {0}")]
    Range(String),
}

pub type Result<T> = std::result::Result<T, Error>;
