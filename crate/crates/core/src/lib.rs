//! Fredholm determinants for KPZ fixed point distributions and numerical
//! checks of the KP-II, matrix KP and Hirota equations they satisfy.
//!
//! Layout follows the data flow: [`specfun`] and [`quadrature`] feed the
//! closed-form kernels in [`kernels`], which [`fredholm`] discretizes into
//! determinants and boundary resolvents. [`painleve`] supplies Tracy-Widom
//! oracles, [`residuals`] runs finite-difference identity checks,
//! [`scattering`] handles short-time limits and Brownian oracles, and
//! [`kpsolver`] evolves KP-II directly.

pub mod error;
pub mod fredholm;
pub mod kernels;
pub mod kpsolver;
pub mod painleve;
pub mod quadrature;
pub mod residuals;
pub mod scattering;
pub mod specfun;

pub use error::{Error, Result};
