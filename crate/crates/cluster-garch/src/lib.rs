//! Score-driven dynamic correlation models with block structure and
//! convolution-t distributions.
//!
//! The library is organized in layers:
//!
//! - [`linalg`]: spectral matrix functions, vectorization operators and the
//!   Kronecker-structured derivative matrices shared by everything above.
//! - [`corr`]: the two correlation parametrizations, `gamma` (unrestricted)
//!   and `eta` (block), the canonical block decomposition and their inverse
//!   maps.
//! - [`dist`]: densities, log-likelihoods, samplers and characteristic
//!   function machinery for the scaled multivariate t and convolution-t
//!   families.
//! - [`score`]: closed-form score vectors and Fisher information matrices
//!   for every structure/distribution pair, with diagonal scaling.
//! - [`dynamics`]: the score-driven VAR(1) filter, correlation targeting and
//!   model simulation.
//! - [`estimation`]: EGARCH prefiltering, maximum likelihood estimation,
//!   likelihood decomposition and out-of-sample evaluation.
//! - [`dcc`]: the cDCC benchmark model.

pub mod corr;
pub mod dcc;
pub mod dist;
pub mod dynamics;
pub mod estimation;
pub mod linalg;
pub mod score;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
