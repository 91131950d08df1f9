//! Degrees-of-freedom analysis for generic block-fading MIMO channels.
//!
//! The crate covers the constructive side of the analysis:
//!
//! * [`model`]: the within-block channel `y = sqrt(rho/T) B s + w` and its stacked layout,
//! * [`dof`]: exact rational pre-log formulas, bounds and the antenna trade-off,
//! * [`pilots`]: the card-dealing pilot placement and its index-set bookkeeping,
//! * [`jacobian`]: the Jacobian of the pilot-parametrized output map, explicit
//!   nonsingularity witnesses and genericity probes,
//! * [`identify`]: noiseless recovery of fading and data symbols by Gauss-Newton,
//! * [`analysis`]: Monte-Carlo evidence that the expected log-Jacobian is finite,
//! * [`cli`]: the `blockfade` command-line front end.
//!
//! Indices inside [`pilots`] are 1-based; every other module is 0-based. The
//! conversion happens in [`pilots::PilotAssignment`]'s flat-position accessors.

pub mod analysis;
pub mod cli;
pub mod dof;
pub mod error;
pub mod exact;
pub mod identify;
pub mod jacobian;
pub mod linalg;
pub mod model;
pub mod pilots;
pub mod rng;

pub use error::{Error, Result};

/// Complex double-precision scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
