//! Numerical laboratory for the spectral–Coulomb shape functional
//! `E_q(u) = ∫|∇u|² + (q/2) D(u,u)` on subsets of a cubic box.
//!
//! The crate is organised bottom-up: [`field`] holds grids and discrete
//! operators, [`coulomb`] the free-space potential, [`ground_state`] the
//! inner eigenproblem, [`penalized`] the outer shape problem, and the
//! remaining modules measure what comes out.

pub mod coulomb;
pub mod counterexamples;
pub mod diagnostics;
pub mod error;
pub mod field;
mod fft3;
pub mod ground_state;
mod levelset;
pub mod penalized;
pub mod quadrature;
pub mod radial_oracle;
pub mod shapes;
pub mod surgery;

pub use error::{Error, Result};
pub use field::{DomainMask, Grid, Region, ScalarField};

/// Volume of the unit ball.
pub const UNIT_BALL_VOLUME: f64 = 4.0 * std::f64::consts::PI / 3.0;
