//! One-dimensional G-expectation numerics.
//!
//! The sublinear expectation `Ê[F] = sup_P E_P[F]` over laws of controlled
//! integrals `X = ∫ h dW` with `h² ∈ [σ̲², σ̄²]` is evaluated two ways:
//!
//! - [`control`]: backward dynamic programming on a state grid (an explicit
//!   monotone scheme for `∂ₜu + G(∂ₓₓu) = 0` with affine running rewards),
//! - [`paths`]: Monte Carlo under explicit adapted volatility policies, which
//!   only ever certifies lower bounds.
//!
//! On top of those, [`discriminant`] evaluates the alternating-sign functional
//! `d(η) = limsup_n Ê[∫ δₙ η d⟨B⟩]` and [`martrep`] builds the finite-variation
//! G-martingales `K = ∫ η d⟨B⟩ − ∫ 2G(η) ds` and the uniqueness discriminator.

pub mod control;
pub mod discriminant;
pub mod error;
pub mod gcore;
pub mod integrand;
pub mod martrep;
pub mod paths;
pub mod report;

pub use error::{Error, Result};
pub use gcore::{align_grid, SignProcess, TimeGrid, VolatilityBand};
pub use integrand::{Axis, Coefficient, Integrand, Observation};
pub use report::{EstimateReport, Method};
