//! Monte Carlo under explicit adapted volatility policies.
//!
//! A [`PathBundle`] samples one law `P_h` of the representing family: the
//! controlled integral `X = ∫ h dW` and its quadratic variation `Q = ∫ h² ds`
//! on a time grid aligned with every policy and integrand breakpoint. Sample
//! means under a single policy are therefore lower bounds for `Ê`.

mod adversary;
mod estimate;
mod policy;
mod reparam;
mod rng;
mod simulate;

pub use adversary::{adversary_policy, adversary_volatility, midpoint_adversary};
pub use estimate::{mc_estimate, McEstimate, PolicyStats};
pub use policy::{ControlPolicy, FeedbackRule, PathView};
pub use reparam::{
    bound_coefficients, feedback_reparameterize, BaseKind, CylinderFn, GapStats, Reparameterization,
    VolatilityCylinder,
};
pub use rng::PathRng;
pub use simulate::{integrate, path_integral, simulate_paths, Measure, PathBundle};
