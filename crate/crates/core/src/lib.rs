//! Optimal transport between probability measures driven by control-affine
//! dynamics.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`systems`] — control-affine systems `ẋ = f₀(x) + Σᵢ uᵢ fᵢ(x)`, flows,
//!    Lie brackets and controllability rank checks.
//! 2. [`point_cost`] — the ground cost `c(x, y)`: the optimal value of the
//!    fixed-endpoint Lagrange problem, with a minimising trajectory. Closed
//!    forms for linear-quadratic systems, direct transcription elsewhere.
//! 3. [`static_ot`] — the Kantorovich problem over a cost matrix: exact
//!    network-simplex LP and log-domain Sinkhorn, with dual potentials.
//! 4. [`dynamic_ot`] — the convexified Benamou–Brenier problem in
//!    density–momentum coordinates on a staggered space-time grid, solved by
//!    Douglas–Rachford splitting (per-cell perspective prox + constraint
//!    projection).
//! 5. [`interpolation`] — displacement interpolation as weighted particle
//!    ensembles, purification of measure-valued controls, weak-formulation
//!    and moment diagnostics.
//! 6. [`hjb`] — value functions (Lax–Friedrichs grid scheme and Riccati
//!    closed forms), feedback synthesis `uᵢ = −gᵢᵀ∂ₓV`, Pontryagin
//!    reconstruction and uniqueness diagnostics for the induced flow.
//!
//! All numerical code is generic over the scalar type through the [`Real`]
//! trait; `f64` aliases for the main types are exported at the crate root.

pub mod dynamic_ot;
pub mod hjb;
pub mod interpolation;
pub mod linalg;
pub mod point_cost;
pub mod presets;
pub mod scalar;
pub mod static_ot;
pub mod systems;

pub use scalar::Real;

/// Default-precision aliases for the main domain types.
pub type System = systems::ControlAffineSystem<f64>;
pub type Field = systems::VectorField<f64>;
pub type Traj = systems::Trajectory<f64>;
pub type Cost = point_cost::RunningCost<f64>;
pub type CostVal = point_cost::CostResult<f64>;
pub type Measure = static_ot::DiscreteMeasure<f64>;
pub type Plan = static_ot::TransportPlan<f64>;
// TEMP pub type Grid = dynamic_ot::SpaceTimeGrid<f64>;
// TEMP pub type Ensemble = interpolation::ParticleEnsemble<f64>;
