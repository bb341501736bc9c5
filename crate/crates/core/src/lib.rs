//! Sample average approximation laboratory for discontinuous and
//! non-Lipschitz objectives on finite parameter grids.
//!
//! The crate is organised bottom-up:
//!
//! - [`objectives`]: loss families `h(x, ξ)`, finite-support data laws,
//!   parameter grids and the exact expected objective `f`.
//! - [`empirical`]: i.i.d. scenario draws, empirical objectives, the uniform
//!   fluctuation `Δₙ = ‖f̂ₙ − f‖∞`, optimal values and ε-minimizer sets.
//! - [`infimum`]: the directional derivative of the infimum functional and
//!   the delta-method linearization residual.
//! - [`transfer`]: exact checks of the deterministic value, ε-minimizer,
//!   excess-risk and sharp-growth distance bounds.
//! - [`gaussian`]: the Gaussian limit process on the grid and the limit law
//!   of the optimal value.
//! - [`rates`]: Monte Carlo rate estimation at the `n^{-1/2}` and iterated
//!   logarithm scales.
//! - [`vc`]: quantitative VC-dimension bounds and a brute-force shattering
//!   search.
//! - [`harness`]: experiment configuration, seeding, persistence.

pub mod empirical;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod infimum;
pub mod objectives;
pub mod rates;
pub mod transfer;
pub mod vc;

pub use empirical::{
    draw_sample, empirical_objective, eps_min_set, infimum as table_infimum, mix_seed,
    sup_deviation, EpsMinSet, ObjectiveTable, ScenarioSet,
};
pub use error::{Error, Result};
pub use objectives::{
    envelope, eval_loss, true_objective, Contrast, DataDistribution, Family, LossModel,
    ParamGrid, Rational,
};
