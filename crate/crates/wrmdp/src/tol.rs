//! Centralized numeric tolerances. Every threshold used by constructors,
//! solvers, and the acceptance suite lives here so tests compare against the
//! documented value instead of an ad-hoc literal.

/// Kernel row sums and probability-vector sums must match 1 within this.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Two action values within this of each other count as tied; greedy argmins
/// then break ties toward the lowest action index. Keeps policies identical
/// across platforms when costs are analytically equal.
pub const TIE_TOL: f64 = 1e-12;

/// The canonical-triplet identity gain = epsilon * <h, rho> must hold to this
/// after the average-cost solver converges.
pub const GAIN_IDENTITY_TOL: f64 = 1e-9;

/// The 1-D CDF integration route and the transportation-LP route for
/// Wasserstein-1 must agree to this on every tested pair.
pub const W1_ORACLE_TOL: f64 = 1e-9;

/// Default cap on the discounted Monte-Carlo truncation bias
/// beta^horizon * c_max / (1 - beta).
pub const MC_TRUNCATION_BUDGET: f64 = 1e-6;

/// Policy evaluation solves its linear system to this scaled residual:
/// ||b - A v||_inf <= POLICY_EVAL_RESIDUAL * max(1, ||v||_inf).
pub const POLICY_EVAL_RESIDUAL: f64 = 1e-12;

/// A bound report must be recomputable from its stored inputs to this.
pub const BOUND_RECOMPUTE_TOL: f64 = 1e-12;

/// Additive guard when asserting "measured loss <= bound": absorbs solver
/// residuals on both sides of the comparison without weakening the check
/// beyond solver accuracy.
pub const DOMINATION_GUARD: f64 = 1e-9;
