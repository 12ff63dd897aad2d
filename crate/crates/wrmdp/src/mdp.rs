//! Finite MDP models, policies, trajectory simulation, and Monte-Carlo cost
//! oracles.
//!
//! A model is a finite state set embedded in R^d via `coords` (which fixes the
//! state metric), a finite action set with its own coordinates, a dense
//! row-stochastic kernel, and a nonnegative stage cost. Continuous problems
//! enter the crate as fine grids built elsewhere; everything here is exact on
//! the finite set.

use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tol::{MC_TRUNCATION_BUDGET, ROW_SUM_TOL};

#[derive(Debug, Clone)]
pub struct Violation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.state, self.action) {
            (Some(x), Some(u)) => write!(f, "state {x}, action {u}: {}", self.message),
            (Some(x), None) => write!(f, "state {x}: {}", self.message),
            (None, Some(u)) => write!(f, "action {u}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("state index {0} out of range")]
    BadState(usize),
    #[error("policy does not fit model: {0}")]
    PolicyMismatch(String),
    #[error("horizon {horizon} leaves truncation bias {bias:.3e} above budget {budget:.3e}")]
    HorizonTooShort { horizon: usize, bias: f64, budget: f64 },
    #[error("horizon {0} below required minimum {1}")]
    HorizonTooSmall(usize, usize),
    #[error("malformed model data: {0}")]
    Shape(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Finite MDP (X, U, T, c) with Euclidean coordinates for states and actions.
///
/// Fields are public so diagnostic code can assemble arbitrary (possibly
/// invalid) instances and run [`FiniteMdp::validate`] on them; the checked
/// path is [`FiniteMdp::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    /// Per-state point in R^{d_x}; rows index states. The state metric is the
    /// Euclidean distance between rows.
    pub coords: Array2<f64>,
    /// Per-action point in R^{d_u}; rows index actions.
    pub action_coords: Array2<f64>,
    /// kernel[[x, u, y]] = T(y | x, u); each (x, u) row is a probability
    /// vector over next states.
    pub kernel: Array3<f64>,
    /// cost[[x, u]] = c(x, u), nonnegative.
    pub cost: Array2<f64>,
    /// Stored bound on ||c||_inf; `new` sets it to the exact max entry.
    pub c_max: f64,
}

impl FiniteMdp {
    pub fn new(
        coords: Array2<f64>,
        action_coords: Array2<f64>,
        kernel: Array3<f64>,
        cost: Array2<f64>,
    ) -> Result<Self, ModelError> {
        let c_max = cost.iter().fold(0.0f64, |m, &c| m.max(c));
        let model = FiniteMdp { coords, action_coords, kernel, cost, c_max };
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn n_states(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.action_coords.nrows()
    }

    pub fn kernel_row(&self, x: usize, u: usize) -> ArrayView1<'_, f64> {
        self.kernel.slice(ndarray::s![x, u, ..])
    }

    /// Euclidean distance between the coordinates of two states.
    pub fn state_distance(&self, i: usize, j: usize) -> f64 {
        self.coords
            .row(i)
            .iter()
            .zip(self.coords.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Checks every structural invariant; empty result means the model is
    /// well formed. Diagnostic only: never panics on malformed input.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.coords.nrows();
        let m = self.action_coords.nrows();
        if n == 0 {
            out.push(Violation { state: None, action: None, message: "no states".into() });
        }
        if m == 0 {
            out.push(Violation { state: None, action: None, message: "no actions".into() });
        }
        if self.kernel.shape() != [n, m, n] {
            out.push(Violation {
                state: None,
                action: None,
                message: format!("kernel shape {:?} does not match (n={n}, m={m})", self.kernel.shape()),
            });
            return out;
        }
        if self.cost.shape() != [n, m] {
            out.push(Violation {
                state: None,
                action: None,
                message: format!("cost shape {:?} does not match (n={n}, m={m})", self.cost.shape()),
            });
            return out;
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !c.is_finite() {
                out.push(Violation {
                    state: Some(i / self.coords.ncols().max(1)),
                    action: None,
                    message: "non-finite state coordinate".into(),
                });
                break;
            }
        }
        if self.action_coords.iter().any(|c| !c.is_finite()) {
            out.push(Violation { state: None, action: None, message: "non-finite action coordinate".into() });
        }
        if !(self.c_max.is_finite() && self.c_max >= 0.0) {
            out.push(Violation { state: None, action: None, message: format!("bad c_max {}", self.c_max) });
        }
        for x in 0..n {
            for u in 0..m {
                let row = self.kernel_row(x, u);
                let mut sum = 0.0;
                let mut bad_entry = false;
                for &p in row.iter() {
                    if !(p.is_finite() && p >= 0.0) {
                        bad_entry = true;
                    }
                    sum += p;
                }
                if bad_entry {
                    out.push(Violation {
                        state: Some(x),
                        action: Some(u),
                        message: "kernel row has a negative or non-finite entry".into(),
                    });
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation {
                        state: Some(x),
                        action: Some(u),
                        message: format!("row sum {sum} differs from 1 by more than {ROW_SUM_TOL:e}"),
                    });
                }
                let c = self.cost[[x, u]];
                if !c.is_finite() || c < 0.0 {
                    out.push(Violation { state: Some(x), action: Some(u), message: format!("bad cost {c}") });
                } else if c > self.c_max {
                    out.push(Violation {
                        state: Some(x),
                        action: Some(u),
                        message: format!("cost {c} exceeds stored c_max {}", self.c_max),
                    });
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = ModelJson {
            coords: nested2(&self.coords),
            actions: nested2(&self.action_coords),
            kernel: nested3(&self.kernel),
            cost: nested2(&self.cost),
        };
        serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
    }

    /// Parses the `{"coords", "actions", "kernel", "cost"}` document and
    /// validates the result; any violation rejects the load.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ModelJson = serde_json::from_str(text)?;
        let coords = to_array2(&doc.coords, "coords")?;
        let actions = to_array2(&doc.actions, "actions")?;
        let cost = to_array2(&doc.cost, "cost")?;
        let kernel = to_array3(&doc.kernel, "kernel")?;
        FiniteMdp::new(coords, actions, kernel, cost)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    coords: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
}

fn nested2(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn nested3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter().map(|plane| nested2(&plane.to_owned())).collect()
}

fn to_array2(v: &[Vec<f64>], what: &str) -> Result<Array2<f64>, ModelError> {
    let rows = v.len();
    let cols = v.first().map_or(0, |r| r.len());
    if v.iter().any(|r| r.len() != cols) {
        return Err(ModelError::Shape(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = v.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows, cols), flat).map_err(|e| ModelError::Shape(format!("{what}: {e}")))
}

fn to_array3(v: &[Vec<Vec<f64>>], what: &str) -> Result<Array3<f64>, ModelError> {
    let d0 = v.len();
    let d1 = v.first().map_or(0, |p| p.len());
    let d2 = v.first().and_then(|p| p.first()).map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(d0 * d1 * d2);
    for plane in v {
        if plane.len() != d1 {
            return Err(ModelError::Shape(format!("{what}: ragged planes")));
        }
        for row in plane {
            if row.len() != d2 {
                return Err(ModelError::Shape(format!("{what}: ragged rows")));
            }
            flat.extend_from_slice(row);
        }
    }
    Array3::from_shape_vec((d0, d1, d2), flat).map_err(|e| ModelError::Shape(format!("{what}: {e}")))
}

/// One action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy(pub Vec<usize>);

impl DeterministicPolicy {
    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }
}

/// State-independent randomized policy: one strictly positive probability per
/// action. Used as the exploration rule when estimating models from a single
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationPolicy {
    pub probs: Vec<f64>,
}

impl ExplorationPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(ModelError::PolicyMismatch("exploration probabilities must be strictly positive".into()));
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ModelError::PolicyMismatch(format!(
                "exploration probabilities sum to {sum}, not 1"
            )));
        }
        Ok(ExplorationPolicy { probs })
    }

    pub fn uniform(n_actions: usize) -> Self {
        ExplorationPolicy { probs: vec![1.0 / n_actions as f64; n_actions] }
    }
}

/// Anything that picks an action given the current state. Deterministic
/// policies ignore the RNG; the exploration policy draws from its mass.
pub trait ActionRule {
    fn check(&self, model: &FiniteMdp) -> Result<(), ModelError>;
    fn action(&self, state: usize, rng: &mut ChaCha8Rng) -> usize;
}

impl ActionRule for DeterministicPolicy {
    fn check(&self, model: &FiniteMdp) -> Result<(), ModelError> {
        if self.0.len() != model.n_states() {
            return Err(ModelError::PolicyMismatch(format!(
                "policy has {} entries for {} states",
                self.0.len(),
                model.n_states()
            )));
        }
        if let Some(&u) = self.0.iter().find(|&&u| u >= model.n_actions()) {
            return Err(ModelError::PolicyMismatch(format!("action index {u} out of range")));
        }
        Ok(())
    }

    fn action(&self, state: usize, _rng: &mut ChaCha8Rng) -> usize {
        self.0[state]
    }
}

impl ActionRule for ExplorationPolicy {
    fn check(&self, model: &FiniteMdp) -> Result<(), ModelError> {
        if self.probs.len() != model.n_actions() {
            return Err(ModelError::PolicyMismatch(format!(
                "exploration policy covers {} actions, model has {}",
                self.probs.len(),
                model.n_actions()
            )));
        }
        Ok(())
    }

    fn action(&self, _state: usize, rng: &mut ChaCha8Rng) -> usize {
        sample_index(&self.probs, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    pub next_state: usize,
}

/// A simulated path together with the seed that produced it, so any record
/// derived from it can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub seed: u64,
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let t: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if t < acc {
                return j;
            }
        }
    }
    // t landed in the rounding gap past the final cumulative sum
    last
}

fn sample_row(row: ArrayView1<'_, f64>, rng: &mut ChaCha8Rng) -> usize {
    let t: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if t < acc {
                return j;
            }
        }
    }
    last
}

/// Runs the chain for `horizon` steps from `x0` under the given action rule.
/// Identical (inputs, seed) give identical trajectories on every platform;
/// the generator is ChaCha8 seeded with `seed`.
pub fn simulate(
    model: &FiniteMdp,
    rule: &impl ActionRule,
    x0: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, ModelError> {
    rule.check(model)?;
    if x0 >= model.n_states() {
        return Err(ModelError::BadState(x0));
    }
    if horizon == 0 {
        return Err(ModelError::HorizonTooSmall(0, 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(horizon);
    let mut x = x0;
    for _ in 0..horizon {
        let u = rule.action(x, &mut rng);
        let y = sample_row(model.kernel_row(x, u), &mut rng);
        steps.push(Step { state: x, action: u, cost: model.cost[[x, u]], next_state: y });
        x = y;
    }
    Ok(Trajectory { steps, seed })
}

#[derive(Debug, Clone, Copy)]
pub struct McDiscounted {
    pub mean: f64,
    pub std_error: f64,
    /// Upper bound on the truncation error beta^horizon * c_max / (1-beta),
    /// always below [`MC_TRUNCATION_BUDGET`].
    pub truncation_bias: f64,
}

/// Smallest horizon whose truncated discounted tail is below `budget`.
pub fn discounted_horizon(beta: f64, c_max: f64, budget: f64) -> usize {
    assert!((0.0..1.0).contains(&beta) && budget > 0.0);
    if c_max <= budget * (1.0 - beta) {
        return 1;
    }
    let t = ((budget * (1.0 - beta) / c_max).ln() / beta.ln()).ceil();
    (t as usize).max(1)
}

/// Monte-Carlo estimate of the discounted cost of a policy from `x0`.
/// Reps run in parallel; rep r uses seed + r, and the estimate is identical
/// regardless of thread count.
pub fn mc_discounted_cost(
    model: &FiniteMdp,
    rule: &(impl ActionRule + Sync),
    x0: usize,
    beta: f64,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<McDiscounted, ModelError> {
    rule.check(model)?;
    if x0 >= model.n_states() {
        return Err(ModelError::BadState(x0));
    }
    let bias = beta.powi(horizon as i32) * model.c_max / (1.0 - beta);
    if !(bias <= MC_TRUNCATION_BUDGET) {
        return Err(ModelError::HorizonTooShort { horizon, bias, budget: MC_TRUNCATION_BUDGET });
    }
    let sums: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let mut x = x0;
            let mut disc = 1.0;
            let mut total = 0.0;
            for _ in 0..horizon {
                let u = rule.action(x, &mut rng);
                total += disc * model.cost[[x, u]];
                disc *= beta;
                x = sample_row(model.kernel_row(x, u), &mut rng);
            }
            total
        })
        .collect();
    let n = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / n;
    let std_error = if sums.len() > 1 {
        let var = sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McDiscounted { mean, std_error, truncation_bias: bias })
}

/// Minimum horizon accepted by [`mc_average_cost`]; shorter runs say nothing
/// about the long-run average.
pub const MC_AVERAGE_MIN_HORIZON: usize = 1_000;

/// Monte-Carlo estimate of the long-run average cost: mean over reps of the
/// per-trajectory time average. Same seeding scheme as the discounted oracle.
pub fn mc_average_cost(
    model: &FiniteMdp,
    rule: &(impl ActionRule + Sync),
    x0: usize,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    rule.check(model)?;
    if x0 >= model.n_states() {
        return Err(ModelError::BadState(x0));
    }
    if horizon < MC_AVERAGE_MIN_HORIZON {
        return Err(ModelError::HorizonTooSmall(horizon, MC_AVERAGE_MIN_HORIZON));
    }
    let means: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let mut x = x0;
            let mut total = 0.0;
            for _ in 0..horizon {
                let u = rule.action(x, &mut rng);
                total += model.cost[[x, u]];
                x = sample_row(model.kernel_row(x, u), &mut rng);
            }
            total / horizon as f64
        })
        .collect();
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Draws an index from a probability slice with the crate RNG; shared by the
/// learning module's restart sampler.
pub(crate) fn sample_from_weights(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    sample_index(weights, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, arr3};

    fn one_state_model(cost: f64) -> FiniteMdp {
        FiniteMdp::new(
            arr2(&[[0.0]]),
            arr2(&[[0.0]]),
            arr3(&[[[1.0]]]),
            arr2(&[[cost]]),
        )
        .unwrap()
    }

    fn two_cycle() -> FiniteMdp {
        FiniteMdp::new(
            arr2(&[[0.0], [1.0]]),
            arr2(&[[0.0]]),
            arr3(&[[[0.0, 1.0]], [[1.0, 0.0]]]),
            arr2(&[[0.0], [1.0]]),
        )
        .unwrap()
    }

    #[test]
    fn validate_accepts_identity_case() {
        assert!(one_state_model(0.0).validate().is_empty());
    }

    #[test]
    fn validate_flags_row_sum() {
        let mut m = two_cycle();
        m.kernel[[0, 0, 0]] = 0.5;
        m.kernel[[0, 0, 1]] = 0.6;
        let v = m.validate();
        assert!(v.iter().any(|v| v.state == Some(0) && v.message.contains("row sum")));
    }

    #[test]
    fn validate_flags_negative_cost() {
        let mut m = two_cycle();
        m.cost[[1, 0]] = -1.0;
        let v = m.validate();
        assert!(v.iter().any(|v| v.message.contains("cost")));
    }

    #[test]
    fn simulate_deterministic_cycle() {
        let m = two_cycle();
        let t = simulate(&m, &DeterministicPolicy(vec![0, 0]), 0, 4, 7).unwrap();
        let states: Vec<usize> = t.steps.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![0, 1, 0, 1]);
        assert!(t.steps.windows(2).all(|w| w[0].next_state == w[1].state));
    }

    #[test]
    fn simulate_visit_frequency_matches_binomial() {
        // both rows are a fair coin over the two states
        let m = FiniteMdp::new(
            arr2(&[[0.0], [1.0]]),
            arr2(&[[0.0]]),
            arr3(&[[[0.5, 0.5]], [[0.5, 0.5]]]),
            arr2(&[[0.0], [0.0]]),
        )
        .unwrap();
        let t = simulate(&m, &DeterministicPolicy(vec![0, 0]), 0, 100_000, 11).unwrap();
        let ones = t.steps.iter().filter(|s| s.next_state == 1).count() as f64;
        assert!((ones / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn simulate_is_seed_deterministic() {
        let m = two_cycle();
        let a = simulate(&m, &ExplorationPolicy::uniform(1), 0, 100, 3).unwrap();
        let b = simulate(&m, &ExplorationPolicy::uniform(1), 0, 100, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_discounted_geometric_series() {
        let m = one_state_model(2.0);
        let h = discounted_horizon(0.5, 2.0, MC_TRUNCATION_BUDGET);
        let est = mc_discounted_cost(&m, &DeterministicPolicy(vec![0]), 0, 0.5, h, 3, 0).unwrap();
        assert!((est.mean - 4.0).abs() <= est.truncation_bias);
        assert!(est.truncation_bias <= MC_TRUNCATION_BUDGET);
    }

    #[test]
    fn mc_discounted_alternating_cycle() {
        let m = two_cycle();
        let h = discounted_horizon(0.5, 1.0, MC_TRUNCATION_BUDGET);
        let est = mc_discounted_cost(&m, &DeterministicPolicy(vec![0, 0]), 0, 0.5, h, 1, 9).unwrap();
        // sum over odd t of beta^t = beta / (1 - beta^2) = 2/3
        assert!((est.mean - 2.0 / 3.0).abs() <= est.truncation_bias + 1e-12);
    }

    #[test]
    fn mc_discounted_rejects_short_horizon() {
        let m = one_state_model(2.0);
        assert!(matches!(
            mc_discounted_cost(&m, &DeterministicPolicy(vec![0]), 0, 0.99, 10, 1, 0),
            Err(ModelError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn mc_average_constant_cost() {
        let m = one_state_model(2.0);
        let g = mc_average_cost(&m, &DeterministicPolicy(vec![0]), 0, 1_000, 2, 0).unwrap();
        assert_eq!(g, 2.0);
    }

    #[test]
    fn mc_average_cycle() {
        let m = two_cycle();
        let h = 10_000;
        let g = mc_average_cost(&m, &DeterministicPolicy(vec![0, 0]), 0, h, 1, 0).unwrap();
        assert!((g - 0.5).abs() <= 1.0 / h as f64);
    }

    #[test]
    fn json_roundtrip_preserves_model() {
        let m = two_cycle();
        let back = FiniteMdp::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_load_rejects_bad_rows() {
        let m = {
            let mut m = two_cycle();
            m.kernel[[0, 0, 0]] = 0.7;
            m
        };
        assert!(FiniteMdp::from_json(&m.to_json()).is_err());
    }

    #[test]
    fn exploration_policy_requires_positive_mass() {
        assert!(ExplorationPolicy::new(vec![0.5, 0.5]).is_ok());
        assert!(ExplorationPolicy::new(vec![1.0, 0.0]).is_err());
        assert!(ExplorationPolicy::new(vec![0.4, 0.4]).is_err());
    }
}
