//! Exact solvers for finite models: discounted value iteration, policy
//! evaluation by direct linear solve, minorization-based average-cost
//! optimality, and the vanishing-discount route to the same gain.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::linalg;
use crate::mdp::{DeterministicPolicy, FiniteMdp};
use crate::metrics::DiscreteMeasure;
use crate::tol;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("discount factor {0} outside (0, 1)")]
    BadBeta(f64),
    #[error("no convergence after {iters} iterations, last residual {residual:.3e}")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("kernel not minorized at (state {x}, action {u}, next {y}): {kernel} < {floor}")]
    NotMinorized { x: usize, u: usize, y: usize, kernel: f64, floor: f64 },
    #[error("linear system solve failed: {0}")]
    Singular(#[from] linalg::SingularMatrix),
    #[error("policy evaluation residual {residual:.3e} above tolerance")]
    PoorResidual { residual: f64 },
    #[error("{0}")]
    BadInput(String),
}

/// Optimal discounted solution with the residual of the final sweep.
#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub value: Array1<f64>,
    pub policy: DeterministicPolicy,
    /// Sup-norm difference between the last two iterates.
    pub residual: f64,
    pub beta: f64,
}

/// Gain, relative value function and optimal policy for the average-cost
/// problem, together with the minorization pair that produced them.
#[derive(Debug, Clone)]
pub struct CanonicalTriplet {
    pub gain: f64,
    /// Fixed point of the minorization-shifted optimality operator; the
    /// optimality equation gain + h(x) = min_u { c + <T, h> } holds at every
    /// state up to `residual`.
    pub relative_value: Array1<f64>,
    pub policy: DeterministicPolicy,
    pub epsilon: f64,
    /// Minorizer as a measure over the model's state coordinates; weights are
    /// aligned with state indices (zero weights kept).
    pub minorizer: DiscreteMeasure,
    pub residual: f64,
}

impl CanonicalTriplet {
    /// Per-state minorizer weights, aligned with state indices.
    pub fn rho(&self) -> &[f64] {
        &self.minorizer.weights
    }
}

fn check_beta(beta: f64) -> Result<(), SolveError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(SolveError::BadBeta(beta))
    }
}

/// One step of the discounted optimality operator: for each state the
/// minimal c(x,u) + beta * <T(.|x,u), v>. Also returns the greedy action per
/// state; ties within `tol::TIE_TOL` go to the lowest action index.
fn bellman_step(model: &FiniteMdp, v: &Array1<f64>, beta: f64, scratch: &mut Vec<f64>) -> (Array1<f64>, Vec<usize>) {
    let n = model.n_states();
    let m = model.n_actions();
    let mut out = Array1::zeros(n);
    let mut greedy = vec![0usize; n];
    for x in 0..n {
        scratch.clear();
        let mut best = f64::INFINITY;
        for u in 0..m {
            let q = model.cost[[x, u]] + beta * model.kernel_row(x, u).dot(v);
            if q < best {
                best = q;
            }
            scratch.push(q);
        }
        let pick = scratch.iter().position(|q| *q <= best + tol::TIE_TOL).unwrap();
        out[x] = scratch[pick];
        greedy[x] = pick;
    }
    (out, greedy)
}

/// Applies the discounted optimality operator once.
pub fn bellman_apply(model: &FiniteMdp, v: &Array1<f64>, beta: f64) -> Result<Array1<f64>, SolveError> {
    check_beta(beta)?;
    if v.len() != model.n_states() {
        return Err(SolveError::BadInput(format!(
            "value length {} does not match state count {}",
            v.len(),
            model.n_states()
        )));
    }
    let mut scratch = Vec::with_capacity(model.n_actions());
    Ok(bellman_step(model, v, beta, &mut scratch).0)
}

/// Value iteration from v = 0; stops when the sweep residual guarantees
/// ||v - J*|| <= tol via the contraction rate, i.e. when
/// ||Tv - v|| <= tol * (1 - beta) / (2 beta).
pub fn solve_discounted(model: &FiniteMdp, beta: f64, tol: f64) -> Result<DiscountedSolution, SolveError> {
    solve_discounted_from(model, beta, tol, None)
}

/// Same iteration started from a caller-supplied value function. Used to
/// chain solves across a discount ladder; the stopping guarantee is the same.
pub fn solve_discounted_from(
    model: &FiniteMdp,
    beta: f64,
    tol: f64,
    start: Option<&Array1<f64>>,
) -> Result<DiscountedSolution, SolveError> {
    check_beta(beta)?;
    if tol <= 0.0 {
        return Err(SolveError::BadInput(format!("tolerance {tol} must be positive")));
    }
    let n = model.n_states();
    let mut v = match start {
        Some(v0) if v0.len() == n => v0.clone(),
        Some(v0) => {
            return Err(SolveError::BadInput(format!(
                "warm start length {} does not match state count {n}",
                v0.len()
            )))
        }
        None => Array1::zeros(n),
    };
    let stop = tol * (1.0 - beta) / (2.0 * beta);
    // worst-case sweeps from the contraction rate, with slack for float noise
    let span0 = (model.c_max / (1.0 - beta)).max(1.0);
    let max_iters = 2 * ((stop / span0).ln() / beta.ln()).ceil().max(1.0) as usize + 100;
    let mut scratch = Vec::with_capacity(model.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let (next, greedy) = bellman_step(model, &v, beta, &mut scratch);
        residual = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if residual <= stop {
            return Ok(DiscountedSolution { value: v, policy: DeterministicPolicy(greedy), residual, beta });
        }
    }
    Err(SolveError::NoConvergence { iters: max_iters, residual })
}

fn policy_cost_and_kernel(model: &FiniteMdp, policy: &DeterministicPolicy) -> Result<(Array1<f64>, Array2<f64>), SolveError> {
    let n = model.n_states();
    if policy.0.len() != n {
        return Err(SolveError::BadInput(format!(
            "policy length {} does not match state count {n}",
            policy.0.len()
        )));
    }
    let mut c = Array1::zeros(n);
    let mut t = Array2::zeros((n, n));
    for x in 0..n {
        let u = policy.0[x];
        if u >= model.n_actions() {
            return Err(SolveError::BadInput(format!("policy action {u} at state {x} out of range")));
        }
        c[x] = model.cost[[x, u]];
        t.row_mut(x).assign(&model.kernel_row(x, u));
    }
    Ok((c, t))
}

/// Exact discounted value of a stationary deterministic policy via the
/// linear system (I - beta T_policy) v = c_policy, with iterative refinement;
/// the refined residual is checked against a scaled tolerance.
pub fn policy_evaluation_discounted(
    model: &FiniteMdp,
    policy: &DeterministicPolicy,
    beta: f64,
) -> Result<Array1<f64>, SolveError> {
    check_beta(beta)?;
    let n = model.n_states();
    let (c, t) = policy_cost_and_kernel(model, policy)?;
    let mut a = Array2::eye(n);
    a.scaled_add(-beta, &t);
    let v = linalg::solve_refined(&a, &c)?;
    let res = linalg::residual_inf(&a, &v, &c);
    let scale = v.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    if res > tol::POLICY_EVAL_RESIDUAL * scale {
        return Err(SolveError::PoorResidual { residual: res });
    }
    Ok(v)
}

/// Largest componentwise minorizer of a kernel: eps = sum_y min_{x,u} T(y|x,u)
/// with rho the normalized minima. None when the total mass is zero.
pub fn find_minorizer(model: &FiniteMdp) -> Option<(f64, Vec<f64>)> {
    let n = model.n_states();
    let mut mins = vec![f64::INFINITY; n];
    for x in 0..model.n_states() {
        for u in 0..model.n_actions() {
            let row = model.kernel_row(x, u);
            for (y, p) in row.iter().enumerate() {
                mins[y] = mins[y].min(*p);
            }
        }
    }
    let eps: f64 = mins.iter().sum();
    if eps <= 0.0 {
        return None;
    }
    let rho: Vec<f64> = mins.iter().map(|m| m / eps).collect();
    Some((eps, rho))
}

fn check_minorization(model: &FiniteMdp, epsilon: f64, rho: &[f64]) -> Result<(), SolveError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(SolveError::BadInput(format!("epsilon {epsilon} outside (0, 1]")));
    }
    let n = model.n_states();
    if rho.len() != n {
        return Err(SolveError::BadInput(format!("minorizer length {} does not match state count {n}", rho.len())));
    }
    let sum: f64 = rho.iter().sum();
    if rho.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > tol::ROW_SUM_TOL {
        return Err(SolveError::BadInput(format!("minorizer weights must be a distribution (sum {sum})")));
    }
    for x in 0..n {
        for u in 0..model.n_actions() {
            let row = model.kernel_row(x, u);
            for y in 0..n {
                let floor = epsilon * rho[y];
                if row[y] < floor - tol::ROW_SUM_TOL {
                    return Err(SolveError::NotMinorized { x, u, y, kernel: row[y], floor });
                }
            }
        }
    }
    Ok(())
}

/// Solves the average-cost optimality equation for a kernel minorized as
/// T(.|x,u) >= epsilon * rho. Iterates the shifted operator
/// v <- min_u { c + <T, v> } - epsilon <rho, v>, a sup-norm contraction with
/// modulus 1 - epsilon, until the fixed-point error is within tol/2, and
/// reads off gain = epsilon <h, rho>.
pub fn solve_acoe_minorization(
    model: &FiniteMdp,
    epsilon: f64,
    rho: &[f64],
    tol: f64,
) -> Result<CanonicalTriplet, SolveError> {
    if tol <= 0.0 {
        return Err(SolveError::BadInput(format!("tolerance {tol} must be positive")));
    }
    check_minorization(model, epsilon, rho)?;
    let n = model.n_states();
    let rho_arr = Array1::from(rho.to_vec());
    let mut v: Array1<f64> = Array1::zeros(n);
    let stop = tol * epsilon / 2.0;
    let span0 = model.c_max.max(1.0);
    let max_iters = if epsilon >= 1.0 {
        4
    } else {
        2 * ((stop / span0).ln() / (1.0 - epsilon).ln()).ceil().max(1.0) as usize + 100
    };
    let mut scratch = Vec::with_capacity(model.n_actions());
    let mut residual = f64::INFINITY;
    let mut greedy = vec![0usize; n];
    for _ in 0..max_iters {
        let shift = epsilon * rho_arr.dot(&v);
        let (mut next, g) = bellman_step(model, &v, 1.0, &mut scratch);
        next.mapv_inplace(|q| q - shift);
        residual = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        greedy = g;
        if residual <= stop {
            break;
        }
    }
    if residual > stop {
        return Err(SolveError::NoConvergence { iters: max_iters, residual });
    }
    let gain = epsilon * rho_arr.dot(&v);
    // residual of the optimality equation itself: min_u{c + <T,h>} - g - h
    let (applied, _) = bellman_step(model, &v, 1.0, &mut scratch);
    let acoe_res = applied
        .iter()
        .zip(v.iter())
        .map(|(a, h)| (a - gain - h).abs())
        .fold(0.0f64, f64::max);
    let minorizer = DiscreteMeasure::new(model.coords.clone(), rho.to_vec())
        .map_err(|e| SolveError::BadInput(e.to_string()))?;
    Ok(CanonicalTriplet {
        gain,
        relative_value: v,
        policy: DeterministicPolicy(greedy),
        epsilon,
        minorizer,
        residual: acoe_res,
    })
}

/// Gain and bias of a fixed stationary deterministic policy under the same
/// minorization, via the direct linear solve
/// (I - T_policy + epsilon 1 rho^T) h = c_policy; gain = epsilon <h, rho>.
pub fn policy_evaluation_average(
    model: &FiniteMdp,
    policy: &DeterministicPolicy,
    epsilon: f64,
    rho: &[f64],
) -> Result<(f64, Array1<f64>), SolveError> {
    check_minorization(model, epsilon, rho)?;
    let n = model.n_states();
    let (c, t) = policy_cost_and_kernel(model, policy)?;
    let mut a = Array2::eye(n);
    a -= &t;
    for x in 0..n {
        for y in 0..n {
            a[[x, y]] += epsilon * rho[y];
        }
    }
    let h = linalg::solve_refined(&a, &c)?;
    let res = linalg::residual_inf(&a, &h, &c);
    let scale = h.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    if res > tol::POLICY_EVAL_RESIDUAL * scale {
        return Err(SolveError::PoorResidual { residual: res });
    }
    let gain = epsilon * Array1::from(rho.to_vec()).dot(&h);
    Ok((gain, h))
}

/// Result of chasing the average cost through a ladder of discount factors.
#[derive(Debug, Clone)]
pub struct VanishingDiscount {
    /// Last gain estimate (1 - beta_K) * mean_x J*_{beta_K}(x).
    pub gain: f64,
    /// Relative value at the last rung, anchored so h(anchor) = 0.
    pub h: Array1<f64>,
    /// (beta, gain estimate) for every rung, in ladder order.
    pub gains: Vec<(f64, f64)>,
    pub anchor: usize,
    /// False when the last two gain estimates still differ by more than the
    /// requested tolerance; the estimates are reported anyway.
    pub converged: bool,
}

/// Discount ladder beta_k = 1 - 2^-k for k = 1..=k_max.
pub fn geometric_beta_schedule(k_max: u32) -> Vec<f64> {
    (1..=k_max).map(|k| 1.0 - 0.5f64.powi(k as i32)).collect()
}

/// Approximates the average-cost gain without a minorizer by solving the
/// discounted problem along `betas` (warm-starting each rung from the last)
/// and tracking (1 - beta) * J*_beta averaged over states. The relative value
/// is J*_beta - J*_beta(anchor) at the final rung.
pub fn vanishing_discount_gain(
    model: &FiniteMdp,
    anchor: usize,
    betas: &[f64],
    tol: f64,
) -> Result<VanishingDiscount, SolveError> {
    if betas.is_empty() {
        return Err(SolveError::BadInput("empty discount ladder".into()));
    }
    if anchor >= model.n_states() {
        return Err(SolveError::BadInput(format!("anchor state {anchor} out of range")));
    }
    if tol <= 0.0 {
        return Err(SolveError::BadInput(format!("tolerance {tol} must be positive")));
    }
    for w in betas.windows(2) {
        if w[1] <= w[0] {
            return Err(SolveError::BadInput("discount ladder must be strictly increasing".into()));
        }
    }
    // solve each rung well below the gain tolerance so the ladder trend is
    // the only source of error that matters
    let inner_tol = tol / 10.0;
    let mut gains = Vec::with_capacity(betas.len());
    let mut prev: Option<Array1<f64>> = None;
    for &beta in betas {
        let sol = solve_discounted_from(model, beta, inner_tol, prev.as_ref())?;
        let mean = sol.value.iter().sum::<f64>() / sol.value.len() as f64;
        gains.push((beta, (1.0 - beta) * mean));
        prev = Some(sol.value);
    }
    let last = prev.unwrap();
    let h = &last - last[anchor];
    let gain = gains.last().unwrap().1;
    let converged = if gains.len() >= 2 {
        (gains[gains.len() - 1].1 - gains[gains.len() - 2].1).abs() <= tol
    } else {
        false
    };
    Ok(VanishingDiscount { gain, h, gains, anchor, converged })
}
