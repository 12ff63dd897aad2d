//! Estimation of the quantized model from data: one long controlled
//! trajectory, or independent per-cell draws when the environment can be
//! restarted. Also the data-coverage constants, the half-mass bad event, and
//! the end-to-end loss of deploying a policy learned from the estimate.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash;
use crate::mdp::{DeterministicPolicy, ExplorationPolicy, FiniteMdp, ModelError, simulate};
use crate::quantize::{extend_policy, Partition, QuantizeError, QuantizedModel};
use crate::solve::{self, SolveError};
use crate::tol;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("bin {0} has zero mass under the sampling measure")]
    ZeroMassBin(usize),
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnAlgorithm {
    SingleTrajectory,
    Restart,
}

/// Empirical model on bin representatives together with the sampling record.
#[derive(Debug, Clone)]
pub struct EstimatedModel {
    pub model: FiniteMdp,
    /// Sample count per (bin, action) cell.
    pub visits: Array2<u64>,
    /// Total transitions consumed.
    pub n_samples: usize,
    /// Draws per cell in restart mode.
    pub n0: Option<usize>,
    pub seed: u64,
    pub algorithm: LearnAlgorithm,
    /// Cells that were never visited and fell back to the self-loop, zero
    /// cost convention.
    pub zero_visit_cells: usize,
}

impl EstimatedModel {
    /// Model JSON plus a provenance block recording how it was estimated.
    pub fn to_json(&self, partition: &Partition) -> Result<String, serde_json::Error> {
        let model: serde_json::Value = serde_json::from_str(&self.model.to_json())?;
        let partition_hash = hash::fnv1a64_hex(serde_json::to_string(partition)?.as_bytes());
        let doc = serde_json::json!({
            "model": model,
            "provenance": {
                "algorithm": self.algorithm,
                "n_samples": self.n_samples,
                "n0": self.n0,
                "seed": self.seed,
                "zero_visit_cells": self.zero_visit_cells,
                "partition_hash": partition_hash,
            },
        });
        serde_json::to_string_pretty(&doc)
    }
}

fn rep_coords(env: &FiniteMdp, p: &Partition) -> Array2<f64> {
    let mut coords = Array2::zeros((p.n_bins(), env.coords.ncols()));
    for (i, &r) in p.reps.iter().enumerate() {
        coords.row_mut(i).assign(&env.coords.row(r));
    }
    coords
}

/// Assembles the estimator tables into a model, applying the zero-visit
/// convention: unvisited (bin, action) cells get cost 0 and a self-loop row.
fn assemble(
    env: &FiniteMdp,
    p: &Partition,
    counts: &Array2<u64>,
    cost_sums: &Array2<f64>,
    trans: &Array3<u64>,
    n_samples: usize,
    n0: Option<usize>,
    seed: u64,
    algorithm: LearnAlgorithm,
) -> Result<EstimatedModel, LearnError> {
    let nb = p.n_bins();
    let m = env.n_actions();
    let mut kernel = Array3::zeros((nb, m, nb));
    let mut cost = Array2::zeros((nb, m));
    let mut zero_visit = 0usize;
    for i in 0..nb {
        for u in 0..m {
            let k = counts[[i, u]];
            if k == 0 {
                zero_visit += 1;
                kernel[[i, u, i]] = 1.0;
                continue;
            }
            cost[[i, u]] = cost_sums[[i, u]] / k as f64;
            let mut row: Vec<f64> = (0..nb).map(|j| trans[[i, u, j]] as f64 / k as f64).collect();
            crate::instances::normalize_row(&mut row);
            for (j, v) in row.iter().enumerate() {
                kernel[[i, u, j]] = *v;
            }
        }
    }
    let model = FiniteMdp::new(rep_coords(env, p), env.action_coords.clone(), kernel, cost)
        .map_err(LearnError::Model)?;
    Ok(EstimatedModel {
        model,
        visits: counts.clone(),
        n_samples,
        n0,
        seed,
        algorithm,
        zero_visit_cells: zero_visit,
    })
}

/// Runs one n-step trajectory from state 0 under the exploration policy and
/// turns bin-level transition frequencies and average observed costs into a
/// model on representatives.
pub fn learn_single_trajectory(
    env: &FiniteMdp,
    p: &Partition,
    gamma: &ExplorationPolicy,
    n: usize,
    seed: u64,
) -> Result<EstimatedModel, LearnError> {
    if n == 0 {
        return Err(LearnError::BadInput("need at least one transition".into()));
    }
    if p.assignment.len() != env.n_states() {
        return Err(LearnError::BadInput(format!(
            "partition covers {} states, environment has {}",
            p.assignment.len(),
            env.n_states()
        )));
    }
    let nb = p.n_bins();
    let m = env.n_actions();
    let traj = simulate(env, gamma, 0, n, seed)?;
    let mut counts = Array2::<u64>::zeros((nb, m));
    let mut cost_sums = Array2::<f64>::zeros((nb, m));
    let mut trans = Array3::<u64>::zeros((nb, m, nb));
    for step in &traj.steps {
        let i = p.assignment[step.state];
        let j = p.assignment[step.next_state];
        counts[[i, step.action]] += 1;
        cost_sums[[i, step.action]] += step.cost;
        trans[[i, step.action, j]] += 1;
    }
    assemble(env, p, &counts, &cost_sums, &trans, n, None, seed, LearnAlgorithm::SingleTrajectory)
}

/// For every (bin, action) cell draws `n0` independent transitions: a start
/// state from the sampling measure conditioned on the bin (by rejection), a
/// landing state from the environment kernel. Frequencies and cost averages
/// become the estimated model. `pi` defaults to uniform.
pub fn learn_restart(
    env: &FiniteMdp,
    p: &Partition,
    pi: Option<&[f64]>,
    n0: usize,
    seed: u64,
) -> Result<EstimatedModel, LearnError> {
    if n0 == 0 {
        return Err(LearnError::BadInput("need at least one draw per cell".into()));
    }
    let n = env.n_states();
    if p.assignment.len() != n {
        return Err(LearnError::BadInput(format!(
            "partition covers {} states, environment has {n}",
            p.assignment.len()
        )));
    }
    let pi: Vec<f64> = match pi {
        Some(w) => {
            if w.len() != n {
                return Err(LearnError::BadInput(format!(
                    "sampling measure has {} entries for {n} states",
                    w.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > tol::ROW_SUM_TOL {
                return Err(LearnError::BadInput(format!(
                    "sampling measure must be a probability vector (sum {sum})"
                )));
            }
            w.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let nb = p.n_bins();
    for (i, members) in p.bins.iter().enumerate() {
        if members.iter().map(|&x| pi[x]).sum::<f64>() <= 0.0 {
            return Err(LearnError::ZeroMassBin(i));
        }
    }
    let m = env.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Array2::<u64>::zeros((nb, m));
    let mut cost_sums = Array2::<f64>::zeros((nb, m));
    let mut trans = Array3::<u64>::zeros((nb, m, nb));
    for i in 0..nb {
        for u in 0..m {
            for _ in 0..n0 {
                // rejection keeps the draw exactly pi conditioned on the bin
                let x = loop {
                    let cand = crate::mdp::sample_from_weights(&pi, &mut rng);
                    if p.assignment[cand] == i {
                        break cand;
                    }
                };
                let row = env.kernel_row(x, u);
                let y = crate::mdp::sample_from_weights(row.as_slice().expect("kernel row contiguous"), &mut rng);
                counts[[i, u]] += 1;
                cost_sums[[i, u]] += env.cost[[x, u]];
                trans[[i, u, p.assignment[y]]] += 1;
            }
        }
    }
    assemble(
        env,
        p,
        &counts,
        &cost_sums,
        &trans,
        nb * m * n0,
        Some(n0),
        seed,
        LearnAlgorithm::Restart,
    )
}

/// Coverage constants of a quantized model: the smallest (action weight *
/// bin mass) a sampler can hit, and the smallest nonzero transition mass.
#[derive(Debug, Clone, Copy)]
pub struct LearnabilityConstants {
    pub kappa_pi: f64,
    pub kappa_t: f64,
}

/// `gamma` weights the actions; None means uniform (as in restart mode,
/// where every cell is sampled equally).
pub fn compute_kappas(q: &QuantizedModel, gamma: Option<&ExplorationPolicy>) -> LearnabilityConstants {
    let m = q.model.n_actions();
    let uniform = vec![1.0 / m as f64; m];
    let weights: &[f64] = match gamma {
        Some(g) => &g.probs,
        None => &uniform,
    };
    let mut kappa_pi = f64::INFINITY;
    for &mass in &q.bin_mass {
        for &w in weights {
            kappa_pi = kappa_pi.min(w * mass);
        }
    }
    let mut kappa_t = f64::INFINITY;
    for v in q.model.kernel.iter() {
        if *v > 0.0 {
            kappa_t = kappa_t.min(*v);
        }
    }
    LearnabilityConstants { kappa_pi, kappa_t }
}

/// True when some estimated transition mass fell below half its true value.
pub fn bad_event_occurred(est: &EstimatedModel, truth: &QuantizedModel) -> Result<bool, LearnError> {
    if est.model.n_states() != truth.model.n_states() || est.model.n_actions() != truth.model.n_actions() {
        return Err(LearnError::BadInput(format!(
            "estimate is {}x{}, truth is {}x{}",
            est.model.n_states(),
            est.model.n_actions(),
            truth.model.n_states(),
            truth.model.n_actions()
        )));
    }
    Ok(est
        .model
        .kernel
        .iter()
        .zip(truth.model.kernel.iter())
        .any(|(e, t)| *e < 0.5 * *t))
}

#[derive(Debug, Clone, Copy)]
pub enum Criterion {
    Discounted { beta: f64 },
    Average,
}

/// Outcome of deploying a policy learned on the coarse model.
#[derive(Debug, Clone)]
pub struct LearnedPolicyOutcome {
    /// Optimality gap on the true environment (sup norm over states for the
    /// discounted criterion, gain gap for the average one).
    pub loss: f64,
    pub coarse_policy: DeterministicPolicy,
    pub extended_policy: DeterministicPolicy,
    /// Partition diameter, recorded for bound comparisons.
    pub delta: f64,
}

const INNER_TOL: f64 = 1e-10;

/// Solves the coarse model, extends its optimal policy to the fine states,
/// and measures the exact optimality gap on the environment.
///
/// For the average criterion the environment must carry a minorizer. The
/// coarse model may not (zero-visit self-loops destroy common mass), in which
/// case its policy is taken from a discounted solve at beta = 1 - 2^-10
/// standing in for the average problem.
pub fn learned_policy_loss(
    env: &FiniteMdp,
    coarse: &FiniteMdp,
    p: &Partition,
    criterion: Criterion,
) -> Result<LearnedPolicyOutcome, LearnError> {
    match criterion {
        Criterion::Discounted { beta } => {
            let coarse_sol = solve::solve_discounted(coarse, beta, INNER_TOL)?;
            let extended = extend_policy(&coarse_sol.policy, p)?;
            let deployed = solve::policy_evaluation_discounted(env, &extended, beta)?;
            let optimal = solve::solve_discounted(env, beta, INNER_TOL)?;
            let loss = deployed
                .iter()
                .zip(optimal.value.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            Ok(LearnedPolicyOutcome {
                loss,
                coarse_policy: coarse_sol.policy,
                extended_policy: extended,
                delta: p.delta,
            })
        }
        Criterion::Average => {
            let (eps_env, rho_env) = solve::find_minorizer(env).ok_or_else(|| {
                LearnError::BadInput("environment kernel has no common minorizing mass".into())
            })?;
            let coarse_policy = match solve::find_minorizer(coarse) {
                Some((eps_c, rho_c)) => {
                    solve::solve_acoe_minorization(coarse, eps_c, &rho_c, INNER_TOL)?.policy
                }
                None => solve::solve_discounted(coarse, 1.0 - 0.5f64.powi(10), INNER_TOL)?.policy,
            };
            let extended = extend_policy(&coarse_policy, p)?;
            let (g_deployed, _) = solve::policy_evaluation_average(env, &extended, eps_env, &rho_env)?;
            let triplet = solve::solve_acoe_minorization(env, eps_env, &rho_env, INNER_TOL)?;
            Ok(LearnedPolicyOutcome {
                loss: (g_deployed - triplet.gain).abs(),
                coarse_policy,
                extended_policy: extended,
                delta: p.delta,
            })
        }
    }
}
