//! State-space partitions, weighted aggregation of a fine model onto bin
//! representatives, and the piecewise-constant extensions that carry coarse
//! objects (values, policies, kernels, minorizers) back to the fine grid.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{DeterministicPolicy, FiniteMdp};
use crate::tol;

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("bin {0} contains no states")]
    EmptyBin(usize),
    #[error("bin {0} has zero mass under the weighting measure")]
    ZeroMassBin(usize),
    #[error("{0}")]
    BadInput(String),
}

/// Grouping of fine states into bins, each with a representative state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    /// Fine state index to bin index.
    pub assignment: Vec<usize>,
    /// Member fine states of each bin, ascending.
    pub bins: Vec<Vec<usize>>,
    /// Representative fine state of each bin.
    pub reps: Vec<usize>,
    /// Largest distance between two states sharing a bin.
    pub delta: f64,
}

impl Partition {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Recomputes the max intra-bin diameter from coordinates.
    pub fn recompute_delta(&self, coords: &Array2<f64>) -> f64 {
        let mut delta = 0.0f64;
        for bin in &self.bins {
            for (k, &a) in bin.iter().enumerate() {
                for &b in &bin[k + 1..] {
                    let d: f64 = coords
                        .row(a)
                        .iter()
                        .zip(coords.row(b).iter())
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt();
                    delta = delta.max(d);
                }
            }
        }
        delta
    }
}

fn build_partition(assignment: Vec<usize>, n_bins: usize, centers: &[Vec<f64>], coords: &Array2<f64>) -> Result<Partition, QuantizeError> {
    let mut bins = vec![Vec::new(); n_bins];
    for (x, &b) in assignment.iter().enumerate() {
        bins[b].push(x);
    }
    if let Some(empty) = bins.iter().position(|b| b.is_empty()) {
        return Err(QuantizeError::EmptyBin(empty));
    }
    let mut reps = Vec::with_capacity(n_bins);
    for (b, members) in bins.iter().enumerate() {
        let mut best = members[0];
        let mut best_d = f64::INFINITY;
        for &x in members {
            let d: f64 = coords
                .row(x)
                .iter()
                .zip(centers[b].iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            if d < best_d {
                best_d = d;
                best = x;
            }
        }
        reps.push(best);
    }
    let mut p = Partition { assignment, bins, reps, delta: 0.0 };
    p.delta = p.recompute_delta(coords);
    Ok(p)
}

/// Axis-aligned equal-width partition of the unit cube into
/// `m_per_axis`^d bins. Points on an interior boundary go to the upper bin.
/// Representatives are the member states nearest each bin center (lowest
/// index on ties). Fails if some bin catches no state.
pub fn uniform_partition(coords: &Array2<f64>, m_per_axis: usize) -> Result<Partition, QuantizeError> {
    if m_per_axis == 0 {
        return Err(QuantizeError::BadInput("need at least one bin per axis".into()));
    }
    let n = coords.nrows();
    let d = coords.ncols();
    if n == 0 {
        return Err(QuantizeError::BadInput("no states to partition".into()));
    }
    for x in 0..n {
        for j in 0..d {
            let v = coords[[x, j]];
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(QuantizeError::BadInput(format!(
                    "coordinate {v} of state {x} lies outside the unit cube"
                )));
            }
        }
    }
    let n_bins = m_per_axis.pow(d as u32);
    let mut assignment = Vec::with_capacity(n);
    for x in 0..n {
        let mut flat = 0usize;
        for j in (0..d).rev() {
            let v = coords[[x, j]].clamp(0.0, 1.0);
            let idx = ((v * m_per_axis as f64).floor() as usize).min(m_per_axis - 1);
            flat = flat * m_per_axis + idx;
        }
        assignment.push(flat);
    }
    let mut centers = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let mut c = Vec::with_capacity(d);
        let mut rest = b;
        for _ in 0..d {
            let idx = rest % m_per_axis;
            rest /= m_per_axis;
            c.push((idx as f64 + 0.5) / m_per_axis as f64);
        }
        centers.push(c);
    }
    build_partition(assignment, n_bins, &centers, coords)
}

/// Partition with every state in its own bin. All operations built on it are
/// identities.
pub fn identity_partition(coords: &Array2<f64>) -> Partition {
    let n = coords.nrows();
    Partition {
        assignment: (0..n).collect(),
        bins: (0..n).map(|i| vec![i]).collect(),
        reps: (0..n).collect(),
        delta: 0.0,
    }
}

/// Coarse model on bin representatives, produced by weighted aggregation.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    /// Finite model on the representative states.
    pub model: FiniteMdp,
    /// Weighting measure over fine states that produced the aggregation.
    pub pi: Vec<f64>,
    /// Mass the weighting puts on each bin.
    pub bin_mass: Vec<f64>,
}

fn check_partition_shape(p: &Partition, n: usize) -> Result<(), QuantizeError> {
    if p.assignment.len() != n {
        return Err(QuantizeError::BadInput(format!(
            "partition covers {} states, model has {n}",
            p.assignment.len()
        )));
    }
    Ok(())
}

/// Aggregates a fine model onto representatives: costs become in-bin
/// pi-averages and kernel entries become pi-averaged bin-to-bin transition
/// masses. `pi` defaults to uniform over fine states.
pub fn build_quantized_model(
    fine: &FiniteMdp,
    p: &Partition,
    pi: Option<&[f64]>,
) -> Result<QuantizedModel, QuantizeError> {
    let n = fine.n_states();
    let m = fine.n_actions();
    let nb = p.n_bins();
    check_partition_shape(p, n)?;
    let pi: Vec<f64> = match pi {
        Some(w) => {
            if w.len() != n {
                return Err(QuantizeError::BadInput(format!(
                    "weighting has {} entries, model has {n} states",
                    w.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > tol::ROW_SUM_TOL {
                return Err(QuantizeError::BadInput(format!(
                    "weighting must be a probability vector (sum {sum})"
                )));
            }
            w.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut bin_mass = vec![0.0f64; nb];
    for (x, &b) in p.assignment.iter().enumerate() {
        bin_mass[b] += pi[x];
    }
    if let Some(zero) = bin_mass.iter().position(|m| *m <= 0.0) {
        return Err(QuantizeError::ZeroMassBin(zero));
    }
    let mut cost = Array2::zeros((nb, m));
    let mut kernel = Array3::zeros((nb, m, nb));
    for i in 0..nb {
        for u in 0..m {
            let mut c_acc = 0.0;
            let mut row = vec![0.0f64; nb];
            for &x in &p.bins[i] {
                let w = pi[x] / bin_mass[i];
                c_acc += w * fine.cost[[x, u]];
                let t_row = fine.kernel_row(x, u);
                for (y, &b) in p.assignment.iter().enumerate() {
                    row[b] += w * t_row[y];
                }
            }
            cost[[i, u]] = c_acc;
            crate::instances::normalize_row(&mut row);
            for (j, v) in row.iter().enumerate() {
                kernel[[i, u, j]] = *v;
            }
        }
    }
    let mut coords = Array2::zeros((nb, fine.coords.ncols()));
    for (i, &r) in p.reps.iter().enumerate() {
        coords.row_mut(i).assign(&fine.coords.row(r));
    }
    let model = FiniteMdp::new(coords, fine.action_coords.clone(), kernel, cost)
        .map_err(|e| QuantizeError::BadInput(e.to_string()))?;
    Ok(QuantizedModel { model, pi, bin_mass })
}

/// Spreads one value per bin onto fine states (piecewise-constant extension).
pub fn extend_values(values: &[f64], p: &Partition) -> Result<Vec<f64>, QuantizeError> {
    if values.len() != p.n_bins() {
        return Err(QuantizeError::BadInput(format!(
            "{} values for {} bins",
            values.len(),
            p.n_bins()
        )));
    }
    Ok(p.assignment.iter().map(|&b| values[b]).collect())
}

/// Extends a policy on representatives to fine states: each fine state plays
/// its bin's action.
pub fn extend_policy(policy: &DeterministicPolicy, p: &Partition) -> Result<DeterministicPolicy, QuantizeError> {
    if policy.0.len() != p.n_bins() {
        return Err(QuantizeError::BadInput(format!(
            "policy over {} bins does not match {} bins",
            policy.0.len(),
            p.n_bins()
        )));
    }
    Ok(DeterministicPolicy(p.assignment.iter().map(|&b| policy.0[b]).collect()))
}

/// Extends a coarse model to the fine state set: fine state x inherits its
/// bin's cost row, and its kernel row places the coarse masses on the
/// representative states themselves.
pub fn extend_model(coarse: &FiniteMdp, p: &Partition, fine: &FiniteMdp) -> Result<FiniteMdp, QuantizeError> {
    let n = fine.n_states();
    let m = fine.n_actions();
    let nb = p.n_bins();
    check_partition_shape(p, n)?;
    if coarse.n_states() != nb || coarse.n_actions() != m {
        return Err(QuantizeError::BadInput(format!(
            "coarse model is {}x{}, partition expects {}x{m}",
            coarse.n_states(),
            coarse.n_actions(),
            nb
        )));
    }
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    for x in 0..n {
        let i = p.assignment[x];
        for u in 0..m {
            cost[[x, u]] = coarse.cost[[i, u]];
            for j in 0..nb {
                kernel[[x, u, p.reps[j]]] += coarse.kernel[[i, u, j]];
            }
        }
    }
    FiniteMdp::new(fine.coords.clone(), fine.action_coords.clone(), kernel, cost)
        .map_err(|e| QuantizeError::BadInput(e.to_string()))
}

/// Pushes a fine-state measure onto representatives by summing bin mass.
pub fn quantize_minorizer(rho: &[f64], p: &Partition) -> Result<Vec<f64>, QuantizeError> {
    if rho.len() != p.assignment.len() {
        return Err(QuantizeError::BadInput(format!(
            "measure has {} entries, partition covers {}",
            rho.len(),
            p.assignment.len()
        )));
    }
    let mut tau = vec![0.0f64; p.n_bins()];
    for (x, &b) in p.assignment.iter().enumerate() {
        tau[b] += rho[x];
    }
    Ok(tau)
}
