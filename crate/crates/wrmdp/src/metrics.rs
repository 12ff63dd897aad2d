//! Wasserstein-1 distances, f-discrepancies, their kernel extensions, and
//! empirical Lipschitz constants.
//!
//! Two independent W1 routes are kept on purpose: an exact transportation
//! solve on the bipartite support graph (any dimension) and a 1-D CDF
//! integration. They must agree to [`crate::tol::W1_ORACLE_TOL`]; the
//! acceptance suite enforces that, so neither route may be "simplified" into
//! the other.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

use crate::mdp::FiniteMdp;
use crate::tol::ROW_SUM_TOL;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("bad measure: {0}")]
    BadMeasure(String),
    #[error("ambient dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("duplicate coordinates carry different values (states {0} and {1}): Lipschitz constant is infinite")]
    InfiniteLipschitz(usize, usize),
    #[error("transport solve stalled: {0}")]
    NoConvergence(String),
}

/// Weighted point masses on R^d: the carrier for noise laws, minorizers,
/// weighting measures, and empirical measures.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    /// One support point per row.
    pub support: Array2<f64>,
    /// Nonnegative, sums to 1 within [`ROW_SUM_TOL`].
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Array2<f64>, weights: Vec<f64>) -> Result<Self, MetricError> {
        if support.nrows() == 0 {
            return Err(MetricError::BadMeasure("empty support".into()));
        }
        if support.nrows() != weights.len() {
            return Err(MetricError::BadMeasure(format!(
                "{} support points vs {} weights",
                support.nrows(),
                weights.len()
            )));
        }
        if support.iter().any(|c| !c.is_finite()) {
            return Err(MetricError::BadMeasure("non-finite support point".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(MetricError::BadMeasure("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(MetricError::BadMeasure(format!("weights sum to {sum}, not 1")));
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn dirac(point: &[f64]) -> Self {
        DiscreteMeasure {
            support: Array2::from_shape_vec((1, point.len()), point.to_vec()).unwrap(),
            weights: vec![1.0],
        }
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: Array2<f64>) -> Result<Self, MetricError> {
        let k = points.nrows();
        if k == 0 {
            return Err(MetricError::BadMeasure("empty support".into()));
        }
        DiscreteMeasure::new(points, vec![1.0 / k as f64; k])
    }

    /// 1-D convenience constructor.
    pub fn from_points_1d(xs: &[f64], ws: &[f64]) -> Result<Self, MetricError> {
        let support = Array2::from_shape_vec((xs.len(), 1), xs.to_vec())
            .map_err(|e| MetricError::BadMeasure(e.to_string()))?;
        DiscreteMeasure::new(support, ws.to_vec())
    }

    /// Measure on the model's state coordinates with the given per-state
    /// weights; zero-weight states are pruned from the support.
    pub fn from_state_weights(coords: &Array2<f64>, weights: &[f64]) -> Result<Self, MetricError> {
        if coords.nrows() != weights.len() {
            return Err(MetricError::BadMeasure(format!(
                "{} states vs {} weights",
                coords.nrows(),
                weights.len()
            )));
        }
        let keep: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        if keep.is_empty() {
            return Err(MetricError::BadMeasure("all weights zero".into()));
        }
        let mut support = Array2::zeros((keep.len(), coords.ncols()));
        let mut w = Vec::with_capacity(keep.len());
        for (r, &i) in keep.iter().enumerate() {
            support.row_mut(r).assign(&coords.row(i));
            w.push(weights[i]);
        }
        DiscreteMeasure::new(support, w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn expectation(&self, f: impl Fn(ArrayView1<'_, f64>) -> f64) -> f64 {
        self.support
            .rows()
            .into_iter()
            .zip(self.weights.iter())
            .map(|(p, &w)| w * f(p))
            .sum()
    }

    /// Merges duplicate support points (weights summed) and drops zero-weight
    /// atoms. Distances treat the result as canonical.
    pub fn merged(&self) -> DiscreteMeasure {
        let k = self.len();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&a, &b| lex_cmp(self.support.row(a), self.support.row(b)));
        let mut points: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let d = self.dim();
        let mut i = 0;
        while i < k {
            let mut w = self.weights[idx[i]];
            let mut j = i + 1;
            while j < k && lex_cmp(self.support.row(idx[i]), self.support.row(idx[j])) == Ordering::Equal {
                w += self.weights[idx[j]];
                j += 1;
            }
            if w > 0.0 {
                points.extend(self.support.row(idx[i]).iter());
                weights.push(w);
            }
            i = j;
        }
        DiscreteMeasure {
            support: Array2::from_shape_vec((weights.len(), d), points).unwrap(),
            weights,
        }
    }
}

fn lex_cmp(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact Wasserstein-1 distance between discrete measures under the Euclidean
/// ground metric, via successive shortest augmenting paths on the bipartite
/// transportation graph (Dijkstra with Johnson potentials).
pub fn w1_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64, MetricError> {
    if mu.dim() != nu.dim() {
        return Err(MetricError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let a = mu.merged();
    let b = nu.merged();
    transport_cost(&a, &b)
}

struct HeapItem {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on dist via reversed comparison
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

fn transport_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64, MetricError> {
    let n = mu.len();
    let m = nu.len();
    // pairwise ground costs, computed once
    let mut cost = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            cost[[i, j]] = euclid(mu.support.row(i), nu.support.row(j));
        }
    }
    let mut flow: Array2<f64> = Array2::zeros((n, m));
    let mut rs: Vec<f64> = mu.weights.clone(); // remaining supply
    let mut rd: Vec<f64> = nu.weights.clone(); // remaining demand
    let mut pot = vec![0.0f64; n + m]; // node potentials; suppliers 0..n, consumers n..n+m
    let mass_tol = 1e-13;
    let max_rounds = 6 * (n + m) + 64;

    for _round in 0..max_rounds {
        let remaining: f64 = rs.iter().sum();
        if remaining <= mass_tol {
            break;
        }
        // Dijkstra from all suppliers with remaining supply
        let inf = f64::INFINITY;
        let mut dist = vec![inf; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut done = vec![false; n + m];
        let mut heap = BinaryHeap::new();
        for i in 0..n {
            if rs[i] > mass_tol {
                dist[i] = 0.0;
                heap.push(HeapItem { dist: 0.0, node: i });
            }
        }
        while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
            if done[u] || du > dist[u] {
                continue;
            }
            done[u] = true;
            if u < n {
                // supplier -> every consumer
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[[u, j]] + pot[u] - pot[v]).max(0.0);
                    let nd = du + rc;
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                        heap.push(HeapItem { dist: nd, node: v });
                    }
                }
            } else {
                // consumer -> suppliers it currently feeds from (reverse arcs)
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[[i, j]] <= 0.0 {
                        continue;
                    }
                    let rc = (-cost[[i, j]] + pot[u] - pot[i]).max(0.0);
                    let nd = du + rc;
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = u;
                        heap.push(HeapItem { dist: nd, node: i });
                    }
                }
            }
        }
        // cheapest consumer that still needs mass
        let mut target = usize::MAX;
        let mut best = inf;
        for j in 0..m {
            if rd[j] > mass_tol && dist[n + j] < best {
                best = dist[n + j];
                target = n + j;
            }
        }
        if target == usize::MAX {
            return Err(MetricError::NoConvergence(format!(
                "no augmenting path with {remaining:.3e} mass left"
            )));
        }
        // potentials absorb the new distances
        for v in 0..n + m {
            if dist[v] < inf {
                pot[v] += dist[v].min(best);
            } else {
                pot[v] += best;
            }
        }
        // walk back to the path's source supplier, collecting the bottleneck
        let mut bottleneck = rd[target - n];
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if v >= n {
                // forward arc u -> v has unlimited capacity
            } else {
                // reverse arc: limited by current flow on (v_supplier <- u_consumer)
                bottleneck = bottleneck.min(flow[[v, u - n]]);
            }
            v = u;
        }
        let source = v;
        bottleneck = bottleneck.min(rs[source]);
        if !(bottleneck > 0.0) {
            return Err(MetricError::NoConvergence("zero bottleneck".into()));
        }
        // apply the augmentation
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if v >= n {
                flow[[u, v - n]] += bottleneck;
            } else {
                flow[[v, u - n]] -= bottleneck;
            }
            v = u;
        }
        rs[source] = (rs[source] - bottleneck).max(0.0);
        rd[target - n] = (rd[target - n] - bottleneck).max(0.0);
    }

    let remaining: f64 = rs.iter().sum();
    if remaining > 1e-9 {
        return Err(MetricError::NoConvergence(format!(
            "transport left {remaining:.3e} mass unrouted"
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += flow[[i, j]] * cost[[i, j]];
        }
    }
    Ok(total)
}

/// Wasserstein-1 on the line by integrating |F - G| between the pooled
/// support points. Independent of [`w1_exact`] and must match it.
pub fn w1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64, MetricError> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(MetricError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(mu.len() + nu.len());
    for (p, &w) in mu.support.column(0).iter().zip(mu.weights.iter()) {
        events.push((*p, w, 0.0));
    }
    for (p, &w) in nu.support.column(0).iter().zip(nu.weights.iter()) {
        events.push((*p, 0.0, w));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut diff = 0.0f64; // F(x) - G(x) left of the next event
    let mut prev_x = events[0].0;
    for &(x, dmu, dnu) in &events {
        total += diff.abs() * (x - prev_x);
        diff += dmu - dnu;
        prev_x = x;
    }
    Ok(total)
}

/// |∫f dμ − ∫f dν| for a pointwise-evaluable f.
pub fn d_f(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    f: impl Fn(ArrayView1<'_, f64>) -> f64,
) -> f64 {
    (mu.expectation(&f) - nu.expectation(&f)).abs()
}

fn check_same_geometry(a: &FiniteMdp, b: &FiniteMdp) -> Result<(), MetricError> {
    if a.coords != b.coords {
        return Err(MetricError::ShapeMismatch("models have different state coordinates".into()));
    }
    if a.action_coords != b.action_coords {
        return Err(MetricError::ShapeMismatch("models have different action sets".into()));
    }
    Ok(())
}

/// Sorted-by-coordinate state order for 1-D models, shared by the kernel
/// metrics below so per-row work is linear.
fn sorted_order_1d(coords: &Array2<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..coords.nrows()).collect();
    idx.sort_by(|&i, &j| coords[[i, 0]].total_cmp(&coords[[j, 0]]));
    idx
}

/// W1 between two weight rows over the same 1-D coordinates, given the
/// precomputed sorted order.
fn w1_rows_1d(coords: &Array2<f64>, order: &[usize], a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut total = 0.0;
    let mut diff = 0.0f64;
    let mut prev_x = coords[[order[0], 0]];
    for &s in order {
        let x = coords[[s, 0]];
        total += diff.abs() * (x - prev_x);
        diff += a[s] - b[s];
        prev_x = x;
    }
    total
}

/// d_{W1}(T, S) = max over (x, u) of W1 between next-state distributions.
/// The models must share coordinates and actions.
pub fn kernel_w1(a: &FiniteMdp, b: &FiniteMdp) -> Result<f64, MetricError> {
    check_same_geometry(a, b)?;
    let n = a.n_states();
    let m = a.n_actions();
    if a.coords.ncols() == 1 {
        let order = sorted_order_1d(&a.coords);
        let worst = (0..n * m)
            .into_par_iter()
            .map(|k| {
                let (x, u) = (k / m, k % m);
                w1_rows_1d(&a.coords, &order, a.kernel_row(x, u), b.kernel_row(x, u))
            })
            .reduce(|| 0.0, f64::max);
        return Ok(worst);
    }
    let mut worst = 0.0f64;
    for x in 0..n {
        for u in 0..m {
            let mu = DiscreteMeasure::from_state_weights(&a.coords, a.kernel_row(x, u).as_slice().unwrap())?;
            let nu = DiscreteMeasure::from_state_weights(&b.coords, b.kernel_row(x, u).as_slice().unwrap())?;
            worst = worst.max(w1_exact(&mu, &nu)?);
        }
    }
    Ok(worst)
}

/// Sup-norm gap between the cost tables of two models on the same grid.
pub fn cost_gap(a: &FiniteMdp, b: &FiniteMdp) -> Result<f64, MetricError> {
    check_same_geometry(a, b)?;
    let gap = a
        .cost
        .iter()
        .zip(b.cost.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    Ok(gap)
}

/// d_f(T, S) = max over (x, u) of |Σ_y f(y) (T - S)(y|x,u)| for a per-state
/// value vector f.
pub fn kernel_d_f(a: &FiniteMdp, b: &FiniteMdp, f: &[f64]) -> Result<f64, MetricError> {
    check_same_geometry(a, b)?;
    let n = a.n_states();
    if f.len() != n {
        return Err(MetricError::ShapeMismatch(format!("{} values for {} states", f.len(), n)));
    }
    let mut worst = 0.0f64;
    for x in 0..n {
        for u in 0..a.n_actions() {
            let gap: f64 = a
                .kernel_row(x, u)
                .iter()
                .zip(b.kernel_row(x, u).iter())
                .zip(f.iter())
                .map(|((p, q), v)| (p - q) * v)
                .sum();
            worst = worst.max(gap.abs());
        }
    }
    Ok(worst)
}

/// Exact Lipschitz constant of a per-state value vector over the coordinate
/// set: max |f(x)-f(y)| / d(x,y). Duplicate coordinates with different values
/// make it infinite, reported as an error.
pub fn lipschitz_constant(f: &[f64], coords: &Array2<f64>) -> Result<f64, MetricError> {
    let n = coords.nrows();
    if f.len() != n {
        return Err(MetricError::ShapeMismatch(format!("{} values for {} states", f.len(), n)));
    }
    let mut best = 0.0f64;
    let mut seen_positive_distance = false;
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(coords.row(i), coords.row(j));
            if d == 0.0 {
                if f[i] != f[j] {
                    return Err(MetricError::InfiniteLipschitz(i, j));
                }
                continue;
            }
            seen_positive_distance = true;
            best = best.max((f[i] - f[j]).abs() / d);
        }
    }
    if !seen_positive_distance {
        return Err(MetricError::ShapeMismatch("need at least 2 distinct coordinates".into()));
    }
    Ok(best)
}

/// ||T||_Lip: max over actions and state pairs of
/// W1(T(.|x,u), T(.|y,u)) / d(x,y).
pub fn kernel_lipschitz_in_state(model: &FiniteMdp) -> Result<f64, MetricError> {
    let n = model.n_states();
    if n < 2 {
        return Err(MetricError::ShapeMismatch("need at least 2 states".into()));
    }
    let one_d = model.coords.ncols() == 1;
    let order = if one_d { sorted_order_1d(&model.coords) } else { Vec::new() };
    let mut best = 0.0f64;
    let mut seen_positive_distance = false;
    for u in 0..model.n_actions() {
        let per_x: Vec<Result<(f64, bool), MetricError>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut local = 0.0f64;
                let mut seen = false;
                for j in i + 1..n {
                    let d = model.state_distance(i, j);
                    let w1 = if one_d {
                        w1_rows_1d(&model.coords, &order, model.kernel_row(i, u), model.kernel_row(j, u))
                    } else {
                        let mu = DiscreteMeasure::from_state_weights(
                            &model.coords,
                            model.kernel_row(i, u).as_slice().unwrap(),
                        )?;
                        let nu = DiscreteMeasure::from_state_weights(
                            &model.coords,
                            model.kernel_row(j, u).as_slice().unwrap(),
                        )?;
                        w1_exact(&mu, &nu)?
                    };
                    if d == 0.0 {
                        if w1 > 0.0 {
                            return Err(MetricError::InfiniteLipschitz(i, j));
                        }
                        continue;
                    }
                    seen = true;
                    local = local.max(w1 / d);
                }
                Ok((local, seen))
            })
            .collect();
        for r in per_x {
            let (local, seen) = r?;
            best = best.max(local);
            seen_positive_distance |= seen;
        }
    }
    if !seen_positive_distance {
        return Err(MetricError::ShapeMismatch("need at least 2 distinct coordinates".into()));
    }
    Ok(best)
}
