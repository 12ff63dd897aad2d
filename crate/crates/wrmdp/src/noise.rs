//! Disturbance-driven dynamics x' = f(x, u, w) on a 1-D grid: building
//! kernels as snapped pushforwards of a noise distribution, estimating the
//! noise from data (with the drift either known or fitted by least squares),
//! and measuring the control loss caused by the approximation.
//!
//! Continuous images are projected to the nearest grid state, so every bound
//! comparison against a continuum formula carries an explicit grid-slack term
//! derived from the largest grid gap.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::learn::Criterion;
use crate::mdp::{FiniteMdp, ModelError};
use crate::metrics::{self, DiscreteMeasure, MetricError};
use crate::solve::{self, SolveError};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("image {image} of (state {x}, action {u}) escapes the grid span [{lo}, {hi}]")]
    ImageEscapesGrid { x: usize, u: usize, image: f64, lo: f64, hi: f64 },
    #[error("design matrix is singular or not identifiable: {0}")]
    SingularDesign(String),
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Drift rule r(x, u); the next state is clamp(r + w).
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// r(x, u) = alpha * x + theta * u.
    Affine { alpha: f64, theta: f64 },
    /// r tabulated per (state, action) index pair.
    Tabulated { drift: Array2<f64> },
}

/// Additive-noise system with declared Lipschitz constants and a clamping
/// domain. Clamping keeps images in the domain without enlarging any of the
/// constants.
#[derive(Debug, Clone)]
pub struct DisturbanceSystem {
    pub dynamics: Dynamics,
    /// Lipschitz constant of f in the state, uniformly over (u, w).
    pub lip_x: f64,
    /// Lipschitz constant of f in (state, action) jointly.
    pub lip_xu: f64,
    /// Lipschitz constant of f in the noise point; 1 for additive forms.
    pub lip_w: f64,
    /// Closed interval images are clamped to.
    pub domain: (f64, f64),
}

impl DisturbanceSystem {
    pub fn affine(alpha: f64, theta: f64, domain: (f64, f64)) -> Self {
        DisturbanceSystem {
            dynamics: Dynamics::Affine { alpha, theta },
            lip_x: alpha.abs(),
            lip_xu: alpha.abs() + theta.abs(),
            lip_w: 1.0,
            domain,
        }
    }

    /// Tabulated drift with the state constant measured from the table over
    /// the supplied coordinates.
    pub fn tabulated(drift: Array2<f64>, coords: &Array2<f64>, domain: (f64, f64)) -> Result<Self, NoiseError> {
        let (n, m) = drift.dim();
        if coords.nrows() != n {
            return Err(NoiseError::BadInput(format!(
                "drift table has {n} states, coords have {}",
                coords.nrows()
            )));
        }
        let mut lip_x = 0.0f64;
        for u in 0..m {
            let col: Vec<f64> = (0..n).map(|x| drift[[x, u]]).collect();
            lip_x = lip_x.max(metrics::lipschitz_constant(&col, coords).map_err(NoiseError::Metric)?);
        }
        Ok(DisturbanceSystem { dynamics: Dynamics::Tabulated { drift }, lip_x, lip_xu: lip_x, lip_w: 1.0, domain })
    }

    fn drift(&self, x_idx: usize, x_coord: f64, u_idx: usize, u_coord: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Affine { alpha, theta } => alpha * x_coord + theta * u_coord,
            Dynamics::Tabulated { drift } => drift[[x_idx, u_idx]],
        }
    }

    /// Next state coordinate before snapping.
    pub fn step(&self, x_idx: usize, x_coord: f64, u_idx: usize, u_coord: f64, w: f64) -> f64 {
        (self.drift(x_idx, x_coord, u_idx, u_coord) + w).clamp(self.domain.0, self.domain.1)
    }
}

/// Largest gap between adjacent grid coordinates (1-D).
pub fn max_grid_gap(coords: &Array2<f64>) -> f64 {
    let mut pts: Vec<f64> = coords.column(0).to_vec();
    pts.sort_by(f64::total_cmp);
    pts.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max)
}

struct Snapper {
    /// (coordinate, original index), ascending by coordinate then index.
    sorted: Vec<(f64, usize)>,
}

impl Snapper {
    fn new(coords: &Array2<f64>) -> Self {
        let mut sorted: Vec<(f64, usize)> = coords.column(0).iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Snapper { sorted }
    }

    /// Nearest grid state; exact distance ties go to the lower original index.
    fn snap(&self, y: f64) -> usize {
        let pos = self.sorted.partition_point(|(c, _)| *c < y);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for cand in [pos.wrapping_sub(1), pos] {
            if let Some(&(c, idx)) = self.sorted.get(cand) {
                let d = (y - c).abs();
                if d < best_d || (d == best_d && idx < best) {
                    best_d = d;
                    best = idx;
                }
            }
        }
        best
    }
}

/// Pushes the noise measure through the dynamics at every (state, action) and
/// snaps each image to the nearest grid state. Fails if a clamped image still
/// falls outside the grid span by more than one grid gap.
pub fn kernel_from_noise(
    sys: &DisturbanceSystem,
    mu: &DiscreteMeasure,
    coords: &Array2<f64>,
    action_coords: &Array2<f64>,
) -> Result<Array3<f64>, NoiseError> {
    if coords.ncols() != 1 || mu.dim() != 1 {
        return Err(NoiseError::BadInput("noise-driven kernels are 1-D only".into()));
    }
    let n = coords.nrows();
    let m = action_coords.nrows();
    let snapper = Snapper::new(coords);
    let lo = snapper.sorted.first().unwrap().0;
    let hi = snapper.sorted.last().unwrap().0;
    let slack = max_grid_gap(coords);
    let mut kernel = Array3::zeros((n, m, n));
    for x in 0..n {
        let xc = coords[[x, 0]];
        for u in 0..m {
            let uc = action_coords[[u, 0]];
            for (k, w) in mu.support.column(0).iter().enumerate() {
                let y = sys.step(x, xc, u, uc, *w);
                if !y.is_finite() || y < lo - slack || y > hi + slack {
                    return Err(NoiseError::ImageEscapesGrid { x, u, image: y, lo, hi });
                }
                kernel[[x, u, snapper.snap(y)]] += mu.weights[k];
            }
            let mut row: Vec<f64> = (0..n).map(|j| kernel[[x, u, j]]).collect();
            crate::instances::normalize_row(&mut row);
            for (j, p) in row.iter().enumerate() {
                kernel[[x, u, j]] = *p;
            }
        }
    }
    Ok(kernel)
}

/// Convenience wrapper attaching a cost table to the snapped kernel.
pub fn model_from_noise(
    sys: &DisturbanceSystem,
    mu: &DiscreteMeasure,
    coords: &Array2<f64>,
    action_coords: &Array2<f64>,
    cost: &Array2<f64>,
) -> Result<FiniteMdp, NoiseError> {
    let kernel = kernel_from_noise(sys, mu, coords, action_coords)?;
    FiniteMdp::new(coords.clone(), action_coords.clone(), kernel, cost.clone()).map_err(NoiseError::Model)
}

/// Uniform empirical measure on observed noise points.
pub fn empirical_noise(samples: &[f64]) -> Result<DiscreteMeasure, NoiseError> {
    if samples.is_empty() {
        return Err(NoiseError::BadInput("empirical measure needs at least one sample".into()));
    }
    let w = vec![1.0 / samples.len() as f64; samples.len()];
    DiscreteMeasure::from_points_1d(samples, &w).map_err(NoiseError::Metric)
}

/// Observations Y = r(X, U) + W; the noise itself is never recorded.
#[derive(Debug, Clone)]
pub struct NoiseDataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl NoiseDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Reads scalar columns with the header Y,X,U.
    pub fn from_csv_path(path: &std::path::Path) -> Result<Self, NoiseError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expect = ["Y", "X", "U"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(NoiseError::BadInput(format!(
                "expected header Y,X,U got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut ds = NoiseDataset { y: Vec::new(), x: Vec::new(), u: Vec::new() };
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64, NoiseError> {
                record
                    .get(i)
                    .ok_or_else(|| NoiseError::BadInput("short csv record".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| NoiseError::BadInput(format!("bad number in csv: {e}")))
            };
            ds.y.push(parse(0)?);
            ds.x.push(parse(1)?);
            ds.u.push(parse(2)?);
        }
        if ds.is_empty() {
            return Err(NoiseError::BadInput("csv contained no observations".into()));
        }
        Ok(ds)
    }

    pub fn to_csv_path(&self, path: &std::path::Path) -> Result<(), NoiseError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["Y", "X", "U"])?;
        for i in 0..self.len() {
            writer.write_record(&[self.y[i].to_string(), self.x[i].to_string(), self.u[i].to_string()])?;
        }
        writer.flush().map_err(|e| NoiseError::BadInput(e.to_string()))?;
        Ok(())
    }
}

/// Draws (X, U) uniformly from their ranges, W from the noise measure, and
/// records Y = alpha X + theta U + W.
pub fn synthetic_affine_dataset(
    alpha: f64,
    theta: f64,
    noise: &DiscreteMeasure,
    x_range: (f64, f64),
    u_range: (f64, f64),
    n: usize,
    seed: u64,
) -> NoiseDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = NoiseDataset { y: Vec::with_capacity(n), x: Vec::with_capacity(n), u: Vec::with_capacity(n) };
    for _ in 0..n {
        let x = x_range.0 + rng.random::<f64>() * (x_range.1 - x_range.0);
        let u = u_range.0 + rng.random::<f64>() * (u_range.1 - u_range.0);
        let k = crate::mdp::sample_from_weights(&noise.weights, &mut rng);
        let w = noise.support[[k, 0]];
        ds.x.push(x);
        ds.u.push(u);
        ds.y.push(alpha * x + theta * u + w);
    }
    ds
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub alpha: f64,
    pub theta: f64,
    /// Y minus the fitted drift, one per observation.
    pub residuals: Vec<f64>,
    /// Condition number of the 2x2 normal-equation matrix.
    pub condition: f64,
}

/// Least squares of Y on (X, U) with no intercept column; any noise mean is
/// absorbed into the recovered noise distribution. A regressor with zero
/// variance is rejected: it is collinear with that absorbed mean, so its
/// coefficient is not identifiable.
pub fn fit_linear_r(data: &NoiseDataset) -> Result<LinearFit, NoiseError> {
    let n = data.len();
    if n < 2 {
        return Err(NoiseError::BadInput("need at least two observations".into()));
    }
    for (name, col) in [("X", &data.x), ("U", &data.u)] {
        let m = crate::stats::mean(col);
        if col.iter().all(|v| (*v - m).abs() < 1e-13) {
            return Err(NoiseError::SingularDesign(format!("column {name} is constant")));
        }
    }
    let sxx: f64 = data.x.iter().map(|v| v * v).sum();
    let suu: f64 = data.u.iter().map(|v| v * v).sum();
    let sxu: f64 = data.x.iter().zip(data.u.iter()).map(|(a, b)| a * b).sum();
    let sxy: f64 = data.x.iter().zip(data.y.iter()).map(|(a, b)| a * b).sum();
    let suy: f64 = data.u.iter().zip(data.y.iter()).map(|(a, b)| a * b).sum();
    let det = sxx * suu - sxu * sxu;
    let trace = sxx + suu;
    // eigenvalues of the symmetric 2x2 Gram matrix
    let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
    let lam_max = (trace + disc) / 2.0;
    let lam_min = (trace - disc) / 2.0;
    if lam_min <= lam_max * 1e-14 {
        return Err(NoiseError::SingularDesign(format!("condition number beyond 1e14 (det {det:.3e})")));
    }
    let alpha = (suu * sxy - sxu * suy) / det;
    let theta = (sxx * suy - sxu * sxy) / det;
    let residuals: Vec<f64> = (0..n)
        .map(|i| data.y[i] - alpha * data.x[i] - theta * data.u[i])
        .collect();
    Ok(LinearFit { alpha, theta, residuals, condition: lam_max / lam_min })
}

/// Uniform measure on the residuals of a drift estimate.
pub fn residual_noise_measure(data: &NoiseDataset, alpha: f64, theta: f64) -> Result<DiscreteMeasure, NoiseError> {
    let pts: Vec<f64> = (0..data.len())
        .map(|i| data.y[i] - alpha * data.x[i] - theta * data.u[i])
        .collect();
    empirical_noise(&pts)
}

/// How the true noise is being approximated in a loss evaluation.
pub enum NoiseApprox<'a> {
    /// Same dynamics, different noise measure.
    Measure(&'a DiscreteMeasure),
    /// Fitted affine drift plus a residual-based noise measure.
    Fitted { alpha: f64, theta: f64, measure: &'a DiscreteMeasure },
}

/// Everything a bound comparison needs alongside the measured loss.
#[derive(Debug, Clone)]
pub struct NoiseLossRecord {
    /// Optimality gap of the approximation-optimal policy on the true model.
    pub loss: f64,
    /// W1 distance between the true and approximating noise measures.
    pub w1_noise: f64,
    /// Largest discrepancy sup_{x,u} |integral of J* over (mu - nu) images|,
    /// evaluated through the snapped dynamics.
    pub d_f_tilde: f64,
    /// Measured Lipschitz constant of the optimal value (discounted) or
    /// relative value (average) on the true model.
    pub lip_value: f64,
    /// Largest grid gap; multiply by a Lipschitz factor for slack terms.
    pub max_gap: f64,
    /// Sup distance between fitted and true drift over the grid, when the
    /// drift was estimated.
    pub r_hat_gap: Option<f64>,
}

const INNER_TOL: f64 = 1e-10;

/// Builds the true model from (sys, mu) and the approximate model from the
/// supplied noise approximation, solves the approximate one, deploys its
/// policy on the truth, and reports the optimality gap with the measured
/// discrepancies that drive the bounds.
pub fn noise_policy_loss(
    sys: &DisturbanceSystem,
    mu: &DiscreteMeasure,
    approx: &NoiseApprox,
    coords: &Array2<f64>,
    action_coords: &Array2<f64>,
    cost: &Array2<f64>,
    criterion: Criterion,
) -> Result<NoiseLossRecord, NoiseError> {
    let env = model_from_noise(sys, mu, coords, action_coords, cost)?;
    let (approx_sys, nu) = match approx {
        NoiseApprox::Measure(nu) => (sys.clone(), *nu),
        NoiseApprox::Fitted { alpha, theta, measure } => {
            (DisturbanceSystem::affine(*alpha, *theta, sys.domain), *measure)
        }
    };
    let approx_model = model_from_noise(&approx_sys, nu, coords, action_coords, cost)?;
    let w1_noise = metrics::w1_1d(mu, nu)?;
    let max_gap = max_grid_gap(coords);
    let r_hat_gap = match approx {
        NoiseApprox::Fitted { alpha, theta, .. } => {
            let mut gap = 0.0f64;
            for x in 0..coords.nrows() {
                let xc = coords[[x, 0]];
                for u in 0..action_coords.nrows() {
                    let uc = action_coords[[u, 0]];
                    let fitted = alpha * xc + theta * uc;
                    gap = gap.max((sys.drift(x, xc, u, uc) - fitted).abs());
                }
            }
            Some(gap)
        }
        NoiseApprox::Measure(_) => None,
    };

    let n = coords.nrows();
    let m = action_coords.nrows();
    let snapper = Snapper::new(coords);
    // d_{f~}: for each (x,u), integrate the solved value through the snapped
    // dynamics against mu and nu and take the largest gap
    let d_f_tilde_with = |value: &ndarray::Array1<f64>| -> f64 {
        let mut worst = 0.0f64;
        for x in 0..n {
            let xc = coords[[x, 0]];
            for u in 0..m {
                let uc = action_coords[[u, 0]];
                let mut acc = 0.0;
                for (k, w) in mu.support.column(0).iter().enumerate() {
                    acc += mu.weights[k] * value[snapper.snap(sys.step(x, xc, u, uc, *w))];
                }
                for (k, w) in nu.support.column(0).iter().enumerate() {
                    acc -= nu.weights[k] * value[snapper.snap(sys.step(x, xc, u, uc, *w))];
                }
                worst = worst.max(acc.abs());
            }
        }
        worst
    };

    match criterion {
        Criterion::Discounted { beta } => {
            let truth = solve::solve_discounted(&env, beta, INNER_TOL)?;
            let approx_sol = solve::solve_discounted(&approx_model, beta, INNER_TOL)?;
            let deployed = solve::policy_evaluation_discounted(&env, &approx_sol.policy, beta)?;
            let loss = deployed
                .iter()
                .zip(truth.value.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let vals: Vec<f64> = truth.value.to_vec();
            let lip_value = metrics::lipschitz_constant(&vals, coords)?;
            Ok(NoiseLossRecord {
                loss,
                w1_noise,
                d_f_tilde: d_f_tilde_with(&truth.value),
                lip_value,
                max_gap,
                r_hat_gap,
            })
        }
        Criterion::Average => {
            let (eps, rho) = solve::find_minorizer(&env).ok_or_else(|| {
                NoiseError::BadInput("true noise kernel has no common minorizing mass".into())
            })?;
            let truth = solve::solve_acoe_minorization(&env, eps, &rho, INNER_TOL)?;
            let approx_policy = match solve::find_minorizer(&approx_model) {
                Some((ea, ra)) => solve::solve_acoe_minorization(&approx_model, ea, &ra, INNER_TOL)?.policy,
                None => solve::solve_discounted(&approx_model, 1.0 - 0.5f64.powi(10), INNER_TOL)?.policy,
            };
            let (g_dep, _) = solve::policy_evaluation_average(&env, &approx_policy, eps, &rho)?;
            let vals: Vec<f64> = truth.relative_value.to_vec();
            let lip_value = metrics::lipschitz_constant(&vals, coords)?;
            Ok(NoiseLossRecord {
                loss: (g_dep - truth.gain).abs(),
                w1_noise,
                d_f_tilde: d_f_tilde_with(&truth.relative_value),
                lip_value,
                max_gap,
                r_hat_gap,
            })
        }
    }
}
