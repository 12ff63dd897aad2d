//! Seeded instance generators shared by tests and the experiment harness.
//!
//! The regular-grid family is built so its regularity constants are known
//! exactly from the construction instead of estimated: kernels move mass by a
//! clamped affine map interpolated onto the two neighboring grid points (on a
//! uniform 1-D grid that interpolation is W1-exact, so ||T||_Lip equals
//! (1-eps)*max|a_u|), and costs are scaled distance kinks with known slope.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::FiniteMdp;

/// Scales a slice to sum exactly to 1 by dumping the float residue on the
/// largest entry, which keeps every entry nonnegative.
pub fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    assert!(sum > 0.0, "cannot normalize a zero row");
    row.iter_mut().for_each(|p| *p /= sum);
    let s: f64 = row.iter().sum();
    let imax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    row[imax] += 1.0 - s;
}

/// Uniform 1-D grid on [0, 1] as a coordinate column; a single point sits at
/// the origin.
pub fn unit_grid(n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, 1));
    for i in 0..n {
        c[[i, 0]] = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
    }
    c
}

/// Dense random MDP on a uniform 1-D grid: i.i.d. uniform kernel rows
/// (normalized) and uniform costs in [0, 1]. No structure guaranteed.
pub fn random_mdp(n: usize, m: usize, seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    for x in 0..n {
        for u in 0..m {
            let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            normalize_row(&mut row);
            for (y, p) in row.iter().enumerate() {
                kernel[[x, u, y]] = *p;
            }
            cost[[x, u]] = rng.random::<f64>();
        }
    }
    FiniteMdp::new(unit_grid(n), unit_grid(m.max(1)), kernel, cost).unwrap()
}

/// A model together with an explicit minorization certificate
/// T(.|x,u) >= eps * rho.
#[derive(Debug, Clone)]
pub struct MinorizedInstance {
    pub model: FiniteMdp,
    pub eps: f64,
    pub rho: Vec<f64>,
}

/// Random model whose rows are (1-eps) * random + eps * rho, with rho either
/// uniform or itself sampled. Minorization holds by construction.
pub fn random_minorized_mdp(n: usize, m: usize, eps: f64, seed: u64) -> MinorizedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = vec![1.0 / n as f64; n];
    mix_into_instance(n, m, eps, rho, &mut rng)
}

/// Same construction with a randomized (strictly positive) minorizer measure.
pub fn random_minorized_mdp_rand_rho(n: usize, m: usize, eps: f64, seed: u64) -> MinorizedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.2).collect();
    normalize_row(&mut rho);
    mix_into_instance(n, m, eps, rho, &mut rng)
}

/// Same construction around a caller-chosen minorizer measure.
pub fn random_minorized_mdp_given_rho(n: usize, m: usize, eps: f64, rho: &[f64], seed: u64) -> MinorizedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mix_into_instance(n, m, eps, rho.to_vec(), &mut rng)
}

fn mix_into_instance(n: usize, m: usize, eps: f64, rho: Vec<f64>, rng: &mut ChaCha8Rng) -> MinorizedInstance {
    assert!((0.0..=1.0).contains(&eps));
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    for x in 0..n {
        for u in 0..m {
            let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            normalize_row(&mut row);
            let mut mixed: Vec<f64> = (0..n).map(|y| (1.0 - eps) * row[y] + eps * rho[y]).collect();
            normalize_row(&mut mixed);
            for (y, p) in mixed.iter().enumerate() {
                kernel[[x, u, y]] = *p;
            }
            cost[[x, u]] = rng.random::<f64>();
        }
    }
    let model = FiniteMdp::new(unit_grid(n), unit_grid(m.max(1)), kernel, cost).unwrap();
    MinorizedInstance { model, eps, rho }
}

/// Wasserstein-regular grid instance with constants pinned by construction.
#[derive(Debug, Clone)]
pub struct RegularInstance {
    pub model: FiniteMdp,
    /// Upper bound on ||c||_Lip (the cost is built as lip_c * (1-Lipschitz shape) + offset).
    pub lip_c: f64,
    /// Exact ||T||_Lip = (1 - eps) * max_u |a_u| for the interpolated affine kernel.
    pub lip_t: f64,
    /// Uniform-mixture minorization constant; rho is uniform over the grid.
    pub eps: f64,
    /// Affine map slope per action (state coefficient).
    pub slopes: Vec<f64>,
    /// Affine map offset per action.
    pub offsets: Vec<f64>,
}

impl RegularInstance {
    pub fn rho(&self) -> Vec<f64> {
        vec![1.0 / self.model.n_states() as f64; self.model.n_states()]
    }
}

/// Interpolates the point `y` in [0, 1] onto the two neighboring points of
/// the uniform n-grid, preserving the mean. Returns (lower index, upper
/// weight); mass 1-frac goes to `lo`, frac to `lo+1`.
pub fn interp_unit_grid(y: f64, n: usize) -> (usize, f64) {
    let pos = y.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = (pos.floor() as usize).min(n - 2);
    (lo, pos - lo as f64)
}

/// Builds a random regular grid MDP: kernel rows are
/// (1-eps) * interp(a_u x + b_u) + eps * uniform with the affine image kept
/// inside [0, 1] (so no clamping distorts the Lipschitz constant), and costs
/// c(x, u) = lip_c * |x - p_u| + d_u.
pub fn random_regular_grid(
    n: usize,
    m: usize,
    eps: f64,
    max_slope: f64,
    lip_c: f64,
    seed: u64,
) -> RegularInstance {
    assert!(n >= 2 && max_slope < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    let mut kinks = Vec::with_capacity(m);
    let mut cost_offsets = Vec::with_capacity(m);
    for _ in 0..m {
        let a = (rng.random::<f64>() * 2.0 - 1.0) * max_slope;
        // keep a*x + b inside [0, 1] for x in [0, 1]
        let (blo, bhi) = if a >= 0.0 { (0.0, 1.0 - a) } else { (-a, 1.0) };
        let b = blo + rng.random::<f64>() * (bhi - blo);
        slopes.push(a);
        offsets.push(b);
        kinks.push(rng.random::<f64>());
        cost_offsets.push(rng.random::<f64>() * 0.5);
    }
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    let coords = unit_grid(n);
    for x in 0..n {
        let xc = coords[[x, 0]];
        for u in 0..m {
            let y = slopes[u] * xc + offsets[u];
            let (lo, frac) = interp_unit_grid(y, n);
            let mut row = vec![eps / n as f64; n];
            row[lo] += (1.0 - eps) * (1.0 - frac);
            row[lo + 1] += (1.0 - eps) * frac;
            normalize_row(&mut row);
            for (yi, p) in row.iter().enumerate() {
                kernel[[x, u, yi]] = *p;
            }
            cost[[x, u]] = lip_c * (xc - kinks[u]).abs() + cost_offsets[u];
        }
    }
    let lip_t = (1.0 - eps) * slopes.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
    let model = FiniteMdp::new(coords, unit_grid(m.max(1)), kernel, cost).unwrap();
    RegularInstance { model, lip_c, lip_t, eps, slopes, offsets }
}

/// Perturbs costs and kernel rows of a model by about `scale`: costs get
/// uniform shifts clamped at 0, rows get clamped additive noise and are
/// renormalized. No structural guarantee survives beyond validity.
pub fn perturb_mdp(model: &FiniteMdp, cost_scale: f64, kernel_scale: f64, seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_states();
    let m = model.n_actions();
    let mut kernel = model.kernel.clone();
    let mut cost = model.cost.clone();
    for x in 0..n {
        for u in 0..m {
            cost[[x, u]] = (cost[[x, u]] + (rng.random::<f64>() * 2.0 - 1.0) * cost_scale).max(0.0);
            let mut row: Vec<f64> = (0..n)
                .map(|y| (kernel[[x, u, y]] + (rng.random::<f64>() * 2.0 - 1.0) * kernel_scale).max(0.0))
                .collect();
            normalize_row(&mut row);
            for (y, p) in row.iter().enumerate() {
                kernel[[x, u, y]] = *p;
            }
        }
    }
    FiniteMdp::new(model.coords.clone(), model.action_coords.clone(), kernel, cost).unwrap()
}

/// Convex combination (1-lambda) a + lambda b of costs and kernel rows of two
/// models on the same grid. Mixing two eps-minorized models yields an
/// eps-minorized model with the equally mixed minorizer.
pub fn mix_models(a: &FiniteMdp, b: &FiniteMdp, lambda: f64) -> FiniteMdp {
    assert!((0.0..=1.0).contains(&lambda));
    assert_eq!(a.coords, b.coords, "mixed models must share a state grid");
    assert_eq!(a.action_coords, b.action_coords, "mixed models must share actions");
    let n = a.n_states();
    let m = a.n_actions();
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    for x in 0..n {
        for u in 0..m {
            cost[[x, u]] = (1.0 - lambda) * a.cost[[x, u]] + lambda * b.cost[[x, u]];
            let mut row: Vec<f64> = (0..n)
                .map(|y| (1.0 - lambda) * a.kernel[[x, u, y]] + lambda * b.kernel[[x, u, y]])
                .collect();
            normalize_row(&mut row);
            for (y, p) in row.iter().enumerate() {
                kernel[[x, u, y]] = *p;
            }
        }
    }
    FiniteMdp::new(a.coords.clone(), a.action_coords.clone(), kernel, cost).unwrap()
}

/// Fine environment that is exactly aggregable under `partition`: costs and
/// bin-to-bin transition masses depend on the state only through its bin, and
/// mass lands uniformly inside each target bin. The induced bin model is then
/// an exact reduction, so a policy learned from a perfect bin model deploys
/// with zero loss; what remains is pure estimation error, which is what the
/// learning-rate experiments need to isolate.
///
/// The hidden bin model is a random eps-minorized MDP, which makes the fine
/// environment minorized by eps times the returned measure (uniform inside
/// bins, 1/bins across bins).
pub fn aggregable_minorized_env(
    partition: &crate::quantize::Partition,
    coords: &Array2<f64>,
    m: usize,
    eps: f64,
    seed: u64,
) -> MinorizedInstance {
    let hidden = random_minorized_mdp(partition.n_bins(), m, eps, seed);
    lift_aggregable(&hidden, partition, coords)
}

/// Lifts a bin-level model onto a fine grid: each fine state inherits its
/// bin's costs and rows, with transition mass spread uniformly inside each
/// target bin. The lifted model reduces exactly back to the hidden one.
pub fn lift_aggregable(
    hidden: &MinorizedInstance,
    partition: &crate::quantize::Partition,
    coords: &Array2<f64>,
) -> MinorizedInstance {
    let n = coords.nrows();
    let bins = partition.n_bins();
    assert!(partition.assignment.len() == n, "partition must cover the grid");
    assert!(hidden.model.n_states() == bins, "hidden model must live on the bins");
    let m = hidden.model.n_actions();
    let eps = hidden.eps;
    let mut kernel = Array3::zeros((n, m, n));
    let mut cost = Array2::zeros((n, m));
    for x in 0..n {
        let i = partition.assignment[x];
        for u in 0..m {
            cost[[x, u]] = hidden.model.cost[[i, u]];
            let mut row = vec![0.0; n];
            for (j, members) in partition.bins.iter().enumerate() {
                let share = hidden.model.kernel[[i, u, j]] / members.len() as f64;
                for y in members {
                    row[*y] = share;
                }
            }
            normalize_row(&mut row);
            for (y, p) in row.iter().enumerate() {
                kernel[[x, u, y]] = *p;
            }
        }
    }
    let mut rho = vec![0.0; n];
    for members in &partition.bins {
        for y in members {
            rho[*y] = 1.0 / (bins as f64 * members.len() as f64);
        }
    }
    normalize_row(&mut rho);
    let model =
        FiniteMdp::new(coords.clone(), unit_grid(m.max(1)), kernel, cost).unwrap();
    MinorizedInstance { model, eps, rho }
}

/// Aggregable environment whose action gaps live on a random scale drawn
/// log-uniformly from 10^-hi .. 10^-lo per seed: actions share a common
/// kernel row and base cost per bin, separated only by gap-sized offsets.
/// A fixed-gap family makes mean regret collapse once samples resolve the
/// gaps; spreading gap scales across seeds keeps the seed-averaged regret on
/// the statistical estimation rate across the whole sample range.
pub fn learning_rate_env(
    partition: &crate::quantize::Partition,
    coords: &Array2<f64>,
    m: usize,
    eps: f64,
    gap_exponents: (f64, f64),
    seed: u64,
) -> MinorizedInstance {
    let bins = partition.n_bins();
    let (lo, hi) = gap_exponents;
    assert!(0.0 <= lo && lo <= hi, "exponents must satisfy 0 <= lo <= hi");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = 10f64.powf(-(lo + rng.random::<f64>() * (hi - lo)));
    let minorized_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut row: Vec<f64> = (0..bins).map(|_| rng.random::<f64>() + 1e-3).collect();
        normalize_row(&mut row);
        row.iter().map(|p| (1.0 - eps) * p + eps / bins as f64).collect()
    };
    let mut kernel = Array3::zeros((bins, m, bins));
    let mut cost = Array2::zeros((bins, m));
    for j in 0..bins {
        let common = minorized_row(&mut rng);
        let base: f64 = rng.random();
        for u in 0..m {
            let own = minorized_row(&mut rng);
            let mut row: Vec<f64> =
                (0..bins).map(|y| (1.0 - gap) * common[y] + gap * own[y]).collect();
            normalize_row(&mut row);
            for (y, p) in row.iter().enumerate() {
                kernel[[j, u, y]] = *p;
            }
            cost[[j, u]] = base + gap * rng.random::<f64>();
        }
    }
    let hidden = MinorizedInstance {
        model: FiniteMdp::new(unit_grid(bins), unit_grid(m.max(1)), kernel, cost).unwrap(),
        eps,
        rho: vec![1.0 / bins as f64; bins],
    };
    lift_aggregable(&hidden, partition, coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn generators_produce_valid_models() {
        assert!(random_mdp(6, 3, 0).validate().is_empty());
        assert!(random_minorized_mdp(5, 2, 0.3, 1).model.validate().is_empty());
        assert!(random_regular_grid(16, 2, 0.1, 0.8, 1.0, 2).model.validate().is_empty());
    }

    #[test]
    fn minorized_instance_certificate_holds() {
        let inst = random_minorized_mdp_rand_rho(7, 3, 0.25, 5);
        for x in 0..7 {
            for u in 0..3 {
                for y in 0..7 {
                    assert!(inst.model.kernel[[x, u, y]] >= inst.eps * inst.rho[y] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn regular_grid_kernel_lipschitz_matches_declared() {
        let inst = random_regular_grid(24, 3, 0.15, 0.8, 2.0, 9);
        let measured = metrics::kernel_lipschitz_in_state(&inst.model).unwrap();
        assert!(
            (measured - inst.lip_t).abs() < 1e-9,
            "declared {} vs measured {measured}",
            inst.lip_t
        );
        let mut worst_cost_lip = 0.0f64;
        for u in 0..3 {
            let f: Vec<f64> = (0..24).map(|x| inst.model.cost[[x, u]]).collect();
            worst_cost_lip =
                worst_cost_lip.max(metrics::lipschitz_constant(&f, &inst.model.coords).unwrap());
        }
        assert!(worst_cost_lip <= inst.lip_c + 1e-12);
    }

    #[test]
    fn perturbation_preserves_validity_and_scales() {
        let base = random_mdp(8, 2, 3);
        let p = perturb_mdp(&base, 0.1, 0.05, 4);
        assert!(p.validate().is_empty());
        let dc = base
            .cost
            .iter()
            .zip(p.cost.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(dc > 0.0 && dc <= 0.1 + 1e-12);
    }

    #[test]
    fn mixing_minorized_models_keeps_mixed_certificate() {
        let eps = 0.3;
        let a = random_minorized_mdp_rand_rho(6, 2, eps, 11);
        let b = random_minorized_mdp_rand_rho(6, 2, eps, 12);
        let lambda = 0.25;
        let mixed = mix_models(&a.model, &b.model, lambda);
        assert!(mixed.validate().is_empty());
        let tau: Vec<f64> = (0..6)
            .map(|y| (1.0 - lambda) * a.rho[y] + lambda * b.rho[y])
            .collect();
        for x in 0..6 {
            for u in 0..2 {
                for y in 0..6 {
                    assert!(mixed.kernel[[x, u, y]] >= eps * tau[y] - 1e-9);
                }
            }
        }
        // endpoints reproduce the inputs
        let at_zero = mix_models(&a.model, &b.model, 0.0);
        assert!(at_zero
            .kernel
            .iter()
            .zip(a.model.kernel.iter())
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn aggregable_env_is_bin_constant_and_minorized() {
        let n = 32;
        let coords = unit_grid(n);
        let p = crate::quantize::uniform_partition(&coords, 4).unwrap();
        let inst = aggregable_minorized_env(&p, &coords, 2, 0.3, 21);
        assert!(inst.model.validate().is_empty());
        for x in 0..n {
            for u in 0..2 {
                for y in 0..n {
                    assert!(inst.model.kernel[[x, u, y]] >= inst.eps * inst.rho[y] - 1e-12);
                }
            }
        }
        // any two states in the same bin share cost rows and kernel rows
        for bin in &p.bins {
            let x0 = bin[0];
            for x in bin {
                for u in 0..2 {
                    assert_eq!(inst.model.cost[[*x, u]], inst.model.cost[[x0, u]]);
                    for y in 0..n {
                        assert!(
                            (inst.model.kernel[[*x, u, y]] - inst.model.kernel[[x0, u, y]]).abs()
                                < 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn aggregable_env_has_zero_reduction_loss() {
        let n = 32;
        let coords = unit_grid(n);
        let p = crate::quantize::uniform_partition(&coords, 4).unwrap();
        let inst = aggregable_minorized_env(&p, &coords, 2, 0.3, 33);
        let coarse = crate::quantize::build_quantized_model(&inst.model, &p, None).unwrap();
        let out = crate::learn::learned_policy_loss(
            &inst.model,
            &coarse.model,
            &p,
            crate::learn::Criterion::Discounted { beta: 0.9 },
        )
        .unwrap();
        assert!(out.loss < 1e-7, "exact reduction should deploy optimally, loss {}", out.loss);
    }
}
