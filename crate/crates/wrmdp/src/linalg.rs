//! Dense LU solves for the small linear systems that appear in policy
//! evaluation, stationary distributions, and least squares. Systems stay at a
//! few thousand unknowns, so plain Gaussian elimination with partial pivoting
//! is adequate; no external linear-algebra backend needed.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("matrix is singular to working precision (pivot {pivot:.3e} at column {col})")]
pub struct SingularMatrix {
    pub pivot: f64,
    pub col: usize,
}

/// LU factorization with partial pivoting, kept so multiple right-hand sides
/// (and iterative-refinement passes) reuse the elimination.
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Array2<f64>) -> Result<Self, SingularMatrix> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[[k, k]].abs();
            for i in k + 1..n {
                let v = lu[[i, k]].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(SingularMatrix { pivot: best, col: k });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[[k, j]];
                    lu[[k, j]] = lu[[p, j]];
                    lu[[p, j]] = tmp;
                }
            }
            let piv = lu[[k, k]];
            for i in k + 1..n {
                let m = lu[[i, k]] / piv;
                lu[[i, k]] = m;
                for j in k + 1..n {
                    lu[[i, j]] -= m * lu[[k, j]];
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.perm.len();
        assert_eq!(b.len(), n);
        let mut x = Array1::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }
}

/// Solve A x = b, then run up to two iterative-refinement passes. Refinement
/// costs one extra back-substitution each and pushes the residual back to
/// machine level when the first solve drifts.
pub fn solve_refined(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, SingularMatrix> {
    let lu = Lu::factor(a)?;
    let mut x = lu.solve(b);
    for _ in 0..2 {
        let r = b - &a.dot(&x);
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xn = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rn <= f64::EPSILON * xn.max(1.0) {
            break;
        }
        x = &x + &lu.solve(&r);
    }
    Ok(x)
}

/// Max-norm of the residual b - A x.
pub fn residual_inf(a: &Array2<f64>, x: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (b - &a.dot(x)).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
