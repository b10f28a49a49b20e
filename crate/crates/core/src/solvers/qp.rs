use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SolverError;

const MAX_ITERATIONS: usize = 10_000;
/// Projected-gradient iterations before the active-set finish is attempted.
const WARMUP_ITERATIONS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Free,
    NonNegative,
}

/// `min ½zᵀHz + gᵀz` subject to per-coordinate bounds (`z_i ≥ 0` or free).
#[derive(Debug, Clone)]
pub struct ConvexQp {
    h: DMatrix<f64>,
    g: DVector<f64>,
    bounds: Vec<Bound>,
}

impl ConvexQp {
    /// Validates shape, symmetry (relative `1e-12`) and positive
    /// semidefiniteness (`λ_min(H + 1e-10·I) ≥ -1e-9`). `H` is stored
    /// symmetrized.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, bounds: Vec<Bound>) -> Result<Self, SolverError> {
        let n = g.len();
        if n == 0 {
            return Err(SolverError::Empty);
        }
        if h.nrows() != n || h.ncols() != n {
            return Err(SolverError::DimensionMismatch {
                what: "QP Hessian vs linear term",
                expected: n,
                got: h.nrows(),
            });
        }
        if bounds.len() != n {
            return Err(SolverError::DimensionMismatch {
                what: "QP bounds",
                expected: n,
                got: bounds.len(),
            });
        }
        if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        let scale = h.amax().max(1.0);
        let asymmetry = (&h - h.transpose()).amax();
        if asymmetry > 1e-12 * scale {
            return Err(SolverError::NotSymmetric { asymmetry });
        }
        let h = (&h + h.transpose()) * 0.5;
        let shifted = &h + DMatrix::identity(n, n) * 1e-10;
        let min_eigenvalue = SymmetricEigen::new(shifted).eigenvalues.min();
        if min_eigenvalue < -1e-9 * scale {
            return Err(SolverError::NotPositiveSemidefinite { min_eigenvalue });
        }
        Ok(Self { h, g, bounds })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.g
    }

    pub fn project(&self, z: &mut DVector<f64>) {
        for (v, b) in z.iter_mut().zip(&self.bounds) {
            if *b == Bound::NonNegative && *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn is_feasible(&self, z: &DVector<f64>) -> bool {
        z.iter()
            .zip(&self.bounds)
            .all(|(v, b)| *b == Bound::Free || *v >= 0.0)
    }

    /// `‖z − P(z − ∇f(z))‖∞`, zero exactly at a KKT point.
    pub fn kkt_residual(&self, z: &DVector<f64>) -> f64 {
        let grad = self.gradient(z);
        let mut stepped = z - &grad;
        self.project(&mut stepped);
        (z - stepped).amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Solve a bound-constrained convex QP to projected-gradient residual `tol`
/// (or to termination of the active-set finish).
///
/// A restarted accelerated projected gradient method provides the starting
/// point; a primal active-set method then finishes the solve exactly when the
/// free-variable Hessian is nonsingular. If neither reaches `tol` within
/// 10 000 iterations the best iterate is returned with
/// [`QpStatus::MaxIterations`].
pub fn solve_convex_qp(p: &ConvexQp, tol: f64) -> QpSolution {
    let n = p.dim();
    let lipschitz = SymmetricEigen::new(p.h.clone()).eigenvalues.max().max(1e-300);
    let step = 1.0 / lipschitz;

    let mut z = DVector::zeros(n);
    let mut prev = z.clone();
    let mut momentum = 1.0_f64;
    let mut iterations = 0;
    let mut best = z.clone();
    let mut best_res = p.kkt_residual(&z);
    if best_res <= tol {
        return QpSolution {
            z,
            status: QpStatus::Converged,
            iterations,
            kkt_residual: best_res,
        };
    }
    let mut polish_tried = false;

    while iterations < MAX_ITERATIONS {
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        let y = &z + (&z - &prev) * beta;
        let grad = p.gradient(&y);
        let mut candidate = &y - &grad * step;
        p.project(&mut candidate);
        // Gradient-based adaptive restart.
        if grad.dot(&(&candidate - &z)) > 0.0 {
            momentum = 1.0;
        } else {
            momentum = next_momentum;
        }
        prev = std::mem::replace(&mut z, candidate);
        iterations += 1;

        let res = p.kkt_residual(&z);
        if res < best_res {
            best_res = res;
            best = z.clone();
        }
        if best_res <= tol {
            break;
        }
        if !polish_tried && iterations >= WARMUP_ITERATIONS.min(MAX_ITERATIONS) {
            polish_tried = true;
            // A terminated active-set pass is a KKT point up to the rounding
            // of one reduced solve, which can exceed `tol` when H is large.
            if let Some((zp, extra)) = active_set_finish(p, &z, tol) {
                iterations += extra;
                let kkt_residual = p.kkt_residual(&zp);
                return QpSolution {
                    z: zp,
                    status: QpStatus::Converged,
                    iterations,
                    kkt_residual,
                };
            }
        }
    }
    let status = if best_res <= tol {
        QpStatus::Converged
    } else {
        QpStatus::MaxIterations
    };
    QpSolution {
        z: best,
        status,
        iterations,
        kkt_residual: best_res,
    }
}

/// Primal active-set method for bound constraints, started from a feasible
/// point. Variables in the working set are held at exactly zero. Returns
/// `None` if a reduced Hessian is singular or the iteration cap is hit.
fn active_set_finish(p: &ConvexQp, start: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, usize)> {
    let n = p.dim();
    let mut z = start.clone();
    p.project(&mut z);
    let near_zero = 1e-9 * (1.0 + z.amax());
    let mut at_bound: Vec<bool> = (0..n)
        .map(|i| p.bounds[i] == Bound::NonNegative && z[i] <= near_zero)
        .collect();
    for i in 0..n {
        if at_bound[i] {
            z[i] = 0.0;
        }
    }
    let max_iter = 10 * n + 50;
    for it in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !at_bound[i]).collect();
        let mut target = DVector::zeros(n);
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| p.h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| -p.g[free[a]]);
            let chol = hff.cholesky()?;
            let sol = chol.solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            for (a, &i) in free.iter().enumerate() {
                target[i] = sol[a];
            }
        }
        // Ratio test toward the reduced minimizer.
        let mut alpha = 1.0;
        let mut blocking: Option<usize> = None;
        for &i in &free {
            if p.bounds[i] == Bound::NonNegative && target[i] < 0.0 {
                let denom = z[i] - target[i];
                let a = if denom > 0.0 { z[i] / denom } else { 0.0 };
                if a < alpha {
                    alpha = a;
                    blocking = Some(i);
                }
            }
        }
        match blocking {
            Some(b) => {
                z = &z + (&target - &z) * alpha;
                at_bound[b] = true;
                z[b] = 0.0;
                for &i in &free {
                    if p.bounds[i] == Bound::NonNegative && z[i] < 0.0 {
                        z[i] = 0.0;
                        at_bound[i] = true;
                    }
                }
            }
            None => {
                z = target;
                let grad = p.gradient(&z);
                // Release the bound variable with the most negative multiplier.
                let mut release: Option<(usize, f64)> = None;
                for i in 0..n {
                    if at_bound[i] && grad[i] < -tol && release.is_none_or(|(_, g)| grad[i] < g) {
                        release = Some((i, grad[i]));
                    }
                }
                match release {
                    Some((i, _)) => at_bound[i] = false,
                    None => return Some((z, it + 1)),
                }
            }
        }
    }
    None
}
