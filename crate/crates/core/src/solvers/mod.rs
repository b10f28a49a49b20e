//! Dense solvers for the small problems that show up in contact-implicit control.
//!
//! * [`solve_lcp_lemke`] – complementary pivoting for a general `LCP(q, F)`.
//! * [`solve_lcp_qp`] – the convex route, valid when `F` is symmetric positive definite.
//! * [`solve_convex_qp`] – bound-constrained convex QP (accelerated projected gradient
//!   followed by a primal active-set finish).
//! * [`brute_force_lcp`] – exhaustive support enumeration, used as a test oracle.
//!
//! Everything here is a pure function of its inputs.

mod brute;
mod lemke;
mod qp;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use brute::brute_force_lcp;
pub use lemke::solve_lcp_lemke;
pub use qp::{solve_convex_qp, Bound, ConvexQp, QpSolution, QpStatus};

/// Absolute tolerance used to accept a complementary pair.
pub const COMPLEMENTARITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem must have at least one variable")]
    Empty,
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("non-finite entry in problem data")]
    NonFinite,
    #[error("enumeration limited to m <= {max}, got {m}")]
    TooLarge { m: usize, max: usize },
}

/// `LCP(q, F)`: find `λ ≥ 0` with `y = Fλ + q ≥ 0` and `λᵀy = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lcp {
    q: DVector<f64>,
    f: DMatrix<f64>,
}

impl Lcp {
    pub fn new(q: DVector<f64>, f: DMatrix<f64>) -> Result<Self, SolverError> {
        let m = q.len();
        if m == 0 {
            return Err(SolverError::Empty);
        }
        if f.nrows() != m || f.ncols() != m {
            return Err(SolverError::DimensionMismatch {
                what: "LCP matrix vs affine term",
                expected: m,
                got: if f.nrows() != m { f.nrows() } else { f.ncols() },
            });
        }
        if q.iter().chain(f.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        Ok(Self { q, f })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// `y = Fλ + q`.
    pub fn slack(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.f * lambda + &self.q
    }

    /// True when `(λ, Fλ+q)` is complementary within `tol`.
    pub fn is_solution(&self, lambda: &DVector<f64>, tol: f64) -> bool {
        let y = self.slack(lambda);
        lambda.min() >= -tol && y.min() >= -tol && lambda.dot(&y).abs() <= tol
    }

    fn scale(&self) -> f64 {
        self.f.amax().max(self.q.amax()).max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcpStatus {
    Solved,
    RayTermination,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub lambda: DVector<f64>,
    pub y: DVector<f64>,
    /// `λᵀy`.
    pub comp_residual: f64,
    pub status: LcpStatus,
    pub pivots: usize,
}

impl LcpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == LcpStatus::Solved
    }

    fn failed(m: usize, status: LcpStatus, pivots: usize) -> Self {
        Self {
            lambda: DVector::zeros(m),
            y: DVector::zeros(m),
            comp_residual: f64::NAN,
            status,
            pivots,
        }
    }
}

/// Solve the LCP restricted to a support set: `λ_i` free and `y_i = 0` for
/// `i` in the support, `λ_i = 0` elsewhere. Returns `None` if the principal
/// subsystem is singular or the result is infeasible beyond `feas_tol`.
///
/// The returned pair is exactly complementary: off-support `λ` and on-support
/// `y` are written as literal zeros.
pub(crate) fn solve_on_support(
    lcp: &Lcp,
    support: &[bool],
    feas_tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = lcp.dim();
    let idx: Vec<usize> = (0..m).filter(|&i| support[i]).collect();
    let mut lambda = DVector::zeros(m);
    if !idx.is_empty() {
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |a, b| lcp.f[(idx[a], idx[b])]);
        let rhs = DVector::from_fn(k, |a, _| -lcp.q[idx[a]]);
        let sol = sub.clone().lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // Reject numerically singular subsystems: the solve must reproduce the rhs.
        let resid = (&sub * &sol - &rhs).amax();
        if resid > 1e-9 * lcp.scale() * (1.0 + sol.amax()) {
            return None;
        }
        for (a, &i) in idx.iter().enumerate() {
            lambda[i] = sol[a];
        }
    }
    let mut y = lcp.slack(&lambda);
    for i in 0..m {
        if support[i] {
            y[i] = 0.0;
        } else {
            lambda[i] = 0.0;
        }
    }
    if lambda.min() < -feas_tol || y.min() < -feas_tol {
        return None;
    }
    lambda.apply(|v| *v = v.max(0.0));
    y.apply(|v| *v = v.max(0.0));
    Some((lambda, y))
}

/// Solve `LCP(q, F)` by the convex route: `min ½λᵀFλ + qᵀλ` over `λ ≥ 0`.
///
/// `F` is symmetrized before the definiteness check; an asymmetry larger
/// than `1e-9` is rejected so callers fall back to [`solve_lcp_lemke`].
pub fn solve_lcp_qp(lcp: &Lcp) -> Result<LcpSolution, SolverError> {
    let m = lcp.dim();
    let f = lcp.f();
    let asymmetry = (f - f.transpose()).amax();
    if asymmetry > 1e-9 {
        return Err(SolverError::NotSymmetric { asymmetry });
    }
    let sym = (f + f.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        return Err(SolverError::NotPositiveDefinite);
    }
    if lcp.q().min() >= 0.0 {
        let y = lcp.q().clone();
        return Ok(LcpSolution {
            lambda: DVector::zeros(m),
            comp_residual: 0.0,
            y,
            status: LcpStatus::Solved,
            pivots: 0,
        });
    }
    let qp = ConvexQp::new(sym, lcp.q().clone(), vec![Bound::NonNegative; m])?;
    let sol = solve_convex_qp(&qp, 1e-12);
    let support: Vec<bool> = sol.z.iter().map(|&v| v > 0.0).collect();
    let tol = COMPLEMENTARITY_TOL;
    match solve_on_support(lcp, &support, tol) {
        Some((lambda, y)) => Ok(LcpSolution {
            comp_residual: lambda.dot(&y),
            lambda,
            y,
            status: LcpStatus::Solved,
            pivots: sol.iterations,
        }),
        None => {
            // Polishing failed; report the raw iterate if it is good enough.
            let lambda = sol.z.map(|v| v.max(0.0));
            let y = lcp.slack(&lambda);
            let comp = lambda.dot(&y);
            let status = if lcp.is_solution(&lambda, tol) {
                LcpStatus::Solved
            } else {
                LcpStatus::MaxIterations
            };
            Ok(LcpSolution {
                lambda,
                y,
                comp_residual: comp,
                status,
                pivots: sol.iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn lcp_rejects_bad_shapes() {
        assert_eq!(
            Lcp::new(DVector::zeros(0), DMatrix::zeros(0, 0)),
            Err(SolverError::Empty)
        );
        assert!(matches!(
            Lcp::new(dvector![1.0, 2.0], DMatrix::identity(3, 3)),
            Err(SolverError::DimensionMismatch { .. })
        ));
        assert_eq!(
            Lcp::new(dvector![f64::NAN], dmatrix![1.0]),
            Err(SolverError::NonFinite)
        );
    }

    #[test]
    fn qp_route_trivial_and_scalar() {
        let lcp = Lcp::new(dvector![1.0], dmatrix![1.0]).unwrap();
        let s = solve_lcp_qp(&lcp).unwrap();
        assert_eq!(s.lambda, dvector![0.0]);

        let lcp = Lcp::new(dvector![-4.0], dmatrix![2.0]).unwrap();
        let s = solve_lcp_qp(&lcp).unwrap();
        assert!(s.is_solved());
        assert!((s.lambda[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.y[0], 0.0);
        assert_eq!(s.comp_residual, 0.0);
    }

    #[test]
    fn qp_route_rejects_asymmetric_and_indefinite() {
        let lcp = Lcp::new(dvector![-1.0, 1.0], dmatrix![0.0, -1.0; 1.0, 0.0]).unwrap();
        assert!(matches!(
            solve_lcp_qp(&lcp),
            Err(SolverError::NotSymmetric { .. })
        ));
        let lcp = Lcp::new(dvector![-1.0, 1.0], dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        assert_eq!(solve_lcp_qp(&lcp), Err(SolverError::NotPositiveDefinite));
    }

    #[test]
    fn support_solve_is_exactly_complementary() {
        let lcp = Lcp::new(dvector![-1.0, 2.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let (l, y) = solve_on_support(&lcp, &[true, false], 1e-10).unwrap();
        assert_eq!(l[1], 0.0);
        assert_eq!(y[0], 0.0);
        assert_eq!(l.dot(&y), 0.0);
        assert!((l[0] - 0.5).abs() < 1e-15);
    }
}
