use nalgebra::{DMatrix, DVector};

use super::{solve_on_support, Lcp, LcpSolution, LcpStatus, COMPLEMENTARITY_TOL};

/// Size of the `q` perturbation used for the single degenerate retry.
const DEGENERACY_SHIFT: f64 = 1e-12;

/// Solve `LCP(q, F)` with Lemke's complementary pivoting method.
///
/// Uses the covering vector `d = 1`. Pivot ties are broken by the lowest row
/// index (the artificial variable wins any tie it is part of). If the first
/// run fails after hitting a ratio-test tie, the method is retried once on
/// `q + 1e-12·1`; the resulting basis is then re-solved against the original
/// `q`.
pub fn solve_lcp_lemke(lcp: &Lcp) -> LcpSolution {
    let first = run(lcp, lcp.q());
    if first.status == LcpStatus::Solved || !first.tie_seen {
        return finish(lcp, first);
    }
    let shifted = lcp.q().map(|v| v + DEGENERACY_SHIFT);
    let mut second = run(lcp, &shifted);
    second.pivots += first.pivots;
    finish(lcp, second)
}

struct Outcome {
    status: LcpStatus,
    /// Which `z_i` ended up basic (only meaningful when solved).
    support: Vec<bool>,
    lambda: DVector<f64>,
    pivots: usize,
    tie_seen: bool,
}

fn finish(lcp: &Lcp, out: Outcome) -> LcpSolution {
    let m = lcp.dim();
    if out.status != LcpStatus::Solved {
        return LcpSolution::failed(m, out.status, out.pivots);
    }
    // Re-solve on the final basis so the returned pair is exactly complementary
    // with respect to the caller's q.
    if let Some((lambda, y)) = solve_on_support(lcp, &out.support, COMPLEMENTARITY_TOL) {
        return LcpSolution {
            comp_residual: lambda.dot(&y),
            lambda,
            y,
            status: LcpStatus::Solved,
            pivots: out.pivots,
        };
    }
    let lambda = out.lambda.map(|v| v.max(0.0));
    let y = lcp.slack(&lambda);
    let status = if lcp.is_solution(&lambda, COMPLEMENTARITY_TOL) {
        LcpStatus::Solved
    } else {
        LcpStatus::MaxIterations
    };
    LcpSolution {
        comp_residual: lambda.dot(&y),
        lambda,
        y,
        status,
        pivots: out.pivots,
    }
}

// Tableau layout, one row per constraint of  w - F z - d z0 = q:
//   columns [0, m)      w
//   columns [m, 2m)     z
//   column  2m          z0
//   column  2m + 1      rhs
fn run(lcp: &Lcp, q: &DVector<f64>) -> Outcome {
    let m = lcp.dim();
    let z0 = 2 * m;
    let rhs = 2 * m + 1;
    let scale = lcp.scale();
    let piv_tol = 1e-12 * scale;

    if q.min() >= 0.0 {
        return Outcome {
            status: LcpStatus::Solved,
            support: vec![false; m],
            lambda: DVector::zeros(m),
            pivots: 0,
            tie_seen: false,
        };
    }

    let mut tab = DMatrix::<f64>::zeros(m, 2 * m + 2);
    for i in 0..m {
        tab[(i, i)] = 1.0;
        for j in 0..m {
            tab[(i, m + j)] = -lcp.f()[(i, j)];
        }
        tab[(i, z0)] = -1.0;
        tab[(i, rhs)] = q[i];
    }
    let mut basis: Vec<usize> = (0..m).collect();
    let mut tie_seen = false;

    // z0 enters; the most negative q leaves (lowest index on ties).
    let qmin = q.min();
    let mut row = (0..m).find(|&i| q[i] == qmin).unwrap_or(0);
    tie_seen |= (0..m).filter(|&i| q[i] == qmin).count() > 1;
    pivot(&mut tab, row, z0);
    let mut leaving = basis[row];
    basis[row] = z0;
    let mut pivots = 1;
    let max_pivots = 50 * m;

    loop {
        let entering = complement(leaving, m);
        // Minimum ratio test over rows with a positive entry in the entering column.
        let mut best: Option<(usize, f64)> = None;
        let mut z0_row_in_tie = false;
        for i in 0..m {
            let a = tab[(i, entering)];
            if a <= piv_tol {
                continue;
            }
            let ratio = tab[(i, rhs)] / a;
            match best {
                None => {
                    best = Some((i, ratio));
                    z0_row_in_tie = basis[i] == z0;
                }
                Some((_, r)) => {
                    let tol = 1e-12 * (1.0 + r.abs());
                    if ratio < r - tol {
                        best = Some((i, ratio));
                        z0_row_in_tie = basis[i] == z0;
                    } else if (ratio - r).abs() <= tol {
                        tie_seen = true;
                        if basis[i] == z0 {
                            z0_row_in_tie = true;
                        }
                    }
                }
            }
        }
        let Some((first_row, _)) = best else {
            return Outcome {
                status: LcpStatus::RayTermination,
                support: vec![false; m],
                lambda: DVector::zeros(m),
                pivots,
                tie_seen,
            };
        };
        row = if z0_row_in_tie {
            basis.iter().position(|&b| b == z0).unwrap_or(first_row)
        } else {
            first_row
        };
        pivot(&mut tab, row, entering);
        leaving = basis[row];
        basis[row] = entering;
        pivots += 1;

        if leaving == z0 {
            let mut lambda = DVector::zeros(m);
            let mut support = vec![false; m];
            for (i, &b) in basis.iter().enumerate() {
                if (m..2 * m).contains(&b) {
                    lambda[b - m] = tab[(i, rhs)];
                    support[b - m] = true;
                }
            }
            return Outcome {
                status: LcpStatus::Solved,
                support,
                lambda,
                pivots,
                tie_seen,
            };
        }
        if pivots >= max_pivots {
            return Outcome {
                status: LcpStatus::MaxIterations,
                support: vec![false; m],
                lambda: DVector::zeros(m),
                pivots,
                tie_seen,
            };
        }
    }
}

fn complement(var: usize, m: usize) -> usize {
    if var < m {
        var + m
    } else {
        var - m
    }
}

fn pivot(tab: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = tab[(row, col)];
    let ncols = tab.ncols();
    for j in 0..ncols {
        tab[(row, j)] /= p;
    }
    for i in 0..tab.nrows() {
        if i == row {
            continue;
        }
        let factor = tab[(i, col)];
        if factor == 0.0 {
            continue;
        }
        for j in 0..ncols {
            let v = tab[(row, j)];
            tab[(i, j)] -= factor * v;
        }
        tab[(i, col)] = 0.0;
    }
}
