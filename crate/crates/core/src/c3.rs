//! Consensus complementarity control.
//!
//! ADMM over the stacked trajectory `z_k = (x_k, λ_k, u_k)`:
//!
//! ```text
//! z⁺ = argmin_{z ∈ dynamics} J(z) + ρ‖z − δ + w‖²_G      (Riccati recursion)
//! δ⁺ = Π_complementarity(z⁺ + w)                          (per-step, exact)
//! w⁺ = w + z⁺ − δ⁺
//! ```
//!
//! `J` is the quadratic tracking cost over horizon `N`. The projection
//! enumerates, for every contact, the three ways complementarity can hold
//! (`λ_i = 0`, `y_i = 0`, or both) and keeps the closest feasible point in the
//! `G` metric. The returned plan re-simulates the projected inputs through the
//! LCS so its dynamics and complementarity hold exactly.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lcs::{lcs_step_full, rollout, LcsError, LcsParams, LcsState, Residual};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum C3Error {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("QP step failed at ADMM iteration {iteration}: {detail}")]
    QpFailure { iteration: usize, detail: String },
    #[error("no feasible complementarity assignment at ADMM iteration {iteration}, step {step}")]
    ProjectionInfeasible { iteration: usize, step: usize },
    #[error("too many contacts for mode enumeration: {n_lambda} > {cap}")]
    TooManyContacts { n_lambda: usize, cap: usize },
    #[error("final rollout failed: {0}")]
    Rollout(#[from] LcsError),
}

/// Weights of the consensus metric `G` per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub x: f64,
    pub lambda: f64,
    pub u: f64,
}

impl Default for Metric {
    fn default() -> Self {
        Self {
            x: 1.0,
            lambda: 1.0,
            u: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub rho: f64,
    /// Per-iteration multiplicative growth of `ρ`.
    pub rho_growth: f64,
    pub admm_iterations: usize,
    pub metric: Metric,
    pub input_lower: Option<DVector<f64>>,
    pub input_upper: Option<DVector<f64>>,
    /// Largest `n_λ` the projection will enumerate.
    pub max_contacts: usize,
    /// Carry consensus copies and duals between consecutive solves.
    pub warm_start: bool,
}

impl MpcConfig {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>) -> Self {
        Self {
            horizon: 5,
            q,
            r,
            q_terminal,
            rho: 1.0,
            rho_growth: 1.2,
            admm_iterations: 10,
            metric: Metric::default(),
            input_lower: None,
            input_upper: None,
            max_contacts: 10,
            warm_start: true,
        }
    }

    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<(), C3Error> {
        let bad = |m: String| Err(C3Error::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.admm_iterations == 0 {
            return bad("admm_iterations must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) || !(self.rho_growth >= 1.0 && self.rho_growth.is_finite()) {
            return bad("rho must be positive and rho_growth at least 1".into());
        }
        let m = self.metric;
        if !(m.x >= 0.0 && m.u >= 0.0 && m.lambda > 0.0) {
            return bad("metric weights must be non-negative (lambda weight positive)".into());
        }
        for (name, mat, n, strict) in [
            ("q", &self.q, n_x, false),
            ("q_terminal", &self.q_terminal, n_x, false),
            ("r", &self.r, n_u, true),
        ] {
            if mat.shape() != (n, n) {
                return bad(format!("{name} must be {n}x{n}, got {:?}", mat.shape()));
            }
            if (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
                return bad(format!("{name} must be symmetric"));
            }
            let min_eig = mat.clone().symmetric_eigenvalues().min();
            if (strict && min_eig <= 0.0) || min_eig < -1e-12 {
                let kind = if strict { "positive definite" } else { "positive semidefinite" };
                return bad(format!("{name} must be {kind} (smallest eigenvalue {min_eig:e})"));
            }
        }
        for (name, b) in [("input_lower", &self.input_lower), ("input_upper", &self.input_upper)] {
            if let Some(b) = b {
                if b.len() != n_u {
                    return bad(format!("{name} must have length {n_u}"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (&self.input_lower, &self.input_upper) {
            if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                return bad("input_lower exceeds input_upper".into());
            }
        }
        Ok(())
    }

    fn clamp_input(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut u = u.clone();
        if let Some(lo) = &self.input_lower {
            u.zip_apply(lo, |v, l| *v = v.max(l));
        }
        if let Some(hi) = &self.input_upper {
            u.zip_apply(hi, |v, h| *v = v.min(h));
        }
        u
    }
}

/// Per-step `(x, λ, u)` slice of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub u: DVector<f64>,
}

impl Triple {
    fn zeros(nx: usize, nl: usize, nu: usize) -> Self {
        Self {
            x: DVector::zeros(nx),
            lambda: DVector::zeros(nl),
            u: DVector::zeros(nu),
        }
    }

    fn axpy(&self, other: &Triple, s: f64) -> Triple {
        Triple {
            x: &self.x + &other.x * s,
            lambda: &self.lambda + &other.lambda * s,
            u: &self.u + &other.u * s,
        }
    }

    fn scaled(&self, s: f64) -> Triple {
        Triple {
            x: &self.x * s,
            lambda: &self.lambda * s,
            u: &self.u * s,
        }
    }

    fn norm_squared(&self) -> f64 {
        self.x.norm_squared() + self.lambda.norm_squared() + self.u.norm_squared()
    }
}

/// Optional tracking references; zero when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// `N + 1` states.
    pub x: Vec<DVector<f64>>,
    /// `N` inputs.
    pub u: Vec<DVector<f64>>,
}

/// Output of one MPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlan {
    pub states: Vec<DVector<f64>>,
    pub forces: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `E x_k + F λ_k + H u_k + c + r` as reported by the LCP solves.
    pub slacks: Vec<DVector<f64>>,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub solve_ms: f64,
    pub qp_solves: usize,
    pub projections: usize,
}

impl MpcPlan {
    pub fn u0(&self) -> &DVector<f64> {
        &self.inputs[0]
    }

    /// Bit `i` of entry `k` set when `λ_k[i] > 0`.
    pub fn engaged_modes(&self) -> Vec<u64> {
        self.forces
            .iter()
            .map(|l| {
                l.iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .fold(0u64, |acc, (i, _)| acc | (1 << i))
            })
            .collect()
    }
}

/// `(x_d, λ_d)`: one LCS step from the current state with the planned input.
pub fn plan_to_target(
    x_star: &DVector<f64>,
    u0: &DVector<f64>,
    theta: &LcsParams,
    r: &Residual,
) -> Result<(DVector<f64>, DVector<f64>), LcsError> {
    let out = lcs_step_full(x_star, u0, theta, r)?;
    Ok((out.x_next, out.lambda))
}

/// Stabilizing solution of the discrete algebraic Riccati equation by fixed-point
/// iteration; `None` if it does not settle within 100 000 sweeps.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let k = s.cholesky()?.solve(&(&bt_p * a));
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * k;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        if change <= 1e-10 * p.amax().max(1.0) {
            return Some(p);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// QP step

/// Finite-horizon LQ problem in ½-form:
/// `Σ_k ½xᵀQ_k x + q_kᵀx + ½vᵀR_k v + r_kᵀv`, `x_{k+1} = A x + B v + d`.
struct LqProblem<'a> {
    a: &'a DMatrix<f64>,
    b: DMatrix<f64>,
    d: &'a DVector<f64>,
    /// Indexed by `k = 0..=N`; entry 0 is unused since `x_0` is fixed.
    q_quad: Vec<DMatrix<f64>>,
    q_lin: Vec<DVector<f64>>,
    r_quad: Vec<DMatrix<f64>>,
    r_lin: Vec<DVector<f64>>,
}

struct LqSolution {
    xs: Vec<DVector<f64>>,
    vs: Vec<DVector<f64>>,
    /// `∇V_k(x_k)` for `k = 0..=N`.
    costates: Vec<DVector<f64>>,
}

fn solve_lq(x0: &DVector<f64>, p: &LqProblem) -> Result<LqSolution, String> {
    let n = p.r_quad.len();
    let mut p_mat = p.q_quad[n].clone();
    let mut p_vec = p.q_lin[n].clone();
    let mut gains = Vec::with_capacity(n);
    let mut values = vec![(p_mat.clone(), p_vec.clone())];
    for k in (0..n).rev() {
        let pb = &p_mat * &p.b;
        let h_vv = &p.r_quad[k] + p.b.transpose() * &pb;
        let h_vx = pb.transpose() * p.a;
        let affine = &p_mat * p.d + &p_vec;
        let h_v = &p.r_lin[k] + p.b.transpose() * &affine;
        let chol = h_vv
            .cholesky()
            .ok_or_else(|| format!("input Hessian not positive definite at step {k}"))?;
        let gain = -chol.solve(&h_vx);
        let ff = -chol.solve(&h_v);
        let next_p = &p.q_quad[k] + p.a.transpose() * &p_mat * p.a + h_vx.transpose() * &gain;
        let next_p_vec = &p.q_lin[k] + p.a.transpose() * &affine + h_vx.transpose() * &ff;
        p_mat = (&next_p + next_p.transpose()) * 0.5;
        p_vec = next_p_vec;
        gains.push((gain, ff));
        values.push((p_mat.clone(), p_vec.clone()));
    }
    gains.reverse();
    values.reverse();
    let mut xs = vec![x0.clone()];
    let mut vs = Vec::with_capacity(n);
    for (k, (gain, ff)) in gains.iter().enumerate() {
        let v = gain * &xs[k] + ff;
        let next = p.a * &xs[k] + &p.b * &v + p.d;
        vs.push(v);
        xs.push(next);
    }
    let costates = xs
        .iter()
        .zip(&values)
        .map(|(x, (pm, pv))| pm * x + pv)
        .collect();
    Ok(LqSolution { xs, vs, costates })
}

/// Blocks of the tracking cost shared by every QP of one solve.
struct CostTerms<'a> {
    cfg: &'a MpcConfig,
    x_ref: Vec<DVector<f64>>,
    u_ref: Vec<DVector<f64>>,
}

impl<'a> CostTerms<'a> {
    fn new(cfg: &'a MpcConfig, n_x: usize, n_u: usize, reference: Option<&Reference>) -> Result<Self, C3Error> {
        let n = cfg.horizon;
        let (x_ref, u_ref) = match reference {
            Some(r) => {
                if r.x.len() != n + 1 {
                    return Err(C3Error::DimensionMismatch {
                        what: "reference states",
                        expected: n + 1,
                        got: r.x.len(),
                    });
                }
                if r.u.len() != n {
                    return Err(C3Error::DimensionMismatch {
                        what: "reference inputs",
                        expected: n,
                        got: r.u.len(),
                    });
                }
                if r.x.iter().any(|x| x.len() != n_x) || r.u.iter().any(|u| u.len() != n_u) {
                    return Err(C3Error::InvalidConfig("reference dimensions".into()));
                }
                (r.x.clone(), r.u.clone())
            }
            None => (vec![DVector::zeros(n_x); n + 1], vec![DVector::zeros(n_u); n]),
        };
        Ok(Self { cfg, x_ref, u_ref })
    }
}

/// Minimize the tracking cost plus `ρ‖z_k − t_k‖²_G` subject to the LCS
/// dynamics rows (complementarity ignored). `targets` holds `δ − w` for
/// `k = 0..N`; the consensus term on the fixed `x_0` is dropped.
///
/// Returns `(x_0..x_N, λ_0..λ_{N−1}, u_0..u_{N−1})`.
pub fn qp_step(
    targets: &[Triple],
    x0: &DVector<f64>,
    theta: &LcsParams,
    cfg: &MpcConfig,
    rho: f64,
    reference: Option<&Reference>,
) -> Result<Vec<Triple>, C3Error> {
    let costs = CostTerms::new(cfg, theta.n_x(), theta.n_u(), reference)?;
    let sol = consensus_qp(targets, x0, theta, &costs, rho).map_err(|detail| C3Error::QpFailure { iteration: 0, detail })?;
    Ok(sol)
}

fn consensus_qp(
    targets: &[Triple],
    x0: &DVector<f64>,
    theta: &LcsParams,
    costs: &CostTerms,
    rho: f64,
) -> Result<Vec<Triple>, String> {
    let cfg = costs.cfg;
    let n = cfg.horizon;
    let (nx, nl, nu) = (theta.n_x(), theta.n_lambda(), theta.n_u());
    let g = cfg.metric;
    let mut bv = DMatrix::zeros(nx, nl + nu);
    bv.columns_mut(0, nl).copy_from(&theta.d);
    bv.columns_mut(nl, nu).copy_from(&theta.b);

    let mut q_quad = Vec::with_capacity(n + 1);
    let mut q_lin = Vec::with_capacity(n + 1);
    let mut r_quad = Vec::with_capacity(n);
    let mut r_lin = Vec::with_capacity(n);
    for k in 0..=n {
        if k == n {
            q_quad.push(&cfg.q_terminal * 2.0);
            q_lin.push(&cfg.q_terminal * &costs.x_ref[k] * -2.0);
        } else {
            let w = 2.0 * rho * g.x;
            q_quad.push(&cfg.q * 2.0 + DMatrix::identity(nx, nx) * w);
            q_lin.push(&cfg.q * &costs.x_ref[k] * -2.0 - &targets[k].x * w);
        }
    }
    for k in 0..n {
        let mut rq = DMatrix::zeros(nl + nu, nl + nu);
        rq.view_mut((0, 0), (nl, nl))
            .fill_diagonal(2.0 * rho * g.lambda);
        rq.view_mut((nl, nl), (nu, nu))
            .copy_from(&(&cfg.r * 2.0 + DMatrix::identity(nu, nu) * (2.0 * rho * g.u)));
        let mut rl = DVector::zeros(nl + nu);
        rl.rows_mut(0, nl)
            .copy_from(&(&targets[k].lambda * (-2.0 * rho * g.lambda)));
        rl.rows_mut(nl, nu)
            .copy_from(&(&cfg.r * &costs.u_ref[k] * -2.0 - &targets[k].u * (2.0 * rho * g.u)));
        r_quad.push(rq);
        r_lin.push(rl);
    }
    let prob = LqProblem {
        a: &theta.a,
        b: bv,
        d: &theta.d_vec,
        q_quad,
        q_lin,
        r_quad,
        r_lin,
    };
    let sol = solve_lq(x0, &prob)?;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..n {
        out.push(Triple {
            x: sol.xs[k].clone(),
            lambda: sol.vs[k].rows(0, nl).into_owned(),
            u: sol.vs[k].rows(nl, nu).into_owned(),
        });
    }
    out.push(Triple {
        x: sol.xs[n].clone(),
        lambda: DVector::zeros(nl),
        u: DVector::zeros(nu),
    });
    Ok(out)
}

/// The tracking problem with all contact forces pinned to zero, plus the
/// multipliers of `λ_k = 0` (used to seed the duals).
fn contact_free_lq(x0: &DVector<f64>, theta: &LcsParams, costs: &CostTerms) -> Result<(Vec<Triple>, Vec<DVector<f64>>), String> {
    let cfg = costs.cfg;
    let n = cfg.horizon;
    let (nx, nl, nu) = (theta.n_x(), theta.n_lambda(), theta.n_u());
    let mut q_quad = Vec::with_capacity(n + 1);
    let mut q_lin = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let q = if k == n { &cfg.q_terminal } else { &cfg.q };
        q_quad.push(q * 2.0);
        q_lin.push(q * &costs.x_ref[k] * -2.0);
    }
    let r_quad = vec![&cfg.r * 2.0; n];
    let r_lin = (0..n).map(|k| &cfg.r * &costs.u_ref[k] * -2.0).collect();
    let prob = LqProblem {
        a: &theta.a,
        b: theta.b.clone(),
        d: &theta.d_vec,
        q_quad,
        q_lin,
        r_quad,
        r_lin,
    };
    let sol = solve_lq(x0, &prob)?;
    let mut traj = Vec::with_capacity(n + 1);
    let mut multipliers = Vec::with_capacity(n);
    for k in 0..n {
        traj.push(Triple {
            x: sol.xs[k].clone(),
            lambda: DVector::zeros(nl),
            u: sol.vs[k].clone(),
        });
        multipliers.push(-(theta.d.transpose() * &sol.costates[k + 1]));
    }
    traj.push(Triple {
        x: sol.xs[n].clone(),
        lambda: DVector::zeros(nl),
        u: DVector::zeros(nu),
    });
    debug_assert_eq!(traj[0].x.len(), nx);
    Ok((traj, multipliers))
}

// ---------------------------------------------------------------------------
// Projection

/// A projected per-step triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub triple: Triple,
    /// Base-3 code of the selected assignment: digit `i` is 0 for `λ_i = 0`,
    /// 1 for `y_i = 0`, 2 for both.
    pub mode: usize,
    /// `G`-weighted squared distance moved.
    pub distance: f64,
}

/// Closest point (in the `G` metric) to `t` satisfying
/// `0 ≤ λ ⊥ E x + F λ + H u + c + r ≥ 0`. With `fix_x` the state is held.
pub fn project_complementarity(
    t: &Triple,
    theta: &LcsParams,
    r: &Residual,
    metric: &Metric,
    fix_x: bool,
) -> Option<Projection> {
    let c_eff = &theta.c + r.as_vector();
    project_with_offset(t, theta, &c_eff, metric, fix_x)
}

const FEAS_TOL: f64 = 1e-9;

fn project_with_offset(
    t: &Triple,
    theta: &LcsParams,
    c_eff: &DVector<f64>,
    metric: &Metric,
    fix_x: bool,
) -> Option<Projection> {
    let (nx, nl, nu) = (theta.n_x(), theta.n_lambda(), theta.n_u());
    // Free variables v = ([x], λ, u) with diagonal weights.
    let xo = if fix_x { 0 } else { nx };
    let nv = xo + nl + nu;
    let mut v_hat = DVector::zeros(nv);
    let mut w = DVector::zeros(nv);
    if !fix_x {
        v_hat.rows_mut(0, nx).copy_from(&t.x);
        w.rows_mut(0, nx).fill(metric.x);
    }
    v_hat.rows_mut(xo, nl).copy_from(&t.lambda);
    w.rows_mut(xo, nl).fill(metric.lambda);
    v_hat.rows_mut(xo + nl, nu).copy_from(&t.u);
    w.rows_mut(xo + nl, nu).fill(metric.u);
    // Zero-weight coordinates cost nothing to move; give them a tiny weight so
    // the least-distance problem stays well posed.
    let w = w.map(|v| if v > 0.0 { v } else { 1e-9 });

    // y = Y v + y0.
    let mut y_mat = DMatrix::zeros(nl, nv);
    let mut y0 = c_eff.clone();
    if fix_x {
        y0 += &theta.e * &t.x;
    } else {
        y_mat.columns_mut(0, nx).copy_from(&theta.e);
    }
    y_mat.columns_mut(xo, nl).copy_from(&theta.f);
    y_mat.columns_mut(xo + nl, nu).copy_from(&theta.h);

    // Already complementary: return the input untouched.
    let y_hat = &y_mat * &v_hat + &y0;
    if t.lambda.min() >= 0.0
        && y_hat.min() >= 0.0
        && t.lambda.iter().zip(y_hat.iter()).all(|(l, y)| l.min(*y) <= 1e-12)
    {
        return Some(Projection {
            triple: t.clone(),
            mode: 0,
            distance: 0.0,
        });
    }
    let n_modes = 3usize.pow(nl as u32);
    let mut best: Option<Projection> = None;
    for mode in 0..n_modes {
        let digits: Vec<usize> = (0..nl).map(|i| (mode / 3usize.pow(i as u32)) % 3).collect();
        // Rows of M v = b.
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for (i, &dg) in digits.iter().enumerate() {
            if dg == 0 || dg == 2 {
                let mut e = DVector::zeros(nv);
                e[xo + i] = 1.0;
                rows.push((e, 0.0));
            }
            if dg == 1 || dg == 2 {
                rows.push((y_mat.row(i).transpose(), -y0[i]));
            }
        }
        let m = DMatrix::from_fn(rows.len(), nv, |a, b| rows[a].0[b]);
        let b = DVector::from_fn(rows.len(), |a, _| rows[a].1);
        let winv_mt = DMatrix::from_fn(nv, rows.len(), |a, b| m[(b, a)] / w[a]);
        let gram = &m * &winv_mt;
        let rhs = &m * &v_hat - &b;
        let mu = match gram.clone().pseudo_inverse(1e-12) {
            Ok(pinv) => pinv * &rhs,
            Err(_) => continue,
        };
        let mut v = &v_hat - &winv_mt * &mu;
        // Inconsistent constraint pattern.
        if (&m * &v - &b).amax() > 1e-9 * (1.0 + b.amax() + v.amax()) {
            continue;
        }
        for (i, &dg) in digits.iter().enumerate() {
            if dg == 0 || dg == 2 {
                v[xo + i] = 0.0;
            }
        }
        let y = &y_mat * &v + &y0;
        let lam = v.rows(xo, nl);
        if lam.min() < -FEAS_TOL || y.min() < -FEAS_TOL {
            continue;
        }
        let diff = &v - &v_hat;
        let distance = diff.component_mul(&diff).dot(&w);
        if best.as_ref().is_some_and(|b| distance >= b.distance - 1e-14 * (1.0 + b.distance)) {
            continue;
        }
        let mut lambda = lam.into_owned();
        lambda.apply(|l| *l = l.max(0.0));
        best = Some(Projection {
            triple: Triple {
                x: if fix_x { t.x.clone() } else { v.rows(0, nx).into_owned() },
                lambda,
                u: v.rows(xo + nl, nu).into_owned(),
            },
            mode,
            distance,
        });
    }
    best
}

// ---------------------------------------------------------------------------
// Solver

#[derive(Debug, Clone)]
struct WarmStart {
    delta: Vec<Triple>,
    /// Scaled duals at penalty `rho`.
    duals: Vec<Triple>,
    rho: f64,
}

/// Receding-horizon controller holding the warm-start cache.
#[derive(Debug, Clone)]
pub struct C3Controller {
    cfg: MpcConfig,
    warm: Option<WarmStart>,
}

impl C3Controller {
    pub fn new(cfg: MpcConfig) -> Self {
        Self { cfg, warm: None }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Solve from `x0`; on success the warm-start cache is refreshed.
    pub fn solve(
        &mut self,
        x0: &DVector<f64>,
        theta: &LcsParams,
        r: &Residual,
        reference: Option<&Reference>,
    ) -> Result<MpcPlan, C3Error> {
        let warm = if self.cfg.warm_start { self.warm.take() } else { None };
        let (plan, next) = solve_inner(x0, theta, r, &self.cfg, reference, warm)?;
        if self.cfg.warm_start {
            self.warm = Some(next);
        }
        Ok(plan)
    }
}

/// One cold-started solve with zero references.
pub fn c3_solve(x0: &DVector<f64>, theta: &LcsParams, r: &Residual, cfg: &MpcConfig) -> Result<MpcPlan, C3Error> {
    solve_inner(x0, theta, r, cfg, None, None).map(|(p, _)| p)
}

/// Advance a stage trajectory `[0..N−1, terminal]` by one step. The new last
/// stage repeats the old one's `(λ, u)` at the old terminal state.
fn shift(traj: &[Triple]) -> Vec<Triple> {
    let n = traj.len() - 1;
    let mut out: Vec<Triple> = traj[1..n].to_vec();
    out.push(Triple {
        x: traj[n].x.clone(),
        lambda: traj[n - 1].lambda.clone(),
        u: traj[n - 1].u.clone(),
    });
    out.push(traj[n].clone());
    out
}

fn solve_inner(
    x0: &DVector<f64>,
    theta: &LcsParams,
    r: &Residual,
    cfg: &MpcConfig,
    reference: Option<&Reference>,
    warm: Option<WarmStart>,
) -> Result<(MpcPlan, WarmStart), C3Error> {
    let start = Instant::now();
    let (nx, nl, nu) = (theta.n_x(), theta.n_lambda(), theta.n_u());
    cfg.validate(nx, nu)?;
    if x0.len() != nx {
        return Err(C3Error::DimensionMismatch {
            what: "initial state",
            expected: nx,
            got: x0.len(),
        });
    }
    if r.len() != nl {
        return Err(C3Error::DimensionMismatch {
            what: "residual",
            expected: nl,
            got: r.len(),
        });
    }
    if nl > cfg.max_contacts {
        return Err(C3Error::TooManyContacts {
            n_lambda: nl,
            cap: cfg.max_contacts,
        });
    }
    let n = cfg.horizon;
    let costs = CostTerms::new(cfg, nx, nu, reference)?;
    let c_eff = &theta.c + r.as_vector();
    let mut rho = cfg.rho;
    let mut qp_solves = 0;
    let mut projections = 0;

    let project_all = |z: &[Triple], w: &[Triple], iteration: usize, count: &mut usize| -> Result<Vec<Triple>, C3Error> {
        (0..n)
            .map(|k| {
                *count += 1;
                let mut t = z[k].axpy(&w[k], 1.0);
                if k == 0 {
                    t.x = x0.clone();
                }
                project_with_offset(&t, theta, &c_eff, &cfg.metric, k == 0)
                    .map(|p| p.triple)
                    .ok_or(C3Error::ProjectionInfeasible { iteration, step: k })
            })
            .collect()
    };

    let (mut delta, mut w) = match warm {
        Some(ws) if ws.delta.len() == n + 1 && ws.delta[0].x.len() == nx && ws.delta[0].lambda.len() == nl => {
            let mut delta = shift(&ws.delta);
            delta[0].x = x0.clone();
            // Rescale to the restarted penalty so the unscaled duals carry over.
            let s = ws.rho / rho;
            let mut duals: Vec<Triple> = shift(&ws.duals).iter().map(|t| t.scaled(s)).collect();
            duals[0].x.fill(0.0);
            (delta, duals)
        }
        _ => {
            // Start from the contact-free optimum with the duals that make it
            // a fixed point whenever no contact is needed.
            let (z0, multipliers) =
                contact_free_lq(x0, theta, &costs).map_err(|detail| C3Error::QpFailure { iteration: 0, detail })?;
            qp_solves += 1;
            let mut w: Vec<Triple> = vec![Triple::zeros(nx, nl, nu); n + 1];
            for k in 0..n {
                w[k].lambda = &multipliers[k] / (2.0 * rho * cfg.metric.lambda);
            }
            let zero_w = vec![Triple::zeros(nx, nl, nu); n + 1];
            let mut delta = project_all(&z0, &zero_w, 0, &mut projections)?;
            delta.push(z0[n].clone());
            // Multipliers only apply where the projection left the point in place.
            for k in 0..n {
                if delta[k] != z0[k] {
                    w[k] = Triple::zeros(nx, nl, nu);
                }
            }
            (delta, w)
        }
    };

    let mut primal = Vec::with_capacity(cfg.admm_iterations);
    let mut dual = Vec::with_capacity(cfg.admm_iterations);
    for it in 0..cfg.admm_iterations {
        let targets: Vec<Triple> = delta.iter().zip(&w).map(|(d, w)| d.axpy(w, -1.0)).collect();
        let z = consensus_qp(&targets, x0, theta, &costs, rho).map_err(|detail| C3Error::QpFailure { iteration: it, detail })?;
        qp_solves += 1;
        let mut next_delta = project_all(&z, &w, it, &mut projections)?;
        next_delta.push(z[n].clone());
        let mut p_res = 0.0;
        let mut d_res = 0.0;
        for k in 0..n {
            let diff = z[k].axpy(&next_delta[k], -1.0);
            p_res += diff.norm_squared();
            d_res += next_delta[k].axpy(&delta[k], -1.0).norm_squared();
            w[k] = w[k].axpy(&diff, 1.0);
        }
        primal.push(p_res.sqrt());
        dual.push(rho * d_res.sqrt());
        delta = next_delta;
        if it + 1 < cfg.admm_iterations {
            let grown = rho * cfg.rho_growth;
            let s = rho / grown;
            for wk in w.iter_mut() {
                *wk = wk.scaled(s);
            }
            rho = grown;
        }
    }

    let inputs: Vec<DVector<f64>> = delta[..n].iter().map(|t| cfg.clamp_input(&t.u)).collect();
    let ro = rollout(&LcsState::new(x0.clone()), &inputs, theta, r)?;
    let plan = MpcPlan {
        states: ro.states,
        forces: ro.forces,
        inputs,
        slacks: ro.slacks,
        primal_residuals: primal,
        dual_residuals: dual,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
        qp_solves,
        projections,
    };
    Ok((plan, WarmStart { delta, duals: w, rho }))
}
