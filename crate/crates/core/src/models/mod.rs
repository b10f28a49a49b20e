//! Rigid-body contact models.
//!
//! [`anitescu_step`] advances a [`RigidBodyModel`] one step with the convex
//! (Anitescu) time-stepping scheme; [`linearize`] turns the same scheme into a
//! local [`LcsParams`] around a nominal state and input. The two concrete
//! systems live in [`cartpole`] and [`pusher`].

pub mod cartpole;
pub mod pusher;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lcs::{solve_contact_lcp, LcsParams};
use crate::solvers::{LcpStatus, SolverError};

pub use cartpole::{cartpole_walls_lcs, tip_position, CartpoleWallsParams};
pub use pusher::{pusher_ball_plant, pusher_ball_prior, PusherBall, PusherBallParams};

/// Default contact regularization added to the LCP matrix.
pub const DEFAULT_CONTACT_REGULARIZATION: f64 = 1e-4;

/// Central-difference step for the smooth-dynamics Jacobian.
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mass matrix is singular or not positive definite")]
    SingularMassMatrix,
    #[error("contact LCP failed ({status:?}) at q = {q:?}, v = {v:?}, u = {u:?}")]
    StepFailure {
        status: LcpStatus,
        q: Vec<f64>,
        v: Vec<f64>,
        u: Vec<f64>,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("malformed parameter document: {0}")]
    Document(String),
}

/// Continuous-time manipulator model `M(q) v̇ + C(q, v) = B u + Jᵀλ` with
/// point contacts and a polyhedral friction cone of `n_e` edges per contact.
///
/// Positions and velocities share a dimension (`q_{k+1} = q_k + Δt v_{k+1}`).
pub trait RigidBodyModel {
    fn n_q(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_contacts(&self) -> usize;
    fn n_edges(&self) -> usize;
    fn dt(&self) -> f64;

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// Coriolis, gravity, drag and any other smooth generalized forces.
    fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn input_map(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// Signed distance per contact.
    fn gap(&self, q: &DVector<f64>) -> DVector<f64>;
    /// `n_c × n_v`.
    fn normal_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// `(n_e·n_c) × n_v`, edges of contact `i` in rows `i·n_e .. (i+1)·n_e`.
    fn tangent_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// Friction coefficient per contact.
    fn friction(&self) -> DVector<f64>;

    fn contact_regularization(&self) -> f64 {
        DEFAULT_CONTACT_REGULARIZATION
    }

    fn n_v(&self) -> usize {
        self.n_q()
    }

    fn n_lambda(&self) -> usize {
        self.n_contacts() * self.n_edges()
    }

    /// `f(q, v, u) = M⁻¹(q)(B u − C(q, v))`.
    fn smooth_acceleration(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, ModelError> {
        let m = self.mass_matrix(q).cholesky().ok_or(ModelError::SingularMassMatrix)?;
        Ok(m.solve(&(self.input_map(q) * u - self.bias(q, v))))
    }
}

/// `E_tᵀ`: each contact's row repeated once per friction edge.
pub fn edge_expansion(n_contacts: usize, n_edges: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_contacts * n_edges, n_contacts, |i, j| {
        if i / n_edges == j {
            1.0
        } else {
            0.0
        }
    })
}

/// `J_c = E_tᵀ J_n + μ J_t`.
pub fn contact_jacobian<M: RigidBodyModel + ?Sized>(model: &M, q: &DVector<f64>) -> DMatrix<f64> {
    let ne = model.n_edges();
    let mu = model.friction();
    let mut jt = model.tangent_jacobian(q);
    for (i, mut row) in jt.row_iter_mut().enumerate() {
        row *= mu[i / ne];
    }
    edge_expansion(model.n_contacts(), ne) * model.normal_jacobian(q) + jt
}

fn check_state<M: RigidBodyModel + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(), ModelError> {
    let checks = [
        ("positions", model.n_q(), q.len()),
        ("velocities", model.n_v(), v.len()),
        ("inputs", model.n_u(), u.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(ModelError::DimensionMismatch { what, expected, got });
        }
    }
    Ok(())
}

/// Result of one convex time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactStep {
    pub q_next: DVector<f64>,
    pub v_next: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// One semi-implicit step:
///
/// ```text
/// v⁺ = v + M⁻¹(Δt B u − Δt C + J_cᵀ λ),   q⁺ = q + Δt v⁺
/// 0 ≤ λ ⊥ E_tᵀ φ / Δt + J_c v⁺ + ε_c λ ≥ 0
/// ```
pub fn anitescu_step<M: RigidBodyModel + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<ContactStep, ModelError> {
    check_state(model, q, v, u)?;
    let dt = model.dt();
    let m = model.mass_matrix(q).cholesky().ok_or(ModelError::SingularMassMatrix)?;
    let jc = contact_jacobian(model, q);
    let v_free = v + m.solve(&((model.input_map(q) * u - model.bias(q, v)) * dt));
    let minv_jct = m.solve(&jc.transpose());
    let n_lambda = model.n_lambda();
    let f = &jc * &minv_jct + DMatrix::identity(n_lambda, n_lambda) * model.contact_regularization();
    let lcp_q = edge_expansion(model.n_contacts(), model.n_edges()) * model.gap(q) / dt + &jc * &v_free;
    let sol = solve_contact_lcp(lcp_q, &f)?;
    if !sol.is_solved() {
        return Err(ModelError::StepFailure {
            status: sol.status,
            q: q.iter().copied().collect(),
            v: v.iter().copied().collect(),
            u: u.iter().copied().collect(),
        });
    }
    let v_next = v_free + &minv_jct * &sol.lambda;
    let q_next = q + &v_next * dt;
    Ok(ContactStep {
        q_next,
        v_next,
        lambda: sol.lambda,
    })
}

/// Split `x = [q; v]`.
pub fn split_state(x: &DVector<f64>, n_q: usize) -> (DVector<f64>, DVector<f64>) {
    (x.rows(0, n_q).into_owned(), x.rows(n_q, x.len() - n_q).into_owned())
}

/// Stack `[q; v]`.
pub fn join_state(q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(q.len() + v.len());
    x.rows_mut(0, q.len()).copy_from(q);
    x.rows_mut(q.len(), v.len()).copy_from(v);
    x
}

/// Local LCS of the Anitescu step around `(x*, u*)`.
///
/// The smooth dynamics are linearized with central differences; contact
/// geometry (`φ`, `J_n`, `J_c`, `M`) is frozen at `q*`. The dynamics offset is
/// `d_v = Δt (f* − J_f ξ*)` so that the LCS reproduces the nonlinear step at
/// the nominal point.
pub fn linearize<M: RigidBodyModel + ?Sized>(
    model: &M,
    x_star: &DVector<f64>,
    u_star: &DVector<f64>,
) -> Result<LcsParams, ModelError> {
    let nq = model.n_q();
    let nv = model.n_v();
    let nu = model.n_u();
    if x_star.len() != nq + nv {
        return Err(ModelError::DimensionMismatch {
            what: "state",
            expected: nq + nv,
            got: x_star.len(),
        });
    }
    let (q_star, v_star) = split_state(x_star, nq);
    check_state(model, &q_star, &v_star, u_star)?;
    let dt = model.dt();

    // J_f over ξ = [q; v; u].
    let n_xi = nq + nv + nu;
    let mut xi = DVector::zeros(n_xi);
    xi.rows_mut(0, nq + nv).copy_from(x_star);
    xi.rows_mut(nq + nv, nu).copy_from(u_star);
    let eval = |xi: &DVector<f64>| {
        model.smooth_acceleration(
            &xi.rows(0, nq).into_owned(),
            &xi.rows(nq, nv).into_owned(),
            &xi.rows(nq + nv, nu).into_owned(),
        )
    };
    let f_star = eval(&xi)?;
    let mut jf = DMatrix::zeros(nv, n_xi);
    for j in 0..n_xi {
        let mut plus = xi.clone();
        let mut minus = xi.clone();
        plus[j] += FD_STEP;
        minus[j] -= FD_STEP;
        let col = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
        jf.set_column(j, &col);
    }
    let d_v = (&f_star - &jf * &xi) * dt;

    let m = model.mass_matrix(&q_star).cholesky().ok_or(ModelError::SingularMassMatrix)?;
    let jc = contact_jacobian(model, &q_star);
    let d_vel = m.solve(&jc.transpose());

    // Velocity rows: v⁺ = A_v x + B_v u + D_v λ + d_v.
    let mut a_v = jf.columns(0, nq + nv) * dt;
    for i in 0..nv {
        a_v[(i, nq + i)] += 1.0;
    }
    let b_v = jf.columns(nq + nv, nu) * dt;

    let nx = nq + nv;
    let n_lambda = model.n_lambda();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    let mut d = DMatrix::zeros(nx, n_lambda);
    let mut d_vec = DVector::zeros(nx);
    // Position rows: q⁺ = q + Δt v⁺.
    let mut a_q = &a_v * dt;
    for i in 0..nq {
        a_q[(i, i)] += 1.0;
    }
    a.rows_mut(0, nq).copy_from(&a_q);
    a.rows_mut(nq, nv).copy_from(&a_v);
    b.rows_mut(0, nq).copy_from(&(&b_v * dt));
    b.rows_mut(nq, nv).copy_from(&b_v);
    d.rows_mut(0, nq).copy_from(&(&d_vel * dt));
    d.rows_mut(nq, nv).copy_from(&d_vel);
    d_vec.rows_mut(0, nq).copy_from(&(&d_v * dt));
    d_vec.rows_mut(nq, nv).copy_from(&d_v);

    let et = edge_expansion(model.n_contacts(), model.n_edges());
    let jn = model.normal_jacobian(&q_star);
    let gap_rows = &et * &jn / dt;
    let mut e = &jc * &a_v;
    {
        let mut eq = e.columns_mut(0, nq);
        eq += &gap_rows;
    }
    let f = &jc * &d_vel + DMatrix::identity(n_lambda, n_lambda) * model.contact_regularization();
    let h = &jc * &b_v;
    let c = &et * (model.gap(&q_star) - &jn * &q_star) / dt + &jc * &d_v;

    LcsParams::new(a, b, d, d_vec, e, f, h, c).map_err(|e| ModelError::InvalidParameter(e.to_string()))
}
