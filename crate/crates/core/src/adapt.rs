//! Online learning of the complementarity residual.
//!
//! Each buffered transition `(x_{k+1}, x_k, u_k)` is paired with a local LCS
//! and scored by the implicit loss
//!
//! ```text
//! l(r) = min_{λ ≥ 0, η ≥ 0} ½(Dλ + z)ᵀ Q_d (Dλ + z)
//!                           + (1/ε)(λᵀη + ‖p + Fλ − η‖² / 2γ)
//! z = A x + B u + d − x_{k+1},   p = E x + H u + c + r
//! ```
//!
//! The inner problem is a convex QP whenever `σ_min(F + Fᵀ) > γ`. Since `r`
//! only enters through `p`, the gradient of the minimum is the partial
//! derivative at the minimizers: `(p + Fλ* − η*) / (εγ)`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lcs::{LcsParams, Residual};
use crate::models::{linearize, ModelError, RigidBodyModel};
use crate::solvers::{solve_convex_qp, Bound, ConvexQp, QpStatus, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("invalid learning configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step index {got} does not follow {last}")]
    NonIncreasingIndex { last: usize, got: usize },
    #[error("entry {entry}: gamma = {gamma} violates 0 < gamma < sigma_min(F + F^T) = {sigma_min}")]
    GammaCondition {
        entry: usize,
        sigma_min: f64,
        gamma: f64,
    },
    #[error("entry {entry}: inner problem rejected: {source}")]
    InnerProblem {
        entry: usize,
        #[source]
        source: SolverError,
    },
    #[error("entry {entry}: inner QP did not converge (KKT residual {kkt:e})")]
    InnerNotConverged { entry: usize, kkt: f64 },
}

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x_next: DVector<f64>,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub k: usize,
}

/// Most-recent window of at most `capacity` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    capacity: usize,
    window: VecDeque<DataPoint>,
}

impl Buffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            window: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Step index of the oldest retained point.
    pub fn oldest_index(&self) -> Option<usize> {
        self.window.front().map(|p| p.k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataPoint> {
        self.window.iter()
    }

    /// Append, evicting the oldest point once over capacity.
    pub fn push(&mut self, pt: DataPoint) -> Result<(), AdaptError> {
        if let Some(last) = self.window.back() {
            if pt.k <= last.k {
                return Err(AdaptError::NonIncreasingIndex { last: last.k, got: pt.k });
            }
            let dims = [
                ("x", last.x.len(), pt.x.len()),
                ("x_next", last.x_next.len(), pt.x_next.len()),
                ("u", last.u.len(), pt.u.len()),
            ];
            for (what, expected, got) in dims {
                if expected != got {
                    return Err(AdaptError::DimensionMismatch { what, expected, got });
                }
            }
        }
        self.window.push_back(pt);
        if self.window.len() > self.capacity {
            self.window.pop_front();
        }
        Ok(())
    }
}

/// Produces the local model `θ*` paired with a transition.
pub trait Linearizer {
    fn linearize_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<LcsParams, ModelError>;
}

/// A globally valid LCS: every point gets the same parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLcs(pub LcsParams);

impl Linearizer for FixedLcs {
    fn linearize_at(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<LcsParams, ModelError> {
        Ok(self.0.clone())
    }
}

/// Anitescu linearization of a rigid-body model at each transition's `(x_k, u_k)`.
#[derive(Debug, Clone)]
pub struct ModelLinearizer<M>(pub M);

impl<M: RigidBodyModel> Linearizer for ModelLinearizer<M> {
    fn linearize_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<LcsParams, ModelError> {
        linearize(&self.0, x, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEntry {
    pub point: DataPoint,
    pub theta: Arc<LcsParams>,
}

/// Buffer entries paired with their local models; entries whose
/// linearization failed are left out and counted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedBuffer {
    pub entries: Vec<AugmentedEntry>,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
struct CacheSlot {
    x: DVector<f64>,
    u: DVector<f64>,
    theta: Option<Arc<LcsParams>>,
}

/// Linearization cache keyed by step index.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    cache: BTreeMap<usize, CacheSlot>,
    linearizations: usize,
}

impl Augmenter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total number of linearizer calls made so far.
    pub fn linearizations(&self) -> usize {
        self.linearizations
    }

    pub fn augment<L: Linearizer + ?Sized>(&mut self, buf: &Buffer, linearizer: &L) -> AugmentedBuffer {
        let keep: Vec<usize> = buf.iter().map(|p| p.k).collect();
        self.cache.retain(|k, _| keep.binary_search(k).is_ok());
        let mut out = AugmentedBuffer::default();
        for pt in buf.iter() {
            let fresh = match self.cache.get(&pt.k) {
                Some(slot) => slot.x != pt.x || slot.u != pt.u,
                None => true,
            };
            if fresh {
                self.linearizations += 1;
                let theta = linearizer.linearize_at(&pt.x, &pt.u).ok().map(Arc::new);
                self.cache.insert(
                    pt.k,
                    CacheSlot {
                        x: pt.x.clone(),
                        u: pt.u.clone(),
                        theta,
                    },
                );
            }
            match &self.cache[&pt.k].theta {
                Some(theta) => out.entries.push(AugmentedEntry {
                    point: pt.clone(),
                    theta: Arc::clone(theta),
                }),
                None => out.skipped += 1,
            }
        }
        out
    }
}

/// Hyperparameters of the residual learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Complementarity weight `ε`.
    pub epsilon: f64,
    /// Stiffness `γ`.
    pub gamma: f64,
    /// Step size `ξ`.
    pub learning_rate: f64,
    /// Prediction-error weight.
    pub q_d: DMatrix<f64>,
    pub capacity: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl LearnConfig {
    /// Defaults with `Q_d` = identity on the velocity half of an `n_x` state.
    pub fn with_state_dim(n_x: usize) -> Self {
        let mut diag = DVector::zeros(n_x);
        diag.rows_mut(n_x / 2, n_x - n_x / 2).fill(1.0);
        Self {
            epsilon: 1e-7,
            gamma: 1e-2,
            learning_rate: 1e-3,
            q_d: DMatrix::from_diagonal(&diag),
            capacity: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: String| Err(AdaptError::InvalidConfig(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.capacity == 0 {
            return bad("capacity must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !self.q_d.is_square() {
            return bad("q_d must be square".into());
        }
        let sym = (&self.q_d + self.q_d.transpose()) * 0.5;
        if (&self.q_d - &sym).amax() > 1e-12 * self.q_d.amax().max(1.0) {
            return bad("q_d must be symmetric".into());
        }
        if sym.symmetric_eigenvalues().min() < -1e-12 {
            return bad("q_d must be positive semidefinite".into());
        }
        Ok(())
    }
}

/// Optimal value and minimizers of one inner problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLoss {
    pub value: f64,
    pub lambda: DVector<f64>,
    pub eta: DVector<f64>,
    /// `p + Fλ* − η*`; the gradient contribution is this over `εγ`.
    pub comp_violation: DVector<f64>,
}

/// `σ_min(F + Fᵀ)`.
pub fn gamma_margin(theta: &LcsParams) -> f64 {
    (&theta.f + theta.f.transpose()).singular_values().min()
}

fn point_loss(pt: &DataPoint, theta: &LcsParams, r: &Residual, cfg: &LearnConfig, entry: usize) -> Result<PointLoss, AdaptError> {
    let nx = theta.n_x();
    let nl = theta.n_lambda();
    let dims = [
        ("x", nx, pt.x.len()),
        ("x_next", nx, pt.x_next.len()),
        ("u", theta.n_u(), pt.u.len()),
        ("residual", nl, r.len()),
        ("q_d", nx, cfg.q_d.nrows()),
    ];
    for (what, expected, got) in dims {
        if expected != got {
            return Err(AdaptError::DimensionMismatch { what, expected, got });
        }
    }
    let sigma_min = gamma_margin(theta);
    if !(cfg.gamma > 0.0 && cfg.gamma < sigma_min) {
        return Err(AdaptError::GammaCondition {
            entry,
            sigma_min,
            gamma: cfg.gamma,
        });
    }
    let z = theta.free_prediction(&pt.x, &pt.u) - &pt.x_next;
    let c_eff = &theta.c + r.as_vector();
    let p = theta.comp_affine(&pt.x, &pt.u, &c_eff);

    // Inner problem multiplied through by εγ so its Hessian is O(1):
    //   ½wᵀHw + gᵀw over w = (λ, η) ≥ 0.
    let eg = cfg.epsilon * cfg.gamma;
    let f = &theta.f;
    let dq = theta.d.transpose() * &cfg.q_d;
    let mut h = DMatrix::zeros(2 * nl, 2 * nl);
    h.view_mut((0, 0), (nl, nl))
        .copy_from(&(&dq * &theta.d * eg + f.transpose() * f));
    let cross = DMatrix::identity(nl, nl) * cfg.gamma - f.transpose();
    h.view_mut((0, nl), (nl, nl)).copy_from(&cross);
    h.view_mut((nl, 0), (nl, nl)).copy_from(&cross.transpose());
    h.view_mut((nl, nl), (nl, nl)).fill_with_identity();
    let mut g = DVector::zeros(2 * nl);
    g.rows_mut(0, nl).copy_from(&(&dq * &z * eg + f.transpose() * &p));
    g.rows_mut(nl, nl).copy_from(&(-&p));

    let qp = ConvexQp::new(h, g, vec![Bound::NonNegative; 2 * nl])
        .map_err(|source| AdaptError::InnerProblem { entry, source })?;
    let sol = solve_convex_qp(&qp, 1e-8);
    if sol.status != QpStatus::Converged {
        return Err(AdaptError::InnerNotConverged {
            entry,
            kkt: sol.kkt_residual,
        });
    }
    let lambda = sol.z.rows(0, nl).into_owned();
    let eta = sol.z.rows(nl, nl).into_owned();
    let comp_violation = &p + f * &lambda - &eta;
    let pred = &theta.d * &lambda + &z;
    let value = 0.5 * pred.dot(&(&cfg.q_d * &pred))
        + (lambda.dot(&eta) + comp_violation.norm_squared() / (2.0 * cfg.gamma)) / cfg.epsilon;
    Ok(PointLoss {
        value,
        lambda,
        eta,
        comp_violation,
    })
}

/// `l_ε` for one transition.
pub fn implicit_loss_point(pt: &DataPoint, theta: &LcsParams, r: &Residual, cfg: &LearnConfig) -> Result<PointLoss, AdaptError> {
    point_loss(pt, theta, r, cfg, 0)
}

/// `L_ε` and its gradient in `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub per_entry: Vec<PointLoss>,
}

/// Sum of per-entry losses and envelope gradients.
pub fn loss_gradient(buf: &AugmentedBuffer, r: &Residual, cfg: &LearnConfig) -> Result<LossGradient, AdaptError> {
    let scale = 1.0 / (cfg.epsilon * cfg.gamma);
    let mut value = 0.0;
    let mut gradient = DVector::zeros(r.len());
    let mut per_entry = Vec::with_capacity(buf.entries.len());
    for (i, e) in buf.entries.iter().enumerate() {
        let pl = point_loss(&e.point, &e.theta, r, cfg, i)?;
        value += pl.value;
        gradient += &pl.comp_violation * scale;
        per_entry.push(pl);
    }
    Ok(LossGradient {
        value,
        gradient,
        per_entry,
    })
}

/// `L_ε` alone.
pub fn total_loss(buf: &AugmentedBuffer, r: &Residual, cfg: &LearnConfig) -> Result<f64, AdaptError> {
    Ok(loss_gradient(buf, r, cfg)?.value)
}

/// Adam moments for the residual coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step with step size `ξ`.
pub fn adam_step(
    r: &Residual,
    grad: &DVector<f64>,
    st: &OptimizerState,
    cfg: &LearnConfig,
) -> Result<(Residual, OptimizerState), AdaptError> {
    let n = r.len();
    for (what, got) in [("gradient", grad.len()), ("first moment", st.m.len()), ("second moment", st.v.len())] {
        if got != n {
            return Err(AdaptError::DimensionMismatch { what, expected: n, got });
        }
    }
    let t = st.t + 1;
    let m = &st.m * cfg.beta1 + grad * (1.0 - cfg.beta1);
    let v = &st.v * cfg.beta2 + grad.component_mul(grad) * (1.0 - cfg.beta2);
    let m_hat_scale = 1.0 / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat_scale = 1.0 / (1.0 - cfg.beta2.powi(t as i32));
    let mut next = r.as_vector().clone();
    for i in 0..n {
        let m_hat = m[i] * m_hat_scale;
        let v_hat = v[i] * v_hat_scale;
        next[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok((Residual(next), OptimizerState { m, v, t }))
}

/// What one learner iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub residual: Residual,
    pub state: OptimizerState,
    /// `L_ε` at the residual before the step.
    pub loss: f64,
    pub grad_norm: f64,
    pub update_ms: f64,
    /// Entries left out because linearization failed.
    pub skipped: usize,
    /// True when there was nothing to learn from and the inputs came back unchanged.
    pub noop: bool,
}

/// One learner iteration: augment, gradient, one optimizer step.
pub fn adapt_update<L: Linearizer + ?Sized>(
    buf: &Buffer,
    r: &Residual,
    st: &OptimizerState,
    linearizer: &L,
    augmenter: &mut Augmenter,
    cfg: &LearnConfig,
) -> Result<AdaptOutcome, AdaptError> {
    let start = Instant::now();
    let aug = augmenter.augment(buf, linearizer);
    if aug.entries.is_empty() {
        return Ok(AdaptOutcome {
            residual: r.clone(),
            state: st.clone(),
            loss: 0.0,
            grad_norm: 0.0,
            update_ms: start.elapsed().as_secs_f64() * 1e3,
            skipped: aug.skipped,
            noop: true,
        });
    }
    let lg = loss_gradient(&aug, r, cfg)?;
    let (residual, state) = adam_step(r, &lg.gradient, st, cfg)?;
    Ok(AdaptOutcome {
        residual,
        state,
        loss: lg.value,
        grad_norm: lg.gradient.norm(),
        update_ms: start.elapsed().as_secs_f64() * 1e3,
        skipped: aug.skipped,
        noop: false,
    })
}
