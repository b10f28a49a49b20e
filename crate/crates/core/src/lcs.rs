//! Linear complementarity systems
//!
//! ```text
//! x_{k+1} = A x_k + B u_k + D λ_k + d
//! 0 ≤ λ_k ⊥ E x_k + F λ_k + H u_k + c + r ≥ 0
//! ```
//!
//! with an optional learned residual `r` on the complementarity row.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solvers::{self, Lcp, LcpSolution, LcpStatus, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcsError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("LCP solve failed ({status:?}) at x = {x:?}, u = {u:?}, q = {q:?}")]
    StepFailure {
        status: LcpStatus,
        x: Vec<f64>,
        u: Vec<f64>,
        q: Vec<f64>,
    },
    #[error("rollout failed at step {index}: {source}")]
    RolloutFailure {
        index: usize,
        #[source]
        source: Box<LcsError>,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("malformed LCS document: {0}")]
    Document(String),
}

fn mismatch(what: impl Into<String>, expected: usize, got: usize) -> LcsError {
    LcsError::DimensionMismatch {
        what: what.into(),
        expected,
        got,
    }
}

/// The eight matrices of one local hybrid model.
#[derive(Debug, Clone, PartialEq)]
pub struct LcsParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_vec: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LcsParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        d_vec: DVector<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        c: DVector<f64>,
    ) -> Result<Self, LcsError> {
        let p = Self {
            a,
            b,
            d,
            d_vec,
            e,
            f,
            h,
            c,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_lambda(&self) -> usize {
        self.f.nrows()
    }

    pub fn validate(&self) -> Result<(), LcsError> {
        let (nx, nu, nl) = (self.n_x(), self.n_u(), self.n_lambda());
        let shapes: [(&str, (usize, usize), (usize, usize)); 8] = [
            ("A", self.a.shape(), (nx, nx)),
            ("B", self.b.shape(), (nx, nu)),
            ("D", self.d.shape(), (nx, nl)),
            ("d", self.d_vec.shape(), (nx, 1)),
            ("E", self.e.shape(), (nl, nx)),
            ("F", self.f.shape(), (nl, nl)),
            ("H", self.h.shape(), (nl, nu)),
            ("c", self.c.shape(), (nl, 1)),
        ];
        for (name, got, want) in shapes {
            if got.0 != want.0 {
                return Err(mismatch(format!("{name} rows"), want.0, got.0));
            }
            if got.1 != want.1 {
                return Err(mismatch(format!("{name} cols"), want.1, got.1));
            }
        }
        if nl == 0 {
            return Err(mismatch("n_lambda", 1, 0));
        }
        let all = [
            &self.a, &self.b, &self.d, &self.e, &self.f, &self.h,
        ];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite()))
            || self.d_vec.iter().chain(self.c.iter()).any(|v| !v.is_finite())
        {
            return Err(LcsError::NonFinite("LCS parameters"));
        }
        Ok(())
    }

    /// Copy with `c ← c + r`.
    pub fn shifted(&self, r: &Residual) -> Self {
        let mut p = self.clone();
        p.c = &self.c + &r.0;
        p
    }

    /// `A x + B u + d`: the state update with zero contact force.
    pub fn free_prediction(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.d_vec
    }

    /// `E x + H u + c_eff` where `c_eff` is the already-shifted offset.
    pub fn comp_affine(&self, x: &DVector<f64>, u: &DVector<f64>, c_eff: &DVector<f64>) -> DVector<f64> {
        &self.e * x + &self.h * u + c_eff
    }

    /// Whether lcs stepping will take the convex route.
    pub fn has_spd_f(&self) -> bool {
        let scale = self.f.amax().max(1.0);
        (&self.f - self.f.transpose()).amax() <= 1e-12 * scale && self.f.clone().cholesky().is_some()
    }

    pub fn to_document(&self) -> LcsDocument {
        LcsDocument {
            n_x: self.n_x(),
            n_u: self.n_u(),
            n_lambda: self.n_lambda(),
            a: rows(&self.a),
            b: rows(&self.b),
            d: rows(&self.d),
            d_vec: self.d_vec.iter().copied().collect(),
            e: rows(&self.e),
            f: rows(&self.f),
            h: rows(&self.h),
            c: self.c.iter().copied().collect(),
        }
    }

    pub fn from_document(doc: &LcsDocument) -> Result<Self, LcsError> {
        let (nx, nu, nl) = (doc.n_x, doc.n_u, doc.n_lambda);
        Self::new(
            matrix("A", &doc.a, nx, nx)?,
            matrix("B", &doc.b, nx, nu)?,
            matrix("D", &doc.d, nx, nl)?,
            vector("d", &doc.d_vec, nx)?,
            matrix("E", &doc.e, nl, nx)?,
            matrix("F", &doc.f, nl, nl)?,
            matrix("H", &doc.h, nl, nu)?,
            vector("c", &doc.c, nl)?,
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("LCS document serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, LcsError> {
        let doc: LcsDocument = toml::from_str(text).map_err(|e| LcsError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Structured-text form of [`LcsParams`]: explicit dimensions, row-major
/// nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcsDocument {
    pub n_x: usize,
    pub n_u: usize,
    pub n_lambda: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub d_vec: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn matrix(name: &str, data: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, LcsError> {
    if data.len() != nrows {
        return Err(mismatch(format!("{name} rows"), nrows, data.len()));
    }
    // A zero-column matrix serializes as a list of empty rows.
    for row in data {
        if row.len() != ncols {
            return Err(mismatch(format!("{name} cols"), ncols, row.len()));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| data[i][j]))
}

pub(crate) fn vector(name: &str, data: &[f64], n: usize) -> Result<DVector<f64>, LcsError> {
    if data.len() != n {
        return Err(mismatch(name.to_string(), n, data.len()));
    }
    Ok(DVector::from_column_slice(data))
}

/// Learned constant offset on the complementarity row.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual(pub DVector<f64>);

impl Residual {
    pub fn zeros(n_lambda: usize) -> Self {
        Self(DVector::zeros(n_lambda))
    }

    pub fn new(values: DVector<f64>) -> Result<Self, LcsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LcsError::NonFinite("residual"));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, LcsError> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            r_comp: &'a [f64],
        }
        toml::to_string(&Doc { r_comp: self.as_slice() }).expect("residual serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, LcsError> {
        #[derive(Deserialize)]
        struct Doc {
            r_comp: Vec<f64>,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| LcsError::Document(e.to_string()))?;
        Self::from_slice(&doc.r_comp)
    }
}

/// State of an LCS trajectory at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcsState {
    pub x: DVector<f64>,
    pub k: usize,
}

impl LcsState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, k: 0 }
    }
}

/// Everything one step produces: next state, force, and the slack
/// `E x + F λ + H u + c + r` as reported by the LCP solver (exactly zero on
/// the contact support).
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x_next: DVector<f64>,
    pub lambda: DVector<f64>,
    pub slack: DVector<f64>,
}

fn check_inputs(x: &DVector<f64>, u: &DVector<f64>, theta: &LcsParams, r: &Residual) -> Result<(), LcsError> {
    if x.len() != theta.n_x() {
        return Err(mismatch("state", theta.n_x(), x.len()));
    }
    if u.len() != theta.n_u() {
        return Err(mismatch("input", theta.n_u(), u.len()));
    }
    if r.len() != theta.n_lambda() {
        return Err(mismatch("residual", theta.n_lambda(), r.len()));
    }
    Ok(())
}

/// Solve `LCP(q, F)` choosing the convex route for symmetric positive
/// definite `F` and Lemke's method otherwise.
pub fn solve_contact_lcp(q: DVector<f64>, f: &DMatrix<f64>) -> Result<LcpSolution, SolverError> {
    let lcp = Lcp::new(q, f.clone())?;
    let scale = f.amax().max(1.0);
    let symmetric = (f - f.transpose()).amax() <= 1e-12 * scale;
    if symmetric {
        if let Ok(sol) = solvers::solve_lcp_qp(&lcp) {
            if sol.is_solved() {
                return Ok(sol);
            }
        }
    }
    Ok(solvers::solve_lcp_lemke(&lcp))
}

/// One step of the residual-augmented LCS, returning the slack as well.
pub fn lcs_step_full(
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &LcsParams,
    r: &Residual,
) -> Result<StepOutcome, LcsError> {
    check_inputs(x, u, theta, r)?;
    let c_eff = &theta.c + &r.0;
    let q = theta.comp_affine(x, u, &c_eff);
    let sol = solve_contact_lcp(q.clone(), &theta.f)?;
    if !sol.is_solved() {
        return Err(LcsError::StepFailure {
            status: sol.status,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            q: q.iter().copied().collect(),
        });
    }
    let x_next = theta.free_prediction(x, u) + &theta.d * &sol.lambda;
    Ok(StepOutcome {
        x_next,
        lambda: sol.lambda,
        slack: sol.y,
    })
}

/// `(x_{k+1}, λ_k) = L(x_k, u_k, θ, r)`.
pub fn lcs_step(
    state: &LcsState,
    u: &DVector<f64>,
    theta: &LcsParams,
    r: &Residual,
) -> Result<(LcsState, DVector<f64>), LcsError> {
    let out = lcs_step_full(&state.x, u, theta, r)?;
    Ok((
        LcsState {
            x: out.x_next,
            k: state.k + 1,
        },
        out.lambda,
    ))
}

/// A simulated LCS trajectory: `inputs.len() + 1` states, `inputs.len()`
/// forces and slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub forces: Vec<DVector<f64>>,
    pub slacks: Vec<DVector<f64>>,
}

pub fn rollout(
    x0: &LcsState,
    inputs: &[DVector<f64>],
    theta: &LcsParams,
    r: &Residual,
) -> Result<Rollout, LcsError> {
    if inputs.is_empty() {
        return Err(mismatch("input sequence length", 1, 0));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut forces = Vec::with_capacity(inputs.len());
    let mut slacks = Vec::with_capacity(inputs.len());
    states.push(x0.x.clone());
    for (index, u) in inputs.iter().enumerate() {
        let out = lcs_step_full(&states[index], u, theta, r).map_err(|e| LcsError::RolloutFailure {
            index,
            source: Box::new(e),
        })?;
        states.push(out.x_next);
        forces.push(out.lambda);
        slacks.push(out.slack);
    }
    Ok(Rollout {
        states,
        forces,
        slacks,
    })
}
