//! Seeded instance generators and checks shared by the property tests and
//! the acceptance binary. Every check returns `Err` with a description of the
//! first violation.

#![allow(dead_code)]

use acmpc::adapt::{
    adam_step, gamma_margin, implicit_loss_point, loss_gradient, AugmentedBuffer, AugmentedEntry, DataPoint,
    LearnConfig, OptimizerState,
};
use acmpc::c3::{c3_solve, project_complementarity, C3Controller, Metric, MpcConfig, Triple};
use acmpc::harness::{run_experiment, ExperimentConfig, Setup};
use acmpc::lcs::{lcs_step_full, rollout, LcsParams, LcsState, Residual};
use acmpc::models::{
    anitescu_step, cartpole_walls_lcs, contact_jacobian, join_state, linearize, pusher_ball_plant, split_state,
    CartpoleWallsParams, PusherBall, PusherBallParams, RigidBodyModel,
};
use acmpc::solvers::{brute_force_lcp, solve_convex_qp, solve_lcp_lemke, solve_lcp_qp, Bound, ConvexQp, Lcp};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// LCPs

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcpKind {
    Spd,
    /// Positive definite but not symmetric, hence a P-matrix.
    PMatrix,
}

/// `m ≤ 6`, `F = AᵀA/m + 0.1 I` (plus a skew part for [`LcpKind::PMatrix`]).
pub fn random_lcp(seed: u64, kind: LcpKind) -> Lcp {
    let mut rng = rng(seed);
    let m = rng.random_range(1..=6);
    let a = normal_mat(&mut rng, m, m);
    let mut f = a.transpose() * &a / m as f64 + DMatrix::identity(m, m) * 0.1;
    if kind == LcpKind::PMatrix {
        let s = normal_mat(&mut rng, m, m);
        f += &s - s.transpose();
    }
    Lcp::new(normal_vec(&mut rng, m), f).expect("valid lcp")
}

fn complementary(lcp: &Lcp, lambda: &DVector<f64>, who: &str) -> Check {
    let y = lcp.slack(lambda);
    ensure(lambda.min() >= -1e-8, || format!("{who}: λ min {}", lambda.min()))?;
    ensure(y.min() >= -1e-8, || format!("{who}: y min {}", y.min()))?;
    ensure(lambda.dot(&y) <= 1e-8, || format!("{who}: λᵀy = {:e}", lambda.dot(&y)))
}

/// Lemke, the QP route (symmetric `F`) and enumeration agree to `1e-7`, and
/// every answer is complementary to `1e-8`.
pub fn check_lcp_agreement(lcp: &Lcp) -> Check {
    let all = brute_force_lcp(lcp).map_err(|e| e.to_string())?;
    ensure(all.len() == 1, || format!("enumeration found {} solutions of a P-matrix LCP", all.len()))?;
    let oracle = &all[0].lambda;
    complementary(lcp, oracle, "enumeration")?;
    let lemke = solve_lcp_lemke(lcp);
    ensure(lemke.is_solved(), || format!("lemke status {:?}", lemke.status))?;
    complementary(lcp, &lemke.lambda, "lemke")?;
    let d = (&lemke.lambda - oracle).amax();
    ensure(d <= 1e-7, || format!("lemke differs from enumeration by {d:e}"))?;
    let f = lcp.f();
    if (f - f.transpose()).amax() == 0.0 {
        let qp = solve_lcp_qp(lcp).map_err(|e| e.to_string())?;
        ensure(qp.is_solved(), || format!("qp route status {:?}", qp.status))?;
        complementary(lcp, &qp.lambda, "qp route")?;
        let d = (&qp.lambda - oracle).amax();
        ensure(d <= 1e-7, || format!("qp route differs from enumeration by {d:e}"))?;
    }
    Ok(())
}

/// The QP minimizer is no worse than 100 random feasible points.
pub fn check_qp_optimality(seed: u64) -> Check {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=8);
    let rank = rng.random_range(1..=n);
    let a = normal_mat(&mut rng, rank, n);
    let h = a.transpose() * a + DMatrix::identity(n, n) * 1e-3;
    let g = normal_vec(&mut rng, n);
    let bounds: Vec<Bound> = (0..n)
        .map(|_| if rng.random_bool(0.7) { Bound::NonNegative } else { Bound::Free })
        .collect();
    let qp = ConvexQp::new(h, g, bounds).map_err(|e| e.to_string())?;
    let sol = solve_convex_qp(&qp, 1e-10);
    ensure(qp.is_feasible(&sol.z), || "minimizer infeasible".into())?;
    let best = qp.objective(&sol.z);
    for _ in 0..100 {
        let mut z = normal_vec(&mut rng, n) * 2.0;
        qp.project(&mut z);
        let v = qp.objective(&z);
        ensure(best <= v + 1e-9 * (1.0 + v.abs()), || format!("feasible point beats minimizer: {v} < {best}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// LCS

/// A random LCS with a positive definite (P-matrix) `F`.
pub fn random_lcs(rng: &mut ChaCha8Rng) -> LcsParams {
    let nx = rng.random_range(1..=4);
    let nu = rng.random_range(1..=2);
    let nl = rng.random_range(1..=3);
    let a = normal_mat(rng, nl, nl);
    let f = a.transpose() * &a / nl as f64 + DMatrix::identity(nl, nl) * 0.5;
    LcsParams::new(
        normal_mat(rng, nx, nx) * 0.5,
        normal_mat(rng, nx, nu),
        normal_mat(rng, nx, nl),
        normal_vec(rng, nx),
        normal_mat(rng, nl, nx),
        f,
        normal_mat(rng, nl, nu),
        normal_vec(rng, nl),
    )
    .expect("valid lcs")
}

/// Stepping with `r` equals stepping the model with `c ← c + r` and zero
/// residual, bit for bit; a zero residual changes nothing.
pub fn check_residual_shift(seed: u64) -> Check {
    let mut rng = rng(seed);
    let theta = random_lcs(&mut rng);
    let x = normal_vec(&mut rng, theta.n_x());
    let u = normal_vec(&mut rng, theta.n_u());
    let r = Residual(normal_vec(&mut rng, theta.n_lambda()));
    let zero = Residual::zeros(theta.n_lambda());
    let with_r = lcs_step_full(&x, &u, &theta, &r).map_err(|e| e.to_string())?;
    let shifted = lcs_step_full(&x, &u, &theta.shifted(&r), &zero).map_err(|e| e.to_string())?;
    ensure(with_r == shifted, || format!("shifted step differs: {with_r:?} vs {shifted:?}"))?;
    let plain = lcs_step_full(&x, &u, &theta, &zero).map_err(|e| e.to_string())?;
    let again = lcs_step_full(&x, &u, &theta.shifted(&zero), &zero).map_err(|e| e.to_string())?;
    ensure(plain == again, || "zero residual changed the step".into())
}

/// `λ_kᵀ(E x_k + F λ_k + H u_k + c + r) ≤ 1e-8` along a rollout.
pub fn check_rollout_complementarity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut theta = random_lcs(&mut rng);
    // Keep the rollout bounded.
    let rho = theta.a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
    if rho > 0.9 {
        theta.a *= 0.9 / rho;
    }
    theta.d *= 0.1;
    let r = Residual(normal_vec(&mut rng, theta.n_lambda()));
    let inputs: Vec<DVector<f64>> = (0..10).map(|_| normal_vec(&mut rng, theta.n_u())).collect();
    let x0 = LcsState::new(normal_vec(&mut rng, theta.n_x()));
    let ro = rollout(&x0, &inputs, &theta, &r).map_err(|e| e.to_string())?;
    for k in 0..inputs.len() {
        let lam = &ro.forces[k];
        let terms = [
            &theta.e * &ro.states[k],
            &theta.f * lam,
            &theta.h * &inputs[k],
            theta.c.clone(),
            r.as_vector().clone(),
        ];
        let y = terms.iter().fold(DVector::zeros(lam.len()), |acc, t| acc + t);
        // Recomputing y loses bits in proportion to the size of its terms.
        let scale = 1.0 + terms.iter().map(|t| t.amax()).fold(0.0, f64::max);
        ensure(lam.min() >= 0.0 && y.min() >= -1e-8 * scale, || format!("step {k}: sign violated"))?;
        ensure(lam.dot(&y) <= 1e-8 * scale * (1.0 + lam.amax()), || format!("step {k}: λᵀy = {:e}", lam.dot(&y)))?;
        ensure(lam.dot(&ro.slacks[k]) <= 1e-8, || format!("step {k}: reported λᵀy = {:e}", lam.dot(&ro.slacks[k])))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rigid-body models

/// A pusher-ball configuration with the finger within a few millimetres of
/// the ball (in contact or about to be) and random velocities and input.
pub fn random_pusher_contact(rng: &mut ChaCha8Rng) -> (PusherBall, DVector<f64>, DVector<f64>) {
    let params = PusherBallParams {
        mu: rng.random_range(0.1..1.0),
        finger_mass: rng.random_range(0.2..2.0),
        ball_mass: rng.random_range(0.05..1.0),
        ..PusherBallParams::default()
    };
    let model = pusher_ball_plant(&params).expect("valid params");
    let ball = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dist = params.radius_true + rng.random_range(-0.003..0.003);
    let finger = [ball[0] - dist * angle.cos(), ball[1] - dist * angle.sin()];
    let q = DVector::from_column_slice(&[finger[0], finger[1], ball[0], ball[1]]);
    let v = normal_vec(rng, 4) * 0.1;
    let u = DVector::from_column_slice(&[finger[0], finger[1]]) + normal_vec(rng, 2) * 0.01;
    (model, join_state(&q, &v), u)
}

/// Velocity update, position update and complementarity of one step hold to
/// `1e-9`.
pub fn check_step_equations(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (model, x, u) = random_pusher_contact(&mut rng);
    let (q, v) = split_state(&x, model.n_q());
    let s = anitescu_step(&model, &q, &v, &u).map_err(|e| e.to_string())?;
    let dt = model.dt();
    let jc = contact_jacobian(&model, &q);
    let m = model.mass_matrix(&q);
    let momentum = &m * (&s.v_next - &v) - (model.input_map(&q) * &u - model.bias(&q, &v)) * dt - jc.transpose() * &s.lambda;
    ensure(momentum.amax() <= 1e-9, || format!("momentum balance off by {:e}", momentum.amax()))?;
    let pos = &s.q_next - &q - &s.v_next * dt;
    ensure(pos.amax() <= 1e-12, || format!("position update off by {:e}", pos.amax()))?;
    let gap = model.gap(&q)[0];
    let slack = DVector::from_element(model.n_lambda(), gap / dt) + &jc * &s.v_next
        + &s.lambda * model.contact_regularization();
    ensure(s.lambda.min() >= 0.0 && slack.min() >= -1e-9, || format!("sign violated: {slack:?}"))?;
    ensure(s.lambda.dot(&slack).abs() <= 1e-9, || format!("λᵀy = {:e}", s.lambda.dot(&slack)))
}

/// With no spring, no drag and zero input, kinetic energy never grows
/// across a contact step.
pub fn check_energy_dissipation(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (model, x, _) = random_pusher_contact(&mut rng);
    let params = PusherBallParams {
        finger_stiffness: 0.0,
        finger_damping: 0.0,
        ball_drag: 0.0,
        ..model.params().clone()
    };
    let model = pusher_ball_plant(&params).map_err(|e| e.to_string())?;
    let (mut q, mut v) = split_state(&x, 4);
    // Start just outside contact: penetration recovery would add energy.
    let n = DVector::from_column_slice(&[q[2] - q[0], q[3] - q[1]]).normalize();
    let dist = params.radius_true + rng.random_range(0.0..0.003);
    q[0] = q[2] - dist * n[0];
    q[1] = q[3] - dist * n[1];
    // Finger heading into the ball.
    v[0] += 0.5 * n[0];
    v[1] += 0.5 * n[1];
    let u = DVector::zeros(2);
    // Constant mass matrix.
    let mass = model.mass_matrix(&q);
    let kinetic = |v: &DVector<f64>| 0.5 * v.dot(&(&mass * v));
    let mut e = kinetic(&v);
    for k in 0..20 {
        let s = anitescu_step(&model, &q, &v, &u).map_err(|e| e.to_string())?;
        q = s.q_next;
        v = s.v_next;
        let next = kinetic(&v);
        ensure(next <= e + 1e-9, || format!("step {k}: kinetic energy rose {e} -> {next}"))?;
        e = next;
    }
    Ok(())
}

/// The local LCS reproduces the nonlinear step at its own linearization point.
pub fn check_linearization_exact(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (model, x, u) = random_pusher_contact(&mut rng);
    let theta = linearize(&model, &x, &u).map_err(|e| e.to_string())?;
    let lin = lcs_step_full(&x, &u, &theta, &Residual::zeros(theta.n_lambda())).map_err(|e| e.to_string())?;
    let (q, v) = split_state(&x, model.n_q());
    let s = anitescu_step(&model, &q, &v, &u).map_err(|e| e.to_string())?;
    let d = (&lin.x_next - join_state(&s.q_next, &s.v_next)).amax();
    ensure(d <= 1e-9, || format!("state differs by {d:e}"))?;
    let d = (&lin.lambda - &s.lambda).amax();
    ensure(d <= 1e-9, || format!("force differs by {d:e}"))
}

/// `F*` is symmetric PSD before regularization and PD after, and leaves room
/// for `γ = 1e-2` in the learner.
pub fn check_contact_matrix(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (model, x, u) = random_pusher_contact(&mut rng);
    let theta = linearize(&model, &x, &u).map_err(|e| e.to_string())?;
    let f = &theta.f;
    let asym = (f - f.transpose()).amax();
    ensure(asym <= 1e-12 * f.amax().max(1.0), || format!("F* asymmetric by {asym:e}"))?;
    let nl = theta.n_lambda();
    let bare = f - DMatrix::identity(nl, nl) * model.contact_regularization();
    let lo = bare.symmetric_eigenvalues().min();
    ensure(lo >= -1e-9, || format!("unregularized F* has eigenvalue {lo:e}"))?;
    let lo = f.symmetric_eigenvalues().min();
    ensure(lo > 0.0, || format!("regularized F* has eigenvalue {lo:e}"))?;
    let margin = gamma_margin(&theta);
    ensure(margin > 1e-2, || format!("σ_min(F* + F*ᵀ) = {margin:e} leaves no room for γ = 1e-2"))
}

// ---------------------------------------------------------------------------
// Learner

/// A linearized pusher entry with a transition from a randomly perturbed
/// true radius, and a random residual.
pub fn random_learning_instance(rng: &mut ChaCha8Rng) -> (AugmentedBuffer, Residual) {
    let (model, x, u) = random_pusher_contact(rng);
    let theta = linearize(&model, &x, &u).expect("linearization");
    let truth = pusher_ball_plant(&PusherBallParams {
        radius_true: model.params().radius_true + rng.random_range(-0.006..0.006),
        ..model.params().clone()
    })
    .expect("valid params");
    let (q, v) = split_state(&x, 4);
    let s = anitescu_step(&truth, &q, &v, &u).expect("step");
    let entry = AugmentedEntry {
        point: DataPoint {
            x_next: join_state(&s.q_next, &s.v_next),
            x,
            u,
            k: 0,
        },
        theta: Arc::new(theta),
    };
    let r = Residual(normal_vec(rng, 2) * 0.3);
    (
        AugmentedBuffer {
            entries: vec![entry],
            skipped: 0,
        },
        r,
    )
}

pub fn pusher_learn_config() -> LearnConfig {
    let mut cfg = LearnConfig::with_state_dim(8);
    cfg.q_d = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1e5, 1e5]));
    cfg
}

/// Envelope gradient against central differences of `L_ε` with `h = 1e-6`;
/// returns the relative error.
pub fn gradient_fd_error(seed: u64) -> Result<f64, String> {
    let mut rng = rng(seed);
    let (buf, r) = random_learning_instance(&mut rng);
    let cfg = pusher_learn_config();
    let lg = loss_gradient(&buf, &r, &cfg).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut fd = DVector::zeros(r.len());
    for i in 0..r.len() {
        let mut plus = r.clone();
        plus.0[i] += h;
        let mut minus = r.clone();
        minus.0[i] -= h;
        let lp = loss_gradient(&buf, &plus, &cfg).map_err(|e| e.to_string())?.value;
        let lm = loss_gradient(&buf, &minus, &cfg).map_err(|e| e.to_string())?.value;
        fd[i] = (lp - lm) / (2.0 * h);
    }
    let denom = lg.gradient.norm().max(fd.norm()).max(1e-12);
    Ok((&lg.gradient - &fd).norm() / denom)
}

/// Loss is non-negative and vanishes on data the model explains; an entry's
/// gradient is zero exactly when neither model nor data has contact.
pub fn check_loss_structure(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (buf, r) = random_learning_instance(&mut rng);
    let cfg = pusher_learn_config();
    let lg = loss_gradient(&buf, &r, &cfg).map_err(|e| e.to_string())?;
    ensure(lg.value >= 0.0, || format!("negative loss {}", lg.value))?;
    for pl in &lg.per_entry {
        let theta = &buf.entries[0].theta;
        let pt = &buf.entries[0].point;
        let p = theta.comp_affine(&pt.x, &pt.u, &(&theta.c + r.as_vector()));
        let flat = pl.lambda.amax() == 0.0 && pl.eta == p;
        let zero = pl.comp_violation.amax() == 0.0;
        ensure(flat == zero, || format!("flat = {flat} but zero gradient = {zero}: {:?}", pl.comp_violation))?;
    }
    // Data generated by the model itself is explained exactly.
    let e = &buf.entries[0];
    let own = lcs_step_full(&e.point.x, &e.point.u, &e.theta, &r).map_err(|e| e.to_string())?;
    let pt = DataPoint {
        x_next: own.x_next,
        ..e.point.clone()
    };
    let pl = implicit_loss_point(&pt, &e.theta, &r, &cfg).map_err(|e| e.to_string())?;
    ensure(pl.value <= 1e-6 * (1.0 + pt.x_next.norm()), || format!("model-generated data has loss {:e}", pl.value))
}

/// One optimizer step with `ξ = 1e-6` from a fresh state does not raise `L_ε`.
pub fn check_descent(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (buf, r) = random_learning_instance(&mut rng);
    let cfg = LearnConfig {
        learning_rate: 1e-6,
        ..pusher_learn_config()
    };
    let lg = loss_gradient(&buf, &r, &cfg).map_err(|e| e.to_string())?;
    let (next, _) = adam_step(&r, &lg.gradient, &OptimizerState::new(r.len()), &cfg).map_err(|e| e.to_string())?;
    let after = loss_gradient(&buf, &next, &cfg).map_err(|e| e.to_string())?.value;
    ensure(after <= lg.value * (1.0 + 1e-12) + 1e-12, || format!("loss rose {} -> {after}", lg.value))
}

// ---------------------------------------------------------------------------
// Controller

pub fn cartpole_mpc() -> (LcsParams, MpcConfig) {
    let (truth, _) = cartpole_walls_lcs(&CartpoleWallsParams::default()).expect("default params");
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[100.0, 10.0, 1.0, 1.0]));
    let r = DMatrix::identity(1, 1) * 0.1;
    let qn = acmpc::c3::solve_dare(&truth.a, &truth.b, &q, &r).expect("riccati solution");
    let mut cfg = MpcConfig::new(q, r, qn);
    cfg.metric = Metric {
        x: 1000.0,
        lambda: 1000.0,
        u: 1.0,
    };
    (truth, cfg)
}

pub fn random_cartpole_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_column_slice(&[
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.0..1.0),
    ])
}

/// Every step of the returned plan is exactly complementary.
pub fn check_plan_complementarity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (theta, cfg) = cartpole_mpc();
    let x0 = random_cartpole_state(&mut rng);
    let r = Residual(normal_vec(&mut rng, 2) * 0.05);
    let plan = c3_solve(&x0, &theta, &r, &cfg).map_err(|e| e.to_string())?;
    for (k, (lam, y)) in plan.forces.iter().zip(&plan.slacks).enumerate() {
        ensure(lam.min() >= 0.0 && y.min() >= 0.0, || format!("step {k}: negative factor {lam:?} {y:?}"))?;
        ensure(lam.component_mul(y).amax() == 0.0, || format!("step {k}: λ ∘ y = {:?}", lam.component_mul(y)))?;
        let recomputed = &theta.e * &plan.states[k] + &theta.f * lam + &theta.h * &plan.inputs[k] + &theta.c + r.as_vector();
        let d = (&recomputed - y).amax();
        ensure(d <= 1e-9, || format!("step {k}: reported slack off by {d:e}"))?;
    }
    Ok(())
}

/// Solving with `r` equals solving the shifted model with zero residual.
pub fn check_controller_residual_shift(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (theta, cfg) = cartpole_mpc();
    let x0 = random_cartpole_state(&mut rng);
    let r = Residual(normal_vec(&mut rng, 2) * 0.05);
    let a = c3_solve(&x0, &theta, &r, &cfg).map_err(|e| e.to_string())?;
    let b = c3_solve(&x0, &theta.shifted(&r), &Residual::zeros(2), &cfg).map_err(|e| e.to_string())?;
    ensure(a.states == b.states && a.forces == b.forces && a.inputs == b.inputs, || "plans differ".into())
}

/// Re-solves every control step of a shipped cart-pole run, cold and warm,
/// and counts solves whose residual grows by more than 1.5x in the second
/// half of the ADMM iterations. Returns (solves, violations).
pub fn admm_tail_violations(config: &str, max_secs: f64) -> Result<(usize, usize), String> {
    let mut cfg = load_config(config)?;
    cfg.duration_s = cfg.duration_s.min(max_secs);
    let rec = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let setup = Setup::from_config(&cfg).map_err(|e| e.to_string())?;
    let mpc = cfg.mpc_config().map_err(|e| e.to_string())?;
    let mut ctl = C3Controller::new(mpc.clone());
    let grows = |res: &[f64]| {
        let half = res.len() / 2;
        (half.max(1)..res.len()).any(|i| res[i] > 1.5 * res[i - 1] + 1e-12)
    };
    let (mut n, mut bad) = (0, 0);
    for row in &rec.control {
        let theta = setup.linearizer.linearize_at(&row.x, &row.u).map_err(|e| e.to_string())?;
        let r = Residual(row.r.clone());
        let cold = c3_solve(&row.x, &theta, &r, &mpc).map_err(|e| e.to_string())?;
        let warm = ctl.solve(&row.x, &theta, &r, None).map_err(|e| e.to_string())?;
        for plan in [cold, warm] {
            n += 1;
            bad += grows(&plan.primal_residuals) as usize;
        }
    }
    Ok((n, bad))
}

/// Loads a shipped config from the workspace configs/ directory.
pub fn load_config(name: &str) -> Result<ExperimentConfig, String> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).map_err(|e| e.to_string())
}

/// Projection output is complementary, and projecting it again is a no-op.
pub fn check_projection(seed: u64) -> Check {
    let mut rng = rng(seed);
    let theta = random_lcs(&mut rng);
    let t = Triple {
        x: normal_vec(&mut rng, theta.n_x()),
        lambda: normal_vec(&mut rng, theta.n_lambda()),
        u: normal_vec(&mut rng, theta.n_u()),
    };
    let r = Residual(normal_vec(&mut rng, theta.n_lambda()) * 0.1);
    let metric = Metric {
        x: rng.random_range(0.1..10.0),
        lambda: rng.random_range(0.1..10.0),
        u: rng.random_range(0.1..10.0),
    };
    let p = project_complementarity(&t, &theta, &r, &metric, false).ok_or("no feasible projection")?;
    let z = &p.triple;
    let y = &theta.e * &z.x + &theta.f * &z.lambda + &theta.h * &z.u + &theta.c + r.as_vector();
    ensure(z.lambda.min() >= 0.0 && y.min() >= -1e-9, || format!("sign violated: λ {:?} y {:?}", z.lambda, y))?;
    ensure(z.lambda.dot(&y).abs() <= 1e-9, || format!("λᵀy = {:e}", z.lambda.dot(&y)))?;
    let again = project_complementarity(z, &theta, &r, &metric, false).ok_or("reprojection failed")?;
    let d = (&again.triple.x - &z.x).amax().max((&again.triple.lambda - &z.lambda).amax()).max((&again.triple.u - &z.u).amax());
    ensure(d <= 1e-9, || format!("reprojection moved the point by {d:e}"))
}
