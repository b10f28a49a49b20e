//! Closed-loop simulation: plant, controller and learner.
//!
//! Deterministic mode interleaves the learner every `⌈control/adapt⌉` control
//! periods on one thread; the run is then a pure function of the config and
//! seed, and all timing columns are zero. Realtime mode paces the controller
//! by the wall clock and runs the learner on a second thread. The two share
//! data only through versioned `Arc` snapshots: the controller publishes its
//! buffer, the learner publishes `(version, r, checksum)`, and each side picks
//! up the latest value without waiting on the other.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ExperimentConfig, ExperimentKind, RunMode};
use super::logs::{percentile, residual_checksum, AdaptRow, ControlRow, RunRecord, SolveRow, Summary};
use super::plant::{unwrap_angles, Setup};
use super::HarnessError;
use crate::adapt::{adapt_update, Augmenter, Buffer, DataPoint, LearnConfig, Linearizer, OptimizerState};
use crate::c3::{plan_to_target, C3Controller, MpcConfig};
use crate::lcs::Residual;

/// Residual published by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSnapshot {
    pub version: u64,
    pub r: Residual,
    pub checksum: u64,
}

impl ResidualSnapshot {
    fn new(version: u64, r: Residual) -> Self {
        let checksum = residual_checksum(r.as_vector(), version);
        Self { version, r, checksum }
    }
}

struct Observer {
    rng: ChaCha8Rng,
    noise: Vec<Option<Normal<f64>>>,
}

impl Observer {
    fn new(cfg: &ExperimentConfig) -> Self {
        let noise = cfg
            .noise_std
            .iter()
            .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated std")))
            .collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise,
        }
    }

    fn observe(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for (yi, n) in y.iter_mut().zip(&self.noise) {
            if let Some(n) = n {
                *yi += n.sample(&mut self.rng);
            }
        }
        y
    }
}

struct ControlLoop<'a> {
    setup: &'a mut Setup,
    controller: C3Controller,
    observer: Observer,
    deterministic: bool,
    dt: f64,
    x: DVector<f64>,
    obs: DVector<f64>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
    u_last: DVector<f64>,
    kicks: HashMap<usize, DVector<f64>>,
    control: Vec<ControlRow>,
    solve: Vec<SolveRow>,
    failures: usize,
}

impl<'a> ControlLoop<'a> {
    fn new(cfg: &ExperimentConfig, setup: &'a mut Setup, mpc: MpcConfig) -> Self {
        let mut kicks: HashMap<usize, DVector<f64>> = HashMap::new();
        for d in &cfg.disturbances {
            let step = (d.time_s * cfg.control_rate_hz).round() as usize;
            let delta = DVector::from_column_slice(&d.state_delta);
            kicks
                .entry(step)
                .and_modify(|acc| *acc += &delta)
                .or_insert(delta);
        }
        let x = DVector::from_column_slice(&cfg.initial_state);
        let u_last = setup.initial_input.clone();
        Self {
            setup,
            controller: C3Controller::new(mpc),
            observer: Observer::new(cfg),
            deterministic: cfg.mode == RunMode::Deterministic,
            dt: 1.0 / cfg.control_rate_hz,
            obs: x.clone(),
            x,
            prev: None,
            u_last,
            kicks,
            control: Vec::new(),
            solve: Vec::new(),
            failures: 0,
        }
    }

    /// Measure the state. Returns the transition that ended here, measured
    /// before any disturbance scheduled for this step hits the plant.
    fn begin(&mut self, step: usize) -> Option<DataPoint> {
        let measured = self.observer.observe(&self.x);
        let point = self.prev.take().map(|(x, u)| DataPoint {
            x_next: measured.clone(),
            x,
            u,
            k: step - 1,
        });
        self.obs = match self.kicks.get(&step) {
            Some(delta) => {
                self.x += delta;
                self.observer.observe(&self.x)
            }
            None => measured,
        };
        point
    }

    /// Plan from the current measurement with the given residual and step the plant.
    fn act(&mut self, step: usize, snap: &ResidualSnapshot) -> Result<(), HarnessError> {
        let obs = self.obs.clone();
        let theta = self
            .setup
            .linearizer
            .linearize_at(&obs, &self.u_last)
            .map_err(|e| HarnessError::Plant(format!("prior linearization failed at step {step}: {e}")))?;
        let reference = self.setup.task.reference(&obs, self.controller.config().horizon);
        let started = Instant::now();
        let plan = self.controller.solve(&obs, &theta, &snap.r, reference.as_ref());
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let solve_ms = if self.deterministic { 0.0 } else { elapsed };
        let (u, fallback) = match plan {
            Ok(plan) => {
                self.solve.push(SolveRow {
                    step,
                    solve_ms,
                    qp_solves: plan.qp_solves,
                    projections: plan.projections,
                    primal_residual: plan.primal_residuals.last().copied().unwrap_or(0.0),
                    dual_residual: plan.dual_residuals.last().copied().unwrap_or(0.0),
                    modes: plan.engaged_modes(),
                });
                (plan.u0().clone(), false)
            }
            Err(_) => {
                self.failures += 1;
                self.controller.reset();
                (self.u_last.clone(), true)
            }
        };
        let (x_d, lambda_d) = plan_to_target(&obs, &u, &theta, &snap.r)
            .unwrap_or_else(|_| (obs.clone(), DVector::zeros(theta.n_lambda())));
        let out = self.setup.plant.step(&self.x, &u)?;
        self.control.push(ControlRow {
            step,
            time_s: step as f64 * self.dt,
            x: self.x.clone(),
            u: u.clone(),
            lambda: out.lambda,
            x_d,
            lambda_d,
            r: snap.r.as_vector().clone(),
            residual_version: snap.version,
            residual_checksum: snap.checksum,
            solve_ms,
            fallback,
        });
        if !out.x_next.iter().all(|v| v.is_finite()) {
            return Err(HarnessError::Plant(format!("plant state became non-finite at step {step}")));
        }
        self.prev = Some((obs, u.clone()));
        self.u_last = u;
        self.x = out.x_next;
        Ok(())
    }
}

struct Learner {
    linearizer: Arc<dyn Linearizer + Send + Sync>,
    augmenter: Augmenter,
    cfg: LearnConfig,
    state: OptimizerState,
    r: Residual,
    version: u64,
    rows: Vec<AdaptRow>,
    failures: usize,
    deterministic: bool,
}

impl Learner {
    fn new(linearizer: Arc<dyn Linearizer + Send + Sync>, cfg: LearnConfig, n_lambda: usize, deterministic: bool) -> Self {
        Self {
            linearizer,
            augmenter: Augmenter::new(),
            cfg,
            state: OptimizerState::new(n_lambda),
            r: Residual::zeros(n_lambda),
            version: 0,
            rows: Vec::new(),
            failures: 0,
            deterministic,
        }
    }

    /// One update; failures keep the current residual.
    fn update(&mut self, buf: &Buffer, time_s: f64) -> Option<ResidualSnapshot> {
        match adapt_update(buf, &self.r, &self.state, self.linearizer.as_ref(), &mut self.augmenter, &self.cfg) {
            Ok(out) if out.noop => None,
            Ok(out) => {
                self.r = out.residual;
                self.state = out.state;
                self.version += 1;
                self.rows.push(AdaptRow {
                    update: self.version,
                    time_s,
                    loss: out.loss,
                    r: self.r.as_vector().clone(),
                    grad_norm: out.grad_norm,
                    update_ms: if self.deterministic { 0.0 } else { out.update_ms },
                    buffer_len: buf.len(),
                    skipped: out.skipped,
                });
                Some(ResidualSnapshot::new(self.version, self.r.clone()))
            }
            Err(_) => {
                self.failures += 1;
                None
            }
        }
    }
}

/// Build the plant and prior from the config and run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let mut setup = Setup::from_config(cfg)?;
    run_closed_loop(cfg, &mut setup)
}

/// Run the closed loop on an existing setup.
pub fn run_closed_loop(cfg: &ExperimentConfig, setup: &mut Setup) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let mpc = cfg.mpc_config()?;
    let learn = cfg.learn_config()?;
    let n_lambda = cfg.n_lambda();
    let expected = setup.expected_residual.clone();
    let path = setup.path.clone();
    let linearizer = Arc::clone(&setup.linearizer);
    let deterministic = cfg.mode == RunMode::Deterministic;
    let mut learner = Learner::new(linearizer, learn.clone(), n_lambda, deterministic);
    let steps = cfg.steps();

    let mut lp = ControlLoop::new(cfg, setup, mpc);
    let mut buffer = Buffer::new(learn.capacity);
    let initial = ResidualSnapshot::new(0, Residual::zeros(n_lambda));

    match cfg.mode {
        RunMode::Deterministic => {
            let period = cfg.adapt_period();
            let mut snap = initial;
            for step in 0..steps {
                if let Some(p) = lp.begin(step) {
                    buffer.push(p).map_err(|e| HarnessError::Plant(e.to_string()))?;
                }
                if cfg.adapt && step % period == 0 && !buffer.is_empty() {
                    if let Some(s) = learner.update(&buffer, step as f64 * lp.dt) {
                        snap = s;
                    }
                }
                lp.act(step, &snap)?;
            }
        }
        RunMode::Realtime => {
            let buf_slot = Mutex::new(Arc::new(buffer.clone()));
            let res_slot = Mutex::new(Arc::new(initial));
            let stop = AtomicBool::new(false);
            let adapt_period = Duration::from_secs_f64(1.0 / cfg.adapt_rate_hz);
            let control_period = Duration::from_secs_f64(lp.dt);
            let t0 = Instant::now();
            let result = std::thread::scope(|s| {
                let handle = cfg.adapt.then(|| {
                    let (buf_slot, res_slot, stop) = (&buf_slot, &res_slot, &stop);
                    let learner = &mut learner;
                    s.spawn(move || {
                        let mut tick = Instant::now();
                        while !stop.load(Ordering::Acquire) {
                            let snapshot = Arc::clone(&buf_slot.lock().expect("buffer slot"));
                            if !snapshot.is_empty() {
                                if let Some(snap) = learner.update(&snapshot, t0.elapsed().as_secs_f64()) {
                                    *res_slot.lock().expect("residual slot") = Arc::new(snap);
                                }
                            }
                            tick += adapt_period;
                            sleep_until(tick, stop);
                        }
                    })
                });
                let mut outcome = Ok(());
                for step in 0..steps {
                    if let Some(p) = lp.begin(step) {
                        if let Err(e) = buffer.push(p) {
                            outcome = Err(HarnessError::Plant(e.to_string()));
                            break;
                        }
                        *buf_slot.lock().expect("buffer slot") = Arc::new(buffer.clone());
                    }
                    let snap = Arc::clone(&res_slot.lock().expect("residual slot"));
                    if let Err(e) = lp.act(step, &snap) {
                        outcome = Err(e);
                        break;
                    }
                    sleep_until(t0 + control_period * (step as u32 + 1), &stop);
                }
                stop.store(true, Ordering::Release);
                if let Some(h) = handle {
                    h.join().map_err(|_| HarnessError::Plant("learner thread panicked".into()))?;
                }
                outcome
            });
            result?;
        }
    }

    let control = std::mem::take(&mut lp.control);
    let solve = std::mem::take(&mut lp.solve);
    let controller_failures = lp.failures;
    drop(lp);
    let final_residual = control
        .last()
        .map(|c| c.r.clone())
        .unwrap_or_else(|| DVector::zeros(n_lambda));
    let mut summary = Summary {
        experiment: cfg.experiment.name().into(),
        mode: match cfg.mode {
            RunMode::Deterministic => "deterministic".into(),
            RunMode::Realtime => "realtime".into(),
        },
        seed: cfg.seed,
        adapt: cfg.adapt,
        steps: control.len(),
        success: false,
        final_residual: final_residual.iter().copied().collect(),
        expected_residual: expected.iter().copied().collect(),
        adapt_updates: learner.version,
        controller_failures,
        learner_failures: learner.failures,
        solve_ms_p50: percentile(&control.iter().map(|c| c.solve_ms).collect::<Vec<_>>(), 50.0),
        solve_ms_p95: percentile(&control.iter().map(|c| c.solve_ms).collect::<Vec<_>>(), 95.0),
        update_ms_p50: percentile(&learner.rows.iter().map(|a| a.update_ms).collect::<Vec<_>>(), 50.0),
        update_ms_p95: percentile(&learner.rows.iter().map(|a| a.update_ms).collect::<Vec<_>>(), 95.0),
        ..Default::default()
    };
    let s = &cfg.success;
    match cfg.experiment {
        ExperimentKind::CartpoleWalls => {
            let small: Vec<bool> = control.iter().map(|c| c.x.amax() < s.state_tol).collect();
            summary.stabilized_at_step = settled_from(&small, s.state_window);
            summary.success = summary.stabilized_at_step.is_some();
            if cfg.adapt {
                let close: Vec<bool> = learner
                    .rows
                    .iter()
                    .map(|a| (&a.r - &expected).amax() < s.residual_tol)
                    .collect();
                let at = settled_from(&close, s.residual_window);
                summary.residual_converged_at_update = at.map(|i| learner.rows[i].update);
                summary.residual_converged = Some(at.is_some());
            }
        }
        ExperimentKind::PusherBall => {
            let path = path.ok_or_else(|| HarnessError::Config("pusher run without a path task".into()))?;
            let progress = path_progress(&path, &control, cfg.pusher_task().tracking_tolerance);
            summary.path_progress_rad = Some(progress);
            summary.success = progress >= FRAC_PI_2;
            if cfg.adapt {
                let tol = s.residual_rel_tol * expected.amax();
                summary.residual_within_rel_tol = Some((&final_residual - &expected).amax() <= tol);
            }
        }
    }
    Ok(RunRecord {
        control,
        adapt: learner.rows,
        solve,
        summary,
    })
}

fn sleep_until(deadline: Instant, stop: &AtomicBool) {
    loop {
        let now = Instant::now();
        if now >= deadline || stop.load(Ordering::Acquire) {
            return;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(5)));
    }
}

/// First index from which every flag is set to the end, provided that tail
/// is at least `window` long.
pub fn settled_from(flags: &[bool], window: usize) -> Option<usize> {
    let tail = flags.iter().rev().take_while(|f| **f).count();
    (tail >= window.max(1)).then(|| flags.len() - tail)
}

/// Counterclockwise angle the ball travelled along the path before it first
/// left the tolerance band.
pub fn path_progress(path: &super::plant::PathTracking, control: &[ControlRow], tol: f64) -> f64 {
    let on_path: Vec<&ControlRow> = control
        .iter()
        .take_while(|c| path.path_error(c.x[2], c.x[3]) <= tol)
        .collect();
    if on_path.is_empty() {
        return 0.0;
    }
    let angles: Vec<f64> = on_path.iter().map(|c| path.angle(c.x[2], c.x[3])).collect();
    let unwrapped = unwrap_angles(&angles);
    unwrapped.iter().map(|a| a - unwrapped[0]).fold(0.0, f64::max)
}
