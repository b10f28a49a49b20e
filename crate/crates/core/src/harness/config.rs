//! Experiment configuration files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adapt::LearnConfig;
use crate::c3::{solve_dare, Metric, MpcConfig};
use crate::models::{cartpole_walls_lcs, CartpoleWallsParams, PusherBallParams};

/// Overrides the output directory when set (the `--out` flag wins over it).
pub const OUT_DIR_ENV: &str = "ACMPC_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CartpoleWalls,
    PusherBall,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::CartpoleWalls => "cartpole_walls",
            Self::PusherBall => "pusher_ball",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Single thread, learner interleaved every ⌈control/adapt⌉ periods.
    #[default]
    Deterministic,
    /// Controller and learner on separate threads paced by the wall clock.
    Realtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Diagonal of the prediction-error weight; velocity identity when absent.
    #[serde(default)]
    pub q_d_diag: Option<Vec<f64>>,
    #[serde(default = "defaults::capacity")]
    pub capacity: usize,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
}

impl Default for LearnSection {
    fn default() -> Self {
        Self {
            epsilon: defaults::epsilon(),
            gamma: defaults::gamma(),
            learning_rate: defaults::learning_rate(),
            q_d_diag: None,
            capacity: defaults::capacity(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// Terminal weight; the discrete-time Riccati solution when absent.
    #[serde(default)]
    pub q_terminal_diag: Option<Vec<f64>>,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::rho_growth")]
    pub rho_growth: f64,
    #[serde(default = "defaults::admm_iterations")]
    pub admm_iterations: usize,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub input_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub input_upper: Option<Vec<f64>>,
    #[serde(default = "defaults::yes")]
    pub warm_start: bool,
}

/// Circular path the ball should follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PusherTask {
    pub path_center: [f64; 2],
    pub path_radius: f64,
    /// Speed of the moving reference along the path (m/s).
    pub path_speed: f64,
    /// Largest distance from the path that still counts as tracking (m).
    pub tracking_tolerance: f64,
    /// Arc length between the ball and its first reference point (m).
    #[serde(default = "defaults::lead")]
    pub lead: f64,
    /// Arc length ahead of the ball that the finger pushes toward (m).
    #[serde(default = "defaults::lookahead")]
    pub lookahead: f64,
}

impl Default for PusherTask {
    fn default() -> Self {
        Self {
            path_center: [0.0, 0.0],
            path_radius: 0.2,
            path_speed: 0.05,
            tracking_tolerance: 0.03,
            lead: defaults::lead(),
            lookahead: defaults::lookahead(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessSection {
    #[serde(default = "defaults::state_tol")]
    pub state_tol: f64,
    #[serde(default = "defaults::window")]
    pub state_window: usize,
    #[serde(default = "defaults::residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "defaults::window")]
    pub residual_window: usize,
    /// Relative tolerance on the learned residual for the pusher-ball run.
    #[serde(default = "defaults::residual_rel_tol")]
    pub residual_rel_tol: f64,
}

impl Default for SuccessSection {
    fn default() -> Self {
        Self {
            state_tol: defaults::state_tol(),
            state_window: defaults::window(),
            residual_tol: defaults::residual_tol(),
            residual_window: defaults::window(),
            residual_rel_tol: defaults::residual_rel_tol(),
        }
    }
}

/// Instantaneous change of the true plant state at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time_s: f64,
    pub state_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "defaults::yes")]
    pub adapt: bool,
    pub duration_s: f64,
    pub control_rate_hz: f64,
    pub adapt_rate_hz: f64,
    pub initial_state: Vec<f64>,
    /// Per-coordinate measurement noise; all zero when empty.
    #[serde(default)]
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub cartpole: Option<CartpoleWallsParams>,
    #[serde(default)]
    pub pusher: Option<PusherBallParams>,
    #[serde(default)]
    pub task: Option<PusherTask>,
    #[serde(default)]
    pub learn: LearnSection,
    pub mpc: MpcSection,
    #[serde(default)]
    pub success: SuccessSection,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

mod defaults {
    pub fn epsilon() -> f64 {
        1e-7
    }
    pub fn gamma() -> f64 {
        1e-2
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn capacity() -> usize {
        10
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn horizon() -> usize {
        5
    }
    pub fn rho() -> f64 {
        1.0
    }
    pub fn rho_growth() -> f64 {
        1.2
    }
    pub fn admm_iterations() -> usize {
        10
    }
    pub fn yes() -> bool {
        true
    }
    pub fn state_tol() -> f64 {
        0.05
    }
    pub fn window() -> usize {
        100
    }
    pub fn residual_tol() -> f64 {
        0.02
    }
    pub fn residual_rel_tol() -> f64 {
        0.2
    }
    pub fn lead() -> f64 {
        0.0
    }
    pub fn lookahead() -> f64 {
        0.04
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_x(&self) -> usize {
        match self.experiment {
            ExperimentKind::CartpoleWalls => 4,
            ExperimentKind::PusherBall => 8,
        }
    }

    pub fn n_u(&self) -> usize {
        match self.experiment {
            ExperimentKind::CartpoleWalls => 1,
            ExperimentKind::PusherBall => 2,
        }
    }

    pub fn n_lambda(&self) -> usize {
        2
    }

    pub fn model_dt(&self) -> f64 {
        match self.experiment {
            ExperimentKind::CartpoleWalls => self.cartpole_params().dt,
            ExperimentKind::PusherBall => self.pusher_params().dt,
        }
    }

    pub fn cartpole_params(&self) -> CartpoleWallsParams {
        self.cartpole.clone().unwrap_or_default()
    }

    pub fn pusher_params(&self) -> PusherBallParams {
        self.pusher.clone().unwrap_or_default()
    }

    pub fn pusher_task(&self) -> PusherTask {
        self.task.clone().unwrap_or_default()
    }

    pub fn steps(&self) -> usize {
        (self.duration_s * self.control_rate_hz).round() as usize
    }

    /// Control periods between learner updates in deterministic mode.
    pub fn adapt_period(&self) -> usize {
        (self.control_rate_hz / self.adapt_rate_hz - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be positive"));
        }
        if !(self.control_rate_hz > 0.0 && self.adapt_rate_hz > 0.0) {
            return Err(invalid("rates must be positive"));
        }
        if self.adapt_rate_hz > self.control_rate_hz {
            return Err(invalid("adapt_rate_hz must not exceed control_rate_hz"));
        }
        match self.experiment {
            ExperimentKind::CartpoleWalls => {
                if self.pusher.is_some() || self.task.is_some() {
                    return Err(invalid("pusher/task sections do not apply to cartpole_walls"));
                }
                self.cartpole_params().validate().map_err(|e| invalid(e.to_string()))?;
            }
            ExperimentKind::PusherBall => {
                if self.cartpole.is_some() {
                    return Err(invalid("cartpole section does not apply to pusher_ball"));
                }
                self.pusher_params().validate().map_err(|e| invalid(e.to_string()))?;
                let t = self.pusher_task();
                if !(t.path_radius > 0.0 && t.path_speed > 0.0 && t.tracking_tolerance > 0.0) {
                    return Err(invalid("task radius, speed and tolerance must be positive"));
                }
                if !(t.lead >= 0.0 && t.lookahead > 0.0) {
                    return Err(invalid("task lead must be non-negative and lookahead positive"));
                }
            }
        }
        let dt = self.model_dt();
        if ((self.control_rate_hz * dt) - 1.0).abs() > 1e-6 {
            return Err(invalid(format!(
                "control_rate_hz ({}) must equal 1 / model dt ({})",
                self.control_rate_hz,
                1.0 / dt
            )));
        }
        let nx = self.n_x();
        if self.initial_state.len() != nx {
            return Err(invalid(format!("initial_state must have {nx} entries")));
        }
        if !self.noise_std.is_empty() && self.noise_std.len() != nx {
            return Err(invalid(format!("noise_std must be empty or have {nx} entries")));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("noise_std entries must be non-negative"));
        }
        for d in &self.disturbances {
            if d.state_delta.len() != nx || !(d.time_s >= 0.0) {
                return Err(invalid(format!("disturbance at {} s must have {nx} entries", d.time_s)));
            }
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial_state must be finite"));
        }
        self.learn_config()?.validate().map_err(|e| invalid(e.to_string()))?;
        self.mpc_config()?;
        Ok(())
    }

    pub fn learn_config(&self) -> Result<LearnConfig, HarnessError> {
        let nx = self.n_x();
        let l = &self.learn;
        let mut cfg = LearnConfig::with_state_dim(nx);
        if let Some(diag) = &l.q_d_diag {
            if diag.len() != nx {
                return Err(invalid(format!("learn.q_d_diag must have {nx} entries")));
            }
            cfg.q_d = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        }
        cfg.epsilon = l.epsilon;
        cfg.gamma = l.gamma;
        cfg.learning_rate = l.learning_rate;
        cfg.capacity = l.capacity;
        cfg.beta1 = l.beta1;
        cfg.beta2 = l.beta2;
        cfg.adam_eps = l.adam_eps;
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn mpc_config(&self) -> Result<MpcConfig, HarnessError> {
        let (nx, nu) = (self.n_x(), self.n_u());
        let m = &self.mpc;
        let diag = |name: &str, v: &[f64], n: usize| {
            if v.len() != n {
                return Err(invalid(format!("mpc.{name} must have {n} entries")));
            }
            Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
        };
        let q = diag("q_diag", &m.q_diag, nx)?;
        let r = diag("r_diag", &m.r_diag, nu)?;
        let q_terminal = match &m.q_terminal_diag {
            Some(v) => diag("q_terminal_diag", v, nx)?,
            None => {
                let (a, b) = self.nominal_dynamics()?;
                solve_dare(&a, &b, &q, &r).ok_or_else(|| invalid("terminal Riccati equation did not converge"))?
            }
        };
        let vec = |name: &str, v: &Option<Vec<f64>>| -> Result<Option<DVector<f64>>, HarnessError> {
            match v {
                Some(v) if v.len() != nu => Err(invalid(format!("mpc.{name} must have {nu} entries"))),
                Some(v) => Ok(Some(DVector::from_column_slice(v))),
                None => Ok(None),
            }
        };
        let cfg = MpcConfig {
            horizon: m.horizon,
            q,
            r,
            q_terminal,
            rho: m.rho,
            rho_growth: m.rho_growth,
            admm_iterations: m.admm_iterations,
            metric: m.metric,
            input_lower: vec("input_lower", &m.input_lower)?,
            input_upper: vec("input_upper", &m.input_upper)?,
            max_contacts: 10,
            warm_start: m.warm_start,
        };
        cfg.validate(nx, nu).map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Contact-free `(A, B)` used for the default terminal weight.
    fn nominal_dynamics(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), HarnessError> {
        match self.experiment {
            ExperimentKind::CartpoleWalls => {
                let (_, prior) = cartpole_walls_lcs(&self.cartpole_params()).map_err(|e| invalid(e.to_string()))?;
                Ok((prior.a, prior.b))
            }
            ExperimentKind::PusherBall => Err(invalid("pusher_ball needs an explicit mpc.q_terminal_diag")),
        }
    }

    /// Output directory: explicit override, then the environment, then the
    /// config, then `runs/<experiment>`.
    pub fn resolve_out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Ok(p) = std::env::var(OUT_DIR_ENV) {
            if !p.is_empty() {
                return PathBuf::from(p);
            }
        }
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.experiment.name()))
    }
}
