//! Simulated plants and control tasks.
//!
//! The plant owns the true parameters. The controller and learner only see a
//! [`Linearizer`] built from the prior; [`Setup`] keeps the two apart.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use super::config::{ExperimentConfig, ExperimentKind, PusherTask};
use super::HarnessError;
use crate::adapt::{FixedLcs, Linearizer, ModelLinearizer};
use crate::c3::Reference;
use crate::lcs::{lcs_step_full, LcsParams, Residual};
use crate::models::{
    anitescu_step, cartpole_walls_lcs, join_state, pusher_ball_plant, pusher_ball_prior, split_state, RigidBodyModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub x_next: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Ground-truth dynamics.
pub trait Plant: Send {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<PlantStep, HarnessError>;
}

/// A plant whose true dynamics are an LCS.
#[derive(Debug, Clone)]
pub struct LcsPlant {
    theta: LcsParams,
    zero: Residual,
}

impl LcsPlant {
    pub fn new(theta: LcsParams) -> Self {
        let zero = Residual::zeros(theta.n_lambda());
        Self { theta, zero }
    }
}

impl Plant for LcsPlant {
    fn n_x(&self) -> usize {
        self.theta.n_x()
    }

    fn n_u(&self) -> usize {
        self.theta.n_u()
    }

    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<PlantStep, HarnessError> {
        let out = lcs_step_full(x, u, &self.theta, &self.zero).map_err(|e| HarnessError::Plant(e.to_string()))?;
        Ok(PlantStep {
            x_next: out.x_next,
            lambda: out.lambda,
        })
    }
}

/// A rigid-body model stepped with the time-stepping contact scheme.
#[derive(Debug, Clone)]
pub struct ModelPlant<M>(pub M);

impl<M: RigidBodyModel + Send> Plant for ModelPlant<M> {
    fn n_x(&self) -> usize {
        self.0.n_q() + self.0.n_v()
    }

    fn n_u(&self) -> usize {
        self.0.n_u()
    }

    fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<PlantStep, HarnessError> {
        let (q, v) = split_state(x, self.0.n_q());
        let s = anitescu_step(&self.0, &q, &v, u).map_err(|e| HarnessError::Plant(e.to_string()))?;
        Ok(PlantStep {
            x_next: join_state(&s.q_next, &s.v_next),
            lambda: s.lambda,
        })
    }
}

/// Supplies tracking references to the controller.
pub trait Task: Send + Sync {
    fn reference(&self, x: &DVector<f64>, horizon: usize) -> Option<Reference>;
}

/// Drive the state to the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct Regulation;

impl Task for Regulation {
    fn reference(&self, _x: &DVector<f64>, _horizon: usize) -> Option<Reference> {
        None
    }
}

/// Push the ball counterclockwise around a circle.
///
/// The push direction points from the ball to a lookahead point on the
/// circle, so a drifting ball is steered back onto the path. The ball
/// reference starts `lead` ahead of the ball along that direction and advances
/// at the path speed; the finger reference sits one assumed radius behind it.
#[derive(Debug, Clone)]
pub struct PathTracking {
    pub task: PusherTask,
    pub dt: f64,
    /// Ball radius the controller believes in.
    pub standoff: f64,
    /// Arc length between the ball and its first reference point.
    pub lead: f64,
    /// Arc length to the point the finger pushes toward.
    pub lookahead: f64,
}

impl PathTracking {
    pub fn angle(&self, bx: f64, by: f64) -> f64 {
        (by - self.task.path_center[1]).atan2(bx - self.task.path_center[0])
    }

    /// Distance from the ball to the circle.
    pub fn path_error(&self, bx: f64, by: f64) -> f64 {
        let [cx, cy] = self.task.path_center;
        ((bx - cx).hypot(by - cy) - self.task.path_radius).abs()
    }

    fn point(&self, alpha: f64) -> ([f64; 2], [f64; 2]) {
        let [cx, cy] = self.task.path_center;
        let rad = self.task.path_radius;
        let (s, c) = alpha.sin_cos();
        ([cx + rad * c, cy + rad * s], [-s, c])
    }
}

impl Task for PathTracking {
    fn reference(&self, x: &DVector<f64>, horizon: usize) -> Option<Reference> {
        let speed = self.task.path_speed;
        let beta = self.angle(x[2], x[3]);
        let (aim, tangent) = self.point(beta + self.lookahead / self.task.path_radius);
        let (dx, dy) = (aim[0] - x[2], aim[1] - x[3]);
        let n = dx.hypot(dy);
        let d = if n > 1e-9 { [dx / n, dy / n] } else { tangent };
        let states = (0..=horizon)
            .map(|j| {
                let s = self.lead + j as f64 * speed * self.dt;
                let b = [x[2] + s * d[0], x[3] + s * d[1]];
                let f = [b[0] - self.standoff * d[0], b[1] - self.standoff * d[1]];
                DVector::from_column_slice(&[
                    f[0],
                    f[1],
                    b[0],
                    b[1],
                    speed * d[0],
                    speed * d[1],
                    speed * d[0],
                    speed * d[1],
                ])
            })
            .collect::<Vec<_>>();
        let inputs = states[1..].iter().map(|s| DVector::from_column_slice(&[s[0], s[1]])).collect();
        Some(Reference { x: states, u: inputs })
    }
}

/// Everything a closed-loop run needs, with truth and prior kept apart.
pub struct Setup {
    pub plant: Box<dyn Plant>,
    pub linearizer: Arc<dyn Linearizer + Send + Sync>,
    pub task: Arc<dyn Task>,
    /// Residual that would make the prior exact, when known.
    pub expected_residual: DVector<f64>,
    pub path: Option<PathTracking>,
    /// Input held before the first solve and after a failed one.
    pub initial_input: DVector<f64>,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let model = |e: crate::models::ModelError| HarnessError::Config(e.to_string());
        match cfg.experiment {
            ExperimentKind::CartpoleWalls => {
                let p = cfg.cartpole_params();
                let (truth, prior) = cartpole_walls_lcs(&p).map_err(model)?;
                Ok(Self {
                    plant: Box::new(LcsPlant::new(truth)),
                    linearizer: Arc::new(FixedLcs(prior)),
                    task: Arc::new(Regulation),
                    expected_residual: DVector::from_column_slice(&p.delta_phi),
                    path: None,
                    initial_input: DVector::zeros(1),
                })
            }
            ExperimentKind::PusherBall => {
                let p = cfg.pusher_params();
                let task = cfg.pusher_task();
                let path = PathTracking {
                    dt: p.dt,
                    standoff: p.radius_prior,
                    lead: task.lead,
                    lookahead: task.lookahead,
                    task,
                };
                Ok(Self {
                    plant: Box::new(ModelPlant(pusher_ball_plant(&p).map_err(model)?)),
                    linearizer: Arc::new(ModelLinearizer(pusher_ball_prior(&p).map_err(model)?)),
                    task: Arc::new(path.clone()),
                    expected_residual: p.expected_residual(),
                    path: Some(path),
                    // Finger setpoint at its current position: no spring force.
                    initial_input: DVector::from_column_slice(&cfg.initial_state[..2]),
                })
            }
        }
    }
}

/// Unwrap a sequence of angles in `(−π, π]` into a continuous one.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut offset = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        if i > 0 {
            let prev = angles[i - 1];
            let d = a - prev;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(a + offset);
    }
    out
}
