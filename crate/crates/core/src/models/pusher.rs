//! Planar finger pushing a ball across a table, seen from above.
//!
//! `q = [finger x, finger y, ball x, ball y]`. The finger is a point mass
//! driven toward the commanded setpoint `u` by a spring-damper (a stand-in for
//! a low-level impedance loop); the ball feels viscous table drag. One
//! finger–ball contact with gap `‖p_b − p_f‖ − R` and a two-edge friction
//! cone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelError, RigidBodyModel, DEFAULT_CONTACT_REGULARIZATION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PusherBallParams {
    pub finger_mass: f64,
    pub ball_mass: f64,
    pub radius_true: f64,
    pub radius_prior: f64,
    /// Viscous drag coefficient of the ball on the table.
    pub ball_drag: f64,
    /// Finger–ball friction coefficient.
    pub mu: f64,
    pub n_edges: usize,
    pub dt: f64,
    pub finger_stiffness: f64,
    pub finger_damping: f64,
    #[serde(default = "default_regularization")]
    pub contact_regularization: f64,
}

fn default_regularization() -> f64 {
    DEFAULT_CONTACT_REGULARIZATION
}

impl Default for PusherBallParams {
    fn default() -> Self {
        Self {
            finger_mass: 0.5,
            ball_mass: 0.2,
            radius_true: 0.035,
            radius_prior: 0.04,
            ball_drag: 0.4,
            mu: 0.3,
            n_edges: 2,
            dt: 0.0125,
            finger_stiffness: 200.0,
            finger_damping: 20.0,
            contact_regularization: DEFAULT_CONTACT_REGULARIZATION,
        }
    }
}

impl PusherBallParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("finger_mass", self.finger_mass),
            ("ball_mass", self.ball_mass),
            ("radius_true", self.radius_true),
            ("radius_prior", self.radius_prior),
            ("dt", self.dt),
            ("contact_regularization", self.contact_regularization),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("ball_drag", self.ball_drag),
            ("mu", self.mu),
            ("finger_stiffness", self.finger_stiffness),
            ("finger_damping", self.finger_damping),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_edges != 2 {
            return Err(ModelError::InvalidParameter(format!(
                "planar contact has exactly 2 friction edges, got {}",
                self.n_edges
            )));
        }
        Ok(())
    }

    /// Gap-row shift a learned residual must supply: the prior's
    /// `(R_prior − R_true) / Δt` on every edge row.
    pub fn expected_residual(&self) -> DVector<f64> {
        DVector::from_element(self.n_edges, (self.radius_prior - self.radius_true) / self.dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PusherBall {
    params: PusherBallParams,
    radius: f64,
}

/// The ground-truth plant (true radius).
pub fn pusher_ball_plant(p: &PusherBallParams) -> Result<PusherBall, ModelError> {
    p.validate()?;
    Ok(PusherBall {
        params: p.clone(),
        radius: p.radius_true,
    })
}

/// The controller's and learner's model (assumed radius).
pub fn pusher_ball_prior(p: &PusherBallParams) -> Result<PusherBall, ModelError> {
    p.validate()?;
    Ok(PusherBall {
        params: p.clone(),
        radius: p.radius_prior,
    })
}

impl PusherBall {
    pub fn params(&self) -> &PusherBallParams {
        &self.params
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Unit vector from finger to ball; `+x` when the two coincide.
    fn normal(q: &DVector<f64>) -> (f64, f64) {
        let (dx, dy) = (q[2] - q[0], q[3] - q[1]);
        let dist = dx.hypot(dy);
        if dist < 1e-12 {
            (1.0, 0.0)
        } else {
            (dx / dist, dy / dist)
        }
    }
}

impl RigidBodyModel for PusherBall {
    fn n_q(&self) -> usize {
        4
    }

    fn n_u(&self) -> usize {
        2
    }

    fn n_contacts(&self) -> usize {
        1
    }

    fn n_edges(&self) -> usize {
        2
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn contact_regularization(&self) -> f64 {
        self.params.contact_regularization
    }

    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        DMatrix::from_diagonal(&DVector::from_column_slice(&[
            p.finger_mass,
            p.finger_mass,
            p.ball_mass,
            p.ball_mass,
        ]))
    }

    fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        DVector::from_column_slice(&[
            p.finger_stiffness * q[0] + p.finger_damping * v[0],
            p.finger_stiffness * q[1] + p.finger_damping * v[1],
            p.ball_drag * v[2],
            p.ball_drag * v[3],
        ])
    }

    fn input_map(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = self.params.finger_stiffness;
        b[(1, 1)] = self.params.finger_stiffness;
        b
    }

    fn gap(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, (q[2] - q[0]).hypot(q[3] - q[1]) - self.radius)
    }

    fn normal_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (nx, ny) = Self::normal(q);
        DMatrix::from_row_slice(1, 4, &[-nx, -ny, nx, ny])
    }

    fn tangent_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (nx, ny) = Self::normal(q);
        let (tx, ty) = (-ny, nx);
        DMatrix::from_row_slice(2, 4, &[-tx, -ty, tx, ty, tx, ty, -tx, -ty])
    }

    fn friction(&self) -> DVector<f64> {
        DVector::from_element(1, self.params.mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcs::{lcs_step_full, Residual};
    use crate::models::{anitescu_step, join_state, linearize, split_state};
    use nalgebra::{dvector, SymmetricEigen};

    fn plant() -> PusherBall {
        pusher_ball_plant(&PusherBallParams::default()).unwrap()
    }

    #[test]
    fn far_finger_moves_freely() {
        let m = plant();
        let q = dvector![0.0, 0.0, 0.5, 0.0];
        let v = dvector![0.0, 0.0, 0.1, 0.0];
        let s = anitescu_step(&m, &q, &v, &dvector![0.1, 0.0]).unwrap();
        assert_eq!(s.lambda, dvector![0.0, 0.0]);
        assert!(m.gap(&q)[0] > 0.0);
        // Ball only decelerates by drag.
        let expected = 0.1 - 0.0125 * 0.4 * 0.1 / 0.2;
        assert!((s.v_next[2] - expected).abs() < 1e-15);
    }

    #[test]
    fn gap_matches_geometry() {
        let m = plant();
        let q = dvector![0.01, -0.02, 0.04, 0.02];
        let d = (0.03f64 * 0.03 + 0.04 * 0.04).sqrt();
        assert!((m.gap(&q)[0] - (d - 0.035)).abs() < 1e-12);
    }

    #[test]
    fn prior_gap_shift_is_radius_error() {
        let params = PusherBallParams::default();
        let truth = pusher_ball_plant(&params).unwrap();
        let prior = pusher_ball_prior(&params).unwrap();
        for q in [dvector![0.0, 0.0, 0.04, 0.0], dvector![0.3, -0.1, 0.2, 0.5]] {
            let diff = truth.gap(&q)[0] - prior.gap(&q)[0];
            assert!((diff - 0.005).abs() < 1e-12);
        }
    }

    #[test]
    fn pushing_into_ball_transfers_momentum() {
        let m = plant();
        let q = dvector![0.0, 0.0, 0.035, 0.0];
        let v = dvector![0.5, 0.0, 0.0, 0.0];
        let s = anitescu_step(&m, &q, &v, &dvector![0.0, 0.0]).unwrap();
        assert!(s.lambda.sum() > 0.0);
        assert!(s.v_next[2] > 0.0);
        // Head-on push: no sideways motion.
        assert!(s.v_next[3].abs() < 1e-12);
    }

    #[test]
    fn contact_matrix_is_psd_then_pd() {
        let params = PusherBallParams::default();
        let m = plant();
        let x = dvector![0.0, 0.0, 0.03, 0.02, 0.1, 0.0, 0.0, 0.0];
        let theta = linearize(&m, &x, &dvector![0.0, 0.0]).unwrap();
        let raw = &theta.f - DMatrix::identity(2, 2) * params.contact_regularization;
        assert!((&raw - raw.transpose()).amax() < 1e-12);
        assert!(SymmetricEigen::new(raw).eigenvalues.min() >= -1e-9);
        assert!(SymmetricEigen::new(theta.f.clone()).eigenvalues.min() > 0.0);
    }

    #[test]
    fn linearization_reproduces_step_at_nominal_point() {
        let m = plant();
        let x = dvector![0.0, 0.0, 0.036, 0.004, 0.3, 0.1, 0.0, 0.0];
        let u = dvector![0.05, 0.0];
        let theta = linearize(&m, &x, &u).unwrap();
        let (q, v) = split_state(&x, 4);
        let s = anitescu_step(&m, &q, &v, &u).unwrap();
        let out = lcs_step_full(&x, &u, &theta, &Residual::zeros(2)).unwrap();
        assert!((out.x_next - join_state(&s.q_next, &s.v_next)).amax() < 1e-9);
    }

    #[test]
    fn radius_error_is_a_constant_offset_in_c() {
        let params = PusherBallParams::default();
        let truth = pusher_ball_plant(&params).unwrap();
        let prior = pusher_ball_prior(&params).unwrap();
        let x = dvector![0.0, 0.0, 0.03, 0.02, 0.1, 0.0, 0.0, 0.0];
        let u = dvector![0.01, 0.0];
        let t = linearize(&truth, &x, &u).unwrap();
        let p = linearize(&prior, &x, &u).unwrap();
        assert_eq!(t.e, p.e);
        assert_eq!(t.f, p.f);
        let shift = &t.c - &p.c;
        assert!((shift - params.expected_residual()).amax() < 1e-9);
    }

    #[test]
    fn rejects_invalid() {
        let bad = PusherBallParams {
            n_edges: 3,
            ..Default::default()
        };
        assert!(pusher_ball_plant(&bad).is_err());
        let bad = PusherBallParams {
            radius_true: 0.0,
            ..Default::default()
        };
        assert!(pusher_ball_plant(&bad).is_err());
    }
}
