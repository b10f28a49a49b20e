//! Cart-pole with two soft walls, linearized about the upright equilibrium.
//!
//! State `x = [cart position, pole angle from upright, cart velocity, pole
//! angular velocity]`, input is the horizontal force on the cart. The pole is
//! a point mass at its tip; the tip at `p + l·θ` meets a spring wall on each
//! side. Contact row 0 is the right wall (at `+d_1`), row 1 the left wall (at
//! `−d_2`); `λ_i` is the spring force, so `0 ≤ λ_i ⊥ gap_i + λ_i / k ≥ 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::lcs::LcsParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleWallsParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub wall_stiffness: f64,
    /// Distances from the origin to the right and left wall.
    pub wall_offsets: [f64; 2],
    pub gravity: f64,
    pub dt: f64,
    /// Error added to the prior contact offset to obtain the true one.
    pub delta_phi: [f64; 2],
}

impl Default for CartpoleWallsParams {
    fn default() -> Self {
        Self {
            cart_mass: 0.978,
            pole_mass: 0.35,
            pole_length: 0.6,
            wall_stiffness: 100.0,
            wall_offsets: [0.35, 0.35],
            gravity: 9.81,
            dt: 0.01,
            delta_phi: [0.0, 0.0],
        }
    }
}

impl CartpoleWallsParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_length", self.pole_length),
            ("wall_stiffness", self.wall_stiffness),
            ("wall_offsets[0]", self.wall_offsets[0]),
            ("wall_offsets[1]", self.wall_offsets[1]),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.gravity.is_finite() || self.delta_phi.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter("non-finite gravity or delta_phi".into()));
        }
        Ok(())
    }
}

/// `(θ_true, θ_prior)`: identical except `c_true = c_prior + Δφ`.
pub fn cartpole_walls_lcs(p: &CartpoleWallsParams) -> Result<(LcsParams, LcsParams), ModelError> {
    p.validate()?;
    let (mc, mp, l, g, dt) = (p.cart_mass, p.pole_mass, p.pole_length, p.gravity, p.dt);

    let mut a_c = DMatrix::zeros(4, 4);
    a_c[(0, 2)] = 1.0;
    a_c[(1, 3)] = 1.0;
    a_c[(2, 1)] = -mp * g / mc;
    a_c[(3, 1)] = g * (mc + mp) / (mc * l);
    let b_c = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0 / mc, -1.0 / (mc * l)]);
    // A horizontal force at the tip only changes the pole's angular acceleration
    // in the linearized model.
    let mut d_c = DMatrix::zeros(4, 2);
    d_c[(3, 0)] = -1.0 / (mp * l);
    d_c[(3, 1)] = 1.0 / (mp * l);

    let a = DMatrix::identity(4, 4) + a_c * dt;
    let b = b_c * dt;
    let d = d_c * dt;
    let e = DMatrix::from_row_slice(2, 4, &[-1.0, -l, 0.0, 0.0, 1.0, l, 0.0, 0.0]);
    let f = DMatrix::identity(2, 2) / p.wall_stiffness;
    let h = DMatrix::zeros(2, 1);
    let c_prior = DVector::from_column_slice(&p.wall_offsets);
    let c_true = &c_prior + DVector::from_column_slice(&p.delta_phi);

    let map = |e: crate::lcs::LcsError| ModelError::InvalidParameter(e.to_string());
    let prior = LcsParams::new(a, b, d, DVector::zeros(4), e, f, h, c_prior).map_err(map)?;
    let mut truth = prior.clone();
    truth.c = c_true;
    Ok((truth, prior))
}

/// Pole-tip horizontal position `p + l θ`.
pub fn tip_position(p: &CartpoleWallsParams, x: &DVector<f64>) -> f64 {
    x[0] + p.pole_length * x[1]
}
