//! Loss gradient over a grid of cart-pole contact situations.
//!
//! Each cell is one transition of the true cart-pole from rest with the pole
//! tip at a given position, scored by the prior at `r = 0`. Cells are labelled
//! by whether the true system made contact (event) and whether the prior
//! predicts contact (prediction).

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use super::HarnessError;
use crate::adapt::{loss_gradient, AugmentedBuffer, AugmentedEntry, DataPoint, LearnConfig};
use crate::lcs::{lcs_step_full, Residual};
use crate::models::{cartpole_walls_lcs, CartpoleWallsParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    EventPredicted,
    EventMissed,
    FalsePrediction,
    /// Neither contact nor prediction: the loss is flat here.
    NoContact,
}

impl Region {
    fn new(event: bool, prediction: bool) -> Self {
        match (event, prediction) {
            (true, true) => Self::EventPredicted,
            (true, false) => Self::EventMissed,
            (false, true) => Self::FalsePrediction,
            (false, false) => Self::NoContact,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EventPredicted => "event_predicted",
            Self::EventMissed => "event_missed",
            Self::FalsePrediction => "false_prediction",
            Self::NoContact => "no_contact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapCell {
    pub tip: f64,
    pub delta_phi: [f64; 2],
    pub region: Region,
    pub loss: f64,
    pub gradient: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub cells: usize,
    pub no_contact_cells: usize,
    /// Largest gradient norm where there is neither event nor prediction.
    pub no_contact_max_grad: f64,
    /// Smallest gradient norm everywhere else.
    pub contact_min_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub cells: Vec<MapCell>,
}

/// `n_tip` tip positions across both walls times `n_delta` offset errors
/// `Δφ = s·[1, −1]` with `s` spread over `±max_delta` (never zero).
pub fn gradient_map(
    params: &CartpoleWallsParams,
    learn: &LearnConfig,
    n_tip: usize,
    n_delta: usize,
    max_delta: f64,
) -> Result<GradientMap, HarnessError> {
    if n_tip < 2 || n_delta < 2 || !n_delta.is_multiple_of(2) {
        return Err(HarnessError::Config("grid needs n_tip ≥ 2 and an even n_delta ≥ 2".into()));
    }
    let reach = 1.7 * params.wall_offsets[0].max(params.wall_offsets[1]);
    let half = n_delta / 2;
    let deltas: Vec<f64> = (1..=half)
        .flat_map(|i| {
            let s = max_delta * i as f64 / half as f64;
            [-s, s]
        })
        .collect();
    let mut cells = Vec::with_capacity(n_tip * n_delta);
    let l = params.pole_length;
    for i in 0..n_tip {
        // Odd multiples of a half step keep grid points off the walls.
        let tip = -reach + 2.0 * reach * (i as f64 + 0.5) / n_tip as f64;
        for &s in &deltas {
            let p = CartpoleWallsParams {
                delta_phi: [s, -s],
                ..params.clone()
            };
            let (truth, prior) = cartpole_walls_lcs(&p).map_err(|e| HarnessError::Config(e.to_string()))?;
            let x = DVector::from_column_slice(&[0.0, tip / l, 0.0, 0.0]);
            let u = DVector::zeros(1);
            let zero = Residual::zeros(2);
            let actual = lcs_step_full(&x, &u, &truth, &zero).map_err(|e| HarnessError::Plant(e.to_string()))?;
            let predicted = lcs_step_full(&x, &u, &prior, &zero).map_err(|e| HarnessError::Plant(e.to_string()))?;
            let region = Region::new(actual.lambda.amax() > 0.0, predicted.lambda.amax() > 0.0);
            let aug = AugmentedBuffer {
                entries: vec![AugmentedEntry {
                    point: DataPoint {
                        x_next: actual.x_next,
                        x,
                        u,
                        k: 0,
                    },
                    theta: Arc::new(prior),
                }],
                skipped: 0,
            };
            let lg = loss_gradient(&aug, &zero, learn).map_err(|e| HarnessError::Plant(e.to_string()))?;
            cells.push(MapCell {
                tip,
                delta_phi: [s, -s],
                region,
                loss: lg.value,
                gradient: lg.gradient,
            });
        }
    }
    Ok(GradientMap { cells })
}

impl GradientMap {
    pub fn summary(&self) -> MapSummary {
        let flat: Vec<&MapCell> = self.cells.iter().filter(|c| c.region == Region::NoContact).collect();
        MapSummary {
            cells: self.cells.len(),
            no_contact_cells: flat.len(),
            no_contact_max_grad: flat.iter().map(|c| c.gradient.norm()).fold(0.0, f64::max),
            contact_min_grad: self
                .cells
                .iter()
                .filter(|c| c.region != Region::NoContact)
                .map(|c| c.gradient.norm())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |e: csv::Error| HarnessError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "tip",
            "delta_phi_0",
            "delta_phi_1",
            "region",
            "loss",
            "grad_0",
            "grad_1",
            "grad_norm",
        ])
        .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.tip.to_string(),
                c.delta_phi[0].to_string(),
                c.delta_phi[1].to_string(),
                c.region.name().to_string(),
                c.loss.to_string(),
                c.gradient[0].to_string(),
                c.gradient[1].to_string(),
                c.gradient.norm().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_only_without_contact() {
        // Missed events only show a gradient once the weighted error beats
        // the prior's gap, hence the heavy velocity weight.
        let mut learn = LearnConfig::with_state_dim(4);
        learn.q_d = nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 0.0, 1e10, 1e10]));
        let map = gradient_map(&CartpoleWallsParams::default(), &learn, 8, 4, 0.2).unwrap();
        let s = map.summary();
        assert_eq!(s.cells, 32);
        assert!(s.no_contact_cells > 0);
        assert_eq!(s.no_contact_max_grad, 0.0);
        assert!(s.contact_min_grad > 1e-6);
        let regions: std::collections::HashSet<Region> = map.cells.iter().map(|c| c.region).collect();
        assert_eq!(regions.len(), 4);
    }
}
