//! Latency of one learner update and one controller solve.

use std::time::Instant;

use serde::Serialize;

use super::closed_loop::run_experiment;
use super::config::{ExperimentConfig, RunMode};
use super::logs::percentile;
use super::plant::Setup;
use super::HarnessError;
use crate::adapt::{adapt_update, Augmenter, Buffer, DataPoint, OptimizerState};
use crate::c3::c3_solve;
use crate::lcs::Residual;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub experiment: String,
    pub calls: usize,
    pub buffer_len: usize,
    pub horizon: usize,
    pub update_ms_p50: f64,
    pub update_ms_p95: f64,
    pub solve_ms_p50: f64,
    pub solve_ms_p95: f64,
    pub qp_solves_per_call: usize,
    /// p95 update latency fits in one learner period.
    pub update_within_period: bool,
    /// p95 solve latency fits in one control period.
    pub solve_within_period: bool,
}

impl BenchReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// Collect states and transitions from a short deterministic run, then time
/// `calls` learner updates on a full buffer and `calls` cold controller solves.
pub fn bench(cfg: &ExperimentConfig, calls: usize) -> Result<BenchReport, HarnessError> {
    let learn = cfg.learn_config()?;
    let mpc = cfg.mpc_config()?;
    let mut warmup = cfg.clone();
    warmup.mode = RunMode::Deterministic;
    warmup.duration_s = warmup.duration_s.min(2.0);
    let record = run_experiment(&warmup)?;
    if record.control.len() < learn.capacity + 1 {
        return Err(HarnessError::Config("warm-up run too short to fill the buffer".into()));
    }

    let mut buf = Buffer::new(learn.capacity);
    let tail = &record.control[record.control.len() - learn.capacity - 1..];
    for (k, w) in tail.windows(2).enumerate() {
        buf.push(DataPoint {
            x_next: w[1].x.clone(),
            x: w[0].x.clone(),
            u: w[0].u.clone(),
            k,
        })
        .map_err(|e| HarnessError::Plant(e.to_string()))?;
    }
    let setup = Setup::from_config(cfg)?;
    let n_lambda = cfg.n_lambda();
    let r = Residual::from_slice(&record.summary.final_residual).map_err(|e| HarnessError::Plant(e.to_string()))?;
    let st = OptimizerState::new(n_lambda);
    let mut update_ms = Vec::with_capacity(calls);
    for _ in 0..calls {
        // A fresh cache each call so every update pays for its linearizations.
        let mut aug = Augmenter::new();
        let t = Instant::now();
        adapt_update(&buf, &r, &st, setup.linearizer.as_ref(), &mut aug, &learn)
            .map_err(|e| HarnessError::Plant(e.to_string()))?;
        update_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }

    let mut solve_ms = Vec::with_capacity(calls);
    let mut qp_solves = 0;
    for i in 0..calls {
        let row = &record.control[i % record.control.len()];
        let t = Instant::now();
        let theta = setup
            .linearizer
            .linearize_at(&row.x, &row.u)
            .map_err(|e| HarnessError::Plant(e.to_string()))?;
        let plan = c3_solve(&row.x, &theta, &r, &mpc).map_err(|e| HarnessError::Plant(e.to_string()))?;
        solve_ms.push(t.elapsed().as_secs_f64() * 1e3);
        qp_solves = plan.qp_solves;
    }

    let update_p95 = percentile(&update_ms, 95.0);
    let solve_p95 = percentile(&solve_ms, 95.0);
    Ok(BenchReport {
        experiment: cfg.experiment.name().into(),
        calls,
        buffer_len: buf.len(),
        horizon: mpc.horizon,
        update_ms_p50: percentile(&update_ms, 50.0),
        update_ms_p95: update_p95,
        solve_ms_p50: percentile(&solve_ms, 50.0),
        solve_ms_p95: solve_p95,
        qp_solves_per_call: qp_solves,
        update_within_period: update_p95 <= 1e3 / cfg.adapt_rate_hz,
        solve_within_period: solve_p95 <= 1e3 / cfg.control_rate_hz,
    })
}
