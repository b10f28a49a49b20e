//! Run records and their CSV / TOML serialization.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const CONTROL_LOG: &str = "control.csv";
pub const ADAPT_LOG: &str = "adapt.csv";
pub const SOLVE_LOG: &str = "solve.csv";
pub const SUMMARY: &str = "summary.toml";

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub step: usize,
    pub time_s: f64,
    /// True plant state at the start of the period.
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Contact forces the plant produced during the period.
    pub lambda: DVector<f64>,
    pub x_d: DVector<f64>,
    pub lambda_d: DVector<f64>,
    /// Residual the controller used.
    pub r: DVector<f64>,
    pub residual_version: u64,
    pub residual_checksum: u64,
    pub solve_ms: f64,
    pub fallback: bool,
}

/// One learner update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRow {
    pub update: u64,
    /// Simulation time in deterministic mode, wall time in realtime mode.
    pub time_s: f64,
    pub loss: f64,
    pub r: DVector<f64>,
    pub grad_norm: f64,
    pub update_ms: f64,
    pub buffer_len: usize,
    pub skipped: usize,
}

/// Solver statistics of one MPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRow {
    pub step: usize,
    pub solve_ms: f64,
    pub qp_solves: usize,
    pub projections: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Engaged contact rows per horizon step, as bit masks.
    pub modes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub mode: String,
    pub seed: u64,
    pub adapt: bool,
    pub steps: usize,
    /// Task success: stabilization for the cart-pole, path tracking for the pusher.
    pub success: bool,
    pub final_residual: Vec<f64>,
    pub expected_residual: Vec<f64>,
    pub adapt_updates: u64,
    pub controller_failures: usize,
    pub learner_failures: usize,
    pub solve_ms_p50: f64,
    pub solve_ms_p95: f64,
    pub update_ms_p50: f64,
    pub update_ms_p95: f64,
    /// First step from which the state stayed small until the end.
    pub stabilized_at_step: Option<usize>,
    /// First update from which the residual stayed within tolerance until the end.
    pub residual_converged_at_update: Option<u64>,
    pub residual_converged: Option<bool>,
    pub path_progress_rad: Option<f64>,
    pub residual_within_rel_tol: Option<bool>,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Io(e.to_string()))
    }
}

/// All logs of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub control: Vec<ControlRow>,
    pub adapt: Vec<AdaptRow>,
    pub solve: Vec<SolveRow>,
    pub summary: Summary,
}

fn io(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn nums(v: &DVector<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

impl RunRecord {
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(io)?;
        if let Some(first) = self.control.first() {
            let mut header: Vec<String> = vec!["step".into(), "time_s".into()];
            header.extend(names("x", first.x.len()));
            header.extend(names("u", first.u.len()));
            header.extend(names("lambda", first.lambda.len()));
            header.extend(names("x_d", first.x_d.len()));
            header.extend(names("lambda_d", first.lambda_d.len()));
            header.extend(names("r", first.r.len()));
            header.extend(
                ["residual_version", "residual_checksum", "solve_ms", "fallback"]
                    .into_iter()
                    .map(String::from),
            );
            let rows = self.control.iter().map(|c| {
                let mut row = vec![c.step.to_string(), c.time_s.to_string()];
                row.extend(nums(&c.x));
                row.extend(nums(&c.u));
                row.extend(nums(&c.lambda));
                row.extend(nums(&c.x_d));
                row.extend(nums(&c.lambda_d));
                row.extend(nums(&c.r));
                row.push(c.residual_version.to_string());
                row.push(c.residual_checksum.to_string());
                row.push(c.solve_ms.to_string());
                row.push((c.fallback as u8).to_string());
                row
            });
            write_csv(&dir.join(CONTROL_LOG), header, rows)?;
        }

        let n_r = self.summary.final_residual.len();
        let mut header: Vec<String> = vec!["update".into(), "time_s".into(), "loss".into()];
        header.extend(names("r", n_r));
        header.extend(
            ["grad_norm", "update_ms", "buffer_len", "skipped"]
                .into_iter()
                .map(String::from),
        );
        let rows = self.adapt.iter().map(|a| {
            let mut row = vec![a.update.to_string(), a.time_s.to_string(), a.loss.to_string()];
            row.extend(nums(&a.r));
            row.push(a.grad_norm.to_string());
            row.push(a.update_ms.to_string());
            row.push(a.buffer_len.to_string());
            row.push(a.skipped.to_string());
            row
        });
        write_csv(&dir.join(ADAPT_LOG), header, rows)?;

        let horizon = self.solve.first().map_or(0, |s| s.modes.len());
        let mut header: Vec<String> = [
            "step",
            "solve_ms",
            "qp_solves",
            "projections",
            "primal_residual",
            "dual_residual",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        header.extend(names("mode", horizon));
        let rows = self.solve.iter().map(|s| {
            let mut row = vec![
                s.step.to_string(),
                s.solve_ms.to_string(),
                s.qp_solves.to_string(),
                s.projections.to_string(),
                s.primal_residual.to_string(),
                s.dual_residual.to_string(),
            ];
            row.extend(s.modes.iter().map(|m| m.to_string()));
            row
        });
        write_csv(&dir.join(SOLVE_LOG), header, rows)?;

        std::fs::write(dir.join(SUMMARY), self.summary.to_toml()).map_err(io)
    }
}

/// Nearest-rank percentile; zero for an empty sample.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// FNV-1a over the residual's bits and its version.
pub fn residual_checksum(r: &DVector<f64>, version: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |word: u64| {
        for b in word.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(version);
    for v in r.iter() {
        eat(v.to_bits());
    }
    h
}
