//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::Instant;

use acmpc::harness::{bench, gradient_map, run_experiment, Region, RunMode};
use acmpc::models::{linearize, pusher_ball_plant, pusher_ball_prior};
use common::*;
use nalgebra::DVector;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome { pass, detail })
}

fn report(id: &str, name: &str, budget_s: f64, f: impl FnOnce() -> Result<Outcome, String>) -> bool {
    let t = Instant::now();
    let result = f();
    let secs = t.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && secs < budget_s, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {id} {name}: {detail} [{secs:.1} s, budget {budget_s} s]");
    pass
}

fn lcp_equivalence() -> Result<Outcome, String> {
    let mut failures = Vec::new();
    for seed in 0..1000u64 {
        let kind = if seed % 2 == 0 { LcpKind::Spd } else { LcpKind::PMatrix };
        if let Err(e) = check_lcp_agreement(&random_lcp(seed, kind)) {
            failures.push(format!("seed {seed}: {e}"));
        }
    }
    let detail = format!("{} of 1000 instances disagree (λ tol 1e-7, λᵀy tol 1e-8){}", failures.len(), first(&failures));
    outcome(failures.is_empty(), detail)
}

fn gradient_fidelity() -> Result<Outcome, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        worst = worst.max(gradient_fd_error(seed)?);
    }
    outcome(worst <= 1e-5, format!("worst relative error {worst:.2e} over 100 instances (tol 1e-5)"))
}

fn gradient_regions() -> Result<Outcome, String> {
    let cfg = load_config("cartpole_walls")?;
    let learn = cfg.learn_config().map_err(|e| e.to_string())?;
    let map = gradient_map(&cfg.cartpole_params(), &learn, 20, 20, 0.2).map_err(|e| e.to_string())?;
    let s = map.summary();
    let regions = [Region::EventPredicted, Region::EventMissed, Region::FalsePrediction, Region::NoContact];
    let counts: Vec<usize> = regions.iter().map(|r| map.cells.iter().filter(|c| c.region == *r).count()).collect();
    let pass = s.cells >= 400 && counts.iter().all(|&n| n > 0) && s.no_contact_max_grad == 0.0 && s.contact_min_grad > 1e-6;
    let detail = format!(
        "{} cells (predicted {}, missed {}, false {}, none {}); max |g| without contact {:e}, min |g| elsewhere {:.2e}",
        s.cells, counts[0], counts[1], counts[2], counts[3], s.no_contact_max_grad, s.contact_min_grad
    );
    outcome(pass, detail)
}

fn cartpole_convergence() -> Result<Outcome, String> {
    let cfg = load_config("cartpole_walls")?;
    let p = cfg.cartpole_params();
    let l = &cfg.learn;
    let settings = p.delta_phi == [-0.15, 0.15]
        && l.epsilon == 1e-7
        && l.gamma == 1e-2
        && l.learning_rate == 1e-3
        && l.capacity == 10
        && cfg.duration_s <= 60.0
        && cfg.mode == RunMode::Deterministic;
    let s = run_experiment(&cfg).map_err(|e| e.to_string())?.summary;
    let pass = settings && s.success && s.stabilized_at_step.is_some() && s.residual_converged == Some(true);
    let detail = format!(
        "settings as specified: {settings}; stabilized at step {:?}; residual converged at update {:?}; r = {:?} vs Δφ = {:?}",
        s.stabilized_at_step, s.residual_converged_at_update, rounded(&s.final_residual), p.delta_phi
    );
    outcome(pass, detail)
}

fn adaptation_necessity() -> Result<Outcome, String> {
    let cfg = load_config("pusher_ball")?;
    let p = cfg.pusher_params();
    // Oracle: the gap shift is the difference between linearizing the true
    // model and the prior at the same point.
    let x = DVector::from_column_slice(&cfg.initial_state);
    let u = x.rows(0, 2).into_owned();
    let truth = linearize(&pusher_ball_plant(&p).map_err(|e| e.to_string())?, &x, &u).map_err(|e| e.to_string())?;
    let prior = linearize(&pusher_ball_prior(&p).map_err(|e| e.to_string())?, &x, &u).map_err(|e| e.to_string())?;
    let shift = &truth.c - &prior.c;

    let mut off = cfg.clone();
    off.adapt = false;
    let without = run_experiment(&off).map_err(|e| e.to_string())?.summary;
    let with = run_experiment(&cfg).map_err(|e| e.to_string())?.summary;
    let r = DVector::from_column_slice(&with.final_residual);
    let rel = (&r - &shift).amax() / shift.amax();
    let pass = !without.success && with.success && rel <= 0.2;
    let detail = format!(
        "no-adapt progress {:.3} rad (success {}); adaptive progress {:.3} rad (success {}); r = {:?} vs shift {:?}, rel err {:.3} (tol 0.2)",
        without.path_progress_rad.unwrap_or(f64::NAN),
        without.success,
        with.path_progress_rad.unwrap_or(f64::NAN),
        with.success,
        rounded(&with.final_residual),
        rounded(shift.as_slice()),
        rel
    );
    outcome(pass, detail)
}

fn rate_targets() -> Result<Outcome, String> {
    let mut lines = Vec::new();
    for name in ["cartpole_walls", "pusher_ball"] {
        let cfg = load_config(name)?;
        let b = bench(&cfg, 200).map_err(|e| e.to_string())?;
        let update_ok = b.update_ms_p95 <= 50.0;
        let solve_ok = b.solve_ms_p95 <= 12.5;
        lines.push(format!(
            "{name}: update p95 {:.2} ms (target 50, {}), solve p95 {:.2} ms at N = {} (target 12.5, {})",
            b.update_ms_p95,
            met(update_ok),
            b.solve_ms_p95,
            b.horizon,
            met(solve_ok)
        ));
    }
    // Targets are reported; the criterion is that the bench runs and emits.
    outcome(true, format!("report emitted; {}", lines.join("; ")))
}

type SeededCheck = fn(u64) -> Check;

fn invariant_suite() -> Result<Outcome, String> {
    let checks: [(&str, SeededCheck, u64); 14] = [
        ("qp optimality", check_qp_optimality, 200),
        ("residual shift", check_residual_shift, 200),
        ("rollout complementarity", check_rollout_complementarity, 200),
        ("projection exactness", check_projection, 200),
        ("step equations", check_step_equations, 100),
        ("energy dissipation", check_energy_dissipation, 100),
        ("linearization exactness", check_linearization_exact, 100),
        ("contact matrix psd/pd", check_contact_matrix, 100),
        ("loss structure", check_loss_structure, 100),
        ("descent", check_descent, 100),
        ("plan complementarity", check_plan_complementarity, 30),
        ("controller residual shift", check_controller_residual_shift, 30),
        ("spd lcp", |s| check_lcp_agreement(&random_lcp(s, LcpKind::Spd)), 200),
        ("p-matrix lcp", |s| check_lcp_agreement(&random_lcp(s, LcpKind::PMatrix)), 200),
    ];
    let mut failures = Vec::new();
    let mut cases = 0;
    for (name, check, n) in checks {
        for seed in 0..n {
            cases += 1;
            if let Err(e) = check(1_000_000 + seed) {
                failures.push(format!("{name} seed {seed}: {e}"));
            }
        }
    }

    let (solves, late) = admm_tail_violations("cartpole_baseline", 20.0)?;
    if late > 0 {
        failures.push(format!("admm tail: {late} of {solves} benchmark solves"));
    }
    let (walls_solves, walls_late) = admm_tail_violations("cartpole_walls", 20.0)?;

    let mut det = true;
    for name in ["cartpole_walls", "pusher_ball"] {
        let mut cfg = load_config(name)?;
        cfg.duration_s = 2.0;
        let a = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let b = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let same = a.control == b.control && a.adapt == b.adapt && a.solve == b.solve && a.summary == b.summary;
        if !same {
            failures.push(format!("{name}: seeded runs differ"));
        }
        det &= same;
    }

    let detail = format!(
        "{} failures over {cases} seeded cases; admm tail {late}/{solves} on the benchmark \
         (walls run, informational: {walls_late}/{walls_solves}); seeded runs identical: {det}{}",
        failures.len(),
        first(&failures)
    );
    outcome(failures.is_empty(), detail)
}

fn first(failures: &[String]) -> String {
    failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn met(ok: bool) -> &'static str {
    if ok {
        "met"
    } else {
        "missed"
    }
}

fn main() {
    let results = [
        report("AC1", "lcp oracle equivalence", 10.0, lcp_equivalence),
        report("AC2", "gradient fidelity", 30.0, gradient_fidelity),
        report("AC3", "gradient regions", 60.0, gradient_regions),
        report("AC4", "cart-pole adaptive convergence", 120.0, cartpole_convergence),
        report("AC5", "adaptation necessity", 180.0, adaptation_necessity),
        report("AC6", "rate targets", f64::INFINITY, rate_targets),
        report("AC7", "structural invariants", 120.0, invariant_suite),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
