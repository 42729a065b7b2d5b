use std::path::Path;

use qisac_core::{
    ber_theory, fc_max, fisher_high_snr, fisher_symbol, pareto_known_theta,
    run_convergence_experiment, run_tradeoff_sweep, ChannelParams, SteadyState,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfigFile, DEFAULT_RUN_TRIALS, DEFAULT_SWEEP_TRIALS};
use crate::output::{num, write_csv, write_json};
use crate::{AnalyticsArgs, CliError, VERSION};

pub const GRID_CSV: &str = "analytics_grid.csv";
pub const FCMAX_JSON: &str = "analytics_fcmax.json";
pub const PARETO_CSV: &str = "analytics_pareto.csv";
pub const RUN_CSV: &str = "run_iterations.csv";
pub const RUN_JSON: &str = "run_summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep_summary.json";

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn analytics(args: &AnalyticsArgs, out: &Path) -> Result<(), CliError> {
    let params = ChannelParams::new(args.energy, args.eta, args.na, 0.0)?;
    if args.grid < 2 || args.pareto_points < 2 || args.n == 0 {
        return Err(CliError::Config(
            "--grid and --pareto-points must be >= 2, --N >= 1".into(),
        ));
    }

    let mut grid = Vec::with_capacity(args.grid);
    for k in 0..args.grid {
        let phi_deg = 180.0 * k as f64 / (args.grid - 1) as f64;
        // theta = phi with the LO at zero
        let p = params.with_theta(phi_deg.to_radians());
        grid.push(vec![
            num(phi_deg),
            num(ber_theory(&p, 0.0)),
            num(fisher_symbol(&p, 0.0)?.per_symbol),
            num(fisher_high_snr(&p, 0.0)),
        ]);
    }

    let peak = fc_max(&params, args.n)?;
    let mut pareto = Vec::with_capacity(args.pareto_points);
    for k in 0..args.pareto_points {
        let frac = k as f64 / (args.pareto_points - 1) as f64;
        let point = pareto_known_theta(&params, args.n, frac * peak.value)?;
        pareto.push(vec![
            num(frac),
            num(point.gamma_min),
            num(point.phi_star.to_degrees()),
            num(point.ber),
        ]);
    }

    std::fs::create_dir_all(out)?;
    write_csv(
        &out.join(GRID_CSV),
        &["phi_deg", "ber", "fisher", "fisher_high_snr"],
        grid,
    )?;
    write_json(
        &out.join(FCMAX_JSON),
        &json!({
            "version": VERSION,
            "channel": {"E": args.energy, "eta": args.eta, "Na": args.na},
            "N": args.n,
            "fc_max": peak.value,
            "fisher_max_per_symbol": peak.per_symbol,
            "phi_star_deg": peak.phi_star.to_degrees(),
            "upper_bound": args.n as f64 * params.snr(),
        }),
    )?;
    write_csv(
        &out.join(PARETO_CSV),
        &["gamma_frac", "gamma_min", "phi_star_deg", "ber"],
        pareto,
    )?;
    println!(
        "F_c^max = {:.6} at |phi| = {:.4} deg (N = {}); wrote {GRID_CSV}, {FCMAX_JSON}, {PARETO_CSV}",
        peak.value,
        peak.phi_star.to_degrees(),
        args.n
    );
    Ok(())
}

#[derive(Serialize)]
struct TrialSummary {
    trial: usize,
    seed: u64,
    iterations: usize,
    psi_deg: f64,
    theta_hat_deg: f64,
    fc: f64,
    ber_emp: f64,
    ber_theory: f64,
}

#[derive(Serialize)]
struct FailedTrial {
    trial: usize,
    seed: u64,
    error: String,
}

pub fn run(file: &RunConfigFile, seed: u64, out: &Path) -> Result<(), CliError> {
    let spec = file.to_spec(Some(seed), DEFAULT_RUN_TRIALS)?;
    let report = run_convergence_experiment(&spec)?;

    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut failed = Vec::new();
    let mut gamma_min = f64::NAN;
    let mut fc_max = f64::NAN;
    for outcome in &report.trials {
        match &outcome.result {
            Ok(trace) => {
                gamma_min = trace.gamma_min;
                fc_max = trace.fc_max;
                for r in &trace.records {
                    rows.push(vec![
                        r.iteration.to_string(),
                        outcome.trial.to_string(),
                        num(r.theta_hat.to_degrees()),
                        num(r.psi.to_degrees()),
                        num(r.fc),
                        num(trace.fc_max),
                        num(r.ber_emp),
                        num(r.ber_theory),
                        r.target.as_str().to_string(),
                    ]);
                }
                let s = SteadyState::of(trace, spec.n_block);
                trials.push(TrialSummary {
                    trial: outcome.trial,
                    seed: outcome.seed,
                    iterations: trace.records.len(),
                    psi_deg: s.psi.to_degrees(),
                    theta_hat_deg: s.theta_hat.to_degrees(),
                    fc: s.fc,
                    ber_emp: s.ber_emp,
                    ber_theory: s.ber_theory,
                });
            }
            Err(e) => failed.push(FailedTrial {
                trial: outcome.trial,
                seed: outcome.seed,
                error: e.to_string(),
            }),
        }
    }

    let col = |f: fn(&TrialSummary) -> f64| median(trials.iter().map(f).collect());
    let summary = json!({
        "version": VERSION,
        "command": "run",
        "seed": seed,
        "config": file,
        "resolved": {"spec": spec, "gamma_min": gamma_min, "fc_max": fc_max},
        "steady_state": {
            "window_fraction": qisac_core::STEADY_FRACTION,
            "median_psi_deg": col(|t| t.psi_deg),
            "median_theta_hat_deg": col(|t| t.theta_hat_deg),
            "median_fc": col(|t| t.fc),
            "median_ber_emp": col(|t| t.ber_emp),
            "median_ber_theory": col(|t| t.ber_theory),
            "trials": trials,
        },
        "failed_trials": failed,
    });

    std::fs::create_dir_all(out)?;
    write_csv(
        &out.join(RUN_CSV),
        &[
            "iter",
            "trial",
            "theta_hat_deg",
            "psi_deg",
            "fc",
            "fc_max",
            "ber_emp",
            "ber_theory",
            "target",
        ],
        rows,
    )?;
    write_json(&out.join(RUN_JSON), &summary)?;
    println!(
        "{} of {} trials ok; median steady-state psi = {:.3} deg; wrote {RUN_CSV}, {RUN_JSON}",
        trials.len(),
        spec.trials,
        summary["steady_state"]["median_psi_deg"]
            .as_f64()
            .unwrap_or(f64::NAN)
    );
    if !failed.is_empty() {
        let list: Vec<String> = failed
            .iter()
            .map(|f| format!("trial {} (seed {}): {}", f.trial, f.seed, f.error))
            .collect();
        return Err(CliError::Numerical(format!(
            "{} trial(s) failed: {}",
            failed.len(),
            list.join("; ")
        )));
    }
    Ok(())
}

pub fn sweep(file: &RunConfigFile, seed: u64, out: &Path) -> Result<(), CliError> {
    if file.sweep.as_ref().is_none_or(|s| s.is_empty()) {
        return Err(CliError::Config("sweep list is empty".into()));
    }
    let spec = file.to_spec(Some(seed), DEFAULT_SWEEP_TRIALS)?;
    let curve = run_tradeoff_sweep(&spec)?;

    let rows = curve.points.iter().map(|p| {
        vec![
            num(p.gamma_frac),
            num(p.na),
            p.n.to_string(),
            num(p.ber_sim),
            num(p.ber_stderr),
            num(p.ber_theory),
        ]
    });
    std::fs::create_dir_all(out)?;
    write_csv(
        &out.join(SWEEP_CSV),
        &[
            "gamma_frac",
            "Na",
            "N",
            "ber_sim",
            "ber_stderr",
            "ber_theory_known_theta",
        ],
        rows,
    )?;
    write_json(
        &out.join(SWEEP_JSON),
        &json!({
            "version": VERSION,
            "command": "sweep",
            "seed": seed,
            "config": file,
            "resolved": {"spec": spec},
            "points": curve.points,
        }),
    )?;
    println!(
        "{} sweep points; wrote {SWEEP_CSV}, {SWEEP_JSON}",
        curve.points.len()
    );

    let failures: Vec<String> = curve
        .points
        .iter()
        .filter(|p| !p.failures.is_empty())
        .map(|p| {
            format!(
                "gamma_frac={} Na={} N={}: {}",
                p.gamma_frac,
                p.na,
                p.n,
                p.failures.join(", ")
            )
        })
        .collect();
    if !failures.is_empty() {
        return Err(CliError::Numerical(format!(
            "failed trials: {}",
            failures.join("; ")
        )));
    }
    Ok(())
}
