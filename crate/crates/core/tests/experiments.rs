use qisac_core::*;

fn spec(
    theta_deg: f64,
    gamma_frac: f64,
    n_block: usize,
    trials: usize,
    seed: u64,
) -> ExperimentSpec {
    ExperimentSpec {
        params: ChannelParams::new(10.0, 0.8, 3.0, theta_deg.to_radians()).unwrap(),
        algo: AlgoConfig {
            gamma: GammaSpec::Relative(gamma_frac),
            ..AlgoConfig::default()
        },
        n_block,
        trials,
        seed,
        sweep: vec![],
    }
}

/// Mean over trials of the steady-state variance of `F_c / Gamma_min`.
fn relative_fc_variance(report: &ConvergenceReport) -> f64 {
    let per_trial: Vec<f64> = report
        .traces()
        .map(|t| {
            let v: Vec<f64> = t
                .tail(STEADY_FRACTION)
                .iter()
                .map(|r| r.fc / t.gamma_min)
                .collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        })
        .collect();
    per_trial.iter().sum::<f64>() / per_trial.len() as f64
}

#[test]
fn smaller_blocks_fluctuate_more() {
    let long_blocks = run_convergence_experiment(&spec(45.0, 0.6, 1000, 6, 21)).unwrap();
    let short_blocks = run_convergence_experiment(&spec(60.0, 0.5, 500, 6, 21)).unwrap();
    let ratio = relative_fc_variance(&short_blocks) / relative_fc_variance(&long_blocks);
    assert!(ratio > 1.0, "variance ratio {ratio}");
}

#[test]
fn theta_hat_locks_on() {
    let report = run_convergence_experiment(&spec(45.0, 0.6, 1000, 8, 5)).unwrap();
    let last = report.summary.last().unwrap();
    assert!((last.theta_hat.median.to_degrees() - 45.0).abs() <= 2.0);
    assert!(
        last.theta_hat.q25 <= last.theta_hat.median && last.theta_hat.median <= last.theta_hat.q75
    );
    for t in report.traces() {
        let s = SteadyState::of(t, 1000);
        assert!(
            (80.0..=90.0).contains(&s.psi.to_degrees()),
            "{}",
            s.psi.to_degrees()
        );
    }
}

/// With no sensing requirement the loop steers toward the communication optimum,
/// but stops early: near zero offset the fitted amplitude often exceeds `A`, the
/// likelihood peaks exactly at `theta_hat = psi`, and the correction vanishes.
#[test]
fn zero_requirement_steers_toward_communication_optimum() {
    let s = spec(30.0, 0.0, 1000, 8, 9);
    let report = run_convergence_experiment(&s).unwrap();
    let optimum = ber_theory(&s.params, s.params.theta);
    let tails: Vec<&IterationRecord> = report
        .traces()
        .flat_map(|t| t.tail(STEADY_FRACTION))
        .collect();
    assert!(tails.iter().all(|r| r.target == Target::Communication));

    let emp = tails.iter().map(|r| r.ber_emp).sum::<f64>() / tails.len() as f64;
    let theory = tails.iter().map(|r| r.ber_theory).sum::<f64>() / tails.len() as f64;
    let stderr = (theory * (1.0 - theory) / (tails.len() * 1000) as f64).sqrt();
    assert!((emp - theory).abs() <= 3.0 * stderr, "{emp} vs {theory}");
    assert!(optimum < theory && theory < ber_theory(&s.params, s.algo.psi0));

    for t in report.traces() {
        let last = t.records.last().unwrap();
        assert!(t.records.len() < s.algo.t_max);
        assert!(last.delta_psi.abs() < s.algo.eps);
        assert!(wrap_pi(last.psi - s.params.theta).abs() < 20f64.to_radians());
    }
}

#[test]
fn tradeoff_curve_invariants() {
    let mut s = spec(30.0, 0.5, 500, 3, 13);
    s.algo.t_max = 200;
    s.sweep = [0.2, 0.8]
        .into_iter()
        .map(|gamma_frac| SweepPoint {
            gamma_frac,
            na: 3.0,
            n: 500,
        })
        .collect();
    let curve = run_tradeoff_sweep(&s).unwrap();
    assert_eq!(curve.points.len(), 2);
    for p in &curve.points {
        assert!(!p.infeasible && p.failures.is_empty() && p.trials_ok == 3);
        assert!(p.ber_sim >= 0.0 && p.ber_sim <= 0.5 + p.ber_stderr);
        let reference = pareto_known_theta(
            &s.params,
            500,
            p.gamma_frac * fc_max(&s.params, 500).unwrap().value,
        )
        .unwrap();
        assert_eq!(p.ber_theory, reference.ber);
    }
    assert!(curve.points[0].ber_sim < curve.points[1].ber_sim);
}

#[test]
fn sweep_is_deterministic() {
    let mut s = spec(30.0, 0.5, 300, 2, 4);
    s.algo.t_max = 40;
    s.sweep = vec![SweepPoint {
        gamma_frac: 0.5,
        na: 2.0,
        n: 300,
    }];
    assert_eq!(
        run_tradeoff_sweep(&s).unwrap(),
        run_tradeoff_sweep(&s).unwrap()
    );
}
