//! Joint phase estimation and symbol detection for a fixed LO phase.
//!
//! The symbols are latent. The E-step computes posterior symbol probabilities
//! (responsibilities) at the current phase; the M-step minimizes the weighted
//! squared error
//!
//! ```text
//! J(theta) = sum_n sum_m gamma[n][m] (x_n - A cos(theta + c_m))^2,   c_m = pi m - psi
//! ```
//!
//! with a safeguarded Newton iteration. Because the two means are antipodal,
//! `J`, its gradient and its curvature reduce to three weighted sums over the
//! block, so each Newton step is O(1) once the sums are formed.
//!
//! Identifiability: the likelihood is invariant under `theta -> theta + pi`
//! (which swaps the symbol labels) and under `theta -> 2 psi - theta`. The
//! estimate is reported in `[0, pi)` and the label assignment is left as found;
//! callers resolve both ambiguities.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::golden_section_min;
use crate::physics::{mod_pi, ChannelParams, Symbol};
use crate::rng;

/// Per-observation posterior probabilities of symbols zero and one.
pub type Responsibilities = Vec<[f64; 2]>;

/// 95% quantile of the chi-square distribution with one degree of freedom.
const CHI2_1_95: f64 = 3.841_458_820_694_124;

const NEWTON_MIN_CURVATURE: f64 = 1e-12;
const NEWTON_MAX_HALVINGS: usize = 30;

/// How EM chooses its starting phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitPolicy {
    /// `k` starts equally spaced in `[0, pi)`; the best final likelihood wins.
    MultiStart(usize),
    /// One uniform start in `[0, pi)` drawn from the given seed.
    Random(u64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmConfig {
    /// Stop when successive estimates differ by less than this (radians).
    pub eps: f64,
    pub l_max: usize,
    pub newton_max: usize,
    /// Stop Newton when the accepted step is shorter than this (radians).
    pub newton_tol: f64,
    pub init: InitPolicy,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            l_max: 500,
            newton_max: 100,
            newton_tol: 1e-3,
            init: InitPolicy::MultiStart(8),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.l_max == 0 || self.newton_max == 0 || !(self.newton_tol > 0.0)
        {
            return Err(Error::InvalidConfig(
                "EM needs eps > 0, newton_tol > 0, l_max >= 1 and newton_max >= 1".into(),
            ));
        }
        if let InitPolicy::MultiStart(0) = self.init {
            return Err(Error::InvalidConfig(
                "multi-start needs at least one start".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    /// Phase estimate in `[0, pi)`.
    pub theta_hat: f64,
    /// Phase the iteration ended on, before reduction mod pi. The labels in
    /// `responsibilities` and `s_hat` refer to this value.
    pub theta_raw: f64,
    pub responsibilities: Responsibilities,
    pub s_hat: Vec<Symbol>,
    /// Observed-data log-likelihood, starting with the initial phase.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The fit is not distinguishable (likelihood-ratio test at 5%) from the
    /// degenerate model in which both means vanish, so the phase is essentially
    /// unidentified.
    pub flat_likelihood: bool,
    /// Sum of squared scores at the estimate.
    pub observed_info: f64,
}

impl EmResult {
    /// Result describing a known phase with no iterations, e.g. for an oracle
    /// estimator.
    pub fn from_phase(x: &[f64], params: &ChannelParams, psi: f64, theta: f64) -> Self {
        finish(
            x,
            params,
            psi,
            theta,
            vec![loglik(x, params, psi, theta)],
            0,
            true,
        )
    }

    /// The same fit expressed through the reflected phase `2 psi - theta`, which
    /// yields identical means and hence identical responsibilities.
    pub fn reflected(mut self, psi: f64) -> Self {
        self.theta_raw = 2.0 * psi - self.theta_raw;
        self.theta_hat = mod_pi(self.theta_raw);
        self
    }

    pub fn final_loglik(&self) -> f64 {
        *self
            .loglik_trace
            .last()
            .expect("trace holds the initial likelihood")
    }
}

/// Means of symbols zero and one: `(A cos(theta - psi), -A cos(theta - psi))`.
fn means(params: &ChannelParams, psi: f64, theta: f64) -> (f64, f64) {
    let mu = params.amplitude() * (theta - psi).cos();
    (mu, -mu)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Posterior symbol probabilities at phase `theta`, computed from the
/// log-likelihood ratio so that well-separated lobes do not underflow.
pub fn e_step(x: &[f64], params: &ChannelParams, psi: f64, theta: f64) -> Responsibilities {
    let (mu0, mu1) = means(params, psi, theta);
    let inv_2var = 0.5 / params.noise_var();
    x.iter()
        .map(|&xn| {
            // log N(x; mu0) - log N(x; mu1)
            let llr = ((xn - mu1).powi(2) - (xn - mu0).powi(2)) * inv_2var;
            [logistic(llr), logistic(-llr)]
        })
        .collect()
}

/// Observed-data log-likelihood `sum_n log( (N(x_n; mu0) + N(x_n; mu1)) / 2 )`.
pub fn loglik(x: &[f64], params: &ChannelParams, psi: f64, theta: f64) -> f64 {
    let (mu0, mu1) = means(params, psi, theta);
    let var = params.noise_var();
    let norm = -0.5 * (2.0 * PI * var).ln() - LN_2;
    x.iter()
        .map(|&xn| {
            let l0 = -(xn - mu0).powi(2) / (2.0 * var);
            let l1 = -(xn - mu1).powi(2) / (2.0 * var);
            let top = l0.max(l1);
            top + ((l0 - top).exp() + (l1 - top).exp()).ln() + norm
        })
        .sum()
}

/// The M-step cost `J` for fixed responsibilities, held as sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepProblem {
    amplitude: f64,
    psi: f64,
    /// `sum (g0 + g1) x^2`
    sum_wx2: f64,
    /// `sum (g0 - g1) x`
    sum_dx: f64,
    /// `sum (g0 + g1)`
    weight: f64,
}

impl MStepProblem {
    pub fn new(x: &[f64], resp: &[[f64; 2]], params: &ChannelParams, psi: f64) -> Self {
        let (mut sum_wx2, mut sum_dx, mut weight) = (0.0, 0.0, 0.0);
        for (&xn, g) in x.iter().zip(resp) {
            let w = g[0] + g[1];
            sum_wx2 += w * xn * xn;
            sum_dx += (g[0] - g[1]) * xn;
            weight += w;
        }
        Self {
            amplitude: params.amplitude(),
            psi,
            sum_wx2,
            sum_dx,
            weight,
        }
    }

    pub fn objective(&self, theta: f64) -> f64 {
        let a = self.amplitude;
        let c = (theta - self.psi).cos();
        self.sum_wx2 - 2.0 * a * c * self.sum_dx + a * a * c * c * self.weight
    }

    /// `2A sum gamma [x sin(theta + c_m) - (A/2) sin(2(theta + c_m))]`
    pub fn gradient(&self, theta: f64) -> f64 {
        let a = self.amplitude;
        let u = theta - self.psi;
        2.0 * a * (u.sin() * self.sum_dx - 0.5 * a * (2.0 * u).sin() * self.weight)
    }

    /// `2A sum gamma [x cos(theta + c_m) - A cos(2(theta + c_m))]`
    pub fn hessian(&self, theta: f64) -> f64 {
        let a = self.amplitude;
        let u = theta - self.psi;
        2.0 * a * (u.cos() * self.sum_dx - a * (2.0 * u).cos() * self.weight)
    }

    /// Gradient magnitude below which `theta` counts as stationary.
    fn stationary_scale(&self) -> f64 {
        2.0 * self.amplitude * (self.sum_dx.abs() + self.amplitude * self.weight) * 1e-10 + 1e-300
    }
}

/// `J(theta)` for the given responsibilities.
pub fn m_step_objective(
    x: &[f64],
    params: &ChannelParams,
    psi: f64,
    theta: f64,
    resp: &[[f64; 2]],
) -> f64 {
    MStepProblem::new(x, resp, params, psi).objective(theta)
}

/// Minimizes `J` by Newton's method from `theta_t`.
///
/// A Newton step is taken only when the curvature is positive and `J` decreases;
/// otherwise the step is halved up to 30 times, and failing that the minimizer of
/// `J` on `[theta - pi/2, theta + pi/2]` is located by golden-section search. The
/// returned phase never increases `J`.
pub fn newton_update(
    x: &[f64],
    params: &ChannelParams,
    psi: f64,
    theta_t: f64,
    resp: &[[f64; 2]],
    config: &EmConfig,
) -> Result<f64> {
    let problem = MStepProblem::new(x, resp, params, psi);
    newton_minimize(&problem, theta_t, config)
}

fn newton_minimize(problem: &MStepProblem, theta_t: f64, config: &EmConfig) -> Result<f64> {
    let mut theta = theta_t;
    for _ in 0..config.newton_max {
        let j0 = problem.objective(theta);
        let g = problem.gradient(theta);
        if g.abs() <= problem.stationary_scale() {
            break;
        }
        let h = problem.hessian(theta);
        let mut next = None;
        if h > NEWTON_MIN_CURVATURE {
            let mut step = -g / h;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                if problem.objective(theta + step) < j0 {
                    next = Some(theta + step);
                    break;
                }
                step *= 0.5;
            }
        }
        let next = match next {
            Some(t) => t,
            None => {
                let t = golden_section_min(
                    |t| problem.objective(t),
                    theta - FRAC_PI_2,
                    theta + FRAC_PI_2,
                    1e-10,
                );
                if problem.objective(t) < j0 {
                    t
                } else if g.abs() <= 1e3 * problem.stationary_scale() {
                    // numerically flat: already at the minimum
                    break;
                } else {
                    return Err(Error::NewtonStalled { theta, gradient: g });
                }
            }
        };
        let step = next - theta;
        theta = next;
        if step.abs() < config.newton_tol {
            break;
        }
    }
    Ok(theta)
}

fn hard_decisions(resp: &[[f64; 2]]) -> Vec<Symbol> {
    resp.iter()
        .map(|g| {
            if g[1] > g[0] {
                Symbol::One
            } else {
                Symbol::Zero
            }
        })
        .collect()
}

fn finish(
    x: &[f64],
    params: &ChannelParams,
    psi: f64,
    theta: f64,
    loglik_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> EmResult {
    let responsibilities = e_step(x, params, psi, theta);
    let s_hat = hard_decisions(&responsibilities);

    let (mu0, _) = means(params, psi, theta);
    let dmu0 = -params.amplitude() * (theta - psi).sin();
    let var = params.noise_var();
    let observed_info = x
        .iter()
        .zip(&responsibilities)
        .map(|(&xn, g)| {
            let score = dmu0 / var * ((g[0] - g[1]) * xn - mu0);
            score * score
        })
        .sum();

    let fitted = *loglik_trace.last().unwrap_or(&f64::NEG_INFINITY);
    let degenerate = loglik(x, params, psi, psi + FRAC_PI_2);
    let flat_likelihood = 2.0 * (fitted - degenerate) < CHI2_1_95;

    EmResult {
        theta_hat: mod_pi(theta),
        theta_raw: theta,
        responsibilities,
        s_hat,
        loglik_trace,
        iterations,
        converged,
        flat_likelihood,
        observed_info,
    }
}

fn run_from(
    x: &[f64],
    params: &ChannelParams,
    psi: f64,
    start: f64,
    config: &EmConfig,
) -> Result<EmResult> {
    let mut theta = start;
    let mut trace = vec![loglik(x, params, psi, theta)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.l_max {
        let resp = e_step(x, params, psi, theta);
        let problem = MStepProblem::new(x, &resp, params, psi);
        let next = newton_minimize(&problem, theta, config)?;
        iterations += 1;
        trace.push(loglik(x, params, psi, next));
        let delta = (next - theta).abs();
        theta = next;
        if delta < config.eps {
            converged = true;
            break;
        }
    }
    Ok(finish(x, params, psi, theta, trace, iterations, converged))
}

/// Runs EM from every start of `config.init` and keeps the run with the highest
/// final observed-data likelihood. Fails only if every start fails.
pub fn run_em(x: &[f64], params: &ChannelParams, psi: f64, config: &EmConfig) -> Result<EmResult> {
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    config.validate()?;
    let starts: Vec<f64> = match config.init {
        InitPolicy::MultiStart(k) => (0..k).map(|i| PI * i as f64 / k as f64).collect(),
        InitPolicy::Random(seed) => vec![rng::stream(seed).random_range(0.0..PI)],
        InitPolicy::Fixed(theta) => vec![theta],
    };
    let mut best: Option<EmResult> = None;
    let mut first_err = None;
    for start in starts {
        match run_from(x, params, psi, start, config) {
            Ok(r) => {
                if best
                    .as_ref()
                    .is_none_or(|b| r.final_loglik() > b.final_loglik())
                {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::sample_block;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nominal(theta: f64) -> ChannelParams {
        ChannelParams::new(10.0, 0.8, 3.0, theta).unwrap()
    }

    /// Direct double sum, independent of the sufficient-statistic form.
    fn brute_j(x: &[f64], params: &ChannelParams, psi: f64, theta: f64, resp: &[[f64; 2]]) -> f64 {
        let a = params.amplitude();
        let mut j = 0.0;
        for (xn, g) in x.iter().zip(resp) {
            for (m, gm) in g.iter().enumerate() {
                let c = PI * m as f64 - psi;
                j += gm * (xn - a * (theta + c).cos()).powi(2);
            }
        }
        j
    }

    #[test]
    fn e_step_symmetric_point() {
        let p = nominal(0.3);
        let r = e_step(&[0.0], &p, 0.0, 0.3);
        assert_eq!(r[0], [0.5, 0.5]);
    }

    #[test]
    fn e_step_dominant_component() {
        let p = nominal(0.0);
        let r = e_step(&[1e3, -1e3], &p, 0.0, 0.0);
        assert_eq!(r[0], [1.0, 0.0]);
        assert_eq!(r[1], [0.0, 1.0]);
    }

    #[test]
    fn e_step_quadrature_offset_is_uninformative() {
        let p = nominal(FRAC_PI_2);
        for g in e_step(&[-3.0, 0.1, 7.0], &p, 0.0, FRAC_PI_2) {
            assert_relative_eq!(g[0], 0.5, epsilon = 1e-15);
            assert_relative_eq!(g[1], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn objective_matches_brute_force() {
        let p = nominal(0.8);
        let block = sample_block(&p, 0.1, 300, 4).unwrap();
        let resp = e_step(&block.x, &p, 0.1, 0.5);
        for theta in [-2.0, 0.0, 0.7, 3.0] {
            let fast = m_step_objective(&block.x, &p, 0.1, theta, &resp);
            let slow = brute_j(&block.x, &p, 0.1, theta, &resp);
            assert_relative_eq!(fast, slow, max_relative = 1e-11);
        }
    }

    #[test]
    fn noiseless_fit_has_zero_cost_and_gradient() {
        let p = nominal(0.6);
        let a = p.amplitude();
        let x = vec![a * (0.6f64 - 0.2).cos(); 10];
        let resp = vec![[1.0, 0.0]; 10];
        let problem = MStepProblem::new(&x, &resp, &p, 0.2);
        assert!(problem.objective(0.6).abs() < 1e-12);
        assert!(problem.gradient(0.6).abs() < 1e-12);
    }

    #[test]
    fn objective_periodic() {
        let p = nominal(0.8);
        let block = sample_block(&p, 0.0, 100, 8).unwrap();
        let resp = e_step(&block.x, &p, 0.0, 0.8);
        let j = m_step_objective(&block.x, &p, 0.0, 0.4, &resp);
        let k = m_step_objective(&block.x, &p, 0.0, 0.4 + 2.0 * PI, &resp);
        assert_relative_eq!(j, k, max_relative = 1e-12);
    }

    #[test]
    fn label_swap_matches_half_turn() {
        let p = nominal(0.8);
        let block = sample_block(&p, 0.3, 200, 12).unwrap();
        let resp = e_step(&block.x, &p, 0.3, 0.9);
        let swapped: Vec<[f64; 2]> = resp.iter().map(|g| [g[1], g[0]]).collect();
        let j = brute_j(&block.x, &p, 0.3, 0.9, &resp);
        let k = brute_j(&block.x, &p, 0.3, 0.9 + PI, &swapped);
        assert_relative_eq!(j, k, max_relative = 1e-12);
    }

    #[test]
    fn newton_reduces_objective() {
        let p = nominal(1.0);
        let block = sample_block(&p, 0.2, 500, 21).unwrap();
        let resp = e_step(&block.x, &p, 0.2, 0.4);
        let cfg = EmConfig::default();
        let t = newton_update(&block.x, &p, 0.2, 0.4, &resp, &cfg).unwrap();
        let problem = MStepProblem::new(&block.x, &resp, &p, 0.2);
        assert!(problem.objective(t) <= problem.objective(0.4));
        assert!(problem.gradient(t).abs() < 1e-3 * problem.objective(t));
    }

    #[test]
    fn newton_falls_back_from_negative_curvature() {
        // start at a maximum of J: h < 0, golden section must take over
        let p = nominal(0.0);
        let x = vec![p.amplitude(); 20];
        let resp = vec![[1.0, 0.0]; 20];
        let problem = MStepProblem::new(&x, &resp, &p, 0.0);
        let start = PI - 1e-3;
        assert!(problem.hessian(start) < 0.0);
        let cfg = EmConfig::default();
        let t = newton_minimize(&problem, start, &cfg).unwrap();
        assert!(problem.objective(t) < problem.objective(start));
    }

    #[test]
    fn run_em_noiseless_recovers_phase() {
        let p = ChannelParams::new(1e4, 1.0, 0.0, PI / 4.0).unwrap();
        let block = sample_block(&p, 0.0, 200, 2).unwrap();
        let r = run_em(&block.x, &p, 0.0, &EmConfig::default()).unwrap();
        // phi and -phi are indistinguishable at a single LO phase
        let d = (r.theta_hat - PI / 4.0)
            .abs()
            .min((r.theta_hat - 3.0 * PI / 4.0).abs());
        assert!(d < 1e-3, "{}", r.theta_hat);
        assert!(r.converged);
        assert!(!r.flat_likelihood);
    }

    #[test]
    fn run_em_rejects_empty_block() {
        assert_eq!(
            run_em(&[], &nominal(0.0), 0.0, &EmConfig::default()),
            Err(Error::EmptyBlock)
        );
    }

    #[test]
    fn degenerate_offset_is_flagged() {
        let p = nominal(FRAC_PI_2);
        let block = sample_block(&p, 0.0, 1000, 5).unwrap();
        let r = run_em(&block.x, &p, 0.0, &EmConfig::default()).unwrap();
        assert!(!r.converged || r.flat_likelihood);
    }

    #[test]
    fn result_invariants() {
        let p = nominal(0.7);
        let block = sample_block(&p, 0.1, 1000, 77).unwrap();
        let r = run_em(&block.x, &p, 0.1, &EmConfig::default()).unwrap();
        assert!((0.0..PI).contains(&r.theta_hat));
        for (g, s) in r.responsibilities.iter().zip(&r.s_hat) {
            assert!((g[0] + g[1] - 1.0).abs() < 1e-12);
            let arg = if g[1] > g[0] {
                Symbol::One
            } else {
                Symbol::Zero
            };
            assert_eq!(arg, *s);
        }
        for w in r.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn reflection_preserves_likelihood() {
        let p = nominal(0.7);
        let block = sample_block(&p, 0.3, 400, 19).unwrap();
        let a = loglik(&block.x, &p, 0.3, 0.7);
        let b = loglik(&block.x, &p, 0.3, 2.0 * 0.3 - 0.7);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn half_turn_start_flips_labels() {
        let p = nominal(0.9);
        let block = sample_block(&p, 0.2, 800, 31).unwrap();
        let base = EmConfig {
            init: InitPolicy::Fixed(0.6),
            ..EmConfig::default()
        };
        let shifted = EmConfig {
            init: InitPolicy::Fixed(0.6 + PI),
            ..base
        };
        let a = run_em(&block.x, &p, 0.2, &base).unwrap();
        let b = run_em(&block.x, &p, 0.2, &shifted).unwrap();
        assert!((a.theta_hat - b.theta_hat).abs() < 1e-9);
        for (s, t) in a.s_hat.iter().zip(&b.s_hat) {
            assert_eq!(*s, t.flipped());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn responsibilities_depend_on_offset_only(theta in -4.0f64..4.0, psi in -4.0f64..4.0, delta in -3.0f64..3.0, seed in any::<u64>()) {
            let p = nominal(theta);
            let block = sample_block(&p, psi, 20, seed).unwrap();
            let a = e_step(&block.x, &p, psi, theta);
            let b = e_step(&block.x, &p, psi + delta, theta + delta);
            for (ga, gb) in a.iter().zip(&b) {
                prop_assert!((ga[0] - gb[0]).abs() < 1e-9);
            }
        }

        #[test]
        fn gradient_matches_central_difference(theta in -4.0f64..4.0, psi in -4.0f64..4.0, seed in any::<u64>()) {
            let p = nominal(0.5);
            let block = sample_block(&p, psi, 50, seed).unwrap();
            let resp = e_step(&block.x, &p, psi, 0.5);
            let problem = MStepProblem::new(&block.x, &resp, &p, psi);
            let d = 1e-5;
            let fd = (brute_j(&block.x, &p, psi, theta + d, &resp) - brute_j(&block.x, &p, psi, theta - d, &resp)) / (2.0 * d);
            let g = problem.gradient(theta);
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0));
        }
    }
}
