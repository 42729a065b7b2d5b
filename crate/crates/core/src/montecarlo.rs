//! Multi-trial experiment harness.
//!
//! Trials run in parallel on the rayon pool; results are collected by trial
//! index, so aggregates depend only on the master seed.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{fc_max, pareto_with_peak};
use crate::controller::{run_trial, AlgoConfig, GammaSpec, RunTrace};
use crate::error::{Error, Result};
use crate::physics::{ChannelParams, Symbol};
use crate::rng;

/// Fraction of outer iterations, at the end of a run, treated as steady state.
pub const STEADY_FRACTION: f64 = 0.2;

/// Error rate of hard decisions with the BPSK label ambiguity resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerScore {
    /// `min(e, 1 - e)` for the raw mismatch fraction `e`.
    pub ber: f64,
    /// Whether the complemented decisions were scored.
    pub flipped: bool,
    /// Raw mismatch fraction without ambiguity resolution.
    pub raw: f64,
}

pub fn score_ber(s_hat: &[Symbol], s_true: &[Symbol]) -> Result<BerScore> {
    if s_hat.len() != s_true.len() {
        return Err(Error::LengthMismatch {
            left: s_hat.len(),
            right: s_true.len(),
        });
    }
    if s_hat.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let errors = s_hat.iter().zip(s_true).filter(|(a, b)| a != b).count();
    let raw = errors as f64 / s_hat.len() as f64;
    let flipped = raw > 0.5;
    Ok(BerScore {
        ber: if flipped { 1.0 - raw } else { raw },
        flipped,
        raw,
    })
}

/// One point of a trade-off sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma_frac: f64,
    pub na: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub params: ChannelParams,
    pub algo: AlgoConfig,
    pub n_block: usize,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Vec<SweepPoint>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.algo.validate()?;
        if self.trials == 0 || self.n_block == 0 {
            return Err(Error::InvalidConfig(
                "trials and n_block must be positive".into(),
            ));
        }
        for p in &self.sweep {
            if !(0.0..=1.0).contains(&p.gamma_frac) || p.n == 0 {
                return Err(Error::InvalidConfig(format!("bad sweep point {p:?}")));
            }
            self.params.with_na(p.na).validate()?;
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        rng::trial_seed(self.seed, trial as u64)
    }
}

/// Steady-state averages over the tail of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub theta_hat: f64,
    pub psi: f64,
    pub fc: f64,
    pub ber_emp: f64,
    pub ber_theory: f64,
    pub iterations: usize,
    /// Symbols scored in the window.
    pub symbols: usize,
}

impl SteadyState {
    pub fn of(trace: &RunTrace, n_block: usize) -> Self {
        let tail = trace.tail(STEADY_FRACTION);
        let k = tail.len() as f64;
        let mean = |f: &dyn Fn(&crate::controller::IterationRecord) -> f64| {
            tail.iter().map(f).sum::<f64>() / k
        };
        Self {
            theta_hat: mean(&|r| r.theta_hat),
            psi: mean(&|r| r.psi),
            fc: mean(&|r| r.fc),
            ber_emp: mean(&|r| r.ber_emp),
            ber_theory: mean(&|r| r.ber_theory),
            iterations: tail.len(),
            symbols: tail.len() * n_block,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub result: Result<RunTrace>,
}

/// Median and inter-quartile band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Band {
    pub fn of(values: &mut [f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some(Self {
            median: quantile(values, 0.5),
            q25: quantile(values, 0.25),
            q75: quantile(values, 0.75),
        })
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Cross-trial bands at one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub trials: usize,
    pub theta_hat: Band,
    pub psi: Band,
    pub fc: Band,
    pub ber_emp: Band,
    pub ber_theory: Band,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<IterationSummary>,
}

impl ConvergenceReport {
    pub fn traces(&self) -> impl Iterator<Item = &RunTrace> {
        self.trials.iter().filter_map(|t| t.result.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &Error)> {
        self.trials
            .iter()
            .filter_map(|t| t.result.as_ref().err().map(|e| (t.trial, e)))
    }
}

/// Runs `spec.trials` independent closed-loop trials and summarizes them per
/// iteration. Failed trials are reported, not fatal.
pub fn run_convergence_experiment(spec: &ExperimentSpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let trials: Vec<TrialOutcome> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = spec.trial_seed(trial);
            TrialOutcome {
                trial,
                seed,
                result: run_trial(&spec.params, spec.n_block, &spec.algo, seed),
            }
        })
        .collect();

    let traces: Vec<&RunTrace> = trials
        .iter()
        .filter_map(|t| t.result.as_ref().ok())
        .collect();
    let longest = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let summary = (0..longest)
        .filter_map(|i| {
            let rows: Vec<_> = traces.iter().filter_map(|t| t.records.get(i)).collect();
            let band = |f: fn(&crate::controller::IterationRecord) -> f64| {
                let mut v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
                Band::of(&mut v)
            };
            Some(IterationSummary {
                iteration: i,
                trials: rows.len(),
                theta_hat: band(|r| r.theta_hat)?,
                psi: band(|r| r.psi)?,
                fc: band(|r| r.fc)?,
                ber_emp: band(|r| r.ber_emp)?,
                ber_theory: band(|r| r.ber_theory)?,
            })
        })
        .collect();
    Ok(ConvergenceReport { trials, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub gamma_frac: f64,
    pub na: f64,
    pub n: usize,
    /// Mean over trials of the steady-state empirical BER.
    pub ber_sim: f64,
    /// Standard error of `ber_sim`.
    pub ber_stderr: f64,
    /// Known-phase optimum at the same requirement.
    pub ber_theory: f64,
    pub phi_star: f64,
    pub trials_ok: usize,
    pub failures: Vec<String>,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub params: ChannelParams,
    pub points: Vec<TradeoffPoint>,
}

/// Standard error of the mean of per-trial steady-state BERs. With a single trial
/// the binomial error over the scored symbols is used.
fn ber_stderr(bers: &[f64], symbols: usize) -> f64 {
    let k = bers.len() as f64;
    let mean = bers.iter().sum::<f64>() / k;
    if bers.len() > 1 {
        let var = bers.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        (mean * (1.0 - mean) / symbols.max(1) as f64).sqrt()
    }
}

/// Steady-state BER of the closed loop against the known-phase optimum, for every
/// `(gamma_frac, Na, N)` in `spec.sweep`.
pub fn run_tradeoff_sweep(spec: &ExperimentSpec) -> Result<TradeoffCurve> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(Error::InvalidConfig("sweep list is empty".into()));
    }

    struct Prepared {
        params: ChannelParams,
        algo: AlgoConfig,
        reference: Result<crate::analytics::ParetoPoint>,
    }
    let prepared: Vec<Prepared> = spec
        .sweep
        .par_iter()
        .map(|p| {
            let params = spec.params.with_na(p.na);
            let algo = AlgoConfig {
                gamma: GammaSpec::Relative(p.gamma_frac),
                ..spec.algo
            };
            let reference = fc_max(&params, p.n)
                .and_then(|peak| pareto_with_peak(&params, &peak, p.gamma_frac * peak.value));
            Prepared {
                params,
                algo,
                reference,
            }
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..spec.sweep.len())
        .flat_map(|i| (0..spec.trials).map(move |t| (i, t)))
        .collect();
    let outcomes: Vec<Result<SteadyState>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let point = &spec.sweep[i];
            let prep = &prepared[i];
            let seed = rng::trial_seed(rng::trial_seed(spec.seed, (1 << 32) | i as u64), t as u64);
            run_trial(&prep.params, point.n, &prep.algo, seed)
                .map(|tr| SteadyState::of(&tr, point.n))
        })
        .collect();

    let points = spec
        .sweep
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let mine = &outcomes[i * spec.trials..(i + 1) * spec.trials];
            let ok: Vec<&SteadyState> = mine.iter().filter_map(|r| r.as_ref().ok()).collect();
            let failures = mine
                .iter()
                .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
                .collect();
            let bers: Vec<f64> = ok.iter().map(|s| s.ber_emp).collect();
            let (ber_sim, stderr) = if bers.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let symbols = ok.iter().map(|s| s.symbols).sum();
                (
                    bers.iter().sum::<f64>() / bers.len() as f64,
                    ber_stderr(&bers, symbols),
                )
            };
            let (ber_theory, phi_star, infeasible) = match &prepared[i].reference {
                Ok(r) => (r.ber, r.phi_star, false),
                Err(_) => (f64::NAN, f64::NAN, true),
            };
            TradeoffPoint {
                gamma_frac: point.gamma_frac,
                na: point.na,
                n: point.n,
                ber_sim,
                ber_stderr: stderr,
                ber_theory,
                phi_star,
                trials_ok: ok.len(),
                failures,
                infeasible,
            }
        })
        .collect();
    Ok(TradeoffCurve {
        params: spec.params,
        points,
    })
}
