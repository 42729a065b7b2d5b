//! Outer loop: retune the LO phase toward the communication-optimal phase while
//! the block Fisher information meets the requirement, and toward the
//! sensing-optimal phase otherwise.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::analytics::{ber_theory, fc_max, fisher_symbol, optimal_angles};
use crate::em::{run_em, EmConfig, EmResult, InitPolicy};
use crate::error::{Error, Result};
use crate::montecarlo::score_ber;
use crate::physics::{mod_pi, sample_block, ChannelParams, ObservationBlock, Symbol};
use crate::rng;

/// `x - pi round(x / pi)` with ties rounded away from zero; lies in `[-pi/2, pi/2]`.
pub fn wrap_pi(x: f64) -> f64 {
    x - PI * (x / PI).round()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "com")]
    Communication,
    #[serde(rename = "sen")]
    Sensing,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Communication => "com",
            Target::Sensing => "sen",
        }
    }
}

/// Communication target `theta_hat mod pi` when `fc >= gamma_min`, sensing target
/// `(theta_hat + pi/2) mod pi` otherwise.
pub fn select_target(fc: f64, gamma_min: f64, theta_hat: f64) -> (Target, f64) {
    let (com, sen) = optimal_angles(theta_hat);
    if fc >= gamma_min {
        (Target::Communication, com)
    } else {
        (Target::Sensing, sen)
    }
}

/// `psi + lambda wrap_pi(psi_tar - psi)`, reduced to `[0, pi)`.
pub fn update_psi(psi: f64, psi_tar: f64, lambda: f64) -> f64 {
    mod_pi(psi + lambda * wrap_pi(psi_tar - psi))
}

/// Required block Fisher information, absolute or as a fraction of `F_c^max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSpec {
    Absolute(f64),
    Relative(f64),
}

impl GammaSpec {
    pub fn resolve(&self, fc_max: f64) -> f64 {
        match *self {
            GammaSpec::Absolute(g) => g,
            GammaSpec::Relative(frac) => frac * fc_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgoConfig {
    pub gamma: GammaSpec,
    /// Step fraction in `(0, 1]`.
    pub lambda: f64,
    /// Outer tolerance on `|wrap_pi(psi_tar - psi)|`.
    pub eps: f64,
    pub t_max: usize,
    pub em: EmConfig,
    pub psi0: f64,
    /// Draw a new block at every outer iteration; otherwise the first block is reused.
    pub block_refresh: bool,
    /// Choose between an EM estimate and its reflection about the LO phase using
    /// the blocks measured at earlier LO phases.
    pub resolve_reflection: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            gamma: GammaSpec::Relative(0.6),
            lambda: 0.01,
            eps: 1e-3,
            t_max: 500,
            em: EmConfig::default(),
            psi0: FRAC_PI_2,
            block_refresh: true,
            resolve_reflection: true,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        match self.gamma {
            GammaSpec::Absolute(g) if !(g >= 0.0) => {
                return Err(Error::InvalidConfig(format!(
                    "gamma_min must be >= 0, got {g}"
                )))
            }
            GammaSpec::Relative(f) if !(0.0..=1.0).contains(&f) => {
                return Err(Error::InvalidConfig(format!(
                    "gamma_frac must lie in [0, 1], got {f}"
                )))
            }
            _ => {}
        }
        if self.t_max == 0 || !(self.eps > 0.0) || !self.psi0.is_finite() {
            return Err(Error::InvalidConfig(
                "t_max >= 1, eps > 0 and a finite psi0 are required".into(),
            ));
        }
        self.em.validate()
    }
}

/// Supplies the observation block measured at the current LO phase.
pub trait BlockSource {
    fn next_block(&mut self, psi: f64, iteration: usize) -> Result<ObservationBlock>;
}

/// Draws a fresh block at every outer iteration.
#[derive(Debug, Clone)]
pub struct FreshBlocks {
    params: ChannelParams,
    n: usize,
    seed: u64,
}

impl FreshBlocks {
    pub fn new(params: ChannelParams, n: usize, seed: u64) -> Self {
        Self { params, n, seed }
    }
}

impl BlockSource for FreshBlocks {
    fn next_block(&mut self, psi: f64, iteration: usize) -> Result<ObservationBlock> {
        sample_block(
            &self.params,
            psi,
            self.n,
            rng::block_seed(self.seed, iteration as u64),
        )
    }
}

/// Measures one block at the first LO phase requested and returns it thereafter.
#[derive(Debug, Clone)]
pub struct ReusedBlock {
    inner: FreshBlocks,
    block: Option<ObservationBlock>,
}

impl ReusedBlock {
    pub fn new(params: ChannelParams, n: usize, seed: u64) -> Self {
        Self {
            inner: FreshBlocks::new(params, n, seed),
            block: None,
        }
    }
}

impl BlockSource for ReusedBlock {
    fn next_block(&mut self, psi: f64, _iteration: usize) -> Result<ObservationBlock> {
        if self.block.is_none() {
            self.block = Some(self.inner.next_block(psi, 0)?);
        }
        Ok(self.block.clone().expect("initialized above"))
    }
}

/// Produces a phase estimate and hard decisions from one block.
pub trait PhaseEstimator {
    fn estimate(&mut self, x: &[f64], params: &ChannelParams, psi: f64) -> Result<EmResult>;
}

/// One past estimate: the likelihood of its block peaks at `theta` and at the
/// reflection `2 psi - theta`, with curvature about `info`.
#[derive(Debug, Clone, Copy)]
struct PastMode {
    theta: f64,
    psi: f64,
    info: f64,
}

/// EM estimator carrying state across outer iterations.
///
/// The first call uses the configured initialization; later calls warm-start
/// from the previous estimate. With reflection resolution enabled, each new
/// estimate is compared with its reflection `2 psi - theta` under a quadratic
/// approximation of the earlier blocks' likelihoods, and the better-supported
/// one is kept. A single block cannot tell the two apart.
#[derive(Debug, Clone)]
pub struct EmEstimator {
    config: EmConfig,
    resolve_reflection: bool,
    warm: Option<f64>,
    history: Vec<PastMode>,
}

impl EmEstimator {
    pub fn new(config: EmConfig, resolve_reflection: bool) -> Self {
        Self {
            config,
            resolve_reflection,
            warm: None,
            history: Vec::new(),
        }
    }

    /// Log-support of a candidate phase from the stored blocks.
    fn support(&self, candidate: f64) -> f64 {
        self.history
            .iter()
            .map(|m| {
                let d = wrap_pi(candidate - m.theta)
                    .abs()
                    .min(wrap_pi(candidate - (2.0 * m.psi - m.theta)).abs());
                -0.5 * m.info * d * d
            })
            .sum()
    }
}

impl PhaseEstimator for EmEstimator {
    fn estimate(&mut self, x: &[f64], params: &ChannelParams, psi: f64) -> Result<EmResult> {
        let config = match self.warm {
            Some(theta) => EmConfig {
                init: InitPolicy::Fixed(theta),
                ..self.config
            },
            None => self.config,
        };
        let mut result = run_em(x, params, psi, &config)?;
        if self.resolve_reflection && !self.history.is_empty() {
            let mirror = 2.0 * psi - result.theta_raw;
            if self.support(mirror) > self.support(result.theta_raw) {
                result = result.reflected(psi);
            }
        }
        self.history.push(PastMode {
            theta: result.theta_raw,
            psi,
            info: result.observed_info,
        });
        self.warm = Some(result.theta_raw);
        Ok(result)
    }
}

/// State recorded at one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta_hat: f64,
    /// LO phase at which this iteration's block was measured.
    pub psi: f64,
    /// `N F(psi, theta_hat)`.
    pub fc: f64,
    /// Label-resolved empirical BER of the hard decisions.
    pub ber_emp: f64,
    pub flipped: bool,
    /// Closed-form BER at the true offset `theta - psi`.
    pub ber_theory: f64,
    pub target: Target,
    /// `wrap_pi(psi_tar - psi)` before scaling by lambda.
    pub delta_psi: f64,
    pub em_iterations: usize,
    /// Set when the Fisher quadrature did not converge; `fc` then holds its
    /// finest estimate.
    pub quad_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub gamma_min: f64,
    pub fc_max: f64,
    pub theta_hat: f64,
    pub psi_hat: f64,
    pub s_hat: Vec<Symbol>,
}

impl RunTrace {
    /// Records in the final `fraction` of the run (at least one).
    pub fn tail(&self, fraction: f64) -> &[IterationRecord] {
        let n = self.records.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        &self.records[n.saturating_sub(k)..]
    }
}

/// Runs the two-loop scheme: at each outer iteration estimate the phase and detect
/// the symbols from a block measured at the current LO phase, evaluate the block
/// Fisher information at the estimate, and step the LO phase toward the target
/// selected by feasibility. Stops when the unscaled phase correction falls below
/// `config.eps` or after `config.t_max` iterations.
pub fn run_qisac<S, E>(
    source: &mut S,
    estimator: &mut E,
    params: &ChannelParams,
    n: usize,
    config: &AlgoConfig,
) -> Result<RunTrace>
where
    S: BlockSource + ?Sized,
    E: PhaseEstimator + ?Sized,
{
    params.validate()?;
    config.validate()?;
    let peak = fc_max(params, n)?;
    let gamma_min = config.gamma.resolve(peak.value);

    let mut psi = mod_pi(config.psi0);
    let mut records = Vec::with_capacity(config.t_max);
    let mut theta_hat = f64::NAN;
    let mut s_hat = Vec::new();
    for t in 0..config.t_max {
        let block = source.next_block(psi, t)?;
        let est = estimator.estimate(&block.x, params, psi)?;
        let (fisher, quad_failure) = match fisher_symbol(&params.with_theta(est.theta_hat), psi) {
            Ok(r) => (r.per_symbol, None),
            Err(e @ Error::QuadratureNotConverged { value, .. }) => (value, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        let fc = block.len() as f64 * fisher;
        let (target, psi_tar) = select_target(fc, gamma_min, est.theta_hat);
        let delta_psi = wrap_pi(psi_tar - psi);
        let score = score_ber(&est.s_hat, &block.s_true)?;
        records.push(IterationRecord {
            iteration: t,
            theta_hat: est.theta_hat,
            psi,
            fc,
            ber_emp: score.ber,
            flipped: score.flipped,
            ber_theory: ber_theory(params, psi),
            target,
            delta_psi,
            em_iterations: est.iterations,
            quad_failure,
        });
        theta_hat = est.theta_hat;
        s_hat = est.s_hat;
        psi = update_psi(psi, psi_tar, config.lambda);
        if delta_psi.abs() < config.eps {
            break;
        }
    }
    Ok(RunTrace {
        records,
        gamma_min,
        fc_max: peak.value,
        theta_hat,
        psi_hat: psi,
        s_hat,
    })
}

/// Runs one trial with the standard block source and EM estimator.
pub fn run_trial(
    params: &ChannelParams,
    n: usize,
    config: &AlgoConfig,
    seed: u64,
) -> Result<RunTrace> {
    let mut estimator = EmEstimator::new(config.em, config.resolve_reflection);
    if config.block_refresh {
        run_qisac(
            &mut FreshBlocks::new(*params, n, seed),
            &mut estimator,
            params,
            n,
            config,
        )
    } else {
        run_qisac(
            &mut ReusedBlock::new(*params, n, seed),
            &mut estimator,
            params,
            n,
            config,
        )
    }
}
