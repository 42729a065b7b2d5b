//! Closed-form BER, Fisher information of the homodyne mixture, and the
//! known-phase BER/Fisher trade-off.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::optimize::golden_section_min;
use crate::physics::{mod_pi, symbol_mean, symbol_mean_deriv, ChannelParams, Symbol};
use crate::quadrature::GaussLegendre;
use crate::rng;

/// Points per Gauss–Legendre panel.
const PANEL_ORDER: usize = 16;
/// Node count of the first quadrature pass.
pub const DEFAULT_NODES: usize = 2048;
/// Largest node count tried before reporting non-convergence.
pub const MAX_NODES: usize = 65536;
/// Relative change under node doubling accepted as converged.
pub const QUAD_REL_TOL: f64 = 1e-8;
/// Half-width of the integration window beyond the outer means, in standard deviations.
const TAIL_SIGMAS: f64 = 12.0;

const FCMAX_GRID: usize = 64;
const FCMAX_TOL: f64 = 1e-6;

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// BER of the sign detector: `Q((A / sigma) |cos(theta - psi)|)`.
pub fn ber_theory(params: &ChannelParams, psi: f64) -> f64 {
    ber_at_offset(params, params.offset(psi))
}

pub(crate) fn ber_at_offset(params: &ChannelParams, phi: f64) -> f64 {
    let ratio = params.amplitude() / params.noise_var().sqrt();
    q_function(ratio * phi.cos().abs())
}

/// Fisher information of `theta` carried by the homodyne outcome distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherReport {
    /// Per-symbol Fisher information `F`.
    pub per_symbol: f64,
    /// Block Fisher information `n F`.
    pub block: f64,
    pub n: usize,
    /// Nodes used for the reported value.
    pub quad_nodes: usize,
    /// `|F(2K nodes) - F(K nodes)|` for the last doubling.
    pub quad_error_est: f64,
}

impl FisherReport {
    pub fn with_block_len(self, n: usize) -> Self {
        Self {
            block: n as f64 * self.per_symbol,
            n,
            ..self
        }
    }
}

/// The two mixture components at a given offset.
#[derive(Debug, Clone, Copy)]
struct Mixture {
    mu: [f64; 2],
    dmu: [f64; 2],
    var: f64,
}

impl Mixture {
    fn at_offset(params: &ChannelParams, phi: f64) -> Self {
        let p = params.with_theta(phi);
        // symbol one is antipodal; negate instead of re-evaluating cos/sin at phi + pi
        let mu0 = symbol_mean(&p, 0.0, Symbol::Zero);
        let dmu0 = symbol_mean_deriv(&p, 0.0, Symbol::Zero);
        Self {
            mu: [mu0, -mu0],
            dmu: [dmu0, -dmu0],
            var: params.noise_var(),
        }
    }

    /// Score `d/dtheta log p(x)` of the equal-weight mixture.
    fn score(&self, x: f64) -> f64 {
        let l0 = -(x - self.mu[0]).powi(2) / (2.0 * self.var);
        let l1 = -(x - self.mu[1]).powi(2) / (2.0 * self.var);
        let top = l0.max(l1);
        let w0 = (l0 - top).exp();
        let w1 = (l1 - top).exp();
        ((w0 * (x - self.mu[0]) * self.dmu[0] + w1 * (x - self.mu[1]) * self.dmu[1]) / self.var)
            / (w0 + w1)
    }

    /// `[sum_m N_m (x - mu_m) mu'_m / sigma^2]^2 / sum_m N_m`, evaluated with the
    /// largest exponent factored out. The remaining denominator is at least 1.
    fn fisher_integrand(&self, x: f64) -> f64 {
        let l0 = -(x - self.mu[0]).powi(2) / (2.0 * self.var);
        let l1 = -(x - self.mu[1]).powi(2) / (2.0 * self.var);
        let top = l0.max(l1);
        let scale = top.exp() / (2.0 * PI * self.var).sqrt();
        if scale == 0.0 {
            return 0.0;
        }
        let w0 = (l0 - top).exp();
        let w1 = (l1 - top).exp();
        let num =
            (w0 * (x - self.mu[0]) * self.dmu[0] + w1 * (x - self.mu[1]) * self.dmu[1]) / self.var;
        scale * num * num / (w0 + w1)
    }

    fn integrate(&self, nodes: usize) -> f64 {
        let sigma = self.var.sqrt();
        let lo = self.mu[0].min(self.mu[1]) - TAIL_SIGMAS * sigma;
        let hi = self.mu[0].max(self.mu[1]) + TAIL_SIGMAS * sigma;
        0.5 * panel_rule().integrate_composite(
            |x| self.fisher_integrand(x),
            lo,
            hi,
            nodes / PANEL_ORDER,
        )
    }
}

/// Per-symbol Fisher information at effective offset `phi`, by composite
/// Gauss–Legendre quadrature with node doubling until the relative change drops
/// below [`QUAD_REL_TOL`].
pub(crate) fn fisher_at_offset(params: &ChannelParams, phi: f64) -> Result<FisherReport> {
    let mix = Mixture::at_offset(params, phi);
    // absolute floor so that offsets with F ~ 0 do not chase relative noise
    let floor = 1e-15 * params.snr();
    let mut nodes = DEFAULT_NODES;
    let mut coarse = mix.integrate(nodes);
    loop {
        let fine = mix.integrate(2 * nodes);
        let change = (fine - coarse).abs();
        if change <= QUAD_REL_TOL * fine.abs() + floor {
            return Ok(FisherReport {
                per_symbol: fine,
                block: fine,
                n: 1,
                quad_nodes: 2 * nodes,
                quad_error_est: change,
            });
        }
        nodes *= 2;
        if nodes >= MAX_NODES {
            return Err(Error::QuadratureNotConverged {
                value: fine,
                rel_change: change / fine.abs().max(f64::MIN_POSITIVE),
                nodes,
            });
        }
        coarse = fine;
    }
}

/// Per-symbol Fisher information `F(psi, theta)` of the homodyne mixture.
pub fn fisher_symbol(params: &ChannelParams, psi: f64) -> Result<FisherReport> {
    fisher_at_offset(params, params.offset(psi))
}

/// Block Fisher information `N F(psi, theta)`.
pub fn fisher_block(params: &ChannelParams, psi: f64, n: usize) -> Result<FisherReport> {
    fisher_symbol(params, psi).map(|r| r.with_block_len(n))
}

/// Monte-Carlo Fisher estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFisher {
    pub value: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Estimates `F` as the sample variance of the score over `trials` draws of the
/// mixture.
pub fn fisher_symbol_mc(
    params: &ChannelParams,
    psi: f64,
    trials: usize,
    seed: u64,
) -> Result<McFisher> {
    if trials < 10_000 {
        return Err(Error::InvalidConfig(format!(
            "Monte-Carlo Fisher needs at least 10000 trials, got {trials}"
        )));
    }
    let mix = Mixture::at_offset(params, params.offset(psi));
    let sigma = mix.var.sqrt();
    let mut rng = rng::stream(seed);
    // Welford on the score and on its square
    let (mut mean, mut m2) = (0.0, 0.0);
    let (mut sq_mean, mut sq_m2) = (0.0, 0.0);
    for k in 0..trials {
        let m = usize::from(rng.random::<bool>());
        let z: f64 = rng.sample(StandardNormal);
        let s = mix.score(mix.mu[m] + sigma * z);
        let kf = (k + 1) as f64;
        let d = s - mean;
        mean += d / kf;
        m2 += d * (s - mean);
        let sq = s * s;
        let dq = sq - sq_mean;
        sq_mean += dq / kf;
        sq_m2 += dq * (sq - sq_mean);
    }
    let n = trials as f64;
    Ok(McFisher {
        value: m2 / (n - 1.0),
        std_error: (sq_m2 / (n - 1.0)).sqrt() / n.sqrt(),
        trials,
    })
}

/// High-SNR approximation `(A^2 / sigma^2) sin^2(theta - psi)`.
pub fn fisher_high_snr(params: &ChannelParams, psi: f64) -> f64 {
    params.snr() * params.offset(psi).sin().powi(2)
}

/// Maximum of the block Fisher information over the offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcMax {
    /// `N max_phi F`.
    pub value: f64,
    pub per_symbol: f64,
    /// Maximizing offset in `[0, pi/2]`.
    pub phi_star: f64,
    pub n: usize,
}

/// `N max_phi F(phi)`: a 64-point scan of `[0, pi/2]` refined by golden-section
/// search to 1e-6 rad. `F` is even and pi-periodic in `phi`, so the quarter period
/// covers every offset.
pub fn fc_max(params: &ChannelParams, n: usize) -> Result<FcMax> {
    if n == 0 {
        return Err(Error::EmptyBlock);
    }
    let step = FRAC_PI_2 / (FCMAX_GRID - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..FCMAX_GRID {
        let f = fisher_at_offset(params, i as f64 * step)?.per_symbol;
        if f > best.1 {
            best = (i, f);
        }
    }
    let lo = (best.0 as f64 - 1.0).max(0.0) * step;
    let hi = ((best.0 + 1) as f64 * step).min(FRAC_PI_2);
    let mut failure = None;
    let phi = golden_section_min(
        |phi| match fisher_at_offset(params, phi) {
            Ok(r) => -r.per_symbol,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        lo,
        hi,
        FCMAX_TOL,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut per_symbol = fisher_at_offset(params, phi)?.per_symbol;
    let mut phi_star = phi;
    if best.1 > per_symbol {
        per_symbol = best.1;
        phi_star = best.0 as f64 * step;
    }
    Ok(FcMax {
        value: n as f64 * per_symbol,
        per_symbol,
        phi_star,
        n,
    })
}

/// Communication- and sensing-optimal LO phases for a phase estimate, both
/// canonicalized to `[0, pi)`.
pub fn optimal_angles(theta_hat: f64) -> (f64, f64) {
    (mod_pi(theta_hat), mod_pi(theta_hat + FRAC_PI_2))
}

/// Solution of the BER-minimization problem with the phase known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub gamma_min: f64,
    /// Smallest offset in `[0, pi/2]` meeting the Fisher requirement.
    pub phi_star: f64,
    pub ber: f64,
}

/// Smallest `|phi|` with `N F(phi) >= gamma_min`, and the BER there.
///
/// Bisects on `[0, phi_argmax]` when a 64-point scan confirms `F` is increasing on
/// that segment; otherwise bisects inside the first grid cell whose right end is
/// feasible.
pub fn pareto_known_theta(params: &ChannelParams, n: usize, gamma_min: f64) -> Result<ParetoPoint> {
    let peak = fc_max(params, n)?;
    pareto_with_peak(params, &peak, gamma_min)
}

pub(crate) fn pareto_with_peak(
    params: &ChannelParams,
    peak: &FcMax,
    gamma_min: f64,
) -> Result<ParetoPoint> {
    if !(gamma_min >= 0.0) || gamma_min > peak.value {
        return Err(Error::Infeasible {
            gamma_min,
            fc_max: peak.value,
        });
    }
    let point = |phi: f64| ParetoPoint {
        gamma_min,
        phi_star: phi,
        ber: ber_at_offset(params, phi),
    };
    if gamma_min == 0.0 {
        return Ok(point(0.0));
    }
    let n = peak.n as f64;
    let block = |phi: f64| fisher_at_offset(params, phi).map(|r| n * r.per_symbol);

    let grid: Vec<f64> = (0..FCMAX_GRID)
        .map(|i| peak.phi_star * i as f64 / (FCMAX_GRID - 1) as f64)
        .collect();
    let values = grid.iter().map(|&p| block(p)).collect::<Result<Vec<_>>>()?;
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);

    let (mut lo, mut hi) = if monotone {
        (0.0, peak.phi_star)
    } else {
        let k = values
            .iter()
            .position(|&v| v >= gamma_min)
            .unwrap_or(FCMAX_GRID - 1);
        if k == 0 {
            return Ok(point(0.0));
        }
        (grid[k - 1], grid[k])
    };
    if block(hi)? < gamma_min {
        // gamma_min equals the peak to within rounding
        return Ok(point(peak.phi_star));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if block(mid)? >= gamma_min {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(point(hi))
}
