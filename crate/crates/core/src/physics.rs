//! Measurement statistics of the homodyne BPSK link.
//!
//! The quantum channel enters only through the law of the homodyne outcome: for
//! symbol `m` the outcome is `Normal(A cos(pi m + theta - psi), Na + 1/2)` with
//! `A = sqrt(2 eta E)`. Everything depends on `(theta, psi)` only through the
//! effective offset `phi = theta - psi`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Physical parameters of the link. Angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Mean photon number per symbol.
    pub energy: f64,
    /// Channel transmissivity in `(0, 1]`.
    pub eta: f64,
    /// Thermal mean photon number.
    pub na: f64,
    /// Channel phase rotation.
    pub theta: f64,
}

impl ChannelParams {
    pub fn new(energy: f64, eta: f64, na: f64, theta: f64) -> Result<Self> {
        let params = Self {
            energy,
            eta,
            na,
            theta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy.is_finite() && self.energy > 0.0) {
            return Err(Error::InvalidParams(format!(
                "E must be positive, got {}",
                self.energy
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if !(self.na.is_finite() && self.na >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "Na must be non-negative, got {}",
                self.na
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidParams("theta must be finite".into()));
        }
        Ok(())
    }

    /// `A = sqrt(2 eta E)`.
    pub fn amplitude(&self) -> f64 {
        (2.0 * self.eta * self.energy).sqrt()
    }

    /// `sigma^2 = Na + 1/2`.
    pub fn noise_var(&self) -> f64 {
        self.na + 0.5
    }

    /// `A^2 / sigma^2`, the per-symbol Fisher bound.
    pub fn snr(&self) -> f64 {
        let a = self.amplitude();
        a * a / self.noise_var()
    }

    /// Effective phase offset `theta - psi`.
    pub fn offset(&self, psi: f64) -> f64 {
        self.theta - psi
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Self { theta, ..*self }
    }

    pub fn with_na(&self, na: f64) -> Self {
        Self { na, ..*self }
    }
}

/// BPSK symbol index; symbol `m` is carried on phase `pi m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Zero,
    One,
}

impl Symbol {
    pub const ALL: [Symbol; 2] = [Symbol::Zero, Symbol::One];

    pub fn index(self) -> usize {
        match self {
            Symbol::Zero => 0,
            Symbol::One => 1,
        }
    }

    pub fn from_index(m: usize) -> Self {
        if m == 0 {
            Symbol::Zero
        } else {
            Symbol::One
        }
    }

    pub fn phase(self) -> f64 {
        match self {
            Symbol::Zero => 0.0,
            Symbol::One => PI,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Symbol::Zero => Symbol::One,
            Symbol::One => Symbol::Zero,
        }
    }
}

/// `mu_m = A cos(pi m + theta - psi)`.
pub fn symbol_mean(params: &ChannelParams, psi: f64, m: Symbol) -> f64 {
    params.amplitude() * (m.phase() + params.offset(psi)).cos()
}

/// `d mu_m / d theta = -A sin(pi m + theta - psi)`.
pub fn symbol_mean_deriv(params: &ChannelParams, psi: f64, m: Symbol) -> f64 {
    -params.amplitude() * (m.phase() + params.offset(psi)).sin()
}

/// Reduce an angle to `[0, pi)`.
pub fn mod_pi(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    // rem_euclid rounds up to exactly PI for tiny negative inputs
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// A block of homodyne outcomes together with the symbols that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock {
    pub x: Vec<f64>,
    pub s_true: Vec<Symbol>,
    pub seed: u64,
}

impl ObservationBlock {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Draws `n` equiprobable symbols and their homodyne outcomes at LO phase `psi`.
///
/// The block is a pure function of `(params, psi, n, seed)`.
pub fn sample_block(
    params: &ChannelParams,
    psi: f64,
    n: usize,
    seed: u64,
) -> Result<ObservationBlock> {
    if n == 0 {
        return Err(Error::EmptyBlock);
    }
    let sigma = params.noise_var().sqrt();
    let means = [
        symbol_mean(params, psi, Symbol::Zero),
        symbol_mean(params, psi, Symbol::One),
    ];
    let mut rng = rng::stream(seed);
    let mut x = Vec::with_capacity(n);
    let mut s_true = Vec::with_capacity(n);
    for _ in 0..n {
        let s = if rng.random::<bool>() {
            Symbol::One
        } else {
            Symbol::Zero
        };
        let z: f64 = rng.sample(StandardNormal);
        x.push(means[s.index()] + sigma * z);
        s_true.push(s);
    }
    Ok(ObservationBlock { x, s_true, seed })
}
