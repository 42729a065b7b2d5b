//! Quantum-optical integrated sensing and communication over a homodyne BPSK link.
//!
//! The receiver measures one field quadrature against a local oscillator (LO) of
//! phase `psi`. For a channel rotation `theta` each outcome is Gaussian with mean
//! `A cos(pi m + theta - psi)` and variance `Na + 1/2`, so a block of outcomes is a
//! two-component Gaussian mixture. This crate provides:
//!
//! - [`physics`]: link statistics and seeded block sampling,
//! - [`analytics`]: closed-form BER, mixture Fisher information, and the known-phase
//!   BER/Fisher trade-off,
//! - [`em`]: joint phase estimation and symbol detection by expectation-maximization,
//! - [`controller`]: the outer loop retuning the LO phase under a Fisher constraint,
//! - [`montecarlo`]: multi-trial convergence runs and trade-off sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod controller;
pub mod em;
mod error;
pub mod montecarlo;
mod optimize;
pub mod physics;
pub mod quadrature;
pub mod rng;

pub use analytics::{
    ber_theory, fc_max, fisher_block, fisher_high_snr, fisher_symbol, fisher_symbol_mc,
    optimal_angles, pareto_known_theta, q_function, FcMax, FisherReport, McFisher, ParetoPoint,
};
pub use controller::{
    run_qisac, run_trial, select_target, update_psi, wrap_pi, AlgoConfig, BlockSource, EmEstimator,
    FreshBlocks, GammaSpec, IterationRecord, PhaseEstimator, ReusedBlock, RunTrace, Target,
};
pub use em::{
    e_step, m_step_objective, newton_update, run_em, EmConfig, EmResult, InitPolicy, MStepProblem,
};
pub use error::{Error, Result};
pub use montecarlo::{
    run_convergence_experiment, run_tradeoff_sweep, score_ber, Band, BerScore, ConvergenceReport,
    ExperimentSpec, IterationSummary, SteadyState, SweepPoint, TradeoffCurve, TradeoffPoint,
    TrialOutcome, STEADY_FRACTION,
};
pub use physics::{
    mod_pi, sample_block, symbol_mean, symbol_mean_deriv, ChannelParams, ObservationBlock, Symbol,
};
