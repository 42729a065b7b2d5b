//! Experiment configuration file.
//!
//! A JSON document with angles in degrees. Missing sections and fields take the
//! defaults below; unknown fields are rejected.

use std::path::Path;

use qisac_core::{
    AlgoConfig, ChannelParams, EmConfig, ExperimentSpec, GammaSpec, InitPolicy, SweepPoint,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_RUN_TRIALS: usize = 50;
pub const DEFAULT_SWEEP_TRIALS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub channel: ChannelSection,
    #[serde(default)]
    pub algo: AlgoSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(rename = "E")]
    pub energy: f64,
    pub eta: f64,
    #[serde(rename = "Na")]
    pub na: f64,
    pub theta_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_abs: Option<f64>,
    pub lambda: f64,
    pub eps: f64,
    pub t_max: usize,
    pub l_max: usize,
    pub newton_max: usize,
    pub newton_tol: f64,
    pub em_eps: f64,
    /// Equally spaced EM starts for the first outer iteration.
    pub em_starts: usize,
    pub psi0_deg: f64,
    pub block_refresh: bool,
    pub resolve_reflection: bool,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let algo = AlgoConfig::default();
        let em = EmConfig::default();
        let starts = match em.init {
            InitPolicy::MultiStart(k) => k,
            _ => 8,
        };
        Self {
            gamma_frac: None,
            gamma_abs: None,
            lambda: algo.lambda,
            eps: algo.eps,
            t_max: algo.t_max,
            l_max: em.l_max,
            newton_max: em.newton_max,
            newton_tol: em.newton_tol,
            em_eps: em.eps,
            em_starts: starts,
            psi0_deg: algo.psi0.to_degrees(),
            block_refresh: algo.block_refresh,
            resolve_reflection: algo.resolve_reflection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_block: usize,
    /// Defaults to `DEFAULT_RUN_TRIALS` or `DEFAULT_SWEEP_TRIALS`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_block: 1000,
            trials: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub gamma_frac: f64,
    #[serde(rename = "Na")]
    pub na: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn channel(&self) -> Result<ChannelParams, CliError> {
        let c = &self.channel;
        Ok(ChannelParams::new(
            c.energy,
            c.eta,
            c.na,
            c.theta_deg.to_radians(),
        )?)
    }

    fn gamma(&self) -> Result<GammaSpec, CliError> {
        match (self.algo.gamma_frac, self.algo.gamma_abs) {
            (Some(f), None) => Ok(GammaSpec::Relative(f)),
            (None, Some(g)) => Ok(GammaSpec::Absolute(g)),
            _ => Err(CliError::Config(
                "exactly one of algo.gamma_frac and algo.gamma_abs must be given".into(),
            )),
        }
    }

    pub fn algo(&self) -> Result<AlgoConfig, CliError> {
        let a = &self.algo;
        if a.em_starts == 0 {
            return Err(CliError::Config("algo.em_starts must be at least 1".into()));
        }
        let config = AlgoConfig {
            gamma: self.gamma()?,
            lambda: a.lambda,
            eps: a.eps,
            t_max: a.t_max,
            em: EmConfig {
                eps: a.em_eps,
                l_max: a.l_max,
                newton_max: a.newton_max,
                newton_tol: a.newton_tol,
                init: InitPolicy::MultiStart(a.em_starts),
            },
            psi0: a.psi0_deg.to_radians(),
            block_refresh: a.block_refresh,
            resolve_reflection: a.resolve_reflection,
        };
        config.validate()?;
        Ok(config)
    }

    /// Converts to an experiment spec. `seed` overrides the file's seed;
    /// `default_trials` applies when the file gives none.
    pub fn to_spec(
        &self,
        seed: Option<u64>,
        default_trials: usize,
    ) -> Result<ExperimentSpec, CliError> {
        let spec = ExperimentSpec {
            params: self.channel()?,
            algo: self.algo()?,
            n_block: self.experiment.n_block,
            trials: self.experiment.trials.unwrap_or(default_trials),
            seed: seed.or(self.experiment.seed).unwrap_or(0),
            sweep: self
                .sweep
                .iter()
                .flatten()
                .map(|s| SweepPoint {
                    gamma_frac: s.gamma_frac,
                    na: s.na,
                    n: s.n,
                })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"channel": {"E": 10, "eta": 0.8, "Na": 3, "theta_deg": 45}, "algo": {"gamma_frac": 0.6}}"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfigFile::parse(MINIMAL).unwrap();
        let spec = cfg.to_spec(None, DEFAULT_RUN_TRIALS).unwrap();
        assert_eq!(spec.algo, AlgoConfig::default());
        assert_eq!(spec.n_block, 1000);
        assert_eq!(spec.seed, 0);
        assert!((spec.params.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn both_gammas_rejected() {
        let text = MINIMAL.replace(
            r#""gamma_frac": 0.6"#,
            r#""gamma_frac": 0.6, "gamma_abs": 100"#,
        );
        let cfg = RunConfigFile::parse(&text).unwrap();
        assert!(matches!(
            cfg.to_spec(None, DEFAULT_RUN_TRIALS),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn missing_gamma_rejected() {
        let text = MINIMAL.replace(r#""gamma_frac": 0.6"#, r#""lambda": 0.1"#);
        assert!(RunConfigFile::parse(&text)
            .unwrap()
            .to_spec(None, DEFAULT_RUN_TRIALS)
            .is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.replace(r#""eta""#, r#""etta""#);
        assert!(matches!(
            RunConfigFile::parse(&text),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn invalid_channel_is_config_error() {
        let text = MINIMAL.replace("0.8", "1.5");
        let cfg = RunConfigFile::parse(&text).unwrap();
        assert!(matches!(
            cfg.to_spec(None, DEFAULT_RUN_TRIALS),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn seed_override() {
        let cfg = RunConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.to_spec(Some(9), DEFAULT_RUN_TRIALS).unwrap().seed, 9);
    }
}
