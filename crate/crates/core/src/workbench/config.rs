use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::certificate::default_epsilon;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonSpec {
    /// `(1 - gamma) / 2`
    Auto,
    #[serde(untagged)]
    Value(f64),
}

impl EpsilonSpec {
    pub fn resolve(self, gamma: f64) -> f64 {
        match self {
            EpsilonSpec::Auto => default_epsilon(gamma),
            EpsilonSpec::Value(e) => e,
        }
    }
}

impl FromStr for EpsilonSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EpsilonSpec::Auto);
        }
        s.parse::<f64>()
            .map(EpsilonSpec::Value)
            .map_err(|_| format!("expected `auto` or a number, got `{s}`"))
    }
}

impl fmt::Display for EpsilonSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonSpec::Auto => f.write_str("auto"),
            EpsilonSpec::Value(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WMode {
    Ones,
    RandomPositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Q0Mode {
    Orthant,
    Random,
    Zero,
    CustomFile(PathBuf),
}

impl FromStr for Q0Mode {
    type Err = String;

    /// `orthant`, `random`, `zero`, or `file:<path>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "orthant" => Ok(Q0Mode::Orthant),
            "random" => Ok(Q0Mode::Random),
            "zero" => Ok(Q0Mode::Zero),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Q0Mode::CustomFile(PathBuf::from(p))),
                _ => Err(format!(
                    "expected orthant, random, zero or file:<path>, got `{s}`"
                )),
            },
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub epsilon: EpsilonSpec,
    pub w_mode: WMode,
    pub num_iters: usize,
    pub q0_mode: Q0Mode,
    /// Load the MDP from this file instead of generating it from `seed`.
    pub mdp_file: Option<PathBuf>,
    /// Random-positive `w` draws added to the half-plane table.
    pub halfplane_draws: usize,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_states: 5,
            num_actions: 3,
            gamma: 0.9,
            epsilon: EpsilonSpec::Auto,
            w_mode: WMode::Ones,
            num_iters: 200,
            q0_mode: Q0Mode::Orthant,
            mdp_file: None,
            halfplane_draws: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Checks ranges that do not depend on a loaded MDP.
    pub fn validate(&self) -> Result<()> {
        if self.mdp_file.is_none() {
            if self.num_states == 0 || self.num_actions == 0 {
                return Err(Error::Config("num-states and num-actions must be positive".into()));
            }
            if !(0.0..1.0).contains(&self.gamma) {
                return Err(Error::BadGamma(self.gamma));
            }
            self.check_epsilon(self.gamma)?;
        }
        Ok(())
    }

    pub(crate) fn check_epsilon(&self, gamma: f64) -> Result<f64> {
        let eps = self.epsilon.resolve(gamma);
        if !(eps > 0.0 && gamma + eps < 1.0) {
            return Err(Error::BadEpsilon { gamma, epsilon: eps });
        }
        Ok(eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_modes() {
        assert_eq!("auto".parse::<EpsilonSpec>().unwrap(), EpsilonSpec::Auto);
        assert_eq!("0.05".parse::<EpsilonSpec>().unwrap(), EpsilonSpec::Value(0.05));
        assert!("x".parse::<EpsilonSpec>().is_err());
        assert_eq!("orthant".parse::<Q0Mode>().unwrap(), Q0Mode::Orthant);
        assert_eq!(
            "file:q.json".parse::<Q0Mode>().unwrap(),
            Q0Mode::CustomFile(PathBuf::from("q.json"))
        );
        assert!("file:".parse::<Q0Mode>().is_err());
    }

    #[test]
    fn auto_epsilon_is_midpoint() {
        assert!((EpsilonSpec::Auto.resolve(0.9) - 0.05).abs() < 1e-15);
        let cfg = ExperimentConfig {
            epsilon: EpsilonSpec::Value(0.2),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::BadEpsilon { .. })));
    }
}
