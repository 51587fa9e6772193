//! Scenario configuration for the pendulum benchmark.
//!
//! Configs are TOML. Every key is optional and falls back to the default
//! scenario; unknown keys are rejected.
//!
//! ```toml
//! name = "safe-init"
//! dt = 0.001
//! t_end = 20.0
//! filter = true
//! sigma = { kind = "linear", slope = 0.1 }
//!
//! [init]
//! x1 = [0.5, 1.0]
//! x2 = [0.5, 1.0]
//!
//! [reference]
//! y1 = "sin"
//! y2 = "cos"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gains::GainSpec;
use crate::pendulum::{ControllerGains, PendulumParams, Reference};

pub const MAX_DT: f64 = 0.1;
pub const MAX_T_END: f64 = 1e4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    /// `(θ₁, θ̇₁)`.
    pub x1: [f64; 2],
    /// `(θ₂, θ̇₂)`.
    pub x2: [f64; 2],
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            x1: [0.5, 1.0],
            x2: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct References {
    pub y1: Reference,
    pub y2: Reference,
}

impl Default for References {
    fn default() -> Self {
        Self {
            y1: Reference::Sin,
            y2: Reference::Cos,
        }
    }
}

/// Interconnection gains used by the small-gain check. `phi` entries left
/// unset use the physical coupling slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Interconnection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi1: Option<GainSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi2: Option<GainSpec>,
    pub gamma1: GainSpec,
    pub gamma2: GainSpec,
}

impl Interconnection {
    pub fn phi(&self, i: usize) -> Option<&GainSpec> {
        [&self.phi1, &self.phi2][i].as_ref()
    }

    pub fn gamma(&self, i: usize) -> &GainSpec {
        [&self.gamma1, &self.gamma2][i]
    }
}

impl Default for Interconnection {
    fn default() -> Self {
        Self {
            phi1: None,
            phi2: None,
            gamma1: GainSpec::Linear { slope: 1.0 },
            gamma2: GainSpec::Linear { slope: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    /// Apply the barrier filter on top of the tracking controller.
    pub filter: bool,
    pub sigma: GainSpec,
    pub params: PendulumParams,
    pub gains: ControllerGains,
    pub init: InitialState,
    pub reference: References,
    pub interconnection: Interconnection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "safe-init".into(),
            seed: 0,
            dt: 1e-3,
            t_end: 20.0,
            filter: true,
            sigma: GainSpec::Linear { slope: 0.1 },
            params: PendulumParams::default(),
            gains: ControllerGains::default(),
            init: InitialState::default(),
            reference: References::default(),
            interconnection: Interconnection::default(),
        }
    }
}

impl ScenarioConfig {
    /// Both pendulums start inside the safe set.
    pub fn safe_init() -> Self {
        Self::default()
    }

    /// Both pendulums start below their angle bounds.
    pub fn unsafe_init() -> Self {
        Self {
            name: "unsafe-init".into(),
            init: InitialState {
                x1: [-0.8, 1.0],
                x2: [-0.8, 1.0],
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return invalid("dt must be positive".into());
        }
        if self.dt > MAX_DT {
            return invalid(format!("dt must not exceed {MAX_DT}"));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return invalid("t_end must be positive".into());
        }
        if self.t_end > MAX_T_END {
            return invalid(format!("t_end must not exceed {MAX_T_END}"));
        }
        if self.init.x1.iter().chain(&self.init.x2).any(|v| !v.is_finite()) {
            return invalid("initial state must be finite".into());
        }
        self.params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gains.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let gain = |what: &str, spec: &GainSpec| {
            spec.build()
                .map(|_| ())
                .map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
        };
        gain("sigma", &self.sigma)?;
        for i in 0..2 {
            gain(&format!("gamma{}", i + 1), self.interconnection.gamma(i))?;
            if let Some(spec) = self.interconnection.phi(i) {
                gain(&format!("phi{}", i + 1), spec)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = ScenarioConfig::unsafe_init();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_override() {
        let cfg = ScenarioConfig::from_toml_str(
            "dt = 0.002\nfilter = false\n[params]\ntheta_min = [-0.3, -0.2]\n[reference]\ny2 = \"zero\"\n",
        )
        .unwrap();
        assert_eq!(cfg.dt, 0.002);
        assert!(!cfg.filter);
        assert_eq!(cfg.params.theta_min, [-0.3, -0.2]);
        assert_eq!(cfg.params.g, 9.8);
        assert_eq!(cfg.reference.y1, Reference::Sin);
        assert_eq!(cfg.reference.y2, Reference::Zero);
    }

    #[test]
    fn rejects_bad_values() {
        let msg = |s: &str| ScenarioConfig::from_toml_str(s).unwrap_err().to_string();
        assert!(msg("dt = 0.0").contains("dt must be positive"));
        assert!(msg("dt = -1.0").contains("dt must be positive"));
        assert!(msg("dt = 0.5").contains("dt must not exceed"));
        assert!(msg("t_end = 1e5").contains("t_end must not exceed"));
        assert!(msg("[params]\na = 2.0").contains("a = 2"));
        assert!(msg("sigma = { kind = \"linear\", slope = -1.0 }").contains("sigma"));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(ScenarioConfig::from_toml_str("dtt = 0.1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            ScenarioConfig::from_toml_str("[params]\nmass = 1.0"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn interconnection_overrides() {
        let cfg = ScenarioConfig::from_toml_str(
            "[interconnection]\nphi1 = { kind = \"zero\" }\n",
        )
        .unwrap();
        assert_eq!(cfg.interconnection.phi(0), Some(&GainSpec::Zero));
        assert_eq!(cfg.interconnection.phi(1), None);
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }
}
