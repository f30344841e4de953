//! Declarative run configuration, loaded from a flat TOML file and
//! overridable field by field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Method;
use crate::oscillometry::{default_profile, CuffProfile};
use crate::respiration::WelchSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How subjects are split between noise fitting and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Protocol {
    /// Fit and evaluate on the same subjects.
    InSample,
    /// Fit on `k` seeded-randomly chosen subjects, evaluate on the rest.
    Holdout(usize),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::InSample => f.write_str("in_sample"),
            Protocol::Holdout(k) => write!(f, "holdout:{k}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "in_sample" {
            return Ok(Protocol::InSample);
        }
        match s.strip_prefix("holdout:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Protocol::Holdout(k)),
            _ => Err(format!(
                "unknown protocol `{s}` (expected in_sample or holdout:<k>, k >= 1)"
            )),
        }
    }
}

impl TryFrom<String> for Protocol {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Protocol> for String {
    fn from(p: Protocol) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Files (`.hea`, `.csv`) or directories scanned for them.
    pub data: Vec<PathBuf>,
    pub csv_sampling_rate_hz: f64,
    /// Channel index or description substring; auto-detected when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    pub hypertensive: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_pressure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deflation_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_pressure_hypertensive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deflation_rate_hypertensive: Option<f64>,
    pub n: Vec<usize>,
    pub methods: Vec<Method>,
    /// Extra deflation rates for the sensitivity sweep.
    pub rates: Vec<f64>,
    pub welch_window_s: f64,
    pub welch_overlap: f64,
    pub map_window_s: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub protocol: Protocol,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let w = WelchSettings::default();
        Self {
            data: vec![PathBuf::from("data/synthetic")],
            csv_sampling_rate_hz: 125.0,
            channel: None,
            hypertensive: Vec::new(),
            initial_pressure: None,
            deflation_rate: None,
            initial_pressure_hypertensive: None,
            deflation_rate_hypertensive: None,
            n: vec![1, 5],
            methods: vec![Method::Ls, Method::Ml],
            rates: Vec::new(),
            welch_window_s: w.window_s,
            welch_overlap: w.overlap,
            map_window_s: crate::respiration::DEFAULT_MAP_WINDOW_S,
            out: PathBuf::from("out"),
            seed: 42,
            protocol: Protocol::InSample,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n.is_empty() || self.n.contains(&0) {
            return bad(format!("n must be a non-empty list of integers >= 1, got {:?}", self.n));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if !(self.csv_sampling_rate_hz > 0.0 && self.csv_sampling_rate_hz.is_finite()) {
            return bad(format!(
                "csv_sampling_rate_hz must be positive, got {}",
                self.csv_sampling_rate_hz
            ));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return bad(format!("deflation rates must be positive, got {r}"));
        }
        for (name, v) in [
            ("initial_pressure", self.initial_pressure),
            ("deflation_rate", self.deflation_rate),
            ("initial_pressure_hypertensive", self.initial_pressure_hypertensive),
            ("deflation_rate_hypertensive", self.deflation_rate_hypertensive),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.welch_window_s > 0.0 && self.welch_window_s.is_finite()) {
            return bad(format!("welch_window_s must be positive, got {}", self.welch_window_s));
        }
        if !(0.0..1.0).contains(&self.welch_overlap) {
            return bad(format!("welch_overlap must lie in [0, 1), got {}", self.welch_overlap));
        }
        if !(self.map_window_s > 0.0 && self.map_window_s.is_finite()) {
            return bad(format!("map_window_s must be positive, got {}", self.map_window_s));
        }
        Ok(())
    }

    pub fn welch(&self) -> WelchSettings {
        WelchSettings {
            window_s: self.welch_window_s,
            overlap: self.welch_overlap,
        }
    }

    pub fn is_hypertensive(&self, subject_id: &str) -> bool {
        self.hypertensive.iter().any(|h| h == subject_id)
    }

    /// Default cuff profile with any configured overrides applied.
    pub fn profile(&self, hypertensive: bool) -> CuffProfile {
        let mut p = default_profile(hypertensive);
        let (ip, dr) = if hypertensive {
            (self.initial_pressure_hypertensive, self.deflation_rate_hypertensive)
        } else {
            (self.initial_pressure, self.deflation_rate)
        };
        if let Some(v) = ip {
            p.initial_pressure = v;
        }
        if let Some(v) = dr {
            p.deflation_rate = v;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn parses_all_keys() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
            data = ["a", "b.csv"]
            hypertensive = ["s4"]
            n = [1, 3, 5]
            methods = ["ML"]
            rates = [2.5, 10.0]
            protocol = "holdout:2"
            seed = 9
            deflation_rate = 3.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.n, vec![1, 3, 5]);
        assert_eq!(cfg.methods, vec![Method::Ml]);
        assert_eq!(cfg.protocol, Protocol::Holdout(2));
        assert_eq!(cfg.profile(false).deflation_rate, 3.0);
        assert_eq!(cfg.profile(true).deflation_rate, 3.5);
        assert!(cfg.is_hypertensive("s4"));
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "n = [0]",
            "n = []",
            "methods = []",
            "protocol = \"holdout:0\"",
            "protocol = \"kfold\"",
            "welch_overlap = 1.0",
            "rates = [-1.0]",
            "unknown_key = 1",
            "initial_pressure = 0.0",
        ] {
            assert!(PipelineConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn protocol_round_trip() {
        for p in [Protocol::InSample, Protocol::Holdout(3)] {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
    }
}
