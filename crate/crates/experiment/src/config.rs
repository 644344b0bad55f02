//! Experiment configuration, read from TOML (or JSON).
//!
//! ```toml
//! [lattice]
//! length = 7
//! j_par = 1.0
//! j_perp = 0.2
//! delta = 0.6
//!
//! [filter]
//! a = 1000.0
//! e_ini = "auto"          # or a number; auto is -0.42 (L - 1)
//!
//! [protocol]
//! h = 0.5
//! gamma0 = 2.6e-4
//! rates = [1, 5, 10, 20, 40, 80, 150]
//!
//! [integrator]
//! dt = 0.02
//!
//! [spectral]
//! k_dos = 20480
//! k_ldos = 20480
//! window = "gaussian"     # or "rectangular"
//!
//! [analysis]
//! epsilons = [0.25, 0.375, 0.5]
//!
//! [run]
//! seed = 1
//! output = "out"
//! ```
//!
//! Optional keys: `integrator.splitting`, `integrator.trace_stride`,
//! `spectral.dos_vectors`, `analysis.beta` (skips the fit),
//! `scan.lengths`, `scan.rate`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use ladder_core::evolve::{IntegratorConfig, Splitting};
use ladder_core::spectral::Window;
use ladder_core::work::GAMMA0;
use ladder_core::LadderSpec;

use crate::error::{CliError, CliResult};

pub const DEFAULT_RATES: [f64; 7] = [1.0, 5.0, 10.0, 20.0, 40.0, 80.0, 150.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetEnergy {
    Auto,
    Value(f64),
}

impl TargetEnergy {
    pub fn resolve(&self, length: usize) -> f64 {
        match *self {
            TargetEnergy::Auto => -0.42 * (length as f64 - 1.0),
            TargetEnergy::Value(e) => e,
        }
    }
}

impl Serialize for TargetEnergy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TargetEnergy::Auto => s.serialize_str("auto"),
            TargetEnergy::Value(e) => s.serialize_f64(*e),
        }
    }
}

impl<'de> Deserialize<'de> for TargetEnergy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(e) => Ok(TargetEnergy::Value(e)),
            Raw::Text(t) if t == "auto" => Ok(TargetEnergy::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "e_ini must be a number or \"auto\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    #[default]
    Gaussian,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub length: usize,
    pub j_par: f64,
    pub j_perp: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub a: f64,
    pub e_ini: TargetEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub h: f64,
    pub gamma0: f64,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    #[serde(default)]
    pub splitting: Splitting,
    /// Steps between trace rows.
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
}

fn default_stride() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub k_dos: usize,
    pub k_ldos: usize,
    pub window: WindowChoice,
    #[serde(default = "default_vectors")]
    pub dos_vectors: usize,
}

fn default_vectors() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub lengths: Vec<usize>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeSection,
    pub filter: FilterSection,
    pub protocol: ProtocolSection,
    pub integrator: IntegratorSection,
    pub spectral: SpectralSection,
    pub analysis: AnalysisSection,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
}

impl ExperimentConfig {
    /// Defaults for a ladder of `length` rungs writing to `output`.
    pub fn standard(length: usize, output: impl Into<PathBuf>) -> Self {
        Self {
            lattice: LatticeSection {
                length,
                j_par: 1.0,
                j_perp: 0.2,
                delta: 0.6,
            },
            filter: FilterSection {
                a: 1000.0,
                e_ini: TargetEnergy::Auto,
            },
            protocol: ProtocolSection {
                h: 0.5,
                gamma0: GAMMA0,
                rates: DEFAULT_RATES.to_vec(),
            },
            integrator: IntegratorSection {
                dt: IntegratorConfig::DEFAULT_DT,
                splitting: Splitting::default(),
                trace_stride: default_stride(),
            },
            spectral: SpectralSection {
                k_dos: 20480,
                k_ldos: 20480,
                window: WindowChoice::Gaussian,
                dos_vectors: 1,
            },
            analysis: AnalysisSection {
                epsilons: vec![0.25, 0.375, 0.5],
                beta: None,
            },
            run: RunSection {
                seed: 1,
                output: output.into(),
            },
            scan: None,
        }
    }

    pub fn parse(text: &str, json: bool) -> CliResult<Self> {
        let cfg: Self = if json {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the file ends in `.json` or starts with `{`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        Self::parse(&text, json)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.spec()?;
        self.integrator()?;
        if !(self.filter.a > 0.0 && self.filter.a.is_finite()) {
            return bad(format!("filter.a must be positive, got {}", self.filter.a));
        }
        if let TargetEnergy::Value(e) = self.filter.e_ini {
            if !e.is_finite() {
                return bad("filter.e_ini must be finite".into());
            }
        }
        if !self.protocol.h.is_finite() {
            return bad("protocol.h must be finite".into());
        }
        if !(self.protocol.gamma0 > 0.0 && self.protocol.gamma0.is_finite()) {
            return bad("protocol.gamma0 must be positive".into());
        }
        if self.protocol.rates.is_empty() || self.protocol.rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("protocol.rates must be a non-empty list of positive numbers".into());
        }
        if self.spectral.k_dos == 0 || self.spectral.k_ldos == 0 || self.spectral.dos_vectors == 0 {
            return bad("spectral.k_dos, spectral.k_ldos and spectral.dos_vectors must be >= 1".into());
        }
        if self.integrator.trace_stride == 0 {
            return bad("integrator.trace_stride must be >= 1".into());
        }
        if self.analysis.epsilons.is_empty() || self.analysis.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("analysis.epsilons must be a non-empty list of positive numbers".into());
        }
        if let Some(b) = self.analysis.beta {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("analysis.beta must be positive, got {b}"));
            }
        }
        if let Some(scan) = &self.scan {
            if scan.lengths.is_empty() || !(scan.rate > 0.0 && scan.rate.is_finite()) {
                return bad("scan.lengths must be non-empty and scan.rate positive".into());
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> CliResult<LadderSpec> {
        let l = &self.lattice;
        Ok(LadderSpec::new(l.length, l.j_par, l.j_perp, l.delta)?)
    }

    pub fn integrator(&self) -> CliResult<IntegratorConfig> {
        Ok(IntegratorConfig::new(self.integrator.dt)?.with_splitting(self.integrator.splitting))
    }

    pub fn e_ini(&self) -> f64 {
        self.filter.e_ini.resolve(self.lattice.length)
    }

    pub fn window(&self, theta: f64) -> Window {
        match self.spectral.window {
            WindowChoice::Gaussian => Window::gaussian_for(theta),
            WindowChoice::Rectangular => Window::Rectangular,
        }
    }

    /// Same experiment at another ladder length.
    pub fn with_length(&self, length: usize) -> Self {
        let mut c = self.clone();
        c.lattice.length = length;
        c
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
