//! Experiment configuration: one TOML file, validated before any work.

use crate::CliError;
use hyplab_core::bounds::{GridLevel, REGISTRY};
use hyplab_core::fuchsian::TraceOptions;
use hyplab_core::plane_kernel::{lin_grid, log_grid, KernelEvalConfig};
use hyplab_core::spectral::{EmuOptions, LimitLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    PlaneKernelXcheck,
    CollarGeometry,
    CylinderTrace,
    BolzaTrace,
    Logdet,
    #[serde(rename = "e_h")]
    EH,
    #[serde(rename = "e_mu")]
    EMu,
    BoundSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::PlaneKernelXcheck => "plane_kernel_xcheck",
            Experiment::CollarGeometry => "collar_geometry",
            Experiment::CylinderTrace => "cylinder_trace",
            Experiment::BolzaTrace => "bolza_trace",
            Experiment::Logdet => "logdet",
            Experiment::EH => "e_h",
            Experiment::EMu => "e_mu",
            Experiment::BoundSuite => "bound_suite",
        }
    }

    /// `(required, optional)` grid axes.
    fn axes(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Experiment::PlaneKernelXcheck => (&["t"], &["d"]),
            Experiment::CollarGeometry => (&["ell", "rho_fraction"], &[]),
            Experiment::CylinderTrace => (&["ell", "t"], &[]),
            Experiment::BolzaTrace => (&["t"], &[]),
            Experiment::Logdet => (&["t"], &[]),
            Experiment::EH | Experiment::EMu | Experiment::BoundSuite => (&[], &[]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Sample `count` points from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self.spacing {
            Spacing::Linear => lin_grid(self.min, self.max, self.count),
            Spacing::Log => log_grid(self.min, self.max, self.count),
        }
    }

    fn validate(&self, axis: &str) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(format!("grid.{axis}: {m}")));
        if !(self.min.is_finite() && self.max.is_finite()) {
            return bad("bounds must be finite".into());
        }
        if self.min >= self.max || self.min.is_nan() || self.max.is_nan() {
            return bad(format!("empty range [{}, {}]", self.min, self.max));
        }
        if self.count < 2 {
            return bad(format!("count must be at least 2, got {}", self.count));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return bad("log spacing needs a positive minimum".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSuiteSpec {
    #[serde(default = "default_level")]
    pub level: GridLevel,
    /// Subset of the registry; all of it when absent.
    pub ids: Option<Vec<String>>,
}

fn default_level() -> GridLevel {
    GridLevel::Default
}

impl Default for BoundSuiteSpec {
    fn default() -> Self {
        Self { level: GridLevel::Default, ids: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelEvalConfig,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub grid: BTreeMap<String, GridSpec>,
    pub trace: Option<TraceOptions>,
    pub law: Option<LimitLaw>,
    pub emu: Option<EmuOptions>,
    pub bounds: Option<BoundSuiteSpec>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            kernel: KernelEvalConfig::default(),
            output: OutputSpec::default(),
            grid: BTreeMap::new(),
            trace: None,
            law: None,
            emu: None,
            bounds: None,
        }
    }

    pub fn with_grid(mut self, axis: &str, min: f64, max: f64, count: usize, spacing: Spacing) -> Self {
        self.grid.insert(axis.to_string(), GridSpec { min, max, count, spacing });
        self
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            CliError::Config { line, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (required, optional) = self.experiment.axes();
        for axis in required {
            if !self.grid.contains_key(*axis) {
                return Err(CliError::Validation(format!("{} needs grid.{axis}", self.experiment.name())));
            }
        }
        for (axis, spec) in &self.grid {
            if !required.contains(&axis.as_str()) && !optional.contains(&axis.as_str()) {
                return Err(CliError::Validation(format!("{} has no grid axis `{axis}`", self.experiment.name())));
            }
            spec.validate(axis)?;
        }
        self.kernel.validate().map_err(|e| CliError::Validation(format!("kernel: {e}")))?;
        if let Some(rf) = self.grid.get("rho_fraction") {
            if rf.min < 0.0 || rf.max > 1.0 {
                return Err(CliError::Validation("grid.rho_fraction must lie in [0, 1]".into()));
            }
        }
        let extra = |name: &str, present: bool, allowed: bool| -> Result<(), CliError> {
            if present && !allowed {
                return Err(CliError::Validation(format!("section `{name}` does not apply to {}", self.experiment.name())));
            }
            Ok(())
        };
        let e = self.experiment;
        extra("trace", self.trace.is_some(), matches!(e, Experiment::BolzaTrace | Experiment::Logdet))?;
        extra("law", self.law.is_some(), e == Experiment::EMu)?;
        extra("emu", self.emu.is_some(), e == Experiment::EMu)?;
        extra("bounds", self.bounds.is_some(), e == Experiment::BoundSuite)?;
        if e == Experiment::EMu {
            let law = self.law.as_ref().ok_or_else(|| CliError::Validation("e_mu needs a [law] section".into()))?;
            law.validate().map_err(|e| CliError::Validation(format!("law: {e}")))?;
        }
        if let Some(b) = &self.bounds {
            for id in b.ids.iter().flatten() {
                if !REGISTRY.contains(&id.as_str()) {
                    return Err(CliError::Validation(format!("unknown inequality id `{id}`")));
                }
            }
            if b.ids.as_ref().is_some_and(|v| v.is_empty()) {
                return Err(CliError::Validation("bounds.ids is empty".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, in hex. The output location
    /// does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&canonical))
    }

    pub fn axis(&self, name: &str) -> Option<Vec<f64>> {
        self.grid.get(name).map(GridSpec::points)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const XCHECK: &str = r#"
experiment = "plane_kernel_xcheck"
seed = 3

[grid.t]
min = 1e-3
max = 10.0
count = 40
spacing = "log"
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let a = ExperimentConfig::parse(XCHECK).unwrap();
        assert_eq!(a.experiment, Experiment::PlaneKernelXcheck);
        assert_eq!(a.axis("t").unwrap().len(), 40);
        let b = ExperimentConfig::parse(&XCHECK.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ExperimentConfig::parse(XCHECK).unwrap().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_empty_grids_and_unknown_fields() {
        let empty = XCHECK.replace("count = 40", "count = 1");
        assert!(matches!(ExperimentConfig::parse(&empty), Err(CliError::Validation(_))));
        let inverted = XCHECK.replace("max = 10.0", "max = 1e-4");
        assert!(matches!(ExperimentConfig::parse(&inverted), Err(CliError::Validation(_))));
        let typo = XCHECK.replace("count = 40", "cuont = 40");
        match ExperimentConfig::parse(&typo) {
            Err(CliError::Config { line, message }) => {
                assert_eq!(line, Some(8));
                assert!(message.contains("cuont"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let stray = format!("{XCHECK}\n[grid.ell]\nmin = 0.1\nmax = 1.0\ncount = 3\n");
        assert!(matches!(ExperimentConfig::parse(&stray), Err(CliError::Validation(_))));
    }

    #[test]
    fn experiment_sections_are_checked() {
        assert!(ExperimentConfig::parse("experiment = \"e_mu\"").is_err());
        let ok = "experiment = \"e_mu\"\n[law]\nkind = \"plane\"\n";
        assert!(ExperimentConfig::parse(ok).is_ok());
        let bad = "experiment = \"bound_suite\"\n[bounds]\nids = [\"nope\"]\n";
        assert!(ExperimentConfig::parse(bad).is_err());
        let misplaced = "experiment = \"e_h\"\n[bounds]\n";
        assert!(ExperimentConfig::parse(misplaced).is_err());
    }
}
