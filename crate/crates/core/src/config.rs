//! Declarative run configuration: a TOML document validated up front, with
//! every violated constraint reported.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Fine cells per side.
    pub n: usize,
    /// Coarse cells per side.
    #[serde(rename = "N")]
    pub coarse_n: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub perm: PermConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub oversample: OversampleConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermConfig {
    /// One of: uniform | synthetic | periodic | spe10.
    pub kind: String,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub layer: usize,
}

fn default_contrast() -> f64 {
    1e4
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for PermConfig {
    fn default() -> Self {
        PermConfig {
            kind: "synthetic".into(),
            contrast: default_contrast(),
            epsilon: default_epsilon(),
            path: None,
            layer: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// One of: spectral1 | spectral2 | curl.
    pub kind: String,
    /// Basis functions per edge, one table row each.
    pub dofs: Vec<usize>,
    /// Also report the postprocessed velocity error per row.
    #[serde(default = "default_true")]
    pub postprocess: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            kind: "spectral1".into(),
            dofs: vec![1, 3, 5],
            postprocess: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OversampleConfig {
    /// Fine-cell rings added to ω_i; 0 selects the default of half a coarse
    /// block.
    #[serde(default)]
    pub layers: usize,
    /// Reduced snapshot width of case 2.
    #[serde(default = "default_pod_width")]
    pub pod_width: usize,
    #[serde(default = "default_ovs_dofs")]
    pub dofs: Vec<usize>,
}

fn default_pod_width() -> usize {
    3
}

fn default_ovs_dofs() -> Vec<usize> {
    vec![1, 2, 3]
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig {
            layers: 0,
            pod_width: default_pod_width(),
            dofs: default_ovs_dofs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// "single" or "two".
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_output_times")]
    pub output_times: Vec<f64>,
    #[serde(default = "default_cadence")]
    pub pressure_cadence: usize,
    /// Multiscale runs per basis count, each compared against the
    /// fine-velocity reference.
    #[serde(default = "default_basis_counts")]
    pub basis_counts: Vec<usize>,
    #[serde(default = "default_true")]
    pub postprocess: bool,
}

fn default_mode() -> String {
    "single".into()
}

fn default_cfl() -> f64 {
    0.5
}

fn default_output_times() -> Vec<f64> {
    vec![1000.0, 3000.0, 5000.0]
}

fn default_cadence() -> usize {
    1
}

fn default_basis_counts() -> Vec<usize> {
    vec![1, 3, 5]
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            mode: default_mode(),
            cfl: default_cfl(),
            output_times: default_output_times(),
            pressure_cadence: default_cadence(),
            basis_counts: default_basis_counts(),
            postprocess: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Also dump the snapshot coefficient matrix as a binary container
    /// (header n, N, M_snap as little-endian u64, then dense f64 columns).
    #[serde(default)]
    pub dump_snapshot_basis: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    /// Check every field against its constraint; report all violations.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.n < 2 {
            issues.push(format!("n = {} must be at least 2", self.n));
        }
        if self.coarse_n < 2 {
            issues.push(format!("N = {} must be at least 2", self.coarse_n));
        }
        if self.coarse_n >= 2 && self.n % self.coarse_n != 0 {
            issues.push(format!(
                "n = {} must be divisible by N = {}",
                self.n, self.coarse_n
            ));
        }
        let ratio = if self.coarse_n > 0 { self.n / self.coarse_n } else { 0 };
        if self.coarse_n >= 2 && self.n % self.coarse_n == 0 && ratio < 2 {
            issues.push(format!("refinement ratio n/N = {ratio} must be at least 2"));
        }
        match self.perm.kind.as_str() {
            "uniform" | "synthetic" | "periodic" | "spe10" => {}
            other => issues.push(format!(
                "perm.kind = \"{other}\" must be one of uniform, synthetic, periodic, spe10"
            )),
        }
        if self.perm.kind == "synthetic" && !(self.perm.contrast >= 1.0) {
            issues.push(format!(
                "perm.contrast = {} must be at least 1",
                self.perm.contrast
            ));
        }
        if self.perm.kind == "periodic" && !(self.perm.epsilon > 0.0) {
            issues.push(format!(
                "perm.epsilon = {} must be positive",
                self.perm.epsilon
            ));
        }
        if self.perm.kind == "spe10" && self.perm.path.is_none() {
            issues.push("perm.path is required for perm.kind = \"spe10\"".into());
        }
        if self.spectral_kind().is_none() {
            issues.push(format!(
                "spectral.kind = \"{}\" must be one of spectral1, spectral2, curl",
                self.spectral.kind
            ));
        }
        if self.spectral.dofs.is_empty() {
            issues.push("spectral.dofs must not be empty".into());
        }
        for &d in &self.spectral.dofs {
            if ratio >= 2 && (d < 1 || d > ratio) {
                issues.push(format!(
                    "spectral.dofs entry {d} must lie in 1..={ratio} (fine edges per coarse edge)"
                ));
            }
        }
        for &d in &self.oversample.dofs {
            if ratio >= 2 && (d < 1 || d > ratio) {
                issues.push(format!(
                    "oversample.dofs entry {d} must lie in 1..={ratio}"
                ));
            }
        }
        if self.oversample.pod_width < 1 {
            issues.push("oversample.pod_width must be at least 1".into());
        }
        match self.transport.mode.as_str() {
            "single" | "two" => {}
            other => issues.push(format!(
                "transport.mode = \"{other}\" must be \"single\" or \"two\""
            )),
        }
        if !(self.transport.cfl > 0.0 && self.transport.cfl <= 1.0) {
            issues.push(format!(
                "transport.cfl = {} must lie in (0, 1]",
                self.transport.cfl
            ));
        }
        if self.transport.pressure_cadence == 0 {
            issues.push("transport.pressure_cadence must be at least 1".into());
        }
        if self.transport.output_times.iter().any(|t| !(*t > 0.0)) {
            issues.push("transport.output_times must all be positive".into());
        }
        for &d in &self.transport.basis_counts {
            if ratio >= 2 && (d < 1 || d > ratio) {
                issues.push(format!(
                    "transport.basis_counts entry {d} must lie in 1..={ratio}"
                ));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigIssues(issues))
        }
    }

    pub fn spectral_kind(&self) -> Option<SpectralKind> {
        match self.spectral.kind.as_str() {
            "spectral1" => Some(SpectralKind::Spectral1),
            "spectral2" => Some(SpectralKind::Spectral2),
            "curl" => Some(SpectralKind::Curl),
            _ => None,
        }
    }

    pub fn oversample_layers(&self, default_layers: usize) -> usize {
        if self.oversample.layers == 0 {
            default_layers
        } else {
            self.oversample.layers
        }
    }
}
