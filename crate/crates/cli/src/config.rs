//! Run configuration: a TOML file with one section per concern. Every field
//! has a default except the integrals path and the method, and the resolved
//! configuration is echoed into the run manifest.

use std::path::{Path, PathBuf};

use corehole::greens::Lineshape;
use corehole::rt_eom_cc::{CorrelationSource, Integrator, Tail};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full CI Lehmann representation.
    Fci,
    /// Truncated CI (holes relative to the reference ≤ rank) Lehmann representation.
    Ci,
    /// Simulated phase-estimation campaign over the FCI distribution.
    Qpe,
    /// Real-time coupled-cluster cumulant propagation.
    Rtcc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fci => "fci",
            Method::Ci => "ci",
            Method::Qpe => "qpe",
            Method::Rtcc => "rtcc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub integrals: PathBuf,
    pub method: Method,
    /// Excitation rank for `method = "ci"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Poles below this weight are left out of the peak table.
    #[serde(default = "defaults::min_weight")]
    pub min_weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialSource {
    /// a_p on the reference determinant.
    #[default]
    Determinant,
    /// a_p on the correlated N-electron ground state.
    Ground,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    /// Spin-orbital whose electron is removed (2k = α, 2k+1 = β of orbital k).
    #[serde(default)]
    pub annihilate: usize,
    /// Extra single excitation [from, to] in spin-orbitals applied after the removal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<[usize; 2]>,
    #[serde(default)]
    pub source: TrialSource,
}

impl Default for TrialSection {
    fn default() -> Self {
        Self {
            annihilate: 0,
            excitation: None,
            source: TrialSource::Determinant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    /// θ in eV.
    #[serde(default = "defaults::broadening")]
    pub broadening: f64,
    /// Grid step in eV; θ/10 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Binding-energy window [lo, hi] in eV; derived from the poles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Padding around the derived window in eV.
    #[serde(default = "defaults::pad")]
    pub pad: f64,
    #[serde(default)]
    pub lineshape: Lineshape,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            broadening: defaults::broadening(),
            step: None,
            window: None,
            pad: defaults::pad(),
            lineshape: Lineshape::Lorentzian,
        }
    }
}

impl SpectrumSection {
    pub fn step(&self) -> f64 {
        self.step.unwrap_or(self.broadening / 10.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Largest sector diagonalized densely; larger ones go through Lanczos.
    #[serde(default = "defaults::dense_cap")]
    pub dense_cap: usize,
    #[serde(default = "defaults::max_dim")]
    pub max_dim: usize,
    #[serde(default = "defaults::lanczos_iterations")]
    pub lanczos_iterations: usize,
    #[serde(default = "defaults::weight_floor")]
    pub weight_floor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            dense_cap: defaults::dense_cap(),
            max_dim: defaults::max_dim(),
            lanczos_iterations: defaults::lanczos_iterations(),
            weight_floor: defaults::weight_floor(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// N-electron energy estimated by its own phase-estimation campaign.
    #[default]
    Sampled,
    /// Exact N-electron ground-state energy.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpeSection {
    #[serde(default = "defaults::bits")]
    pub bits: u32,
    #[serde(default = "defaults::shots")]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::gap")]
    pub gap: u64,
    /// Window slack as a fraction of the pole range.
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    #[serde(default)]
    pub reference: ReferenceMode,
    #[serde(default = "defaults::reference_shots")]
    pub reference_shots: usize,
    #[serde(default = "defaults::yes")]
    pub keep_shots: bool,
}

impl Default for QpeSection {
    fn default() -> Self {
        Self {
            bits: defaults::bits(),
            shots: defaults::shots(),
            seed: 0,
            gap: defaults::gap(),
            margin: defaults::margin(),
            reference: ReferenceMode::Sampled,
            reference_shots: defaults::reference_shots(),
            keep_shots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtccSection {
    /// Time step (atomic units).
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    /// Propagation length (atomic units).
    #[serde(default = "defaults::t_max")]
    pub t_max: f64,
    /// Exponential damping of G(τ) in eV.
    #[serde(default = "defaults::broadening")]
    pub damping: f64,
    #[serde(default = "defaults::e_corr")]
    pub e_corr: CorrelationSource,
    #[serde(default)]
    pub integrator: Integrator,
    /// Treatment of G beyond t_max in the transform.
    #[serde(default)]
    pub tail: Tail,
    /// Continue from a checkpoint written by an earlier run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for RtccSection {
    fn default() -> Self {
        Self {
            dt: defaults::dt(),
            t_max: defaults::t_max(),
            damping: defaults::broadening(),
            e_corr: defaults::e_corr(),
            integrator: Integrator::BackwardEuler,
            tail: Tail::Exponential,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub trial: TrialSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub qpe: QpeSection,
    #[serde(default)]
    pub rtcc: RtccSection,
}

mod defaults {
    use super::*;

    pub fn min_weight() -> f64 {
        1e-3
    }
    pub fn broadening() -> f64 {
        0.1
    }
    pub fn pad() -> f64 {
        5.0
    }
    pub fn dense_cap() -> usize {
        corehole::ci_solver::DEFAULT_DENSE_CAP
    }
    pub fn max_dim() -> usize {
        corehole::ci_solver::DEFAULT_MAX_DIM
    }
    pub fn lanczos_iterations() -> usize {
        400
    }
    pub fn weight_floor() -> f64 {
        corehole::greens::DEFAULT_WEIGHT_FLOOR
    }
    pub fn bits() -> u32 {
        corehole::qpe_sim::DEFAULT_BITS
    }
    pub fn shots() -> usize {
        corehole::qpe_sim::DEFAULT_SHOTS
    }
    pub fn gap() -> u64 {
        corehole::qpe_sim::DEFAULT_GAP
    }
    pub fn margin() -> f64 {
        corehole::qpe_sim::DEFAULT_MARGIN_FRACTION
    }
    pub fn reference_shots() -> usize {
        100
    }
    pub fn yes() -> bool {
        true
    }
    pub fn dt() -> f64 {
        corehole::rt_eom_cc::DEFAULT_DT
    }
    pub fn t_max() -> f64 {
        corehole::rt_eom_cc::DEFAULT_T_MAX
    }
    pub fn e_corr() -> CorrelationSource {
        CorrelationSource::Fci
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative integrals path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.run.integrals.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.run.integrals = dir.join(&cfg.run.integrals);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(config_error(format!("{name} must be positive, got {x}")))
            }
        };
        positive("spectrum.broadening", self.spectrum.broadening)?;
        positive("spectrum.step", self.spectrum.step())?;
        if !(self.spectrum.pad >= 0.0) {
            return Err(config_error("spectrum.pad must be non-negative"));
        }
        if let Some([lo, hi]) = self.spectrum.window {
            if !(hi > lo) {
                return Err(config_error(format!(
                    "spectrum.window [{lo}, {hi}] is empty"
                )));
            }
        }
        if !(self.run.min_weight >= 0.0) {
            return Err(config_error("run.min_weight must be non-negative"));
        }
        match (self.run.method, self.run.rank) {
            (Method::Ci, None) => return Err(config_error("method \"ci\" needs run.rank")),
            (Method::Ci, Some(0)) => return Err(config_error("run.rank must be at least 1")),
            (Method::Ci, _) => {}
            (_, Some(_)) => return Err(config_error("run.rank only applies to method \"ci\"")),
            _ => {}
        }
        if self.solver.lanczos_iterations == 0 {
            return Err(config_error("solver.lanczos_iterations must be at least 1"));
        }
        if !(self.solver.weight_floor >= 0.0) {
            return Err(config_error("solver.weight_floor must be non-negative"));
        }
        if !(1..=32).contains(&self.qpe.bits) {
            return Err(config_error(format!(
                "qpe.bits must be in 1..=32, got {}",
                self.qpe.bits
            )));
        }
        if self.qpe.shots == 0 || self.qpe.reference_shots == 0 {
            return Err(config_error(
                "qpe.shots and qpe.reference_shots must be at least 1",
            ));
        }
        if !(self.qpe.margin >= 0.0) {
            return Err(config_error("qpe.margin must be non-negative"));
        }
        positive("rtcc.dt", self.rtcc.dt)?;
        positive("rtcc.t_max", self.rtcc.t_max)?;
        positive("rtcc.damping", self.rtcc.damping)?;
        if self.rtcc.t_max < self.rtcc.dt {
            return Err(config_error("rtcc.t_max must be at least rtcc.dt"));
        }
        if self.run.method == Method::Rtcc {
            if self.trial.excitation.is_some() {
                return Err(config_error(
                    "rtcc propagates a bare core hole; trial.excitation is not supported",
                ));
            }
            if self.trial.source != TrialSource::Determinant {
                return Err(config_error("rtcc starts from the reference determinant; trial.source must be \"determinant\""));
            }
        }
        Ok(())
    }
}
