//! JSON run configuration for the command-line pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{make_mask, MaskKind, SamplingMask};
use crate::sampler::ReconConfig;
use crate::schedule::{acs_matched_tau, DiffusionSchedule, ScheduleParams};
use crate::slr::HankelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "N")]
    pub n_steps: usize,
    pub sigma0: f64,
    #[serde(rename = "sigmaN")]
    pub sigma_n: f64,
    /// Derived from the ACS extent when absent.
    #[serde(rename = "tauN", skip_serializing_if = "Option::is_none")]
    pub tau_n: Option<f64>,
    pub gamma: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let p = ScheduleParams::default();
        ScheduleSection { n_steps: p.n_steps, sigma0: p.sigma0, sigma_n: p.sigma_n, tau_n: None, gamma: p.gamma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub lambda: f64,
    pub r: f64,
    #[serde(rename = "M")]
    pub corrector_steps: usize,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = ReconConfig::default();
        SamplerSection { lambda: d.lambda, r: d.r, corrector_steps: d.corrector_steps, seed: d.seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlrSection {
    pub wy: usize,
    pub wx: usize,
    pub rank_threshold: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
}

impl Default for SlrSection {
    fn default() -> Self {
        let w = HankelConfig::default();
        SlrSection { wy: w.wy, wx: w.wx, rank_threshold: 0.05, cg_iters: 10, cg_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub kind: MaskKind,
    #[serde(rename = "R")]
    pub r: usize,
    pub acs_lines: usize,
    /// Extent of the calibration band for `acs-only` masks.
    pub acs_size: usize,
    pub seed: u64,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection { kind: MaskKind::Uniform, r: 6, acs_lines: 16, acs_size: 32, seed: 0 }
    }
}

impl MaskSection {
    /// Number of centered calibration lines this mask carries.
    pub fn calibration_lines(&self) -> usize {
        match self.kind {
            MaskKind::AcsOnly => self.acs_size,
            _ => self.acs_lines,
        }
    }

    pub fn build(&self, ky: usize, kx: usize) -> Result<SamplingMask> {
        make_mask(self.kind, ky, kx, self.r, self.calibration_lines(), self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleSection,
    pub sampler: SamplerSection,
    pub slr: SlrSection,
    pub mask: MaskSection,
    pub paths: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn schedule_params(&self, ky: usize) -> ScheduleParams {
        let s = &self.schedule;
        ScheduleParams {
            n_steps: s.n_steps,
            sigma0: s.sigma0,
            sigma_n: s.sigma_n,
            tau_n: s.tau_n.unwrap_or_else(|| acs_matched_tau(self.mask.calibration_lines().max(1), ky)),
            gamma: s.gamma,
        }
    }

    pub fn schedule(&self, ky: usize, kx: usize) -> Result<DiffusionSchedule> {
        DiffusionSchedule::build(&self.schedule_params(ky), ky, kx)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn recon_config(&self) -> ReconConfig {
        ReconConfig {
            lambda: self.sampler.lambda,
            r: self.sampler.r,
            n_steps: self.schedule.n_steps,
            corrector_steps: self.sampler.corrector_steps,
            seed: self.sampler.seed,
            cg_iters: self.slr.cg_iters,
            cg_tol: self.slr.cg_tol,
            ..ReconConfig::default()
        }
    }

    pub fn window(&self) -> HankelConfig {
        HankelConfig::new(self.slr.wy, self.slr.wx)
    }

    /// Checks every section against the preconditions of the stages it feeds,
    /// for a `ky x kx` grid.
    pub fn validate(&self, ky: usize, kx: usize) -> Result<()> {
        self.schedule(ky, kx)?;
        self.recon_config().validate()?;
        let s = &self.slr;
        if s.wy < 1 || s.wx < 1 || s.wy > ky || s.wx > kx {
            return Err(Error::Config(format!("SLR window {}x{} does not fit {ky}x{kx}", s.wy, s.wx)));
        }
        if !(s.rank_threshold > 0.0 && s.rank_threshold < 1.0) {
            return Err(Error::Config(format!("rank_threshold must lie in (0, 1), got {}", s.rank_threshold)));
        }
        if !(s.cg_tol >= 0.0) {
            return Err(Error::Config("cg_tol must be >= 0".into()));
        }
        let m = &self.mask;
        if m.r < 1 {
            return Err(Error::Config("mask R must be >= 1".into()));
        }
        if m.calibration_lines() > ky {
            return Err(Error::Config(format!("{} ACS lines exceed the {ky}-line grid", m.calibration_lines())));
        }
        Ok(())
    }
}
