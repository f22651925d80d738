//! Paired attenuation / noise schedules.
//!
//! Step `i` carries an attenuation exponent `tau_i` (mask `Ĝ_i(w) = exp(-tau_i |w|^2)`,
//! `|w|` the centered normalized frequency radius) and a noise level `sigma_i`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::squared_radius;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(rename = "N")]
    pub n_steps: usize,
    pub sigma0: f64,
    #[serde(rename = "sigmaN")]
    pub sigma_n: f64,
    #[serde(rename = "tauN")]
    pub tau_n: f64,
    pub gamma: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            n_steps: 50,
            sigma0: 0.01,
            sigma_n: 1.0,
            tau_n: acs_matched_tau(16, 64),
            gamma: 2.0,
        }
    }
}

/// Terminal exponent for which `Ĝ_N` drops to one half at the ACS half-width
/// (`acs_lines / 2` lines out of `ky`).
pub fn acs_matched_tau(acs_lines: usize, ky: usize) -> f64 {
    let half_width = acs_lines as f64 / 2.0 / ky as f64;
    std::f64::consts::LN_2 / (half_width * half_width)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    tau: Vec<f64>,
    sigma: Vec<f64>,
    ghat: Vec<Array2<f64>>,
    radius2: Array2<f64>,
}

impl DiffusionSchedule {
    /// Power-law attenuation `tau_i = tauN (i/N)^gamma` and geometric noise
    /// `sigma_i = sigma0 (sigmaN/sigma0)^(i/N)`.
    pub fn build(p: &ScheduleParams, ky: usize, kx: usize) -> Result<Self> {
        let ScheduleParams { n_steps, sigma0, sigma_n, tau_n, gamma } = *p;
        if n_steps < 1 {
            return Err(Error::InvalidSchedule("N must be >= 1".into()));
        }
        if !(sigma0 > 0.0 && sigma0 < sigma_n && sigma_n.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < sigma0 < sigmaN, got {sigma0} and {sigma_n}"
            )));
        }
        if !(tau_n > 0.0 && tau_n.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "need tauN > 0 and gamma > 0, got {tau_n} and {gamma}"
            )));
        }
        let n = n_steps as f64;
        let tau = (0..=n_steps).map(|i| tau_n * (i as f64 / n).powf(gamma)).collect();
        let sigma = (0..=n_steps)
            .map(|i| sigma0 * (sigma_n / sigma0).powf(i as f64 / n))
            .collect();
        Self::from_levels(tau, sigma, ky, kx)
    }

    /// Explicit levels; checks every schedule invariant.
    pub fn from_levels(tau: Vec<f64>, sigma: Vec<f64>, ky: usize, kx: usize) -> Result<Self> {
        if tau.len() != sigma.len() || tau.len() < 2 {
            return Err(Error::InvalidSchedule(
                "tau and sigma need equal length N + 1 >= 2".into(),
            ));
        }
        if tau[0] != 0.0 {
            return Err(Error::InvalidSchedule("tau_0 must be 0".into()));
        }
        if !tau.windows(2).all(|w| w[1] > w[0]) || !tau.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidSchedule("tau must be strictly increasing".into()));
        }
        if !(sigma[0] > 0.0) || !sigma.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidSchedule(
                "sigma must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self::from_levels_unchecked(tau, sigma, ky, kx))
    }

    /// Levels without the monotonicity checks, for degenerate and limiting
    /// schedules (repeated levels, `sigma = 0`). Lengths must still agree.
    pub fn from_levels_unchecked(tau: Vec<f64>, sigma: Vec<f64>, ky: usize, kx: usize) -> Self {
        assert_eq!(tau.len(), sigma.len(), "tau and sigma lengths differ");
        let radius2 = squared_radius(ky, kx);
        let ghat = tau.iter().map(|&t| radius2.mapv(|r| (-t * r).exp())).collect();
        DiffusionSchedule { tau, sigma, ghat, radius2 }
    }

    pub fn n_steps(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn grid(&self) -> (usize, usize) {
        self.radius2.dim()
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i > self.n_steps() {
            return Err(Error::IndexOutOfRange { index: i, max: self.n_steps() });
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, grid: (usize, usize)) -> Result<()> {
        if grid != self.grid() {
            return Err(Error::DimensionMismatch(format!(
                "schedule grid {:?} vs data grid {:?}",
                self.grid(),
                grid
            )));
        }
        Ok(())
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.tau[i]
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    pub fn taus(&self) -> &[f64] {
        &self.tau
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Attenuation mask `Ĝ_i`.
    pub fn ghat(&self, i: usize) -> &Array2<f64> {
        &self.ghat[i]
    }

    /// `|w|^2` on the schedule grid.
    pub fn radius2(&self) -> &Array2<f64> {
        &self.radius2
    }

    /// Mask for an arbitrary exponent.
    pub fn mask_for_tau(&self, tau: f64) -> Array2<f64> {
        self.radius2.mapv(|r| (-tau * r).exp())
    }

    /// Perturbation-kernel scale `sqrt(sigma_i^2 - sigma_0^2)`.
    pub fn kernel_scale(&self, i: usize) -> f64 {
        (self.sigma[i].powi(2) - self.sigma[0].powi(2)).max(0.0).sqrt()
    }
}
