//! Predictor-corrector sampling of the reverse attenuated k-space diffusion.
//!
//! Each reverse step denoises `ẑ_{i+1}`, pulls the estimate toward the measured
//! data with the SLR-penalized solve, undoes one attenuation increment, then runs
//! `M` Langevin corrector moves. All injected noise is shaped by `S̄S̄*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::noise::NoiseMode;
use crate::schedule::DiffusionSchedule;
use crate::score::{score_from_denoiser, ScoreModel};
use crate::slr::{AnnihilationFilter, SlrSolver};
use crate::tensor::KSpace;

/// Every `TRAJECTORY_STRIDE`-th iterate is kept when recording.
pub const TRAJECTORY_STRIDE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    /// Weight of the proximal term in the consistency solve.
    pub lambda: f64,
    /// Corrector signal-to-noise ratio.
    pub r: f64,
    #[serde(rename = "N")]
    pub n_steps: usize,
    #[serde(rename = "M")]
    pub corrector_steps: usize,
    pub seed: u64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub noise: NoiseMode,
    pub record_trajectory: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda: 1.0,
            r: 0.16,
            n_steps: 50,
            corrector_steps: 1,
            seed: 0,
            cg_iters: 10,
            cg_tol: 1e-6,
            noise: NoiseMode::Gaussian,
            record_trajectory: false,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::Config("N must be >= 1".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::Config(format!("cg_tol must be >= 0, got {}", self.cg_tol)));
        }
        Ok(())
    }
}

fn shaped_noise<R: Rng + ?Sized>(
    sens: &CoilSensitivities,
    like: &KSpace,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<KSpace> {
    let n = KSpace::new(mode.draw(like.dims(), rng))?;
    sens.apply_ss_star(&n)
}

/// `ẑ_N = Ĝ_N ⊙ y + sigma_N S̄S̄* n`.
pub fn initialize<R: Rng + ?Sized>(
    y: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<KSpace> {
    sched.check_grid(y.dims().grid())?;
    let n = sched.n_steps();
    let mut z = y.weighted(sched.ghat(n));
    let pn = shaped_noise(sens, y, noise, rng)?;
    z.axpy(sched.sigma(n), &pn);
    Ok(z)
}

/// Reverse update from `ẑ_{i+1}` to `ẑ_i` given the denoiser output `h` at
/// `ẑ_{i+1}` and the consistency-corrected estimate `z0_corr`:
/// `ẑ_{i+1} - (Ĝ_{i+1} - Ĝ_i) ⊙ z0_corr + Δσ² S̄S̄* ε + sqrt(Δσ²) S̄S̄* n`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_update<R: Rng + ?Sized>(
    z_next: &KSpace,
    h: &KSpace,
    z0_corr: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<KSpace> {
    if i >= sched.n_steps() {
        return Err(Error::IndexOutOfRange { index: i, max: sched.n_steps() - 1 });
    }
    let eps = score_from_denoiser(h, z_next, sens, sched, i + 1)?;
    let dsig2 = sched.sigma(i + 1).powi(2) - sched.sigma(i).powi(2);
    let dg = sched.ghat(i + 1) - sched.ghat(i);
    let mut z = z_next - &z0_corr.weighted(&dg);
    z.axpy(dsig2, &sens.apply_ss_star(&eps)?);
    let pn = shaped_noise(sens, z_next, noise, rng)?;
    z.axpy(dsig2.max(0.0).sqrt(), &pn);
    Ok(z)
}

/// Predictor with its own denoiser evaluation at `(ẑ_{i+1}, i + 1)`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    z_next: &KSpace,
    z0_corr: &KSpace,
    model: &M,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<KSpace> {
    if i >= sched.n_steps() {
        return Err(Error::IndexOutOfRange { index: i, max: sched.n_steps() - 1 });
    }
    let h = model.denoise(z_next, i + 1)?;
    predictor_update(z_next, &h, z0_corr, sens, sched, i, noise, rng)
}

/// Outcome of one Langevin corrector move.
#[derive(Clone, Debug)]
pub struct CorrectorMove {
    pub z: KSpace,
    pub eta: f64,
    /// The score vanished and the move was skipped.
    pub skipped: bool,
}

/// Step size `2 (r ‖n‖ / ‖g‖)^2`.
pub fn corrector_step_size(r: f64, noise_norm: f64, score_norm: f64) -> f64 {
    2.0 * (r * noise_norm / score_norm).powi(2)
}

/// `ẑ_i + η S̄S̄* g + sqrt(2η) S̄S̄* n` with `g` the score at `(ẑ_i, i)`.
#[allow(clippy::too_many_arguments)]
pub fn corrector_step<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    z: &KSpace,
    model: &M,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    r: f64,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<CorrectorMove> {
    sched.check_index(i)?;
    let h = model.denoise(z, i)?;
    let g = score_from_denoiser(&h, z, sens, sched, i)?;
    let n = KSpace::new(noise.draw(z.dims(), rng))?;
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return Ok(CorrectorMove { z: z.clone(), eta: 0.0, skipped: true });
    }
    let eta = corrector_step_size(r, n.norm(), gnorm);
    let mut out = z.clone();
    out.axpy(eta, &sens.apply_ss_star(&g)?);
    out.axpy((2.0 * eta).sqrt(), &sens.apply_ss_star(&n)?);
    Ok(CorrectorMove { z: out, eta, skipped: false })
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub z: KSpace,
    /// `(i, ẑ_i)` for every `i` divisible by [`TRAJECTORY_STRIDE`], from `N` down to 0,
    /// when recording was requested.
    pub trajectory: Vec<(usize, KSpace)>,
    /// Corrector moves skipped because the score vanished.
    pub skipped_correctors: usize,
}

/// Full predictor-corrector reconstruction from undersampled data `y`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct<M: ScoreModel + ?Sized>(
    y: &KSpace,
    mask: &SamplingMask,
    sens: &CoilSensitivities,
    filter: &AnnihilationFilter,
    model: &M,
    sched: &DiffusionSchedule,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    if cfg.n_steps != sched.n_steps() {
        return Err(Error::Config(format!(
            "config asks for N = {} but the schedule has {} steps",
            cfg.n_steps,
            sched.n_steps()
        )));
    }
    let dims = y.dims();
    if mask.dims() != dims.grid() || sens.dims() != dims {
        return Err(Error::DimensionMismatch("data, mask and sensitivities disagree".into()));
    }
    sched.check_grid(dims.grid())?;
    let solver = SlrSolver::new(filter, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = sched.n_steps();
    let record = |i: usize, z: &KSpace, traj: &mut Vec<(usize, KSpace)>| {
        if cfg.record_trajectory && i.is_multiple_of(TRAJECTORY_STRIDE) {
            traj.push((i, z.clone()));
        }
    };

    let mut trajectory = Vec::new();
    let mut skipped = 0;
    let mut z = initialize(y, sens, sched, cfg.noise, &mut rng).map_err(|e| e.at_step(n))?;
    record(n, &z, &mut trajectory);
    for i in (0..n).rev() {
        let step = |z: &KSpace, rng: &mut ChaCha8Rng| -> Result<KSpace> {
            let h = model.denoise(z, i + 1)?;
            let corrected = solver.solve(&h, y, mask, cfg.lambda, cfg.cg_iters, cfg.cg_tol)?.z;
            predictor_update(z, &h, &corrected, sens, sched, i, cfg.noise, rng)
        };
        z = step(&z, &mut rng).map_err(|e| e.at_step(i))?;
        for _ in 0..cfg.corrector_steps {
            let mv = corrector_step(&z, model, sens, sched, i, cfg.r, cfg.noise, &mut rng)
                .map_err(|e| e.at_step(i))?;
            skipped += usize::from(mv.skipped);
            z = mv.z;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("sampler iterate").at_step(i));
        }
        record(i, &z, &mut trajectory);
    }
    Ok(Reconstruction { z, trajectory, skipped_correctors: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::complex_normal;
    use crate::schedule::ScheduleParams;
    use crate::score::DeltaOracle;
    use crate::slr::HankelConfig;
    use crate::tensor::{fft2, Dims, Image};

    fn setup(seed: u64) -> (CoilSensitivities, DiffusionSchedule, KSpace) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sens = CoilSensitivities::normalize(complex_normal(Dims::new(2, 8, 8), &mut rng)).unwrap();
        let p = ScheduleParams { n_steps: 6, tau_n: 20.0, ..Default::default() };
        let sched = DiffusionSchedule::build(&p, 8, 8).unwrap();
        let x = Image::new(complex_normal(Dims::new(1, 8, 8), &mut rng)).unwrap();
        (sens.clone(), sched, fft2(&sens.expand(&x).unwrap()))
    }

    #[test]
    fn step_size_formula() {
        assert_eq!(corrector_step_size(1.0, 2.0, 4.0), 0.5);
    }

    #[test]
    fn initialize_is_seeded_and_noise_free_at_zero() {
        let (sens, sched, z0) = setup(1);
        let a = initialize(&z0, &sens, &sched, NoiseMode::Gaussian, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = initialize(&z0, &sens, &sched, NoiseMode::Gaussian, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let flat = DiffusionSchedule::from_levels_unchecked(
            sched.taus().to_vec(),
            vec![0.0; sched.n_steps() + 1],
            8,
            8,
        );
        let c = initialize(&z0, &sens, &flat, NoiseMode::Gaussian, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(c, z0.weighted(sched.ghat(sched.n_steps())));
    }

    #[test]
    fn degenerate_step_is_identity() {
        let (sens, _, z0) = setup(2);
        let sched = DiffusionSchedule::from_levels_unchecked(vec![0.0, 0.0], vec![0.5, 0.5], 8, 8);
        let oracle = DeltaOracle::new(z0.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zn = KSpace::new(complex_normal(z0.dims(), &mut rng)).unwrap();
        let out = predictor_step(&zn, &z0, &oracle, &sens, &sched, 0, NoiseMode::Gaussian, &mut rng).unwrap();
        assert_eq!(out, zn);
    }

    #[test]
    fn exact_drift_inverts_attenuation() {
        let (sens, sched, z0) = setup(3);
        let oracle = DeltaOracle::new(z0.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..sched.n_steps() {
            let zn = z0.weighted(sched.ghat(i + 1));
            let out = predictor_step(&zn, &z0, &oracle, &sens, &sched, i, NoiseMode::Zero, &mut rng).unwrap();
            assert!(out.max_abs_diff(&z0.weighted(sched.ghat(i))) <= 1e-12);
        }
        assert!(predictor_step(&z0, &z0, &oracle, &sens, &sched, 6, NoiseMode::Zero, &mut rng).is_err());
    }

    #[test]
    fn corrector_skips_at_fixed_point() {
        let (sens, sched, z0) = setup(4);
        let oracle = DeltaOracle::new(z0.clone());
        let zi = z0.weighted(sched.ghat(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mv = corrector_step(&zi, &oracle, &sens, &sched, 2, 0.16, NoiseMode::Gaussian, &mut rng).unwrap();
        assert!(mv.skipped);
        assert_eq!(mv.z, zi);
    }

    #[test]
    fn tiny_snr_barely_moves() {
        let (sens, sched, z0) = setup(5);
        let oracle = DeltaOracle::new(z0.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut zi = z0.weighted(sched.ghat(3));
        zi.axpy(0.1, &sens.apply_ss_star(&KSpace::new(complex_normal(z0.dims(), &mut rng)).unwrap()).unwrap());
        let mv = corrector_step(&zi, &oracle, &sens, &sched, 3, 1e-9, NoiseMode::Gaussian, &mut rng).unwrap();
        assert!((&mv.z - &zi).norm() <= 1e-6 * zi.norm());
    }

    #[test]
    fn reconstruction_is_deterministic_and_checks_config() {
        let (sens, sched, z0) = setup(6);
        let mask = crate::mask::make_mask(crate::mask::MaskKind::Uniform, 8, 8, 2, 2, 0).unwrap();
        let y = mask.apply(&z0).unwrap();
        let filter = AnnihilationFilter::empty(HankelConfig::new(2, 2), 2, 0.05);
        let oracle = DeltaOracle::new(z0.clone());
        let cfg = ReconConfig { n_steps: 6, record_trajectory: true, ..Default::default() };
        let a = reconstruct(&y, &mask, &sens, &filter, &oracle, &sched, &cfg).unwrap();
        let b = reconstruct(&y, &mask, &sens, &filter, &oracle, &sched, &cfg).unwrap();
        assert_eq!(a.z, b.z);
        let steps: Vec<usize> = a.trajectory.iter().map(|(i, _)| *i).collect();
        assert_eq!(steps, vec![5, 0]);
        let bad = ReconConfig { n_steps: 7, ..cfg.clone() };
        assert!(matches!(reconstruct(&y, &mask, &sens, &filter, &oracle, &sched, &bad), Err(Error::Config(_))));
        let bad = ReconConfig { r: 0.0, ..cfg };
        assert!(reconstruct(&y, &mask, &sens, &filter, &oracle, &sched, &bad).is_err());
    }
}
