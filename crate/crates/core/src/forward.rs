//! Forward attenuation and the perturbation kernel of the forward SDE.

use ndarray::{Array3, Axis};
use num_complex::Complex64;
use rand::Rng;

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::noise::complex_normal;
use crate::schedule::DiffusionSchedule;
use crate::tensor::{fft2, ifft2, Image, KSpace};

/// `Ĝ_i ⊙ z0`, the same mask on every coil.
pub fn attenuate(z0: &KSpace, sched: &DiffusionSchedule, i: usize) -> Result<KSpace> {
    sched.check_index(i)?;
    sched.check_grid(z0.dims().grid())?;
    Ok(z0.weighted(sched.ghat(i)))
}

/// `Ĝ(tau) ⊙ z0` for an arbitrary exponent.
pub fn attenuate_tau(z0: &KSpace, sched: &DiffusionSchedule, tau: f64) -> Result<KSpace> {
    sched.check_grid(z0.dims().grid())?;
    Ok(z0.weighted(&sched.mask_for_tau(tau)))
}

/// Perturbation-kernel draw with caller-supplied standard noise `n`:
/// `Ĝ_i ⊙ z0 + sqrt(sigma_i^2 - sigma_0^2) S̄S̄* n`.
pub fn perturb_with_noise(
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    noise: Array3<Complex64>,
) -> Result<KSpace> {
    let mut out = attenuate(z0, sched, i)?;
    let n = KSpace::new(noise)?;
    let shaped = sens.apply_ss_star(&n)?;
    out.axpy(sched.kernel_scale(i), &shaped);
    Ok(out)
}

/// Draws `ẑ_i ~ N(Ĝ_i ⊙ z0, (sigma_i^2 - sigma_0^2) S̄S̄*)`.
pub fn sample_perturbation<R: Rng + ?Sized>(
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    rng: &mut R,
) -> Result<KSpace> {
    sched.check_index(i)?;
    let n = complex_normal(z0.dims(), rng);
    perturb_with_noise(z0, sens, sched, i, n)
}

/// Relative residual of the spectral heat equation `dẑ/dtau = -|w|^2 ẑ` along the
/// attenuation path `ẑ(tau) = Ĝ(tau) ⊙ z0`, with a central difference of half-width
/// `dtau` at `tau_i`. Returns 0 when both numerator and denominator vanish.
pub fn heat_residual(z0: &KSpace, sched: &DiffusionSchedule, i: usize, dtau: f64) -> Result<f64> {
    if !(dtau > 0.0) {
        return Err(Error::InvalidArgument(format!("dtau must be positive, got {dtau}")));
    }
    if i == 0 || i >= sched.n_steps() {
        return Err(Error::IndexOutOfRange { index: i, max: sched.n_steps() });
    }
    sched.check_grid(z0.dims().grid())?;
    let tau = sched.tau(i);
    let plus = sched.mask_for_tau(tau + dtau);
    let minus = sched.mask_for_tau(tau - dtau);
    let here = sched.ghat(i);
    let r2 = sched.radius2();

    let (mut num, mut den) = (0.0, 0.0);
    for coil in z0.data().axis_iter(Axis(0)) {
        for ((y, x), v) in coil.indexed_iter() {
            let rhs = *v * (r2[[y, x]] * here[[y, x]]);
            let fd = *v * ((plus[[y, x]] - minus[[y, x]]) / (2.0 * dtau));
            num += (fd + rhs).norm_sqr();
            den += rhs.norm_sqr();
        }
    }
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}

/// Spatial heat kernel `G_i = ifft2(Ĝ_i)` as a single-coil image.
pub fn heat_kernel(sched: &DiffusionSchedule, i: usize) -> Result<Image> {
    sched.check_index(i)?;
    let g = sched.ghat(i).mapv(|v| Complex64::new(v, 0.0)).insert_axis(Axis(0));
    Ok(ifft2(&KSpace::new(g)?))
}

/// Direct circular convolution of every coil of `z` with the single-coil `kernel`,
/// both in centered coordinates: `out[p] = sum_q z[q] kernel[p - q + center]`.
pub fn circular_convolve(z: &Image, kernel: &Image) -> Result<Image> {
    let d = z.dims();
    if kernel.dims().nc != 1 || kernel.dims().grid() != d.grid() {
        return Err(Error::DimensionMismatch("kernel must be single-coil on the same grid".into()));
    }
    let (ky, kx) = d.grid();
    let (cy, cx) = (ky / 2, kx / 2);
    let k = kernel.coil(0);
    let mut out = Array3::zeros(d.shape());
    for c in 0..d.nc {
        let src = z.coil(c);
        for py in 0..ky {
            for px in 0..kx {
                let mut acc = Complex64::new(0.0, 0.0);
                for qy in 0..ky {
                    let ky_idx = (py + ky + cy - qy) % ky;
                    for qx in 0..kx {
                        acc += src[[qy, qx]] * k[[ky_idx, (px + kx + cx - qx) % kx]];
                    }
                }
                out[[c, py, px]] = acc;
            }
        }
    }
    Image::new(out)
}

/// Relative discrepancy between Fourier-side attenuation `ifft2(Ĝ_i ⊙ fft2(z))` and
/// direct circular convolution of `z` with `G_i`. The unitary transforms carry a
/// `1/sqrt(ky kx)` factor on the convolution side.
pub fn convolution_equivalence(z: &Image, sched: &DiffusionSchedule, i: usize) -> Result<f64> {
    sched.check_grid(z.dims().grid())?;
    let spectral = ifft2(&attenuate(&fft2(z), sched, i)?);
    let g = heat_kernel(sched, i)?;
    let n = z.dims().ky * z.dims().kx;
    let direct = &circular_convolve(z, &g)? * (1.0 / (n as f64).sqrt());
    let scale = spectral.norm().max(f64::MIN_POSITIVE);
    Ok((&spectral - &direct).norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;
    use crate::tensor::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched(n: usize) -> DiffusionSchedule {
        let p = ScheduleParams { n_steps: 10, tau_n: 20.0, ..Default::default() };
        DiffusionSchedule::build(&p, n, n).unwrap()
    }

    fn random_kspace(d: Dims, seed: u64) -> KSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KSpace::new(complex_normal(d, &mut rng)).unwrap()
    }

    #[test]
    fn identity_at_step_zero() {
        let s = sched(16);
        let z = random_kspace(Dims::new(2, 16, 16), 1);
        assert_eq!(attenuate(&z, &s, 0).unwrap(), z);
        let zero = KSpace::zeros(z.dims()).unwrap();
        assert_eq!(attenuate(&zero, &s, 7).unwrap().norm(), 0.0);
        assert!(matches!(attenuate(&z, &s, 11), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn composition_follows_semigroup() {
        let s = sched(16);
        let z = random_kspace(Dims::new(1, 16, 16), 2);
        let twice = attenuate_tau(&attenuate_tau(&z, &s, 1.5).unwrap(), &s, 2.25).unwrap();
        let once = attenuate_tau(&z, &s, 3.75).unwrap();
        assert!(twice.max_abs_diff(&once) <= 1e-12);
    }

    #[test]
    fn step_zero_perturbation_is_noise_free() {
        let s = sched(8);
        let sens = CoilSensitivities::uniform(&[Complex64::new(1.0, 0.0)], 8, 8).unwrap();
        let z = random_kspace(Dims::new(1, 8, 8), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_perturbation(&z, &sens, &s, 0, &mut rng).unwrap(), z);
    }

    #[test]
    fn dc_is_stationary() {
        let s = sched(8);
        let z = KSpace::from_fn(Dims::new(1, 8, 8), |(_, y, x)| {
            Complex64::new(if (y, x) == (4, 4) { 3.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        assert_eq!(heat_residual(&z, &s, 5, 1e-3).unwrap(), 0.0);
        assert!(heat_residual(&z, &s, 5, 0.0).is_err());
        assert!(heat_residual(&z, &s, 0, 1e-3).is_err());
    }

    #[test]
    fn impulse_convolves_to_kernel() {
        let s = sched(16);
        let imp = Image::from_fn(Dims::new(1, 16, 16), |(_, y, x)| {
            Complex64::new(if (y, x) == (8, 8) { 1.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let out = ifft2(&attenuate(&fft2(&imp), &s, 4).unwrap());
        let g = heat_kernel(&s, 4).unwrap();
        assert!((&out - &(&g * 0.0625)).norm() <= 1e-10);
        assert!(convolution_equivalence(&imp, &s, 4).unwrap() <= 1e-10);
    }
}
