//! Coil sensitivity maps and the k-space projection they induce.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{fft2, ifft2, Dims, Image, KSpace};

/// Tolerance on the pointwise normalization `sum_c |s_c(p)|^2 = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Per-coil complex sensitivity maps `S`, normalized so that `S*S = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    maps: Array3<Complex64>,
}

impl CoilSensitivities {
    /// Wraps already-normalized maps.
    pub fn new(maps: Array3<Complex64>) -> Result<Self> {
        let (nc, ky, kx) = maps.dim();
        Dims::new(nc, ky, kx).validate()?;
        if !maps.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("coil sensitivities"));
        }
        let dev = Self::sum_of_squares(&maps)
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        if dev > NORMALIZATION_TOL {
            return Err(Error::Unnormalized(dev));
        }
        Ok(CoilSensitivities { maps })
    }

    /// Normalizes raw maps pointwise. Pixels where every coil vanishes are
    /// assigned entirely to the first coil.
    pub fn normalize(mut raw: Array3<Complex64>) -> Result<Self> {
        let (nc, ky, kx) = raw.dim();
        Dims::new(nc, ky, kx).validate()?;
        let sos = Self::sum_of_squares(&raw);
        for y in 0..ky {
            for x in 0..kx {
                let s = sos[[y, x]];
                if s > 0.0 && s.is_finite() {
                    let inv = 1.0 / s.sqrt();
                    for c in 0..nc {
                        raw[[c, y, x]] *= inv;
                    }
                } else {
                    for c in 0..nc {
                        raw[[c, y, x]] = Complex64::new(if c == 0 { 1.0 } else { 0.0 }, 0.0);
                    }
                }
            }
        }
        Self::new(raw)
    }

    /// Spatially constant maps with coil profile `profile` (normalized to unit norm).
    pub fn uniform(profile: &[Complex64], ky: usize, kx: usize) -> Result<Self> {
        let norm = profile.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if profile.is_empty() || norm == 0.0 {
            return Err(Error::InvalidArgument("coil profile must be non-zero".into()));
        }
        let maps = Array3::from_shape_fn((profile.len(), ky, kx), |(c, _, _)| profile[c] / norm);
        Self::new(maps)
    }

    fn sum_of_squares(maps: &Array3<Complex64>) -> Array2<f64> {
        let mut sos = Array2::zeros((maps.dim().1, maps.dim().2));
        for coil in maps.axis_iter(Axis(0)) {
            Zip::from(&mut sos).and(&coil).for_each(|s, v| *s += v.norm_sqr());
        }
        sos
    }

    pub fn maps(&self) -> &Array3<Complex64> {
        &self.maps
    }

    pub fn dims(&self) -> Dims {
        let (nc, ky, kx) = self.maps.dim();
        Dims::new(nc, ky, kx)
    }

    pub fn nc(&self) -> usize {
        self.maps.dim().0
    }

    fn check(&self, d: Dims) -> Result<()> {
        let own = self.dims();
        if d.nc != own.nc || d.grid() != own.grid() {
            return Err(Error::DimensionMismatch(format!(
                "sensitivities are {}x{}x{}, data is {}x{}x{}",
                own.nc, own.ky, own.kx, d.nc, d.ky, d.kx
            )));
        }
        Ok(())
    }

    fn check_grid(&self, d: Dims) -> Result<()> {
        if d.grid() != self.dims().grid() {
            return Err(Error::DimensionMismatch(format!(
                "grid {}x{} does not match sensitivities {}x{}",
                d.ky,
                d.kx,
                self.dims().ky,
                self.dims().kx
            )));
        }
        Ok(())
    }

    /// `S* x`: contracts the coil dimension into a single-coil image.
    pub fn combine(&self, x: &Image) -> Result<Image> {
        self.check(x.dims())?;
        let (_, ky, kx) = self.maps.dim();
        let mut out = Array3::zeros((1, ky, kx));
        {
            let mut acc = out.index_axis_mut(Axis(0), 0);
            for (s, xc) in self.maps.axis_iter(Axis(0)).zip(x.data().axis_iter(Axis(0))) {
                Zip::from(&mut acc)
                    .and(&s)
                    .and(&xc)
                    .for_each(|a, s, v| *a += s.conj() * v);
            }
        }
        Ok(Image::from_array_unchecked(out))
    }

    /// `S x`: expands a single-coil image into coil images.
    pub fn expand(&self, x: &Image) -> Result<Image> {
        self.check_grid(x.dims())?;
        if x.dims().nc != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expand takes a single-coil image, got {} coils",
                x.dims().nc
            )));
        }
        let img = x.coil(0);
        let mut out = self.maps.clone();
        for mut coil in out.axis_iter_mut(Axis(0)) {
            Zip::from(&mut coil).and(&img).for_each(|s, v| *s *= v);
        }
        Ok(Image::from_array_unchecked(out))
    }

    /// `S S* x` in the image domain.
    pub fn project_image(&self, x: &Image) -> Result<Image> {
        self.expand(&self.combine(x)?)
    }

    /// `S̄S̄* z = F S S* F⁻¹ z`, the orthogonal projection onto coil-consistent k-space.
    pub fn apply_ss_star(&self, z: &KSpace) -> Result<KSpace> {
        self.check(z.dims())?;
        Ok(fft2(&self.project_image(&ifft2(z))?))
    }

    /// `S̄* z`: single-coil k-space of the coil-combined image.
    pub fn adjoint_kspace(&self, z: &KSpace) -> Result<KSpace> {
        self.check(z.dims())?;
        Ok(fft2(&self.combine(&ifft2(z))?))
    }

    /// `S̄ u` for single-coil k-space `u`.
    pub fn forward_kspace(&self, u: &KSpace) -> Result<KSpace> {
        Ok(fft2(&self.expand(&ifft2(u))?))
    }

    /// Spatial mean of the pointwise coil outer product, `mean_p s(p) s(p)^H`.
    /// Its entries are the same-frequency blocks of `S̄S̄*`.
    pub fn mean_outer(&self) -> Array2<Complex64> {
        let (nc, ky, kx) = self.maps.dim();
        let n = (ky * kx) as f64;
        Array2::from_shape_fn((nc, nc), |(a, b)| {
            let sa = self.maps.index_axis(Axis(0), a);
            let sb = self.maps.index_axis(Axis(0), b);
            Zip::from(&sa)
                .and(&sb)
                .fold(Complex64::new(0.0, 0.0), |acc, x, y| acc + x * y.conj())
                / n
        })
    }

    /// Squared-magnitude kernel of `S̄S̄*` summed over coil pairs:
    /// `K(w - w') = sum_{c,c'} |(S̄S̄*)_{(c,w),(c',w')}|^2`, stored on the centered
    /// grid (index `(ky/2, kx/2)` is zero offset). Sums to one.
    pub fn projection_kernel(&self) -> Array2<f64> {
        let (nc, ky, kx) = self.maps.dim();
        let n = (ky * kx) as f64;
        let mut kernel = Array2::zeros((ky, kx));
        for a in 0..nc {
            for b in 0..nc {
                let r = Array3::from_shape_fn((1, ky, kx), |(_, y, x)| {
                    self.maps[[a, y, x]] * self.maps[[b, y, x]].conj()
                });
                let rhat = fft2(&Image::from_array_unchecked(r));
                Zip::from(&mut kernel)
                    .and(&rhat.coil(0))
                    .for_each(|k, v| *k += v.norm_sqr() / n);
            }
        }
        kernel
    }
}
