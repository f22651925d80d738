//! Multi-coil complex tensors and the centered unitary 2-D Fourier transform.
//!
//! Both [`KSpace`] and [`Image`] hold a `(nc, ky, kx)` array of `Complex64`,
//! coil-major then row-major. The frequency origin of k-space sits at
//! `(ky / 2, kx / 2)`; the image origin used by the transform sits at the same
//! index, so a centered impulse transforms to a constant.

use std::cell::RefCell;
use std::ops::{Add, Mul, Sub};

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nc: usize,
    pub ky: usize,
    pub kx: usize,
}

impl Dims {
    pub fn new(nc: usize, ky: usize, kx: usize) -> Self {
        Dims { nc, ky, kx }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nc, self.ky, self.kx)
    }

    pub fn len(&self) -> usize {
        self.nc * self.ky * self.kx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.ky, self.kx)
    }

    pub fn with_coils(&self, nc: usize) -> Dims {
        Dims { nc, ..*self }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.nc < 1 || self.ky < 2 || self.kx < 2 {
            return Err(Error::InvalidDimension(format!(
                "need nc >= 1, ky >= 2, kx >= 2, got {}x{}x{}",
                self.nc, self.ky, self.kx
            )));
        }
        Ok(())
    }
}

fn dims_of(a: &Array3<Complex64>) -> Dims {
    let (nc, ky, kx) = a.dim();
    Dims { nc, ky, kx }
}

macro_rules! complex_tensor {
    ($name:ident, $what:literal) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Array3<Complex64>);

        impl $name {
            /// Wraps `data`, checking the shape and that every entry is finite.
            pub fn new(data: Array3<Complex64>) -> Result<Self> {
                dims_of(&data).validate()?;
                if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::NonFinite($what));
                }
                Ok($name(data))
            }

            pub fn zeros(dims: Dims) -> Result<Self> {
                dims.validate()?;
                Ok($name(Array3::zeros(dims.shape())))
            }

            /// Builds a tensor from a per-entry function of `(coil, row, column)`.
            pub fn from_fn<F>(dims: Dims, f: F) -> Result<Self>
            where
                F: FnMut((usize, usize, usize)) -> Complex64,
            {
                Self::new(Array3::from_shape_fn(dims.shape(), f))
            }

            pub(crate) fn from_array_unchecked(data: Array3<Complex64>) -> Self {
                debug_assert!(data.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
                $name(data)
            }

            pub fn dims(&self) -> Dims {
                dims_of(&self.0)
            }

            pub fn data(&self) -> &Array3<Complex64> {
                &self.0
            }

            pub fn into_data(self) -> Array3<Complex64> {
                self.0
            }

            pub fn coil(&self, c: usize) -> ndarray::ArrayView2<'_, Complex64> {
                self.0.index_axis(Axis(0), c)
            }

            pub fn norm_sqr(&self) -> f64 {
                self.0.iter().map(|v| v.norm_sqr()).sum()
            }

            /// Euclidean norm of the flattened complex tensor.
            pub fn norm(&self) -> f64 {
                self.norm_sqr().sqrt()
            }

            /// `<self, other> = sum conj(self) * other`.
            pub fn inner(&self, other: &Self) -> Complex64 {
                self.0
                    .iter()
                    .zip(other.0.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum()
            }

            /// Multiplies every coil by the same real grid map.
            pub fn weighted(&self, map: &Array2<f64>) -> Self {
                let mut out = self.0.clone();
                for mut coil in out.axis_iter_mut(Axis(0)) {
                    Zip::from(&mut coil).and(map).for_each(|v, &w| *v *= w);
                }
                $name(out)
            }

            /// Multiplies every coil by the same complex grid map.
            pub fn weighted_complex(&self, map: &Array2<Complex64>) -> Self {
                let mut out = self.0.clone();
                for mut coil in out.axis_iter_mut(Axis(0)) {
                    Zip::from(&mut coil).and(map).for_each(|v, &w| *v *= w);
                }
                $name(out)
            }

            /// `self += alpha * other`.
            pub fn axpy(&mut self, alpha: f64, other: &Self) {
                Zip::from(&mut self.0)
                    .and(&other.0)
                    .for_each(|a, &b| *a += b * alpha);
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.0
                    .iter()
                    .zip(other.0.iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
            }
        }

        impl Add for &$name {
            type Output = $name;
            fn add(self, rhs: &$name) -> $name {
                $name(&self.0 + &rhs.0)
            }
        }

        impl Sub for &$name {
            type Output = $name;
            fn sub(self, rhs: &$name) -> $name {
                $name(&self.0 - &rhs.0)
            }
        }

        impl Mul<f64> for &$name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(self.0.mapv(|v| v * rhs))
            }
        }

        impl Mul<Complex64> for &$name {
            type Output = $name;
            fn mul(self, rhs: Complex64) -> $name {
                $name(self.0.mapv(|v| v * rhs))
            }
        }
    };
}

complex_tensor!(KSpace, "k-space tensor");
complex_tensor!(Image, "image tensor");

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized, unshifted 2-D DFT of a row-major `ky x kx` buffer, in place.
pub(crate) fn dft2_in_place(buf: &mut [Complex64], ky: usize, kx: usize, inverse: bool) {
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            (p.plan_fft_inverse(kx), p.plan_fft_inverse(ky))
        } else {
            (p.plan_fft_forward(kx), p.plan_fft_forward(ky))
        }
    });
    let zero = Complex64::new(0.0, 0.0);
    let mut scratch = vec![zero; row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
    row_fft.process_with_scratch(buf, &mut scratch);
    // columns become contiguous rows of the transpose
    let mut t = vec![zero; ky * kx];
    transpose::transpose(buf, &mut t, kx, ky);
    col_fft.process_with_scratch(&mut t, &mut scratch);
    transpose::transpose(&t, buf, ky, kx);
}

fn centered_fft2(data: &Array3<Complex64>, inverse: bool) -> Array3<Complex64> {
    let (nc, ky, kx) = data.dim();
    let scale = 1.0 / ((ky * kx) as f64).sqrt();
    let (hy, hx) = (ky / 2, kx / 2);

    let mut out = Array3::zeros((nc, ky, kx));
    let mut buf = vec![Complex64::new(0.0, 0.0); ky * kx];
    for c in 0..nc {
        let src = data.index_axis(Axis(0), c);
        // ifftshift into the buffer so the origin lands on index 0
        for y in 0..ky {
            let sy = (y + hy) % ky;
            for x in 0..kx {
                buf[y * kx + x] = src[[sy, (x + hx) % kx]];
            }
        }
        dft2_in_place(&mut buf, ky, kx, inverse);
        let mut dst = out.index_axis_mut(Axis(0), c);
        for y in 0..ky {
            let dy = (y + hy) % ky;
            for x in 0..kx {
                dst[[dy, (x + hx) % kx]] = buf[y * kx + x] * scale;
            }
        }
    }
    out
}

/// Centered unitary 2-D DFT applied per coil.
pub fn fft2(img: &Image) -> KSpace {
    KSpace::from_array_unchecked(centered_fft2(img.data(), false))
}

/// Inverse of [`fft2`].
pub fn ifft2(z: &KSpace) -> Image {
    Image::from_array_unchecked(centered_fft2(z.data(), true))
}

/// Centered normalized frequency coordinates `(w_y, w_x)` of grid index `(y, x)`.
pub fn normalized_frequency(ky: usize, kx: usize, y: usize, x: usize) -> (f64, f64) {
    (
        (y as f64 - (ky / 2) as f64) / ky as f64,
        (x as f64 - (kx / 2) as f64) / kx as f64,
    )
}

/// `|w|^2` over the grid, with `w` in centered normalized coordinates.
pub fn squared_radius(ky: usize, kx: usize) -> Array2<f64> {
    Array2::from_shape_fn((ky, kx), |(y, x)| {
        let (wy, wx) = normalized_frequency(ky, kx, y, x);
        wy * wy + wx * wx
    })
}
