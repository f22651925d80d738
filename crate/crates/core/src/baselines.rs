//! Classical reference reconstructions: zero filling, a smoothed total-variation
//! flow, and single-shift GRAPPA-operator extrapolation.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView3, Axis as NdAxis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::tensor::{fft2, ifft2, Image, KSpace};

/// Coil-combined adjoint `S* F^-1 M y` as a single-coil image.
pub fn zero_filled(y: &KSpace, mask: &SamplingMask, sens: &CoilSensitivities) -> Result<Image> {
    sens.combine(&ifft2(&mask.apply(y)?))
}

fn forward_op(x: &Image, mask: &SamplingMask, sens: &CoilSensitivities) -> Result<KSpace> {
    mask.apply(&fft2(&sens.expand(x)?))
}

/// Periodic forward differences along rows (`y`) and columns (`x`).
fn gradient(x: &Array2<Complex64>) -> (Array2<Complex64>, Array2<Complex64>) {
    let (h, w) = x.dim();
    let gy = Array2::from_shape_fn((h, w), |(i, j)| x[[(i + 1) % h, j]] - x[[i, j]]);
    let gx = Array2::from_shape_fn((h, w), |(i, j)| x[[i, (j + 1) % w]] - x[[i, j]]);
    (gy, gx)
}

/// Backward-difference divergence, the negative adjoint of [`gradient`].
fn divergence(py: &Array2<Complex64>, px: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = py.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        py[[i, j]] - py[[(i + h - 1) % h, j]] + px[[i, j]] - px[[i, (j + w - 1) % w]]
    })
}

/// Explicit-Euler flow `x ← x + step (-A*(A x - y) + λ div(∇x / (|∇x| + eps)))`
/// with `A = M F S`, started from the zero-filled image. The TV normalization is
/// per component and the flow descends `½‖A x - y‖² + λ TV_eps(x)`.
pub fn pm_flow(
    y: &KSpace,
    mask: &SamplingMask,
    sens: &CoilSensitivities,
    lambda: f64,
    step: f64,
    iters: usize,
    eps: f64,
) -> Result<Image> {
    if !(step > 0.0) || !(eps > 0.0) || !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need step > 0, eps > 0, lambda >= 0; got {step}, {eps}, {lambda}"
        )));
    }
    let mut x = zero_filled(y, mask, sens)?;
    let residual = |x: &Image| -> Result<f64> { Ok((&forward_op(x, mask, sens)? - y).norm()) };
    let limit = 10.0 * residual(&x)?.max(y.norm());
    for it in 0..iters {
        let r = &forward_op(&x, mask, sens)? - y;
        let data_grad = sens.combine(&ifft2(&mask.apply(&r)?))?;
        let img = x.coil(0).to_owned();
        let (gy, gx) = gradient(&img);
        let ny = gy.mapv(|v| v / (v.norm() + eps));
        let nx = gx.mapv(|v| v / (v.norm() + eps));
        let tv = divergence(&ny, &nx);
        let mut next = img;
        next.zip_mut_with(&data_grad.coil(0), |v, g| *v -= step * g);
        next.zip_mut_with(&tv, |v, d| *v += step * lambda * d);
        x = Image::new(next.insert_axis(NdAxis(0)))
            .map_err(|_| Error::StepSize(format!("iterate became non-finite at iteration {it}")))?;
        let res = residual(&x)?;
        if res > limit {
            return Err(Error::StepSize(format!(
                "data residual {res:e} exceeds 10x its start at iteration {it}"
            )));
        }
    }
    Ok(x)
}

/// Direction of a GRAPPA-operator shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftAxis {
    /// Along the phase-encode (row) index.
    Ky,
    /// Along the readout (column) index.
    Kx,
}

impl ShiftAxis {
    fn nd(self) -> usize {
        match self {
            ShiftAxis::Ky => 1,
            ShiftAxis::Kx => 2,
        }
    }
}

/// Coil-mixing operator `K` with `z(w + shift) ≈ K z(w)` along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaOperator {
    pub k: Array2<Complex64>,
    pub axis: ShiftAxis,
    pub shift: isize,
    /// A ridge was needed because the source covariance is rank-deficient.
    pub regularized: bool,
}

pub const GRAPPA_RIDGE: f64 = 1e-8;

fn coil_vectors(
    acs: ArrayView3<Complex64>,
    axis: ShiftAxis,
    shift: isize,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let (nc, h, w) = acs.dim();
    let len = if axis == ShiftAxis::Ky { h } else { w };
    let s = shift.unsigned_abs();
    let other = if axis == ShiftAxis::Ky { w } else { h };
    let pairs = (len - s) * other;
    let mut src = DMatrix::zeros(nc, pairs);
    let mut dst = DMatrix::zeros(nc, pairs);
    let mut col = 0;
    for a in 0..len - s {
        let (from, to) = if shift >= 0 { (a, a + s) } else { (a + s, a) };
        for b in 0..other {
            for c in 0..nc {
                let (f, t) = match axis {
                    ShiftAxis::Ky => (acs[[c, from, b]], acs[[c, to, b]]),
                    ShiftAxis::Kx => (acs[[c, b, from]], acs[[c, b, to]]),
                };
                src[(c, col)] = f;
                dst[(c, col)] = t;
            }
            col += 1;
        }
    }
    (src, dst)
}

/// Least-squares fit of `K = T S^H (S S^H)^-1` over every source/target pair
/// inside the calibration block.
pub fn grappa_operator_fit(acs: ArrayView3<Complex64>, axis: ShiftAxis, shift: isize) -> Result<GrappaOperator> {
    let (nc, h, w) = acs.dim();
    let len = if axis == ShiftAxis::Ky { h } else { w };
    if shift == 0 || shift.unsigned_abs() >= len || nc == 0 {
        return Err(Error::CalibrationTooSmall(format!(
            "shift {shift} needs more than {len} calibration samples along the axis"
        )));
    }
    let (src, dst) = coil_vectors(acs, axis, shift);
    let gram = &src * src.adjoint();
    let cross = &dst * src.adjoint();
    let scale = (0..nc).map(|c| gram[(c, c)].re).sum::<f64>() / nc as f64;
    let sv = gram.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let regularized = !(smin > smax * 1e-12) || scale == 0.0;
    let mut g = gram;
    if regularized {
        let ridge = GRAPPA_RIDGE * scale.max(1.0);
        for c in 0..nc {
            g[(c, c)] += Complex64::new(ridge, 0.0);
        }
    }
    // K G = C  ⇔  G^H K^H = C^H, G Hermitian
    let kt = g
        .lu()
        .solve(&cross.adjoint())
        .ok_or_else(|| Error::NumericalFailure("GRAPPA normal matrix is singular".into()))?;
    let k = Array2::from_shape_fn((nc, nc), |(a, b)| kt[(b, a)].conj());
    Ok(GrappaOperator { k, axis, shift, regularized })
}

impl GrappaOperator {
    /// Continuous generator `P = (K - I) / Δ` with `Δ = shift / grid_len`.
    pub fn generator(&self, grid_len: usize) -> Array2<Complex64> {
        let delta = self.shift as f64 / grid_len as f64;
        let n = self.k.nrows();
        Array2::from_shape_fn((n, n), |(a, b)| {
            (self.k[[a, b]] - if a == b { 1.0 } else { 0.0 }) / delta
        })
    }

    /// Sum of squared residuals `‖K S - T‖²` on a calibration block.
    pub fn residual(&self, acs: ArrayView3<Complex64>) -> f64 {
        residual_of(&self.k, acs, self.axis, self.shift)
    }
}

/// `‖K S - T‖²` for an arbitrary coil-mixing matrix.
pub fn residual_of(k: &Array2<Complex64>, acs: ArrayView3<Complex64>, axis: ShiftAxis, shift: isize) -> f64 {
    let (src, dst) = coil_vectors(acs, axis, shift);
    let n = k.nrows();
    let km = DMatrix::from_fn(n, n, |a, b| k[[a, b]]);
    (km * src - dst).norm_squared()
}

/// Fills lines outward from the line `start` (exclusive) in the direction of the
/// operator's shift: each of the next `n_steps` lines is kept when `acquired`
/// marks it, and otherwise set to `K` times the previous line.
pub fn grappa_operator_extrapolate(
    z: &KSpace,
    op: &GrappaOperator,
    start: usize,
    acquired: &[bool],
    n_steps: usize,
) -> Result<KSpace> {
    let d = z.dims();
    if op.k.nrows() != d.nc {
        return Err(Error::DimensionMismatch(format!(
            "operator mixes {} coils, data has {}",
            op.k.nrows(),
            d.nc
        )));
    }
    let ax = op.axis.nd();
    let len = z.data().len_of(NdAxis(ax));
    if acquired.len() != len || start >= len {
        return Err(Error::DimensionMismatch("line flags do not match the data".into()));
    }
    let s = op.shift.unsigned_abs();
    let mut out: Array3<Complex64> = z.data().clone();
    let mut pos = start;
    for _ in 0..n_steps {
        let next = if op.shift > 0 { pos + s } else { pos.wrapping_sub(s) };
        if next >= len {
            break;
        }
        if !acquired[next] {
            let prev = out.index_axis(NdAxis(ax), pos).to_owned();
            let filled = op.k.dot(&prev);
            out.index_axis_mut(NdAxis(ax), next).assign(&filled);
        }
        pos = next;
    }
    KSpace::new(out)
}

/// GRAPPA-operator reconstruction of line-undersampled data: fits `±1` shift
/// operators along `ky` on the ACS block and extrapolates from the block edges
/// to the grid boundary, keeping every acquired line.
pub fn grappa_operator_reconstruct(y: &KSpace, mask: &SamplingMask) -> Result<KSpace> {
    let acs = mask.acs();
    let block = acs.extract(y);
    let up = grappa_operator_fit(block.view(), ShiftAxis::Ky, 1)?;
    let down = grappa_operator_fit(block.view(), ShiftAxis::Ky, -1)?;
    let lines = mask.acquired_lines();
    let ky = y.dims().ky;
    let z = mask.apply(y)?;
    let z = grappa_operator_extrapolate(&z, &up, acs.y1 - 1, &lines, ky)?;
    grappa_operator_extrapolate(&z, &down, acs.y0, &lines, ky)
}
