//! Synthetic multi-coil test data: a smooth-edged ellipse phantom and
//! low-order coil sensitivity maps.

use std::f64::consts::PI;

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Image};

struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

const fn e(value: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Ellipse {
    Ellipse { value, a, b, x0, y0, phi_deg }
}

// Shepp-Logan layout with a brighter interior
const ELLIPSES: [Ellipse; 10] = [
    e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    e(-0.25, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    e(0.15, 0.21, 0.25, 0.0, 0.35, 0.0),
    e(0.15, 0.046, 0.046, 0.0, 0.1, 0.0),
    e(0.15, 0.046, 0.046, 0.0, -0.1, 0.0),
    e(0.15, 0.046, 0.023, -0.08, -0.605, 0.0),
    e(0.15, 0.023, 0.023, 0.0, -0.606, 0.0),
    e(0.15, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Edge half-width of the ellipses in normalized coordinates (the field of view
/// spans `[-1, 1)`).
const EDGE: f64 = 0.015;

/// Normalized coordinate of grid index `i` on an `n`-point axis.
fn coord(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
}

/// Ellipse phantom on a `ky x kx` grid with smooth edges and a mild linear phase,
/// plus `nc` coil maps placed around the object and normalized pointwise.
/// The seed jitters intensities, positions and coil profiles slightly.
pub fn make_phantom(ky: usize, kx: usize, nc: usize, seed: u64) -> Result<(Image, CoilSensitivities)> {
    if nc < 1 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    Dims::new(nc, ky, kx).validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter: Vec<(f64, f64, f64)> = ELLIPSES
        .iter()
        .map(|_| {
            (
                1.0 + 0.02 * (rng.random::<f64>() - 0.5),
                0.01 * (rng.random::<f64>() - 0.5),
                0.01 * (rng.random::<f64>() - 0.5),
            )
        })
        .collect();
    let ramp = (0.1 * PI * (rng.random::<f64>() + 0.5), 0.05 * PI * (rng.random::<f64>() + 0.5));

    let img = Array3::from_shape_fn((1, ky, kx), |(_, i, j)| {
        let (y, x) = (-coord(i, ky), coord(j, kx));
        let mut v = 0.0;
        for (el, &(scale, dx, dy)) in ELLIPSES.iter().zip(&jitter) {
            let (s, c) = el.phi_deg.to_radians().sin_cos();
            let (px, py) = (x - el.x0 - dx, y - el.y0 - dy);
            let u = (c * px + s * py) / el.a;
            let w = (-s * px + c * py) / el.b;
            let rho = (u * u + w * w).sqrt();
            // signed distance to the boundary, approximately in coordinate units
            let dist = (1.0 - rho) * el.a.min(el.b);
            v += el.value * scale * 0.5 * (1.0 + (dist / EDGE).tanh());
        }
        Complex64::from_polar(v, ramp.0 * x + ramp.1 * y)
    });

    let coils: Vec<(f64, f64, f64, f64, f64)> = (0..nc)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / nc as f64 + 0.2 * (rng.random::<f64>() - 0.5);
            (
                angle,
                0.2 * (rng.random::<f64>() - 0.5),
                0.2 * (rng.random::<f64>() - 0.5),
                2.0 * PI * rng.random::<f64>(),
                0.3 * PI * (rng.random::<f64>() - 0.5),
            )
        })
        .collect();
    let raw = Array3::from_shape_fn((nc, ky, kx), |(c, i, j)| {
        let (y, x) = (-coord(i, ky), coord(j, kx));
        let (angle, ax, ay, phase, twist) = coils[c];
        let (cx, cy) = (1.3 * angle.cos(), 1.3 * angle.sin());
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        let mag = (1.0 + ax * x + ay * y) * (-d2 / (2.0 * 1.1 * 1.1)).exp();
        Complex64::from_polar(mag, phase + twist * (x * angle.sin() - y * angle.cos()))
    });
    Ok((Image::new(img)?, CoilSensitivities::normalize(raw)?))
}

/// Fraction of spectral energy of `x` inside the centered `ky/4 x kx/4` block.
pub fn central_band_energy(x: &Image) -> f64 {
    let z = crate::tensor::fft2(x);
    let d = z.dims();
    let (by, bx) = (d.ky / 4, d.kx / 4);
    let (y0, x0) = (d.ky / 2 - by / 2, d.kx / 2 - bx / 2);
    let mut inside = 0.0;
    for ((_, y, x), v) in z.data().indexed_iter() {
        if (y0..y0 + by).contains(&y) && (x0..x0 + bx).contains(&x) {
            inside += v.norm_sqr();
        }
    }
    inside / z.norm_sqr()
}
