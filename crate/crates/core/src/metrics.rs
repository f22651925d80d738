//! Image-quality metrics on sum-of-squares magnitude images.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Per-pixel `sqrt(sum_c |x_c|^2)`.
pub fn sos_combine(x: &Image) -> Array2<f64> {
    let d = x.dims();
    let mut out = Array2::<f64>::zeros(d.grid());
    for c in 0..d.nc {
        Zip::from(&mut out).and(&x.coil(c)).for_each(|o, v| *o += v.norm_sqr());
    }
    out.mapv_inplace(f64::sqrt);
    out
}

fn check_pair(reference: &Array2<f64>, test: &Array2<f64>) -> Result<()> {
    if reference.dim() != test.dim() {
        return Err(Error::DimensionMismatch(format!(
            "reference is {:?}, test is {:?}",
            reference.dim(),
            test.dim()
        )));
    }
    Ok(())
}

/// `‖test - ref‖² / ‖ref‖²`.
pub fn nmse(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    check_pair(reference, test)?;
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::UndefinedReference);
    }
    let num: f64 = Zip::from(reference).and(test).fold(0.0, |acc, r, t| acc + (t - r) * (t - r));
    Ok(num / den)
}

/// `10 log10(max(ref)^2 / mse)`; `+inf` when the images agree exactly.
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    check_pair(reference, test)?;
    let mse = Zip::from(reference).and(test).fold(0.0, |acc, r, t| acc + (t - r) * (t - r))
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range; `max(ref)` when `None`.
    pub range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, range: None }
    }
}

/// Mean structural similarity with the default Gaussian window.
pub fn ssim(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    ssim_with(reference, test, &SsimParams::default())
}

/// Mean local SSIM over every window position fully inside the image.
pub fn ssim_with(reference: &Array2<f64>, test: &Array2<f64>, p: &SsimParams) -> Result<f64> {
    check_pair(reference, test)?;
    let (h, w) = reference.dim();
    if p.window == 0 || h < p.window || w < p.window {
        return Err(Error::InvalidDimension(format!(
            "image {h}x{w} is smaller than the {}-pixel SSIM window",
            p.window
        )));
    }
    let range = p.range.unwrap_or_else(|| reference.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let c1 = (p.k1 * range).powi(2);
    let c2 = (p.k2 * range).powi(2);

    let half = (p.window as f64 - 1.0) / 2.0;
    let g1: Vec<f64> = (0..p.window)
        .map(|k| (-(k as f64 - half).powi(2) / (2.0 * p.sigma * p.sigma)).exp())
        .collect();
    let total: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.into_iter().map(|v| v / total).collect();

    let filter = |img: &Array2<f64>| -> Array2<f64> {
        let (oh, ow) = (h + 1 - p.window, w + 1 - p.window);
        let rows = Array2::from_shape_fn((h, ow), |(y, x)| (0..p.window).map(|k| g1[k] * img[[y, x + k]]).sum::<f64>());
        Array2::from_shape_fn((oh, ow), |(y, x)| (0..p.window).map(|k| g1[k] * rows[[y + k, x]]).sum::<f64>())
    };
    let mx = filter(reference);
    let my = filter(test);
    let sxx = filter(&(reference * reference)) - &mx * &mx;
    let syy = filter(&(test * test)) - &my * &my;
    let sxy = filter(&(reference * test)) - &mx * &my;

    let mut acc = 0.0;
    Zip::from(&mx).and(&my).and(&sxx).and(&syy).and(&sxy).for_each(|&mx, &my, &sxx, &syy, &sxy| {
        acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
            / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    });
    Ok(acc / mx.len() as f64)
}
