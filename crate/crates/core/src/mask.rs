//! Cartesian sampling masks.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::KSpace;

/// Rectangle of fully sampled calibration data, half-open on both axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcsRegion {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl AcsRegion {
    /// `lines` phase-encode lines centered on `ky / 2`, spanning every column.
    pub fn centered_lines(lines: usize, ky: usize, kx: usize) -> Self {
        let y0 = (ky / 2).saturating_sub(lines / 2);
        AcsRegion { y0, y1: (y0 + lines).min(ky), x0: 0, x1: kx }
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// Copies the region out of `z` as a raw `(nc, h, w)` block.
    pub fn extract(&self, z: &KSpace) -> ndarray::Array3<num_complex::Complex64> {
        z.data().slice(s![.., self.y0..self.y1, self.x0..self.x1]).to_owned()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    grid: Array2<bool>,
    acs: AcsRegion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Uniform,
    Random,
    AcsOnly,
}

impl SamplingMask {
    pub fn new(grid: Array2<bool>, acs: AcsRegion) -> Result<Self> {
        let (ky, kx) = grid.dim();
        if acs.y1 > ky || acs.x1 > kx || acs.y0 > acs.y1 || acs.x0 > acs.x1 {
            return Err(Error::InvalidMask(format!(
                "ACS region {acs:?} does not fit a {ky}x{kx} grid"
            )));
        }
        if !grid.iter().any(|&b| b) {
            return Err(Error::InvalidMask("no sample is acquired".into()));
        }
        for y in acs.y0..acs.y1 {
            for x in acs.x0..acs.x1 {
                if !grid[[y, x]] {
                    return Err(Error::InvalidMask(format!("ACS sample ({y}, {x}) is not acquired")));
                }
            }
        }
        Ok(SamplingMask { grid, acs })
    }

    pub fn full(ky: usize, kx: usize) -> Self {
        SamplingMask {
            grid: Array2::from_elem((ky, kx), true),
            acs: AcsRegion { y0: 0, y1: ky, x0: 0, x1: kx },
        }
    }

    pub fn grid(&self) -> &Array2<bool> {
        &self.grid
    }

    pub fn acs(&self) -> AcsRegion {
        self.acs
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn weights(&self) -> Array2<f64> {
        self.grid.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    /// Phase-encode lines with at least one acquired sample.
    pub fn acquired_lines(&self) -> Vec<bool> {
        self.grid.rows().into_iter().map(|r| r.iter().any(|&b| b)).collect()
    }

    /// Zero-fills `z` outside the mask.
    pub fn apply(&self, z: &KSpace) -> Result<KSpace> {
        if z.dims().grid() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "mask is {:?}, data grid is {:?}",
                self.dims(),
                z.dims().grid()
            )));
        }
        Ok(z.weighted(&self.weights()))
    }
}

/// Builds a line mask along `ky`.
///
/// * `Uniform`: every `r`-th line (index ≡ 0 mod r) plus `acs_lines` centered lines.
/// * `Random`: each line kept with probability `1 / r` (seeded) plus the centered lines.
/// * `AcsOnly`: only the `acs_lines` centered lines.
pub fn make_mask(
    kind: MaskKind,
    ky: usize,
    kx: usize,
    r: usize,
    acs_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if r < 1 {
        return Err(Error::InvalidArgument("acceleration R must be >= 1".into()));
    }
    if acs_lines > ky {
        return Err(Error::InvalidArgument(format!(
            "ACS of {acs_lines} lines exceeds the {ky}-line grid"
        )));
    }
    let acs = AcsRegion::centered_lines(acs_lines, ky, kx);
    let mut lines: Vec<bool> = (0..ky).map(|y| (acs.y0..acs.y1).contains(&y)).collect();
    match kind {
        MaskKind::Uniform => {
            for (y, l) in lines.iter_mut().enumerate() {
                *l |= y % r == 0;
            }
        }
        MaskKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 1.0 / r as f64;
            for l in lines.iter_mut() {
                let keep = rng.random::<f64>() < p;
                *l |= keep;
            }
        }
        MaskKind::AcsOnly => {}
    }
    let grid = Array2::from_shape_fn((ky, kx), |(y, _)| lines[y]);
    SamplingMask::new(grid, acs)
}
