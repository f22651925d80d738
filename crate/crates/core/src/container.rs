//! Self-describing binary tensor container.
//!
//! Layout: the magic line `MCKS1\n`, a one-line JSON header
//! `{"nc":..,"ky":..,"kx":..,"dtype":"c64"|"f32"|"u8","role":..}\n`, then the
//! little-endian payload, coil-major then row-major. `c64` stores interleaved
//! `(re, im)` 32-bit floats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::mask::{AcsRegion, SamplingMask};
use crate::score::LinearDenoiser;
use crate::slr::{AnnihilationFilter, HankelConfig};
use crate::tensor::{Image, KSpace};

pub const MAGIC: &[u8; 6] = b"MCKS1\n";
const MAX_HEADER: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    C64,
    F32,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::C64 => 8,
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Kspace,
    Image,
    Mask,
    Sens,
    Gains,
    Filter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub nc: usize,
    pub ky: usize,
    pub kx: usize,
    pub dtype: DType,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    C64(Array3<Complex32>),
    F32(Array3<f32>),
    U8(Array3<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::C64(_) => DType::C64,
            Payload::F32(_) => DType::F32,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            Payload::C64(a) => a.dim(),
            Payload::F32(a) => a.dim(),
            Payload::U8(a) => a.dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorContainer {
    pub role: Role,
    pub payload: Payload,
}

impl TensorContainer {
    pub fn header(&self) -> Header {
        let (nc, ky, kx) = self.payload.shape();
        Header { nc, ky, kx, dtype: self.payload.dtype(), role: self.role }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        match &self.payload {
            Payload::C64(a) => {
                for v in a.iter() {
                    w.write_all(&v.re.to_le_bytes())?;
                    w.write_all(&v.im.to_le_bytes())?;
                }
            }
            Payload::F32(a) => {
                for v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::U8(a) => w.write_all(a.as_slice().expect("owned arrays are contiguous"))?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut line = Vec::new();
        (&mut r).take(MAX_HEADER as u64).read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("unterminated header".into()));
        }
        let h: Header = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let count = h
            .nc
            .checked_mul(h.ky)
            .and_then(|v| v.checked_mul(h.kx))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        if bytes.len() != count * h.dtype.size() {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                count * h.dtype.size()
            )));
        }
        let shape = (h.nc, h.ky, h.kx);
        let f32_at = |k: usize| f32::from_le_bytes(bytes[k..k + 4].try_into().expect("4-byte slice"));
        let payload = match h.dtype {
            DType::C64 => Payload::C64(
                Array3::from_shape_vec(shape, (0..count).map(|k| Complex32::new(f32_at(8 * k), f32_at(8 * k + 4))).collect())
                    .expect("length checked"),
            ),
            DType::F32 => Payload::F32(
                Array3::from_shape_vec(shape, (0..count).map(|k| f32_at(4 * k)).collect()).expect("length checked"),
            ),
            DType::U8 => Payload::U8(Array3::from_shape_vec(shape, bytes).expect("length checked")),
        };
        Ok(TensorContainer { role: h.role, payload })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    fn complex(role: Role, a: &Array3<Complex64>) -> Self {
        TensorContainer { role, payload: Payload::C64(a.mapv(|v| Complex32::new(v.re as f32, v.im as f32))) }
    }

    fn expect_complex(&self, roles: &[Role]) -> Result<Array3<Complex64>> {
        if !roles.contains(&self.role) {
            return Err(Error::Format(format!("expected role {roles:?}, found {:?}", self.role)));
        }
        match &self.payload {
            Payload::C64(a) => Ok(a.mapv(|v| Complex64::new(v.re as f64, v.im as f64))),
            other => Err(Error::Format(format!("expected c64 payload, found {:?}", other.dtype()))),
        }
    }

    pub fn from_kspace(z: &KSpace) -> Self {
        Self::complex(Role::Kspace, z.data())
    }

    pub fn from_image(x: &Image) -> Self {
        Self::complex(Role::Image, x.data())
    }

    pub fn from_sens(s: &CoilSensitivities) -> Self {
        Self::complex(Role::Sens, s.maps())
    }

    pub fn from_mask(m: &SamplingMask) -> Self {
        let g = m.grid().mapv(u8::from).insert_axis(Axis(0));
        TensorContainer { role: Role::Mask, payload: Payload::U8(g) }
    }

    pub fn from_gains(model: &LinearDenoiser) -> Self {
        let (ky, kx) = model.gain(0).dim();
        let a = Array3::from_shape_fn((model.gains().len(), ky, kx), |(i, y, x)| model.gain(i)[[y, x]]);
        Self::complex(Role::Gains, &a)
    }

    /// Filter bank stored as `(filters, nc·wy, wx)`: one slice per filter.
    pub fn from_filter(f: &AnnihilationFilter) -> Self {
        let w = f.window();
        let fl = f.filters();
        let a = Array3::from_shape_fn((fl.ncols(), f.nc() * w.wy, w.wx), |(j, r, x)| fl[[r * w.wx + x, j]]);
        Self::complex(Role::Filter, &a)
    }

    pub fn to_kspace(&self) -> Result<KSpace> {
        KSpace::new(self.expect_complex(&[Role::Kspace])?)
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(self.expect_complex(&[Role::Image, Role::Kspace])?)
    }

    /// Sensitivities stored at 32-bit precision are renormalized on load.
    pub fn to_sens(&self) -> Result<CoilSensitivities> {
        CoilSensitivities::normalize(self.expect_complex(&[Role::Sens])?)
    }

    pub fn to_gains(&self) -> Result<LinearDenoiser> {
        let a = self.expect_complex(&[Role::Gains])?;
        LinearDenoiser::new(a.axis_iter(Axis(0)).map(|g| g.to_owned()).collect())
    }

    /// The mask's ACS region is recovered as the largest block of fully
    /// acquired lines around the center row.
    pub fn to_mask(&self) -> Result<SamplingMask> {
        if self.role != Role::Mask {
            return Err(Error::Format(format!("expected role Mask, found {:?}", self.role)));
        }
        let Payload::U8(a) = &self.payload else {
            return Err(Error::Format("mask payload must be u8".into()));
        };
        if a.dim().0 != 1 {
            return Err(Error::Format("mask must have a single channel".into()));
        }
        let grid: Array2<bool> = a.index_axis(Axis(0), 0).mapv(|v| v != 0);
        let (ky, kx) = grid.dim();
        let full = |y: usize| grid.row(y).iter().all(|&b| b);
        let c = ky / 2;
        let acs = if full(c) {
            let mut y0 = c;
            while y0 > 0 && full(y0 - 1) {
                y0 -= 1;
            }
            let mut y1 = c + 1;
            while y1 < ky && full(y1) {
                y1 += 1;
            }
            AcsRegion { y0, y1, x0: 0, x1: kx }
        } else {
            AcsRegion { y0: c, y1: c, x0: 0, x1: kx }
        };
        SamplingMask::new(grid, acs)
    }

    pub fn to_filter(&self, nc: usize, rank_threshold: f64) -> Result<AnnihilationFilter> {
        let a = self.expect_complex(&[Role::Filter])?;
        let (r, rows, wx) = a.dim();
        if nc == 0 || rows % nc != 0 {
            return Err(Error::Format(format!("filter rows {rows} do not split over {nc} coils")));
        }
        let window = HankelConfig::new(rows / nc, wx);
        let m = Array2::from_shape_fn((rows * wx, r), |(k, j)| a[[j, k / wx, k % wx]]);
        AnnihilationFilter::new(m, window, nc, rank_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_corruption() {
        let c = TensorContainer {
            role: Role::Image,
            payload: Payload::F32(Array3::from_elem((1, 2, 3), 1.5)),
        };
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        assert_eq!(TensorContainer::read_from(&bytes[..]).unwrap(), c);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(matches!(TensorContainer::read_from(&truncated[..]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TensorContainer::read_from(&bad[..]), Err(Error::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(TensorContainer::read_from(&extra[..]), Err(Error::Format(_))));
    }

    #[test]
    fn header_is_one_json_line() {
        let c = TensorContainer { role: Role::Mask, payload: Payload::U8(Array3::zeros((1, 2, 2))) };
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes[6..]);
        assert!(text.starts_with(r#"{"nc":1,"ky":2,"kx":2,"dtype":"u8","role":"mask"}"#));
    }
}
