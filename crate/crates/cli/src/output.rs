//! Structured stderr reports, PNG previews and JSON sidecars.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use akd_core::container::TensorContainer;
use akd_core::{Error, Result};
use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};

pub fn report_error(category: &str, kind: &str, message: &str) {
    let mut body = json!({ "category": category, "message": message.trim_end() });
    if !kind.is_empty() {
        body["kind"] = Value::String(kind.to_string());
    }
    eprintln!("{}", json!({ "error": body }));
}

pub fn warn(category: &str, message: &str) {
    eprintln!("{}", json!({ "warning": { "category": category, "message": message } }));
}

/// 8-bit grayscale magnitude image scaled so the largest value maps to 255.
pub fn write_png(path: &Path, mag: &Array2<f64>) -> Result<()> {
    let (h, w) = mag.dim();
    let peak = mag.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let data: Vec<u8> = mag.iter().map(|&v| (v.abs() * scale).round().clamp(0.0, 255.0) as u8).collect();
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn png_err(e: png::EncodingError) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// `<path>.json` next to an artifact.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes a container plus its JSON sidecar.
pub fn save(path: &Path, c: &TensorContainer, meta: &Value) -> Result<()> {
    c.write_file(path)?;
    write_json(&sidecar_path(path), meta)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
pub enum Decibels {
    Finite(f64),
    Label(&'static str),
}

impl From<f64> for Decibels {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Decibels::Label("inf")
        } else {
            Decibels::Finite(v)
        }
    }
}

#[derive(Serialize)]
pub struct MetricsReport {
    pub nmse: f64,
    pub psnr_db: Decibels,
    pub ssim: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_report_layout() {
        let r = MetricsReport { nmse: 0.0, psnr_db: f64::INFINITY.into(), ssim: 1.0 };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"nmse":0.0,"psnr_db":"inf","ssim":1.0}"#);
        let r = MetricsReport { nmse: 0.1, psnr_db: 30.0.into(), ssim: 0.5 };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"nmse":0.1,"psnr_db":30.0,"ssim":0.5}"#);
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar_path(Path::new("a/b.mcks")), PathBuf::from("a/b.mcks.json"));
    }
}
