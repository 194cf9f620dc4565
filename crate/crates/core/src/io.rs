//! Binary file formats shared by the simulator and the CLI: P6 PPM images
//! and flat little-endian `f32` grids with a JSON sidecar header.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major H×W×3 image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    /// `data[(y * width + x) * 3 + c]`
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![T::zero(); width * height * 3] }
    }

    pub fn fill(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6, maxval 255). Intensities clamp to [0, 1] and round.
    pub fn write_ppm<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| {
                let v = v.f64().clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            })
            .collect();
        out.write_all(&bytes)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        self.write_ppm(&mut f)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}

/// Sidecar header for flat binary grids.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub order: String,
}

/// Writes `data` as little-endian `f32` to `path` and a JSON sidecar header
/// to `path + ".json"`.
pub fn save_f32_grid<T: Real>(path: impl AsRef<Path>, shape: &[usize], data: &[T]) -> Result<()> {
    let path = path.as_ref();
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::shape(format!(
            "grid data length {} does not match shape {:?}",
            data.len(),
            shape
        )));
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    let header = GridHeader {
        dtype: "float32".to_string(),
        shape: shape.to_vec(),
        order: "row-major".to_string(),
    };
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_vec_pretty(&header)?)
        .map_err(|e| Error::io(format!("write {}", sidecar.display()), e))
}

pub fn load_f32_grid<T: Real>(path: impl AsRef<Path>) -> Result<(GridHeader, Vec<T>)> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let header: GridHeader = serde_json::from_slice(
        &std::fs::read(&sidecar).map_err(|e| Error::io(format!("read {}", sidecar.display()), e))?,
    )?;
    if header.dtype != "float32" || header.order != "row-major" {
        return Err(Error::Parse {
            path: sidecar.display().to_string(),
            msg: format!("unsupported grid header {header:?}"),
        });
    }
    let mut f = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let expected: usize = header.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("expected {} f32 values, file has {} bytes", expected, bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok((header, data))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}
