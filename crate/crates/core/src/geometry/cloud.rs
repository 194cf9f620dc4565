use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Unordered set of 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// ASCII PLY export (`x y z` vertex properties only).
    pub fn write_ply<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "end_header")?;
        for p in &self.points {
            let [x, y, z] = p.to_f64();
            writeln!(w, "{x} {y} {z}")?;
        }
        w.flush()
    }

    /// Plain `x y z` lines.
    pub fn write_xyz<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut w = BufWriter::new(out);
        for p in &self.points {
            let [x, y, z] = p.to_f64();
            writeln!(w, "{x} {y} {z}")?;
        }
        w.flush()
    }

    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        self.write_ply(&mut f)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn save_xyz(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        self.write_xyz(&mut f)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}

impl<T: Real> FromIterator<Vec3<T>> for PointCloud<T> {
    fn from_iter<I: IntoIterator<Item = Vec3<T>>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_header_and_rows() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let mut buf = Vec::new();
        c.write_ply(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        assert!(s.trim_end().ends_with("1 2 3"));
    }
}
