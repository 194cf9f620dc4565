use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Minimum face area accepted by the validating constructors, in world units.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Indexed triangle surface. Watertightness is not required.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T> {
    vertices: Vec<Vec3<T>>,
    faces: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh without validation. Used for exports that may legally
    /// contain collapsed charts (e.g. unsuccessful touches).
    pub fn from_raw(vertices: Vec<Vec3<T>>, faces: Vec<[usize; 3]>) -> Self {
        TriMesh { vertices, faces }
    }

    fn validate(&self) -> Result<()> {
        let len = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &vi in f {
                if vi >= len {
                    return Err(Error::FaceIndexOutOfRange { face: fi, index: vi, len });
                }
            }
            let area = self.face_area(fi).f64();
            if !(area > MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: fi, area, min_area: MIN_FACE_AREA });
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_points(&self, fi: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.faces[fi];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, fi: usize) -> T {
        let [a, b, c] = self.face_points(fi);
        (b - a).cross(c - a).norm() * T::c(0.5)
    }

    /// Winding-order face normal; zero-length for degenerate faces.
    pub fn face_normal(&self, fi: usize) -> Option<Vec3<T>> {
        let [a, b, c] = self.face_points(fi);
        (b - a).cross(c - a).normalized()
    }

    pub fn total_area(&self) -> T {
        (0..self.faces.len()).map(|fi| self.face_area(fi)).sum()
    }

    pub fn centroid(&self) -> Vec3<T> {
        let mut c = Vec3::zero();
        for v in &self.vertices {
            c += *v;
        }
        c / T::of_usize(self.vertices.len().max(1))
    }

    pub fn bounding_box(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            lo = lo.min_with(*v);
            hi = hi.max_with(*v);
        }
        Some((lo, hi))
    }

    /// Applies `f` to every vertex, preserving connectivity.
    pub fn map_vertices(&self, mut f: impl FnMut(Vec3<T>) -> Vec3<T>) -> TriMesh<T> {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Writes `v`/`f` records with 1-based indices.
    pub fn write_obj<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut w = BufWriter::new(out);
        for v in &self.vertices {
            let [x, y, z] = v.to_f64();
            writeln!(w, "v {x} {y} {z}")?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        w.flush()
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        self.write_obj(&mut file)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    /// Parses `v` and `f` records; everything else is ignored. Faces must be
    /// triangles; `v/vt/vn` index tuples keep only the vertex index.
    pub fn read_obj<R: std::io::Read>(reader: R, origin: &str) -> Result<Self> {
        let mut vertices: Vec<Vec3<T>> = Vec::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        let parse_err = |line_no: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            msg: format!("line {line_no}: {msg}"),
        };
        for (ln, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("read {origin}"), e))?;
            let line_no = ln + 1;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut coords = [0.0f64; 3];
                    for c in &mut coords {
                        let tok = it
                            .next()
                            .ok_or_else(|| parse_err(line_no, "vertex needs 3 coords".into()))?;
                        *c = tok
                            .parse()
                            .map_err(|_| parse_err(line_no, format!("bad coordinate '{tok}'")))?;
                    }
                    vertices.push(Vec3::new(T::c(coords[0]), T::c(coords[1]), T::c(coords[2])));
                }
                Some("f") => {
                    let mut idx = Vec::with_capacity(3);
                    for tok in it {
                        let first = tok.split('/').next().unwrap_or(tok);
                        let i: i64 = first
                            .parse()
                            .map_err(|_| parse_err(line_no, format!("bad face index '{tok}'")))?;
                        if i < 1 {
                            return Err(parse_err(line_no, format!("index {i} must be >= 1")));
                        }
                        idx.push((i - 1) as usize);
                    }
                    if idx.len() != 3 {
                        return Err(parse_err(
                            line_no,
                            format!("only triangular faces supported, got {} indices", idx.len()),
                        ));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, faces)
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        Self::read_obj(file, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> TriMesh<f64> {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = TriMesh::<f64>::new(vec![Vec3::zero()], vec![[0, 0, 1]]).unwrap_err();
        assert!(matches!(err, Error::FaceIndexOutOfRange { .. }));
    }

    #[test]
    fn rejects_degenerate_face() {
        let err = TriMesh::<f64>::new(
            vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateFace { face: 0, .. }));
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn area_of_unit_right_triangle() {
        assert!((unit_triangle().face_area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn obj_round_trip() {
        let mesh = unit_triangle();
        let mut buf = Vec::new();
        mesh.write_obj(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("f 1 2 3"));
        let back = TriMesh::<f64>::read_obj(&buf[..], "mem").unwrap();
        assert_eq!(back.faces(), mesh.faces());
        for (a, b) in back.vertices().iter().zip(mesh.vertices()) {
            assert!(a.dist(*b) < 1e-12);
        }
    }

    #[test]
    fn obj_rejects_quads() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let err = TriMesh::<f64>::read_obj(src.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("triangular"));
    }

    #[test]
    fn obj_ignores_unknown_records_and_slash_tuples() {
        let src = "# comment\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n";
        let mesh = TriMesh::<f64>::read_obj(src.as_bytes(), "mem").unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2]]);
    }
}
