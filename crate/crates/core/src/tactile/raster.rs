//! Minimal z-buffer rasterizer with flat Lambert shading. Stands in for a
//! full renderer: the reconstruction only needs silhouettes and coarse
//! shading cues.

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::io::Image;
use crate::scalar::Real;

/// Pinhole camera. `rotation` rows are the camera right / down / forward
/// axes in world coordinates; `focal` is in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T> {
    pub position: Vec3<T>,
    pub rotation: [Vec3<T>; 3],
    pub focal: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraModel<T> {
    pub fn new(
        position: Vec3<T>,
        rotation: [Vec3<T>; 3],
        focal: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let tol = T::c(1e-9);
        for (i, r) in rotation.iter().enumerate() {
            if (r.norm() - T::one()).abs() > tol {
                return Err(Error::invalid(format!("rotation row {i} is not unit length")));
            }
            for (j, s) in rotation.iter().enumerate().skip(i + 1) {
                if r.dot(*s).abs() > tol {
                    return Err(Error::invalid(format!("rotation rows {i},{j} not orthogonal")));
                }
            }
        }
        Ok(CameraModel { position, rotation, focal, width, height })
    }

    /// Camera at `position` looking at `target`.
    pub fn look_at(
        position: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        focal: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - position)
            .normalized()
            .ok_or_else(|| Error::invalid("camera position equals target"))?;
        let right = forward
            .cross(up)
            .normalized()
            .ok_or_else(|| Error::invalid("camera up parallel to view direction"))?;
        let down = forward.cross(right);
        CameraModel::new(position, [right, down, forward], focal, width, height)
    }

    /// Projects a world point to continuous pixel coordinates (pixel `(i, j)`
    /// covers `[i, i+1) x [j, j+1)`) plus the camera-space depth. `None`
    /// behind the near plane.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T, T)> {
        let d = p - self.position;
        let z = self.rotation[2].dot(d);
        if z <= T::c(1e-6) {
            return None;
        }
        let x = self.rotation[0].dot(d);
        let y = self.rotation[1].dot(d);
        let u = self.focal * x / z + T::of_usize(self.width) * T::c(0.5);
        let v = self.focal * y / z + T::of_usize(self.height) * T::c(0.5);
        Some((u, v, z))
    }
}

/// Pixel rectangle, `x0..x1` by `y0..y1` (half-open).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

pub const BACKGROUND: [f64; 3] = [0.05, 0.06, 0.08];
pub const HAND_COLOR: [f64; 3] = [0.45, 0.34, 0.30];
const ALBEDO: [f64; 3] = [0.80, 0.80, 0.85];
const LIGHT_DIR: [f64; 3] = [0.35, 0.25, 0.90];

/// Rasterizes the mesh with one fixed directional light. When
/// `occlusion_box` is given, those pixels are overwritten with a flat hand
/// color, emulating a hand occluding the view.
pub fn render_vision<T: Real>(
    mesh: &TriMesh<T>,
    camera: &CameraModel<T>,
    occlusion_box: Option<PixelRect>,
) -> Image<T> {
    let (w, h) = (camera.width, camera.height);
    let bg = [T::c(BACKGROUND[0]), T::c(BACKGROUND[1]), T::c(BACKGROUND[2])];
    let mut img = Image::fill(w, h, bg);
    let mut zbuf = vec![T::infinity(); w * h];
    let light = Vec3::new(T::c(LIGHT_DIR[0]), T::c(LIGHT_DIR[1]), T::c(LIGHT_DIR[2]))
        .normalized()
        .unwrap();
    let half = T::c(0.5);
    for fi in 0..mesh.faces().len() {
        let tri = mesh.face_points(fi);
        let proj: Option<Vec<(T, T, T)>> =
            tri.iter().map(|&p| camera.project(p)).collect();
        let Some(proj) = proj else { continue };
        let normal = match (tri[1] - tri[0]).cross(tri[2] - tri[0]).normalized() {
            Some(n) => n,
            None => continue,
        };
        // Flat shade with the normal oriented toward the camera.
        let to_cam = camera.position - (tri[0] + tri[1] + tri[2]) / T::c(3.0);
        let n = if normal.dot(to_cam) < T::zero() { -normal } else { normal };
        let diffuse = n.dot(light).max(T::zero());
        let shade = T::c(0.15) + T::c(0.80) * diffuse;
        let color = [
            T::c(ALBEDO[0]) * shade,
            T::c(ALBEDO[1]) * shade,
            T::c(ALBEDO[2]) * shade,
        ];
        let (u0, v0) = (proj[0].0, proj[0].1);
        let (u1, v1) = (proj[1].0, proj[1].1);
        let (u2, v2) = (proj[2].0, proj[2].1);
        let area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0);
        if area == T::zero() {
            continue;
        }
        let min_x = u0.min(u1).min(u2).floor().f64().max(0.0) as usize;
        let max_x = (u0.max(u1).max(u2).ceil().f64().min(w as f64) as usize).min(w);
        let min_y = v0.min(v1).min(v2).floor().f64().max(0.0) as usize;
        let max_y = (v0.max(v1).max(v2).ceil().f64().min(h as f64) as usize).min(h);
        let inv_area = T::one() / area;
        for py in min_y..max_y {
            for px in min_x..max_x {
                let sx = T::of_usize(px) + half;
                let sy = T::of_usize(py) + half;
                let w0 = ((u1 - sx) * (v2 - sy) - (v1 - sy) * (u2 - sx)) * inv_area;
                let w1 = ((u2 - sx) * (v0 - sy) - (v2 - sy) * (u0 - sx)) * inv_area;
                let w2 = T::one() - w0 - w1;
                if w0 < T::zero() || w1 < T::zero() || w2 < T::zero() {
                    continue;
                }
                let z = w0 * proj[0].2 + w1 * proj[1].2 + w2 * proj[2].2;
                let zi = py * w + px;
                if z < zbuf[zi] {
                    zbuf[zi] = z;
                    img.set_pixel(px, py, color);
                }
            }
        }
    }
    if let Some(rect) = occlusion_box {
        let hand = [T::c(HAND_COLOR[0]), T::c(HAND_COLOR[1]), T::c(HAND_COLOR[2])];
        for py in rect.y0..rect.y1.min(h) {
            for px in rect.x0..rect.x1.min(w) {
                img.set_pixel(px, py, hand);
            }
        }
    }
    img
}

/// Depth of the z-buffer at a pixel after rendering; used by tests.
pub fn render_depth_buffer<T: Real>(mesh: &TriMesh<T>, camera: &CameraModel<T>) -> Vec<T> {
    let (w, h) = (camera.width, camera.height);
    let mut zbuf = vec![T::infinity(); w * h];
    let half = T::c(0.5);
    for fi in 0..mesh.faces().len() {
        let tri = mesh.face_points(fi);
        let proj: Option<Vec<(T, T, T)>> = tri.iter().map(|&p| camera.project(p)).collect();
        let Some(proj) = proj else { continue };
        let (u0, v0) = (proj[0].0, proj[0].1);
        let (u1, v1) = (proj[1].0, proj[1].1);
        let (u2, v2) = (proj[2].0, proj[2].1);
        let area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0);
        if area == T::zero() {
            continue;
        }
        let inv_area = T::one() / area;
        let min_x = u0.min(u1).min(u2).floor().f64().max(0.0) as usize;
        let max_x = (u0.max(u1).max(u2).ceil().f64().min(w as f64) as usize).min(w);
        let min_y = v0.min(v1).min(v2).floor().f64().max(0.0) as usize;
        let max_y = (v0.max(v1).max(v2).ceil().f64().min(h as f64) as usize).min(h);
        for py in min_y..max_y {
            for px in min_x..max_x {
                let sx = T::of_usize(px) + half;
                let sy = T::of_usize(py) + half;
                let w0 = ((u1 - sx) * (v2 - sy) - (v1 - sy) * (u2 - sx)) * inv_area;
                let w1 = ((u2 - sx) * (v0 - sy) - (v2 - sy) * (u0 - sx)) * inv_area;
                let w2 = T::one() - w0 - w1;
                if w0 < T::zero() || w1 < T::zero() || w2 < T::zero() {
                    continue;
                }
                let z = w0 * proj[0].2 + w1 * proj[1].2 + w2 * proj[2].2;
                let zi = py * w + px;
                if z < zbuf[zi] {
                    zbuf[zi] = z;
                }
            }
        }
    }
    zbuf
}
