//! Three-light diffuse shading of the gel impression.
//!
//! Shading happens in a normalized sensor frame: pixel `(x, y)` sits at
//! `((x + 0.5)/res, (y + 0.5)/res)` and the impression height is expressed
//! in units of the sensor width, which keeps surface normals
//! well-conditioned regardless of the physical sensor size. Light positions
//! live in the same frame.

use crate::geometry::Vec3;
use crate::io::Image;
use crate::scalar::Real;
use crate::tactile::sensor::Grid2;

/// One pure-colored point light per RGB channel plus the shared diffuse
/// reflection constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightRig<T> {
    /// Red, green, blue light positions in the normalized sensor frame.
    pub positions: [Vec3<T>; 3],
    /// Diffuse reflection constant.
    pub lambda: T,
}

impl<T: Real> LightRig<T> {
    /// Lights at the vertices of an equilateral triangle of `circumradius`
    /// around the sensor center, `height` above the gel plane. `phase`
    /// rotates the whole triangle.
    pub fn triangular(circumradius: T, height: T, lambda: T, phase: T) -> Self {
        assert!(lambda > T::zero(), "diffuse constant must be positive");
        let third = T::c(2.0 * std::f64::consts::PI / 3.0);
        let half = T::c(0.5);
        let mut positions = [Vec3::zero(); 3];
        for (c, slot) in positions.iter_mut().enumerate() {
            let ang = phase + third * T::of_usize(c);
            *slot = Vec3::new(
                half + circumradius * ang.cos(),
                half + circumradius * ang.sin(),
                height,
            );
        }
        LightRig { positions, lambda }
    }
}

impl<T: Real> Default for LightRig<T> {
    fn default() -> Self {
        LightRig::triangular(
            T::c(0.8),
            T::c(0.6),
            T::c(0.8),
            T::c(std::f64::consts::FRAC_PI_2),
        )
    }
}

/// Diffuse reading `R_c = clamp(lambda * (n . l_c), 0, 1)` per channel, with
/// the surface normal from central differences of the impression (one-sided
/// at the borders). The output image stores sensor row `x` as image row, so
/// `reading.pixel(y, x)` corresponds to `imp.get(x, y)`.
pub fn shade<T: Real>(imp: &Grid2<T>, rig: &LightRig<T>, sensor_width: T) -> Image<T> {
    let (nx, ny) = (imp.nx, imp.ny);
    let mut img = Image::new(ny, nx);
    let inv_w = T::one() / sensor_width;
    let res_x = T::of_usize(nx);
    let res_y = T::of_usize(ny);
    let half = T::c(0.5);
    let h = |x: usize, y: usize| imp.get(x, y) * inv_w;
    for x in 0..nx {
        for y in 0..ny {
            // d(height)/d(normalized coordinate); grid spacing is 1/res.
            let dzdx = match x {
                0 => (h(1, y) - h(0, y)) * res_x,
                _ if x == nx - 1 => (h(nx - 1, y) - h(nx - 2, y)) * res_x,
                _ => (h(x + 1, y) - h(x - 1, y)) * res_x * half,
            };
            let dzdy = match y {
                0 => (h(x, 1) - h(x, 0)) * res_y,
                _ if y == ny - 1 => (h(x, ny - 1) - h(x, ny - 2)) * res_y,
                _ => (h(x, y + 1) - h(x, y - 1)) * res_y * half,
            };
            let n = Vec3::new(-dzdx, -dzdy, T::one()).normalized().unwrap();
            let s = Vec3::new(
                (T::of_usize(x) + half) / res_x,
                (T::of_usize(y) + half) / res_y,
                h(x, y),
            );
            let mut rgb = [T::zero(); 3];
            for c in 0..3 {
                let l = (rig.positions[c] - s).normalized().unwrap();
                rgb[c] = (rig.lambda * n.dot(l)).max(T::zero()).min(T::one());
            }
            img.set_pixel(y, x, rgb);
        }
    }
    img
}
