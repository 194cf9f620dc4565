use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{MeshBvh, PointCloud, Ray, SurfaceSampler, TriMesh, Vec3};
use crate::io::Image;
use crate::scalar::Real;
use crate::tactile::shade::{shade, LightRig};

/// Default sphere-tracing contact epsilon, world units.
pub const DEFAULT_TRACE_EPS: f64 = 1e-5;
/// Touch sensor resolution (pixels per side).
pub const SENSOR_RES: usize = 100;

/// Row-major 2D scalar grid; `x` indexes rows, `y` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

impl<T: Real> Grid2<T> {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Grid2 { nx, ny, data: vec![T::zero(); nx * ny] }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x * self.ny + y]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[x * self.ny + y] = v;
    }
}

/// Position, orientation and size of one touch sensor plane. The gel plane
/// passes through `center`; `normal` is the sensing direction (out of the
/// gel, toward the object) and the gel slab extends `gel_depth` along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose<T> {
    pub center: Vec3<T>,
    pub normal: Vec3<T>,
    pub tangent_u: Vec3<T>,
    pub tangent_v: Vec3<T>,
    /// Side length of the square sensing area, world units.
    pub width: T,
    /// Gel depth `w`, world units.
    pub gel_depth: T,
}

impl<T: Real> SensorPose<T> {
    pub fn new(
        center: Vec3<T>,
        normal: Vec3<T>,
        tangent_u: Vec3<T>,
        tangent_v: Vec3<T>,
        width: T,
        gel_depth: T,
    ) -> Result<Self> {
        let tol = T::c(1e-9);
        for (name, v) in [("normal", normal), ("tangent_u", tangent_u), ("tangent_v", tangent_v)]
        {
            if (v.norm() - T::one()).abs() > tol {
                return Err(Error::invalid(format!("{name} is not unit length")));
            }
        }
        for (pair, d) in [
            ("normal/tangent_u", normal.dot(tangent_u)),
            ("normal/tangent_v", normal.dot(tangent_v)),
            ("tangent_u/tangent_v", tangent_u.dot(tangent_v)),
        ] {
            if d.abs() > tol {
                return Err(Error::invalid(format!("{pair} not orthogonal (dot {d})")));
            }
        }
        if !(width > T::zero()) {
            return Err(Error::invalid("sensor width must be positive"));
        }
        if !(gel_depth > T::zero()) {
            return Err(Error::invalid("gel depth must be positive"));
        }
        Ok(SensorPose { center, normal, tangent_u, tangent_v, width, gel_depth })
    }

    /// Builds an orthonormal frame from a sensing direction, with the
    /// in-plane orientation rotated by `roll` radians.
    pub fn from_direction(
        center: Vec3<T>,
        normal: Vec3<T>,
        roll: T,
        width: T,
        gel_depth: T,
    ) -> Result<Self> {
        let n = normal.normalized().ok_or_else(|| Error::invalid("zero sensing direction"))?;
        let base_u = n.any_perpendicular();
        let base_v = n.cross(base_u);
        let (c, s) = (roll.cos(), roll.sin());
        let tangent_u = base_u * c + base_v * s;
        let tangent_v = n.cross(tangent_u);
        SensorPose::new(center, n, tangent_u, tangent_v, width, gel_depth)
    }

    /// World position of sensor pixel `(x, y)` on the gel plane.
    pub fn grid_point(&self, x: usize, y: usize, res: usize) -> Vec3<T> {
        let r = T::of_usize(res);
        let half = T::c(0.5);
        let fu = (T::of_usize(x) + half) / r - half;
        let fv = (T::of_usize(y) + half) / r - half;
        self.center + self.tangent_u * (fu * self.width) + self.tangent_v * (fv * self.width)
    }
}

/// `res x res` grid of pixel-center points on the gel plane, row-major in
/// `(x, y)`.
pub fn make_sensor_grid<T: Real>(pose: &SensorPose<T>, res: usize) -> Result<PointCloud<T>> {
    if res < 2 {
        return Err(Error::invalid("sensor grid resolution must be >= 2"));
    }
    let mut points = Vec::with_capacity(res * res);
    for x in 0..res {
        for y in 0..res {
            points.push(pose.grid_point(x, y, res));
        }
    }
    Ok(PointCloud::new(points))
}

/// Orthographic depth from the gel plane along `+normal` by sphere tracing,
/// clamped to `max_depth` (defaults to `2 * gel_depth`) on a miss.
pub fn render_depth<T: Real>(
    mesh: &TriMesh<T>,
    pose: &SensorPose<T>,
    res: usize,
    eps: T,
) -> Result<Grid2<T>> {
    let bvh = MeshBvh::build(mesh)?;
    render_depth_bvh(&bvh, pose, res, eps)
}

pub fn render_depth_bvh<T: Real>(
    bvh: &MeshBvh<T>,
    pose: &SensorPose<T>,
    res: usize,
    eps: T,
) -> Result<Grid2<T>> {
    if res < 2 {
        return Err(Error::invalid("sensor resolution must be >= 2"));
    }
    let max_depth = pose.gel_depth * T::c(2.0);
    let mut grid = Grid2::zeros(res, res);
    let rows: Vec<Vec<T>> = (0..res)
        .into_par_iter()
        .map(|x| {
            let mut row = Vec::with_capacity(res);
            for y in 0..res {
                let origin = pose.grid_point(x, y, res);
                let ray = Ray { origin, direction: pose.normal };
                let d = crate::geometry::sphere_trace_bvh(&ray, bvh, max_depth, eps)
                    .expect("positive eps and max_t")
                    .unwrap_or(max_depth);
                row.push(d);
            }
            row
        })
        .collect();
    for (x, row) in rows.into_iter().enumerate() {
        for (y, d) in row.into_iter().enumerate() {
            grid.set(x, y, d);
        }
    }
    Ok(grid)
}

/// Impression depth `D' = max(0, w - D)` elementwise.
pub fn impression<T: Real>(depth: &Grid2<T>, gel_depth: T) -> Result<Grid2<T>> {
    if !(gel_depth > T::zero()) {
        return Err(Error::invalid("gel depth must be positive"));
    }
    Ok(Grid2 {
        nx: depth.nx,
        ny: depth.ny,
        data: depth.data.iter().map(|&d| (gel_depth - d).max(T::zero())).collect(),
    })
}

/// World-frame contact points: every pixel with `D' > 0` maps to the traced
/// surface point `grid + (w - D') * normal`. Empty when the touch failed.
pub fn impression_to_local_cloud<T: Real>(
    imp: &Grid2<T>,
    pose: &SensorPose<T>,
) -> PointCloud<T> {
    let mut points = Vec::new();
    for x in 0..imp.nx {
        for y in 0..imp.ny {
            let dp = imp.get(x, y);
            if dp > T::zero() {
                let g = pose.grid_point(x, y, imp.nx);
                points.push(g + pose.normal * (pose.gel_depth - dp));
            }
        }
    }
    PointCloud::new(points)
}

/// One simulated reading: depth, impression, shaded RGB, success mask and
/// the ground-truth local contact cloud.
#[derive(Debug, Clone)]
pub struct TouchSample<T> {
    pub pose: SensorPose<T>,
    pub depth: Grid2<T>,
    pub impression: Grid2<T>,
    pub reading: Image<T>,
    pub success: bool,
    pub local_cloud: PointCloud<T>,
}

/// Runs the full sensor model for one pose.
pub fn simulate_touch<T: Real>(
    mesh: &TriMesh<T>,
    pose: &SensorPose<T>,
    rig: &LightRig<T>,
) -> Result<TouchSample<T>> {
    let bvh = MeshBvh::build(mesh)?;
    simulate_touch_bvh(&bvh, pose, rig)
}

pub fn simulate_touch_bvh<T: Real>(
    bvh: &MeshBvh<T>,
    pose: &SensorPose<T>,
    rig: &LightRig<T>,
) -> Result<TouchSample<T>> {
    let depth = render_depth_bvh(bvh, pose, SENSOR_RES, T::c(DEFAULT_TRACE_EPS))?;
    let imp = impression(&depth, pose.gel_depth)?;
    let reading = shade(&imp, rig, pose.width);
    let local_cloud = impression_to_local_cloud(&imp, pose);
    let success = imp.data.iter().any(|&v| v > T::zero());
    debug_assert_eq!(success, !local_cloud.is_empty());
    Ok(TouchSample { pose: *pose, depth, impression: imp, reading, success, local_cloud })
}

/// Sensor placement options for [`place_sensors_on_surface`].
#[derive(Debug, Clone, Copy)]
pub struct SensorConfig<T> {
    pub width: T,
    pub gel_depth: T,
    /// Fraction of sensors deliberately placed out of reach so the touch
    /// fails.
    pub failure_fraction: f64,
    /// When set, sensors after the first are kept within this distance of
    /// the first contact point, mimicking fingertips of one grasp.
    pub cluster_radius: Option<T>,
}

impl<T: Real> Default for SensorConfig<T> {
    fn default() -> Self {
        SensorConfig {
            width: T::c(0.03),
            gel_depth: T::c(0.004),
            failure_fraction: 0.0,
            cluster_radius: None,
        }
    }
}

/// Samples `n_sensors` poses tangent to the surface: the sensing direction
/// points into the geometry, the gel plane sits `gel_depth / 2` outside the
/// surface and the in-plane roll is random. Deterministic per seed.
pub fn place_sensors_on_surface<T: Real>(
    mesh: &TriMesh<T>,
    n_sensors: usize,
    seed: u64,
    cfg: &SensorConfig<T>,
) -> Result<Vec<SensorPose<T>>> {
    if n_sensors == 0 {
        return Err(Error::invalid("sensor count must be >= 1"));
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let centroid = mesh.centroid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(n_sensors);
    let mut anchor: Option<Vec3<T>> = None;
    for _ in 0..n_sensors {
        let (mut fi, mut p) = sampler.sample(&mut rng);
        if let (Some(a), Some(r)) = (anchor, cfg.cluster_radius) {
            // Rejection-sample toward the anchor; fall back to the nearest
            // candidate if the radius is never met.
            let mut best = (p.dist(a), fi, p);
            for _ in 0..200 {
                if best.0 <= r {
                    break;
                }
                let (cfi, cp) = sampler.sample(&mut rng);
                let d = cp.dist(a);
                if d < best.0 {
                    best = (d, cfi, cp);
                }
            }
            fi = best.1;
            p = best.2;
        }
        if anchor.is_none() {
            anchor = Some(p);
        }
        let mut outward = mesh
            .face_normal(fi)
            .ok_or_else(|| Error::invalid(format!("degenerate face {fi}")))?;
        if outward.dot(p - centroid) < T::zero() {
            outward = -outward;
        }
        let fail = rng.gen::<f64>() < cfg.failure_fraction;
        let offset = if fail { T::c(3.0) * cfg.gel_depth } else { cfg.gel_depth * T::c(0.5) };
        let center = p + outward * offset;
        let roll = T::c(rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
        poses.push(SensorPose::from_direction(
            center,
            -outward,
            roll,
            cfg.width,
            cfg.gel_depth,
        )?);
    }
    Ok(poses)
}
