//! DIGIT-style touch sensor simulation and the minimal vision renderer.
//!
//! A touch reading is produced in four steps: orthographic depth from the
//! gel plane by sphere tracing, gel impression `D' = ReLU(w - D)`, the
//! world-frame contact cloud, and a three-light diffuse RGB rendering of the
//! impression. All of it is deterministic per (mesh, pose, rig).

mod raster;
mod sensor;
mod shade;

pub use raster::{
    render_depth_buffer, render_vision, CameraModel, PixelRect, BACKGROUND, HAND_COLOR,
};
pub use sensor::{
    impression, impression_to_local_cloud, make_sensor_grid, place_sensors_on_surface,
    render_depth, render_depth_bvh, simulate_touch, simulate_touch_bvh, Grid2, SensorConfig,
    SensorPose, TouchSample, DEFAULT_TRACE_EPS, SENSOR_RES,
};
pub use shade::{shade, LightRig};
