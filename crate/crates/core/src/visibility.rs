//! Visibility simulation: which landmark labels each camera should see from
//! a pose hypothesis.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{ray_polygon_hit, Pose2D};
use crate::maps::{LabeledFootprintMap, OccupancyGridMap};

/// A fixed camera on the robot: mount extrinsics, horizontal field of view,
/// and the ray fan approximating it.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    /// Camera pose relative to the robot base.
    pub mount_offset: Pose2D,
    /// Horizontal field of view in radians, in (0, 2*pi].
    pub horizontal_fov: f64,
    /// Maximum sight distance in meters.
    pub max_range: f64,
    /// Number of rays spread across the field of view.
    pub ray_count: usize,
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov <= std::f64::consts::TAU) {
            return Err(Error::Validation(format!(
                "camera fov must be in (0, 2*pi], got {}",
                self.horizontal_fov
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Validation(format!(
                "camera max_range must be positive, got {}",
                self.max_range
            )));
        }
        if self.ray_count < 1 {
            return Err(Error::Validation("camera ray_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Ray bearings relative to the camera axis: endpoints of the field of
    /// view included when `ray_count >= 2`, a single on-axis ray otherwise.
    pub fn ray_offsets(&self) -> Vec<f64> {
        ray_offsets(self.horizontal_fov, self.ray_count)
    }
}

pub(crate) fn ray_offsets(fov: f64, ray_count: usize) -> Vec<f64> {
    if ray_count == 1 {
        return vec![0.0];
    }
    let step = fov / (ray_count - 1) as f64;
    (0..ray_count).map(|i| -fov / 2.0 + i as f64 * step).collect()
}

/// The set of cameras mounted on the robot.
///
/// Serializes in the rig-file schema: angles in degrees, ranges suffixed in
/// meters (see `docs/formats.md`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigFileRepr", into = "RigFileRepr")]
pub struct CameraRig {
    pub cameras: Vec<CameraConfig>,
}

#[derive(Serialize, Deserialize, Clone)]
struct RigFileRepr {
    cameras: Vec<CameraFileRepr>,
}

#[derive(Serialize, Deserialize, Clone)]
struct CameraFileRepr {
    mount_offset: [f64; 3],
    horizontal_fov_deg: f64,
    max_range_m: f64,
    ray_count: usize,
}

impl TryFrom<RigFileRepr> for CameraRig {
    type Error = Error;
    fn try_from(repr: RigFileRepr) -> Result<Self> {
        let cameras = repr
            .cameras
            .into_iter()
            .map(|c| {
                Ok(CameraConfig {
                    mount_offset: Pose2D::new(
                        c.mount_offset[0],
                        c.mount_offset[1],
                        c.mount_offset[2],
                    )?,
                    horizontal_fov: c.horizontal_fov_deg.to_radians(),
                    max_range: c.max_range_m,
                    ray_count: c.ray_count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras)
    }
}

impl From<CameraRig> for RigFileRepr {
    fn from(rig: CameraRig) -> RigFileRepr {
        RigFileRepr {
            cameras: rig
                .cameras
                .into_iter()
                .map(|c| CameraFileRepr {
                    mount_offset: [
                        c.mount_offset.x(),
                        c.mount_offset.y(),
                        c.mount_offset.theta(),
                    ],
                    horizontal_fov_deg: c.horizontal_fov.to_degrees(),
                    max_range_m: c.max_range,
                    ray_count: c.ray_count,
                })
                .collect(),
        }
    }
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraConfig>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Validation("camera rig needs at least one camera".into()));
        }
        for cam in &cameras {
            cam.validate()?;
        }
        Ok(CameraRig { cameras })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Three cameras at yaw offsets 0, +120 and -120 degrees, 87-degree
    /// horizontal field of view, 10 rays, 10 m range.
    pub fn default_three_camera() -> CameraRig {
        let fov = 87.0_f64.to_radians();
        let cameras = [0.0, 120.0, -120.0]
            .iter()
            .map(|deg: &f64| CameraConfig {
                mount_offset: Pose2D::new(0.0, 0.0, deg.to_radians()).unwrap(),
                horizontal_fov: fov,
                max_range: 10.0,
                ray_count: 10,
            })
            .collect();
        CameraRig { cameras }
    }
}

/// Whether simulated sight lines are blocked by occupancy walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionMode {
    /// Any ray-footprint intersection within range counts, regardless of
    /// what stands in between.
    None,
    /// Rays are truncated at their occupancy-grid hit before footprint tests.
    GridOccluded,
}

/// Simulated label sets, one per camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityResult {
    pub per_camera: Vec<BTreeSet<String>>,
}

/// Rigid-body composition of the robot pose with a camera mount offset.
pub fn camera_world_pose(robot_pose: &Pose2D, cam: &CameraConfig) -> Pose2D {
    robot_pose.compose(&cam.mount_offset)
}

/// Simulate which labels each camera sees from `pose`.
///
/// Rays are spread across the field of view at `ray_count` evenly spaced
/// bearings. In [`OcclusionMode::None`] a label is visible to a camera when
/// any ray intersects any footprint carrying it within `max_range`. In
/// [`OcclusionMode::GridOccluded`] each ray is first truncated at its
/// occupancy hit distance (plus one cell of rasterization slack) and
/// footprint hits beyond that are discarded; the grid argument is required.
pub fn simulate_visible(
    pose: &Pose2D,
    rig: &CameraRig,
    map: &LabeledFootprintMap,
    occlusion: OcclusionMode,
    grid: Option<&OccupancyGridMap>,
) -> Result<VisibilityResult> {
    if occlusion == OcclusionMode::GridOccluded && grid.is_none() {
        return Err(Error::InvalidArgument(
            "grid-occluded visibility requires an occupancy grid".into(),
        ));
    }
    let mut per_camera = Vec::with_capacity(rig.cameras.len());
    for cam in &rig.cameras {
        let cam_pose = camera_world_pose(pose, cam);
        let mut seen = BTreeSet::new();
        for offset in cam.ray_offsets() {
            let ray = crate::scene::camera_ray(&cam_pose, offset, cam.max_range);
            let cutoff = match (occlusion, grid) {
                (OcclusionMode::GridOccluded, Some(g)) => {
                    match crate::geometry::cast_ray_occupancy(&ray, g) {
                        // One cell of slack keeps the truncating obstacle's own
                        // footprint visible despite rasterization quantization.
                        Ok(d) => d + g.resolution(),
                        // Camera outside the grid: nothing to occlude with.
                        Err(_) => cam.max_range,
                    }
                }
                _ => cam.max_range,
            };
            for lm in map.landmarks() {
                if seen.contains(&lm.label) {
                    continue;
                }
                if let Some(t) = ray_polygon_hit(&ray, &lm.polygon) {
                    if t <= cutoff {
                        seen.insert(lm.label.clone());
                    }
                }
            }
        }
        per_camera.push(seen);
    }
    Ok(VisibilityResult { per_camera })
}
