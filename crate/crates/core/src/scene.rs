//! Compiled scoring context for bulk hypothesis evaluation.
//!
//! Scoring a pose only needs the landmarks whose labels actually appear in
//! the observation: any other label can never enter the intersection count.
//! Compilation prunes the landmark list per camera and assigns each observed
//! label a bit, so the per-pose score is a few ray casts and a popcount.
//! Results are bit-identical to `simulate_visible` + `consistency_score`
//! because both paths build rays with the same helper and intersect with the
//! same routine.

use std::collections::BTreeMap;

use crate::detection::LabelObservation;
use crate::error::{Error, Result};
use crate::geometry::{ray_segment_t, Polygon, Pose2D, Ray, Vec2};
use crate::maps::{LabeledFootprintMap, OccupancyGridMap};
use crate::visibility::{CameraRig, OcclusionMode};

pub(crate) struct CompiledScene<'a> {
    cameras: Vec<CompiledCamera>,
    occlusion: OcclusionMode,
    grid: Option<&'a OccupancyGridMap>,
}

struct CompiledCamera {
    mount: Pose2D,
    ray_offsets: Vec<f64>,
    max_range: f64,
    candidates: Vec<Candidate>,
    full_mask: u64,
}

struct Candidate {
    bit: u64,
    polygon: Polygon,
    aabb_min: Vec2,
    aabb_max: Vec2,
}

/// Shared ray construction so the compiled path and the reference
/// simulation produce bit-identical geometry.
pub(crate) fn camera_ray(cam_pose: &Pose2D, offset: f64, max_range: f64) -> Ray {
    let angle = crate::geometry::wrap_finite(cam_pose.theta() + offset);
    Ray::from_angle(cam_pose.position(), angle, max_range)
        .expect("camera pose and offsets are finite by construction")
}

impl<'a> CompiledScene<'a> {
    /// Compile the observation against the map and rig. Returns `None` when a
    /// camera observes more than 64 distinct in-map labels; callers fall back
    /// to the reference path.
    pub fn compile(
        map: &LabeledFootprintMap,
        rig: &CameraRig,
        obs: &LabelObservation,
        occlusion: OcclusionMode,
        grid: Option<&'a OccupancyGridMap>,
    ) -> Result<Option<Self>> {
        if obs.camera_count() != rig.len() {
            return Err(Error::InvalidArgument(format!(
                "camera count mismatch: observation has {}, rig has {}",
                obs.camera_count(),
                rig.len()
            )));
        }
        if occlusion == OcclusionMode::GridOccluded && grid.is_none() {
            return Err(Error::InvalidArgument(
                "grid-occluded visibility requires an occupancy grid".into(),
            ));
        }

        let mut cameras = Vec::with_capacity(rig.len());
        for (cam, observed) in rig.cameras.iter().zip(obs.per_camera.iter()) {
            if observed.len() > 64 {
                return Ok(None);
            }
            let bit_of: BTreeMap<&str, u64> = observed
                .iter()
                .enumerate()
                .map(|(i, label)| (label.as_str(), 1u64 << i))
                .collect();
            let mut candidates = Vec::new();
            for lm in map.landmarks() {
                if let Some(&bit) = bit_of.get(lm.label.as_str()) {
                    let (aabb_min, aabb_max) = lm.polygon.aabb();
                    candidates.push(Candidate {
                        bit,
                        polygon: lm.polygon.clone(),
                        aabb_min,
                        aabb_max,
                    });
                }
            }
            let full_mask = if observed.is_empty() {
                0
            } else {
                (1u64 << (observed.len() - 1)) * 2 - 1
            };
            cameras.push(CompiledCamera {
                mount: cam.mount_offset,
                ray_offsets: cam.ray_offsets(),
                max_range: cam.max_range,
                candidates,
                full_mask,
            });
        }
        Ok(Some(CompiledScene {
            cameras,
            occlusion,
            grid,
        }))
    }

    /// Consistency score of a single pose.
    pub fn score(&self, pose: &Pose2D) -> u32 {
        let mut score = 0u32;
        for cam in &self.cameras {
            if cam.candidates.is_empty() {
                continue;
            }
            let cam_pose = pose.compose(&cam.mount);
            let cam_pos = cam_pose.position();
            let mut seen = 0u64;

            // Containment: a camera inside a footprint sees it from any ray.
            for cand in &cam.candidates {
                if seen & cand.bit != 0 {
                    continue;
                }
                if cand.polygon.contains(cam_pos) {
                    seen |= cand.bit;
                }
            }

            if seen != cam.full_mask {
                'rays: for &offset in &cam.ray_offsets {
                    let ray = camera_ray(&cam_pose, offset, cam.max_range);
                    let cutoff = match (self.occlusion, self.grid) {
                        (OcclusionMode::GridOccluded, Some(g)) => {
                            match crate::geometry::cast_ray_occupancy(&ray, g) {
                                Ok(d) => d + g.resolution(),
                                Err(_) => cam.max_range,
                            }
                        }
                        _ => cam.max_range,
                    };
                    for cand in &cam.candidates {
                        if seen & cand.bit != 0 {
                            continue;
                        }
                        if !ray_aabb_may_hit(&ray, cand.aabb_min, cand.aabb_max) {
                            continue;
                        }
                        if let Some(t) = fast_ray_polygon_hit(&ray, &cand.polygon) {
                            if t <= cutoff {
                                seen |= cand.bit;
                                if seen == cam.full_mask {
                                    break 'rays;
                                }
                            }
                        }
                    }
                }
            }
            score += seen.count_ones();
        }
        score
    }
}

/// Conservative slab test: can the ray segment reach the box at all?
#[inline]
fn ray_aabb_may_hit(ray: &Ray, min: Vec2, max: Vec2) -> bool {
    let o = ray.origin();
    let d = ray.direction();
    let mut t0 = 0.0f64;
    let mut t1 = ray.max_range();
    for (ov, dv, lo, hi) in [(o.x, d.x, min.x, max.x), (o.y, d.y, min.y, max.y)] {
        if dv.abs() < 1e-15 {
            if ov < lo || ov > hi {
                return false;
            }
        } else {
            let inv = 1.0 / dv;
            let (a, b) = ((lo - ov) * inv, (hi - ov) * inv);
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Boundary-hit test without the containment branch (the caller has already
/// resolved containment). Identical arithmetic to `ray_polygon_hit`.
#[inline]
fn fast_ray_polygon_hit(ray: &Ray, poly: &Polygon) -> Option<f64> {
    let mut best: Option<f64> = None;
    let verts = poly.vertices();
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        if let Some(t) = ray_segment_t(ray.origin(), ray.direction(), a, b) {
            if t <= ray.max_range() && best.map_or(true, |bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Reference scorer used as the fallback (and by tests as the oracle): full
/// visibility simulation plus set intersection.
pub(crate) fn reference_score(
    pose: &Pose2D,
    map: &LabeledFootprintMap,
    rig: &CameraRig,
    obs: &LabelObservation,
    occlusion: OcclusionMode,
    grid: Option<&OccupancyGridMap>,
) -> Result<u32> {
    let sim = crate::visibility::simulate_visible(pose, rig, map, occlusion, grid)?;
    crate::likelihood::consistency_score(obs, &sim)
}
