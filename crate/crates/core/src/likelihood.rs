//! Hypothesis scoring: the label-consistency score and its sigmoid
//! log-likelihood, the likelihood-field scan model, and log-space fusion.

use serde::{Deserialize, Serialize};

use crate::detection::LabelObservation;
use crate::error::{Error, Result};
use crate::maps::DistanceField;
use crate::geometry::Pose2D;
use crate::visibility::VisibilityResult;

/// Parameters of the vision log-likelihood transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisionLikelihoodParams {
    /// Sigmoid scale applied to the mean-centered consistency score.
    pub alpha: f64,
}

impl Default for VisionLikelihoodParams {
    fn default() -> Self {
        VisionLikelihoodParams { alpha: 0.5 }
    }
}

impl VisionLikelihoodParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Validation(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One scan endpoint in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanEndpoint {
    /// Beam bearing in radians, sensor frame.
    pub bearing: f64,
    /// Measured range in meters, in (0, max_valid_range].
    pub range: f64,
}

/// A 2D scan: valid endpoints only (invalid returns are excluded upstream).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanObservation {
    pub endpoints: Vec<ScanEndpoint>,
    pub max_valid_range: f64,
}

impl ScanObservation {
    pub fn new(endpoints: Vec<ScanEndpoint>, max_valid_range: f64) -> Result<Self> {
        if !(max_valid_range > 0.0) {
            return Err(Error::Validation(format!(
                "max_valid_range must be positive, got {max_valid_range}"
            )));
        }
        for (i, e) in endpoints.iter().enumerate() {
            if !(e.range > 0.0 && e.range <= max_valid_range) || !e.bearing.is_finite() {
                return Err(Error::Validation(format!(
                    "endpoint {i} out of range: bearing {}, range {}",
                    e.bearing, e.range
                )));
            }
        }
        Ok(ScanObservation {
            endpoints,
            max_valid_range,
        })
    }

    /// Uniform-stride subsample down to at most `max_endpoints`.
    pub fn subsampled(&self, max_endpoints: usize) -> ScanObservation {
        if max_endpoints == 0 || self.endpoints.len() <= max_endpoints {
            return self.clone();
        }
        let stride = self.endpoints.len().div_ceil(max_endpoints);
        ScanObservation {
            endpoints: self
                .endpoints
                .iter()
                .step_by(stride)
                .copied()
                .collect(),
            max_valid_range: self.max_valid_range,
        }
    }

    /// Precompute sensor-frame endpoint coordinates for bulk evaluation.
    pub fn prepare(&self) -> PreparedScan {
        PreparedScan {
            points: self
                .endpoints
                .iter()
                .map(|e| {
                    let (sb, cb) = e.bearing.sin_cos();
                    crate::geometry::Vec2::new(e.range * cb, e.range * sb)
                })
                .collect(),
            max_valid_range: self.max_valid_range,
        }
    }
}

/// Scan endpoints as sensor-frame Cartesian points, the form consumed by the
/// per-pose likelihood loop.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    points: Vec<crate::geometry::Vec2>,
    max_valid_range: f64,
}

/// Parameters of the likelihood-field scan model and the fusion temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanLikelihoodParams {
    /// Standard deviation of the Gaussian on endpoint-to-obstacle distance.
    pub sigma_hit: f64,
    /// Weight of the uniform random-measurement floor, in [0, 1).
    pub z_rand_weight: f64,
    /// Fusion temperature dividing the scan log-likelihood.
    pub lambda: f64,
    /// Endpoint budget per observation (uniform stride subsampling).
    pub max_endpoints: usize,
}

impl Default for ScanLikelihoodParams {
    fn default() -> Self {
        ScanLikelihoodParams {
            sigma_hit: 0.2,
            z_rand_weight: 0.05,
            lambda: 1500.0,
            max_endpoints: 180,
        }
    }
}

impl ScanLikelihoodParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_hit > 0.0) {
            return Err(Error::Validation(format!(
                "sigma_hit must be positive, got {}",
                self.sigma_hit
            )));
        }
        if !(0.0..1.0).contains(&self.z_rand_weight) {
            return Err(Error::Validation(format!(
                "z_rand_weight must be in [0, 1), got {}",
                self.z_rand_weight
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Validation(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Consistency score: total overlap between detected and simulated label
/// sets across cameras. Off-map detections never contribute.
pub fn consistency_score(obs: &LabelObservation, sim: &VisibilityResult) -> Result<u32> {
    if obs.per_camera.len() != sim.per_camera.len() {
        return Err(Error::InvalidArgument(format!(
            "camera count mismatch: observation has {}, simulation has {}",
            obs.per_camera.len(),
            sim.per_camera.len()
        )));
    }
    let mut score = 0u32;
    for (detected, simulated) in obs.per_camera.iter().zip(sim.per_camera.iter()) {
        score += detected.intersection(simulated).count() as u32;
    }
    Ok(score)
}

/// Numerically stable `ln(sigmoid(t))`.
#[inline]
pub(crate) fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// Transform consistency scores into log-likelihoods:
/// `ln sigmoid(alpha * (score - mean))`, with the mean taken over the whole
/// hypothesis set. Two passes by construction: callers must have all scores
/// before any likelihood is defined.
pub fn vision_log_likelihoods(scores: &[u32], alpha: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "vision_log_likelihoods: empty score set".into(),
        ));
    }
    VisionLikelihoodParams { alpha }.validate()?;
    let mu = score_mean(scores);
    Ok(scores
        .iter()
        .map(|&s| ln_sigmoid(alpha * (s as f64 - mu)))
        .collect())
}

/// Mean of integer scores via exact integer summation, so the result does
/// not depend on evaluation order or worker count.
pub(crate) fn score_mean(scores: &[u32]) -> f64 {
    let total: u64 = scores.iter().map(|&s| s as u64).sum();
    total as f64 / scores.len() as f64
}

/// Scan log-likelihood of one pose, with a flag for poses outside the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanLogLik {
    pub value: f64,
    /// False when the pose fell outside the grid; `value` is then `-inf`.
    pub pose_in_map: bool,
}

/// Likelihood-field scan model: each endpoint is transformed into the world
/// frame by `pose` and scored by its distance to the nearest obstacle,
/// `ln[(1 - z_rand) * exp(-d^2 / (2 sigma^2)) + z_rand / max_valid_range]`.
/// Endpoints outside the grid contribute the floor term only. A pose outside
/// the grid yields the minus-infinity sentinel, flagged.
pub fn scan_log_likelihood(
    pose: &Pose2D,
    scan: &ScanObservation,
    field: &DistanceField,
    params: &ScanLikelihoodParams,
) -> ScanLogLik {
    scan_log_likelihood_prepared(pose, &scan.prepare(), field, params)
}

/// [`scan_log_likelihood`] over pre-transformed endpoints; the form used in
/// the bulk evaluation loop where the scan is fixed across poses.
pub fn scan_log_likelihood_prepared(
    pose: &Pose2D,
    scan: &PreparedScan,
    field: &DistanceField,
    params: &ScanLikelihoodParams,
) -> ScanLogLik {
    if field.sample(pose.position()).is_none() {
        return ScanLogLik {
            value: f64::NEG_INFINITY,
            pose_in_map: false,
        };
    }
    let (sin_t, cos_t) = pose.theta().sin_cos();
    let inv_two_sigma_sq = 1.0 / (2.0 * params.sigma_hit * params.sigma_hit);
    let floor = params.z_rand_weight / scan.max_valid_range;
    let hit_weight = 1.0 - params.z_rand_weight;

    let mut total = 0.0f64;
    for p in &scan.points {
        let ex = pose.x() + cos_t * p.x - sin_t * p.y;
        let ey = pose.y() + sin_t * p.x + cos_t * p.y;
        let term = match field.sample(crate::geometry::Vec2::new(ex, ey)) {
            Some(d) => (hit_weight * (-d * d * inv_two_sigma_sq).exp() + floor).ln(),
            None => floor.ln(),
        };
        total += term;
    }
    ScanLogLik {
        value: total,
        pose_in_map: true,
    }
}

/// Log-space fusion: the scan log-likelihood is tempered by `lambda` and
/// added to the vision log-likelihood.
pub fn fused_log_likelihood(vision_ll: f64, scan_ll: f64, lambda: f64) -> f64 {
    vision_ll + scan_ll / lambda
}
