//! Uniform hypothesis sampling over free space, two-pass likelihood
//! weighting, and tie-averaged maximum-likelihood pose extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::LabelObservation;
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Vec2};
use crate::likelihood::{
    fused_log_likelihood, scan_log_likelihood_prepared, vision_log_likelihoods,
    ScanLikelihoodParams, ScanObservation, VisionLikelihoodParams,
};
use crate::maps::{DistanceField, LabeledFootprintMap, OccupancyGridMap};
use crate::scene::CompiledScene;
use crate::visibility::{CameraRig, OcclusionMode};

/// Which log-likelihood column drives an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Scan,
    Fused,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Vision => write!(f, "vision"),
            Modality::Scan => write!(f, "scan"),
            Modality::Fused => write!(f, "fused"),
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "vision" => Ok(Modality::Vision),
            "scan" => Ok(Modality::Scan),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::InvalidArgument(format!("unknown modality {other}"))),
        }
    }
}

/// Poses with per-modality scores, the sampled approximation of the
/// posterior. Score columns are filled by [`evaluate`].
#[derive(Debug, Clone)]
pub struct HypothesisSet {
    pub poses: Vec<Pose2D>,
    pub vision_score: Option<Vec<u32>>,
    pub vision_ll: Option<Vec<f64>>,
    pub scan_ll: Option<Vec<f64>>,
    pub fused_ll: Option<Vec<f64>>,
    pub seed: u64,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Append an extra hypothesis. Clears any previously computed scores so
    /// column lengths stay consistent.
    pub fn push_pose(&mut self, pose: Pose2D) {
        self.poses.push(pose);
        self.vision_score = None;
        self.vision_ll = None;
        self.scan_ll = None;
        self.fused_ll = None;
    }

    fn column(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Vision => self.vision_ll.as_deref(),
            Modality::Scan => self.scan_ll.as_deref(),
            Modality::Fused => self.fused_ll.as_deref(),
        }
    }
}

/// Draw `count` hypotheses uniformly over the grid's free space: a free cell
/// chosen uniformly, position jittered uniformly within the cell, heading
/// uniform over [-pi, pi). Deterministic given `seed`.
pub fn sample_uniform(grid: &OccupancyGridMap, count: usize, seed: u64) -> Result<HypothesisSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("hypothesis count must be >= 1".into()));
    }
    let free = grid.free_cells();
    if free.is_empty() {
        return Err(Error::UnsampleableMap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = grid.resolution();
    let mut poses = Vec::with_capacity(count);
    for _ in 0..count {
        let cell = free[rng.random_range(0..free.len())];
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let corner = grid.cell_corner(cell);
        let jitter = Vec2::new(u * res, v * res).rotate(grid.origin().theta());
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        poses.push(Pose2D::new_unchecked(
            corner.x + jitter.x,
            corner.y + jitter.y,
            theta,
        ));
    }
    Ok(HypothesisSet {
        poses,
        vision_score: None,
        vision_ll: None,
        scan_ll: None,
        fused_ll: None,
        seed,
    })
}

/// Everything the evaluator needs besides the observations themselves.
pub struct EvalInputs<'a> {
    pub map: &'a LabeledFootprintMap,
    pub rig: &'a CameraRig,
    pub occlusion: OcclusionMode,
    pub grid: Option<&'a OccupancyGridMap>,
    pub distance_field: Option<&'a DistanceField>,
    pub vision_params: VisionLikelihoodParams,
    pub scan_params: ScanLikelihoodParams,
}

/// Fill the score columns of `hyps`.
///
/// Vision is a two-pass pipeline: pass 1 computes every consistency score,
/// pass 2 centers them on their exact integer mean and applies the sigmoid
/// transform. The scan column uses the likelihood-field model over the
/// distance field, and the fused column combines both in log space. Poses
/// partition across workers with pure per-index computation, so results do
/// not depend on the worker count.
pub fn evaluate(
    hyps: &mut HypothesisSet,
    obs: Option<&LabelObservation>,
    scan: Option<&ScanObservation>,
    inputs: &EvalInputs<'_>,
) -> Result<()> {
    if obs.is_none() && scan.is_none() {
        return Err(Error::InvalidArgument(
            "evaluate needs a label observation, a scan, or both".into(),
        ));
    }
    if hyps.is_empty() {
        return Err(Error::InvalidArgument("empty hypothesis set".into()));
    }
    inputs.vision_params.validate()?;
    inputs.scan_params.validate()?;

    if let Some(obs) = obs {
        let scores = match CompiledScene::compile(
            inputs.map,
            inputs.rig,
            obs,
            inputs.occlusion,
            inputs.grid,
        )? {
            Some(scene) => hyps
                .poses
                .par_iter()
                .map(|pose| scene.score(pose))
                .collect::<Vec<u32>>(),
            // More than 64 distinct observed labels per camera: reference path.
            None => hyps
                .poses
                .par_iter()
                .map(|pose| {
                    crate::scene::reference_score(
                        pose,
                        inputs.map,
                        inputs.rig,
                        obs,
                        inputs.occlusion,
                        inputs.grid,
                    )
                    .expect("inputs validated before the parallel pass")
                })
                .collect::<Vec<u32>>(),
        };
        let lls = vision_log_likelihoods(&scores, inputs.vision_params.alpha)?;
        hyps.vision_score = Some(scores);
        hyps.vision_ll = Some(lls);
    }

    if let Some(scan) = scan {
        let field = inputs.distance_field.ok_or_else(|| {
            Error::InvalidArgument("scan evaluation requires a distance field".into())
        })?;
        let prepared = scan.subsampled(inputs.scan_params.max_endpoints).prepare();
        let lls: Vec<f64> = hyps
            .poses
            .par_iter()
            .map(|pose| {
                scan_log_likelihood_prepared(pose, &prepared, field, &inputs.scan_params).value
            })
            .collect();
        hyps.scan_ll = Some(lls);
    }

    if let (Some(v), Some(s)) = (&hyps.vision_ll, &hyps.scan_ll) {
        let lambda = inputs.scan_params.lambda;
        hyps.fused_ll = Some(
            v.iter()
                .zip(s.iter())
                .map(|(&v, &s)| fused_log_likelihood(v, s, lambda))
                .collect(),
        );
    }
    Ok(())
}

/// Log-likelihood gap within which hypotheses count as tied for the maximum.
pub const TIE_EPSILON: f64 = 1e-9;

/// The tie-averaged maximum-likelihood estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub pose: Pose2D,
    pub tie_count: usize,
    pub max_ll: f64,
    pub modality: Modality,
    /// Set when the tied headings cancelled out and theta fell back to the
    /// first tied pose.
    pub degenerate_theta: bool,
}

/// Extract the estimate for `modality`: all poses within [`TIE_EPSILON`] of
/// the maximum log-likelihood are averaged component-wise, with a circular
/// mean for heading.
pub fn map_estimate(hyps: &HypothesisSet, modality: Modality) -> Result<EstimateResult> {
    let lls = hyps.column(modality).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "map_estimate: {modality} log-likelihoods not computed"
        ))
    })?;
    if lls.is_empty() {
        return Err(Error::InvalidArgument("empty hypothesis set".into()));
    }

    let max_ll = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    let mut sum_cos = 0.0f64;
    let mut sum_sin = 0.0f64;
    let mut tie_count = 0usize;
    let mut first_tied: Option<&Pose2D> = None;
    for (pose, &ll) in hyps.poses.iter().zip(lls.iter()) {
        if ll >= max_ll - TIE_EPSILON {
            sum_x += pose.x();
            sum_y += pose.y();
            sum_cos += pose.theta().cos();
            sum_sin += pose.theta().sin();
            tie_count += 1;
            if first_tied.is_none() {
                first_tied = Some(pose);
            }
        }
    }
    let first_tied = first_tied.expect("at least the argmax pose ties with itself");

    let n = tie_count as f64;
    let (theta, degenerate) = if sum_sin.hypot(sum_cos) < 1e-6 {
        (first_tied.theta(), true)
    } else {
        (sum_sin.atan2(sum_cos), false)
    };
    Ok(EstimateResult {
        pose: Pose2D::new_unchecked(sum_x / n, sum_y / n, theta),
        tie_count,
        max_ll,
        modality,
        degenerate_theta: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{oracle_detect, LabelObservation, NoiseModel, ObservationSource};
    use crate::geometry::{GridIndex, Polygon};
    use crate::maps::{build_distance_field, CellState, Landmark};
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    fn free_grid(size: usize, res: f64) -> OccupancyGridMap {
        OccupancyGridMap::filled(
            res,
            Pose2D::new(0.0, 0.0, 0.0).unwrap(),
            size,
            size,
            CellState::Free,
        )
        .unwrap()
    }

    fn small_world() -> (LabeledFootprintMap, OccupancyGridMap) {
        let mut grid = free_grid(100, 0.1);
        let mk = |label: &str, x0: f64, y0: f64, x1: f64, y1: f64| {
            Landmark::new(
                label,
                Polygon::rect(Vec2::new(x0, y0), Vec2::new(x1, y1)).unwrap(),
            )
            .unwrap()
        };
        let landmarks = vec![
            mk("door", 1.0, 1.0, 2.0, 2.0),
            mk("table", 7.0, 2.0, 8.5, 3.0),
            mk("shelf", 3.0, 7.0, 4.0, 9.0),
        ];
        for lm in &landmarks {
            let (min, max) = lm.polygon.aabb();
            for row in 0..100 {
                for col in 0..100 {
                    let c = grid.cell_center(GridIndex::new(row, col));
                    if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                        grid.set_state(GridIndex::new(row, col), CellState::Occupied);
                    }
                }
            }
        }
        (
            LabeledFootprintMap::new("map", landmarks).unwrap(),
            grid,
        )
    }

    #[test]
    fn sampling_respects_single_free_cell() {
        let mut grid = free_grid(3, 0.5);
        for row in 0..3 {
            for col in 0..3 {
                if (row, col) != (1, 1) {
                    grid.set_state(GridIndex::new(row, col), CellState::Occupied);
                }
            }
        }
        let hyps = sample_uniform(&grid, 100, 7).unwrap();
        for pose in &hyps.poses {
            assert!(pose.x() >= 0.5 && pose.x() <= 1.0, "x = {}", pose.x());
            assert!(pose.y() >= 0.5 && pose.y() <= 1.0, "y = {}", pose.y());
            assert!((-PI..PI).contains(&pose.theta()));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let grid = free_grid(10, 0.2);
        let a = sample_uniform(&grid, 500, 42).unwrap();
        let b = sample_uniform(&grid, 500, 42).unwrap();
        assert_eq!(a.poses, b.poses);
        let c = sample_uniform(&grid, 500, 43).unwrap();
        assert_ne!(a.poses, c.poses);
    }

    #[test]
    fn sampling_errors_without_free_cells() {
        let grid = OccupancyGridMap::filled(
            0.1,
            Pose2D::new(0.0, 0.0, 0.0).unwrap(),
            4,
            4,
            CellState::Occupied,
        )
        .unwrap();
        assert!(matches!(
            sample_uniform(&grid, 10, 0),
            Err(Error::UnsampleableMap)
        ));
    }

    #[test]
    fn sampling_covers_free_cells_uniformly() {
        // Half-free map, 1e5 samples: per-cell counts within 4 standard
        // deviations of the multinomial expectation.
        let mut grid = free_grid(10, 0.5);
        for row in 0..10 {
            for col in 0..5 {
                grid.set_state(GridIndex::new(row, col), CellState::Occupied);
            }
        }
        let free = grid.free_cells();
        assert_eq!(free.len(), 50);
        let n = 100_000usize;
        let hyps = sample_uniform(&grid, n, 3).unwrap();
        let mut counts = std::collections::HashMap::new();
        for pose in &hyps.poses {
            let idx = grid.world_to_cell(pose.position()).unwrap();
            *counts.entry((idx.row, idx.col)).or_insert(0usize) += 1;
        }
        let p = 1.0 / free.len() as f64;
        let expected = n as f64 * p;
        let std_dev = (n as f64 * p * (1.0 - p)).sqrt();
        for cell in &free {
            let count = *counts.get(&(cell.row, cell.col)).unwrap_or(&0) as f64;
            assert!(
                (count - expected).abs() < 4.0 * std_dev,
                "cell {cell:?}: {count} vs expected {expected} (sd {std_dev})"
            );
        }
    }

    #[test]
    fn empty_observation_gives_uniform_half_likelihood() {
        let (map, grid) = small_world();
        let rig = CameraRig::default_three_camera();
        let mut hyps = sample_uniform(&grid, 200, 1).unwrap();
        let obs = LabelObservation::from_sets(
            vec![BTreeSet::new(); 3],
            ObservationSource::Oracle,
        );
        let inputs = EvalInputs {
            map: &map,
            rig: &rig,
            occlusion: OcclusionMode::None,
            grid: Some(&grid),
            distance_field: None,
            vision_params: VisionLikelihoodParams::default(),
            scan_params: ScanLikelihoodParams::default(),
        };
        evaluate(&mut hyps, Some(&obs), None, &inputs).unwrap();
        for &s in hyps.vision_score.as_ref().unwrap() {
            assert_eq!(s, 0);
        }
        for &ll in hyps.vision_ll.as_ref().unwrap() {
            assert_relative_eq!(ll, 0.5f64.ln(), epsilon = 1e-12);
        }
        let est = map_estimate(&hyps, Modality::Vision).unwrap();
        assert_eq!(est.tie_count, 200);
    }

    #[test]
    fn oracle_pose_is_in_vision_tie_set() {
        let (map, grid) = small_world();
        let rig = CameraRig::default_three_camera();
        let true_pose = Pose2D::new(4.0, 4.0, 0.3).unwrap();
        let obs = oracle_detect(&true_pose, &rig, &map, &NoiseModel::noiseless(0)).unwrap();
        let mut hyps = sample_uniform(&grid, 3000, 5).unwrap();
        hyps.push_pose(true_pose);
        let inputs = EvalInputs {
            map: &map,
            rig: &rig,
            occlusion: OcclusionMode::None,
            grid: Some(&grid),
            distance_field: None,
            vision_params: VisionLikelihoodParams::default(),
            scan_params: ScanLikelihoodParams::default(),
        };
        evaluate(&mut hyps, Some(&obs), None, &inputs).unwrap();
        let lls = hyps.vision_ll.as_ref().unwrap();
        let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let true_ll = lls[hyps.len() - 1];
        assert!(
            true_ll >= max - TIE_EPSILON,
            "true pose ll {true_ll} below max {max}"
        );
    }

    /// Independently coded single-pass reference: visibility simulation and
    /// a from-scratch sigmoid/fusion chain, no shared scoring code.
    #[test]
    fn fused_ranking_matches_reference_implementation() {
        let (map, grid) = small_world();
        let rig = CameraRig::default_three_camera();
        let field = build_distance_field(&grid);
        let true_pose = Pose2D::new(5.0, 5.0, -0.8).unwrap();
        let obs = oracle_detect(&true_pose, &rig, &map, &NoiseModel::noiseless(0)).unwrap();
        let scan = crate::likelihood::ScanObservation::new(
            (0..90)
                .map(|i| crate::likelihood::ScanEndpoint {
                    bearing: i as f64 * (2.0 * PI / 90.0),
                    range: 2.0 + (i % 7) as f64 * 0.3,
                })
                .collect(),
            12.0,
        )
        .unwrap();

        let mut hyps = sample_uniform(&grid, 64, 11).unwrap();
        let inputs = EvalInputs {
            map: &map,
            rig: &rig,
            occlusion: OcclusionMode::None,
            grid: Some(&grid),
            distance_field: Some(&field),
            vision_params: VisionLikelihoodParams::default(),
            scan_params: ScanLikelihoodParams::default(),
        };
        evaluate(&mut hyps, Some(&obs), Some(&scan), &inputs).unwrap();

        // Reference: per-pose score via full simulation, mean by hand,
        // straight sigmoid, straight likelihood-field sum.
        let mut ref_scores = Vec::new();
        for pose in &hyps.poses {
            let sim =
                crate::visibility::simulate_visible(pose, &rig, &map, OcclusionMode::None, None)
                    .unwrap();
            let mut s = 0u32;
            for (a, b) in obs.per_camera.iter().zip(sim.per_camera.iter()) {
                s += a.intersection(b).count() as u32;
            }
            ref_scores.push(s);
        }
        let mu = ref_scores.iter().map(|&s| s as f64).sum::<f64>() / ref_scores.len() as f64;
        let mut ref_fused = Vec::new();
        for (pose, &s) in hyps.poses.iter().zip(ref_scores.iter()) {
            let sigmoid = 1.0 / (1.0 + (-(0.5 * (s as f64 - mu))).exp());
            let v = sigmoid.ln();
            let mut scan_ll = 0.0;
            for e in &scan.endpoints {
                let world = Vec2::new(
                    pose.x() + e.range * (pose.theta() + e.bearing).cos(),
                    pose.y() + e.range * (pose.theta() + e.bearing).sin(),
                );
                let term = match field.sample(world) {
                    Some(d) => (0.95 * (-d * d / (2.0 * 0.04)).exp() + 0.05 / 12.0).ln(),
                    None => (0.05f64 / 12.0).ln(),
                };
                scan_ll += term;
            }
            ref_fused.push(v + scan_ll / 1500.0);
        }

        // Rankings must agree.
        let fused = hyps.fused_ll.as_ref().unwrap();
        let mut got: Vec<usize> = (0..64).collect();
        got.sort_by(|&a, &b| fused[a].partial_cmp(&fused[b]).unwrap());
        let mut want: Vec<usize> = (0..64).collect();
        want.sort_by(|&a, &b| ref_fused[a].partial_cmp(&ref_fused[b]).unwrap());
        assert_eq!(got, want);
        assert_eq!(hyps.vision_score.as_deref().unwrap(), ref_scores.as_slice());
    }

    #[test]
    fn map_estimate_unique_maximum() {
        let hyps = HypothesisSet {
            poses: vec![
                Pose2D::new(0.0, 0.0, 0.0).unwrap(),
                Pose2D::new(5.0, 5.0, 1.0).unwrap(),
            ],
            vision_score: None,
            vision_ll: Some(vec![-3.0, -1.0]),
            scan_ll: None,
            fused_ll: None,
            seed: 0,
        };
        let est = map_estimate(&hyps, Modality::Vision).unwrap();
        assert_eq!(est.tie_count, 1);
        assert_relative_eq!(est.pose.x(), 5.0);
        assert_relative_eq!(est.max_ll, -1.0);
    }

    #[test]
    fn map_estimate_averages_ties() {
        let hyps = HypothesisSet {
            poses: vec![
                Pose2D::new(0.0, 0.0, 0.0).unwrap(),
                Pose2D::new(2.0, 0.0, 0.0).unwrap(),
            ],
            vision_score: None,
            vision_ll: Some(vec![-1.0, -1.0]),
            scan_ll: None,
            fused_ll: None,
            seed: 0,
        };
        let est = map_estimate(&hyps, Modality::Vision).unwrap();
        assert_eq!(est.tie_count, 2);
        assert_relative_eq!(est.pose.x(), 1.0);
        assert_relative_eq!(est.pose.y(), 0.0);
        assert_relative_eq!(est.pose.theta(), 0.0);
    }

    #[test]
    fn map_estimate_circular_mean_across_cut() {
        let hyps = HypothesisSet {
            poses: vec![
                Pose2D::new(0.0, 0.0, PI - 0.1).unwrap(),
                Pose2D::new(0.0, 0.0, -PI + 0.1).unwrap(),
            ],
            vision_score: None,
            vision_ll: Some(vec![-1.0, -1.0]),
            scan_ll: None,
            fused_ll: None,
            seed: 0,
        };
        let est = map_estimate(&hyps, Modality::Vision).unwrap();
        // Unit vectors sum to (-2 cos 0.1, 0): the circular mean is the
        // angle pi, wrapped to -pi.
        assert_relative_eq!(est.pose.theta(), -PI, epsilon = 1e-12);
        assert!(!est.degenerate_theta);
        // Oracle route: atan2 of summed unit vectors.
        let want = ((PI - 0.1).sin() + (-PI + 0.1).sin())
            .atan2((PI - 0.1).cos() + (-PI + 0.1).cos());
        let wrapped = crate::geometry::wrap_angle(want).unwrap();
        assert_relative_eq!(est.pose.theta(), wrapped, epsilon = 1e-12);
    }

    #[test]
    fn map_estimate_flags_degenerate_heading() {
        let hyps = HypothesisSet {
            poses: vec![
                Pose2D::new(0.0, 0.0, 0.0).unwrap(),
                Pose2D::new(0.0, 0.0, PI - 1e-12).unwrap(),
            ],
            vision_score: None,
            vision_ll: Some(vec![-1.0, -1.0]),
            scan_ll: None,
            fused_ll: None,
            seed: 0,
        };
        let est = map_estimate(&hyps, Modality::Vision).unwrap();
        assert!(est.degenerate_theta);
        assert_relative_eq!(est.pose.theta(), 0.0); // first tied pose
    }

    #[test]
    fn map_estimate_requires_filled_column() {
        let hyps = HypothesisSet {
            poses: vec![Pose2D::new(0.0, 0.0, 0.0).unwrap()],
            vision_score: None,
            vision_ll: None,
            scan_ll: None,
            fused_ll: None,
            seed: 0,
        };
        assert!(map_estimate(&hyps, Modality::Vision).is_err());
    }

    #[test]
    fn estimate_invariant_under_alpha_change() {
        // Changing alpha rescales values but never the tie set.
        let (map, grid) = small_world();
        let rig = CameraRig::default_three_camera();
        let true_pose = Pose2D::new(4.5, 4.5, 1.2).unwrap();
        let obs = oracle_detect(&true_pose, &rig, &map, &NoiseModel::noiseless(0)).unwrap();
        let mut estimates = Vec::new();
        for alpha in [0.25, 0.5, 2.0] {
            let mut hyps = sample_uniform(&grid, 500, 21).unwrap();
            let inputs = EvalInputs {
                map: &map,
                rig: &rig,
                occlusion: OcclusionMode::None,
                grid: Some(&grid),
                distance_field: None,
                vision_params: VisionLikelihoodParams { alpha },
                scan_params: ScanLikelihoodParams::default(),
            };
            evaluate(&mut hyps, Some(&obs), None, &inputs).unwrap();
            let est = map_estimate(&hyps, Modality::Vision).unwrap();
            estimates.push((est.pose, est.tie_count));
        }
        assert_eq!(estimates[0], estimates[1]);
        assert_eq!(estimates[1], estimates[2]);
    }
}
