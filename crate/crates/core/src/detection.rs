//! Visible-label observations: the simulated oracle detector for tests and
//! synthetic experiments, and helpers shared with the remote detector.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::maps::LabeledFootprintMap;
use crate::visibility::{simulate_visible, CameraRig, OcclusionMode};

/// Where an observation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationSource {
    Oracle,
    Vlm,
    Recorded,
}

/// Per-camera sets of detected landmark labels.
///
/// `per_camera` holds labels matched to the map (canonical map spelling);
/// items that matched nothing on the map are retained in `off_map` and never
/// contribute to any consistency score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelObservation {
    pub per_camera: Vec<BTreeSet<String>>,
    pub off_map: Vec<BTreeSet<String>>,
    pub source: ObservationSource,
}

/// Trim, collapse internal whitespace, and casefold a label for matching.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl LabelObservation {
    /// Build from raw detector output: items are matched to map labels
    /// case-insensitively after whitespace normalization; unmatched items are
    /// kept and flagged off-map.
    pub fn from_raw(
        raw_per_camera: Vec<Vec<String>>,
        map: &LabeledFootprintMap,
        source: ObservationSource,
    ) -> Self {
        let canon: BTreeMap<String, &str> = map
            .label_set()
            .iter()
            .map(|l| (normalize_label(l), l.as_str()))
            .collect();
        let mut per_camera = Vec::with_capacity(raw_per_camera.len());
        let mut off_map = Vec::with_capacity(raw_per_camera.len());
        for items in raw_per_camera {
            let mut matched = BTreeSet::new();
            let mut unmatched = BTreeSet::new();
            for item in items {
                let norm = normalize_label(&item);
                if norm.is_empty() {
                    continue;
                }
                match canon.get(&norm) {
                    Some(label) => {
                        matched.insert((*label).to_string());
                    }
                    None => {
                        unmatched.insert(norm);
                    }
                }
            }
            per_camera.push(matched);
            off_map.push(unmatched);
        }
        LabelObservation {
            per_camera,
            off_map,
            source,
        }
    }

    /// Build directly from already-canonical label sets.
    pub fn from_sets(per_camera: Vec<BTreeSet<String>>, source: ObservationSource) -> Self {
        let n = per_camera.len();
        LabelObservation {
            per_camera,
            off_map: vec![BTreeSet::new(); n],
            source,
        }
    }

    pub fn camera_count(&self) -> usize {
        self.per_camera.len()
    }
}

/// Detector corruption model: independent label drops, false positives drawn
/// from the map vocabulary, and label confusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub drop_prob: f64,
    pub false_positive_prob: f64,
    /// A label listed here is reported as a uniform choice among the mapped
    /// alternatives instead of itself.
    #[serde(default)]
    pub confusion: BTreeMap<String, Vec<String>>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        NoiseModel {
            drop_prob: 0.0,
            false_positive_prob: 0.0,
            confusion: BTreeMap::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("false_positive_prob", self.false_positive_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "{name} must be a probability, got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> NoiseModel {
        NoiseModel { seed, ..self.clone() }
    }
}

/// Simulated detector: derives the labels a detector should report at the
/// true pose, then corrupts them with the noise model. Deterministic given
/// the noise seed; with all-zero noise it equals [`simulate_visible`].
pub fn oracle_detect(
    true_pose: &Pose2D,
    rig: &CameraRig,
    map: &LabeledFootprintMap,
    noise: &NoiseModel,
) -> Result<LabelObservation> {
    noise.validate()?;
    let visible = simulate_visible(true_pose, rig, map, OcclusionMode::None, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);

    let mut raw_per_camera = Vec::with_capacity(visible.per_camera.len());
    for seen in &visible.per_camera {
        let mut reported: Vec<String> = Vec::new();
        // Iterate in sorted order so the RNG draw sequence is reproducible.
        for label in seen {
            if noise.drop_prob > 0.0 && rng.random_bool(noise.drop_prob) {
                continue;
            }
            match noise.confusion.get(label) {
                Some(alternatives) if !alternatives.is_empty() => {
                    reported.push(alternatives.choose(&mut rng).unwrap().clone());
                }
                _ => reported.push(label.clone()),
            }
        }
        if noise.false_positive_prob > 0.0 {
            let current: BTreeSet<String> = reported.iter().cloned().collect();
            for label in map.label_set() {
                if current.contains(label) {
                    continue;
                }
                if rng.random_bool(noise.false_positive_prob) {
                    reported.push(label.clone());
                }
            }
        }
        raw_per_camera.push(reported);
    }
    Ok(LabelObservation::from_raw(
        raw_per_camera,
        map,
        ObservationSource::Oracle,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Vec2};
    use crate::maps::Landmark;

    fn test_map() -> LabeledFootprintMap {
        let mk = |label: &str, cx: f64, cy: f64| {
            Landmark::new(
                label,
                Polygon::rect(Vec2::new(cx - 0.5, cy - 0.5), Vec2::new(cx + 0.5, cy + 0.5))
                    .unwrap(),
            )
            .unwrap()
        };
        LabeledFootprintMap::new(
            "map",
            vec![mk("door", 3.0, 0.0), mk("table", 0.0, 3.0), mk("shelf", -3.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn normalization_folds_case_and_whitespace() {
        assert_eq!(normalize_label("  Snack   Shelf "), "snack shelf");
        assert_eq!(normalize_label(""), "");
    }

    #[test]
    fn from_raw_flags_off_map_labels() {
        let map = test_map();
        let obs = LabelObservation::from_raw(
            vec![vec!["Door".into(), "cup noodle".into()]],
            &map,
            ObservationSource::Vlm,
        );
        assert!(obs.per_camera[0].contains("door"));
        assert!(!obs.per_camera[0].contains("cup noodle"));
        assert!(obs.off_map[0].contains("cup noodle"));
    }

    #[test]
    fn noiseless_oracle_equals_simulation() {
        let map = test_map();
        let rig = CameraRig::default_three_camera();
        let pose = Pose2D::new(0.0, 0.0, 0.3).unwrap();
        let obs = oracle_detect(&pose, &rig, &map, &NoiseModel::noiseless(5)).unwrap();
        let sim = simulate_visible(&pose, &rig, &map, OcclusionMode::None, None).unwrap();
        assert_eq!(obs.per_camera, sim.per_camera);
        assert!(obs.off_map.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn full_drop_empties_all_sets() {
        let map = test_map();
        let rig = CameraRig::default_three_camera();
        let pose = Pose2D::new(0.0, 0.0, 0.0).unwrap();
        let noise = NoiseModel {
            drop_prob: 1.0,
            false_positive_prob: 0.0,
            confusion: BTreeMap::new(),
            seed: 11,
        };
        let obs = oracle_detect(&pose, &rig, &map, &noise).unwrap();
        assert!(obs.per_camera.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn oracle_is_deterministic_per_seed() {
        let map = test_map();
        let rig = CameraRig::default_three_camera();
        let pose = Pose2D::new(0.2, -0.4, 1.0).unwrap();
        let noise = NoiseModel {
            drop_prob: 0.4,
            false_positive_prob: 0.2,
            confusion: BTreeMap::new(),
            seed: 99,
        };
        let a = oracle_detect(&pose, &rig, &map, &noise).unwrap();
        let b = oracle_detect(&pose, &rig, &map, &noise).unwrap();
        assert_eq!(a, b);
        let c = oracle_detect(&pose, &rig, &map, &noise.with_seed(100)).unwrap();
        assert_ne!(a, c); // overwhelmingly likely under 40% drop noise
    }

    #[test]
    fn empirical_drop_rate_matches_parameter() {
        let map = test_map();
        let rig = CameraRig::default_three_camera();
        let pose = Pose2D::new(0.0, 0.0, 0.0).unwrap();
        let baseline = oracle_detect(&pose, &rig, &map, &NoiseModel::noiseless(0)).unwrap();
        let total_visible: usize = baseline.per_camera.iter().map(|s| s.len()).sum();
        assert!(total_visible >= 2, "scene too sparse for the statistic");

        let trials = 10_000usize;
        let mut kept = 0usize;
        for t in 0..trials {
            let noise = NoiseModel {
                drop_prob: 0.3,
                false_positive_prob: 0.0,
                confusion: BTreeMap::new(),
                seed: t as u64,
            };
            let obs = oracle_detect(&pose, &rig, &map, &noise).unwrap();
            kept += obs.per_camera.iter().map(|s| s.len()).sum::<usize>();
        }
        let drop_rate = 1.0 - kept as f64 / (trials * total_visible) as f64;
        assert!(
            (drop_rate - 0.3).abs() < 0.02,
            "empirical drop rate {drop_rate} should be 0.3 +/- 0.02"
        );
    }

    #[test]
    fn confusion_replaces_labels_uniformly() {
        let map = test_map();
        let rig = CameraRig::default_three_camera();
        let pose = Pose2D::new(0.0, 0.0, 0.0).unwrap();
        let mut confusion = BTreeMap::new();
        confusion.insert("door".to_string(), vec!["snack".to_string()]);
        let noise = NoiseModel {
            drop_prob: 0.0,
            false_positive_prob: 0.0,
            confusion,
            seed: 1,
        };
        let obs = oracle_detect(&pose, &rig, &map, &noise).unwrap();
        // "snack" is not a map label, so the confused report lands off-map.
        assert!(obs.per_camera.iter().all(|s| !s.contains("door")));
        assert!(obs.off_map.iter().any(|s| s.contains("snack")));
    }
}
