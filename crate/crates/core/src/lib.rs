//! Global localization on labeled footprint maps.
//!
//! The library estimates a robot's SE(2) pose from per-camera landmark-label
//! detections matched against a labeled footprint map (text labels plus 2D
//! footprint polygons), optionally fused with a 2D-scan likelihood field,
//! inside a sampled maximum-likelihood framework:
//!
//! 1. [`mcl::sample_uniform`] draws pose hypotheses uniformly over the free
//!    space of an occupancy grid.
//! 2. [`visibility::simulate_visible`] predicts which labels each camera
//!    should see from a hypothesis by casting rays against the footprints.
//! 3. [`likelihood`] scores each hypothesis by the overlap between detected
//!    and predicted label sets, turns scores into log-likelihoods, and
//!    optionally fuses a scan likelihood evaluated on a distance field.
//! 4. [`mcl::map_estimate`] extracts the tie-averaged maximum-likelihood pose.
//!
//! [`simworld`] generates synthetic environments, scans and datasets so the
//! whole pipeline can be exercised and benchmarked without robot hardware,
//! and [`eval`] computes the translational/rotational error metrics and runs
//! dataset-level benchmarks.

pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod likelihood;
pub mod maps;
pub mod mcl;
pub(crate) mod scene;
pub mod seeding;
pub mod simworld;
pub mod visibility;
pub mod vlm;

pub use error::{Error, Result};
