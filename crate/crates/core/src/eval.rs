//! Evaluation: pose error metrics, dataset-level localization runs with CSV
//! and summary outputs, and likelihood heatmap export.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{wrap_finite, GridIndex, Pose2D};
use crate::likelihood::ScanObservation;
use crate::maps::{build_distance_field, DistanceField, LabeledFootprintMap, OccupancyGridMap};
use crate::mcl::{evaluate, map_estimate, sample_uniform, EvalInputs, HypothesisSet};
pub use crate::mcl::Modality;
use crate::seeding::derive_seed;
use crate::simworld::DatasetRecord;

/// Euclidean distance between two estimated positions, meters.
pub fn trans_error(est: &Pose2D, gt: &Pose2D) -> f64 {
    (est.x() - gt.x()).hypot(est.y() - gt.y())
}

/// Absolute angular difference in the minimum direction, radians in [0, pi].
pub fn rot_error(est: &Pose2D, gt: &Pose2D) -> f64 {
    rot_error_angles(est.theta(), gt.theta())
}

/// [`rot_error`] on raw angles.
pub fn rot_error_angles(theta_est: f64, theta_gt: f64) -> f64 {
    wrap_finite(theta_est - theta_gt).abs()
}

/// Per-record localization outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub record_index: usize,
    pub modality: Modality,
    pub e_trans: f64,
    pub e_rot: f64,
    pub tie_count: usize,
    /// Set when the record fell back to scan-only after a detection failure.
    pub degraded: bool,
    /// Wall-clock seconds for the record; reported in the summary, never in
    /// the CSV (CSV bytes stay reproducible).
    pub wall_time_s: f64,
}

/// CSV projection of [`MetricRow`] (schema `metrics.v1`).
#[derive(Debug, Serialize, Deserialize)]
struct MetricCsvRow {
    record_index: usize,
    modality: String,
    e_trans: f64,
    e_rot: f64,
    tie_count: usize,
    degraded: bool,
}

/// Aggregate over one run (schema `summary.v1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub schema_version: String,
    pub modality: Modality,
    pub record_count: usize,
    pub e_trans_mean: f64,
    pub e_trans_std: f64,
    pub e_rot_mean: f64,
    pub e_rot_std: f64,
    pub degraded_count: usize,
    pub config_digest: String,
    pub seed: u64,
    /// Mean seconds per record; informational, not reproducible.
    pub mean_wall_time_s: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Build the summary from emitted rows (population standard deviation).
pub fn summarize(
    rows: &[MetricRow],
    modality: Modality,
    config_digest: String,
    seed: u64,
) -> BenchmarkSummary {
    let (e_trans_mean, e_trans_std) = mean_std(rows.iter().map(|r| r.e_trans));
    let (e_rot_mean, e_rot_std) = mean_std(rows.iter().map(|r| r.e_rot));
    let (mean_wall_time_s, _) = mean_std(rows.iter().map(|r| r.wall_time_s));
    BenchmarkSummary {
        schema_version: "summary.v1".to_string(),
        modality,
        record_count: rows.len(),
        e_trans_mean,
        e_trans_std,
        e_rot_mean,
        e_rot_std,
        degraded_count: rows.iter().filter(|r| r.degraded).count(),
        config_digest,
        seed,
        mean_wall_time_s,
    }
}

/// Rows and summary of one localization run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricRow>,
    pub summary: BenchmarkSummary,
}

/// Run single-shot global localization over every dataset record.
///
/// Each record draws a fresh hypothesis set from `derive_seed(seed, index)`,
/// evaluates the requested modality, and reports the tie-averaged estimate
/// against ground truth. A record whose labels are missing degrades to
/// scan-only when a scan is available, and is flagged.
pub fn run_localize(
    records: &[DatasetRecord],
    map: &LabeledFootprintMap,
    grid: &OccupancyGridMap,
    cfg: &RunConfig,
    modality: Modality,
    seed: u64,
) -> Result<RunOutput> {
    cfg.validate()?;
    let wants_vision = modality != Modality::Scan;
    let wants_scan = modality != Modality::Vision;
    let mut field: Option<DistanceField> = wants_scan.then(|| build_distance_field(grid));

    let mut rows = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let start = Instant::now();
        let scan_obs: Option<ScanObservation> = if record.scan.ranges.is_empty() {
            None
        } else {
            Some(record.scan.to_observation()?)
        };

        let (obs, actual_modality, degraded) = if wants_vision {
            match record.observation(map) {
                Ok(obs) => (Some(obs), modality, false),
                Err(Error::DetectionUnavailable(_)) if scan_obs.is_some() => {
                    log::warn!("record {i}: labels unavailable, degrading to scan-only");
                    (None, Modality::Scan, true)
                }
                Err(e) => return Err(e),
            }
        } else {
            (None, modality, false)
        };

        let needs_scan = actual_modality != Modality::Vision;
        if needs_scan && field.is_none() {
            field = Some(build_distance_field(grid));
        }
        let scan_for_eval = if needs_scan {
            Some(scan_obs.ok_or_else(|| {
                Error::InvalidArgument(format!("record {i} has no scan for {actual_modality}"))
            })?)
        } else {
            None
        };

        let mut hyps = sample_uniform(grid, cfg.hypothesis_count, derive_seed(seed, i as u64))?;
        let inputs = EvalInputs {
            map,
            rig: &cfg.rig,
            occlusion: cfg.occlusion,
            grid: Some(grid),
            distance_field: field.as_ref(),
            vision_params: cfg.vision,
            scan_params: cfg.scan,
        };
        evaluate(&mut hyps, obs.as_ref(), scan_for_eval.as_ref(), &inputs)?;
        let est = map_estimate(&hyps, actual_modality)?;
        rows.push(MetricRow {
            record_index: i,
            modality: actual_modality,
            e_trans: trans_error(&est.pose, &record.pose_gt),
            e_rot: rot_error(&est.pose, &record.pose_gt),
            tie_count: est.tie_count,
            degraded,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let summary = summarize(&rows, modality, cfg.digest(), seed);
    Ok(RunOutput { rows, summary })
}

/// Serialize rows as CSV (schema `metrics.v1`). Wall time is excluded so
/// identical runs produce identical bytes.
pub fn metrics_to_csv(rows: &[MetricRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(MetricCsvRow {
                record_index: row.record_index,
                modality: row.modality.to_string(),
                e_trans: row.e_trans,
                e_rot: row.e_rot,
                tie_count: row.tie_count,
                degraded: row.degraded,
            })
            .map_err(|e| Error::Validation(format!("csv serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(format!("csv encoding: {e}")))
}

/// Parse rows back from CSV; wall time comes back as zero.
pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for result in reader.deserialize::<MetricCsvRow>() {
        let raw = result.map_err(|e| Error::parse("csv", e.to_string()))?;
        rows.push(MetricRow {
            record_index: raw.record_index,
            modality: raw.modality.parse()?,
            e_trans: raw.e_trans,
            e_rot: raw.e_rot,
            tie_count: raw.tie_count,
            degraded: raw.degraded,
            wall_time_s: 0.0,
        });
    }
    Ok(rows)
}

pub fn save_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_to_csv(rows)?).map_err(|e| Error::io(path.display(), e))
}

pub fn save_summary(summary: &BenchmarkSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Validation(format!("summary serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

/// Per-cell maximum log-likelihood over the hypotheses falling in each cell
/// (`None` for cells holding no hypothesis). Row-major over the grid.
pub fn rasterize_likelihood(
    hyps: &HypothesisSet,
    modality: Modality,
    grid: &OccupancyGridMap,
) -> Result<Vec<Option<f64>>> {
    let lls = match modality {
        Modality::Vision => hyps.vision_ll.as_deref(),
        Modality::Scan => hyps.scan_ll.as_deref(),
        Modality::Fused => hyps.fused_ll.as_deref(),
    }
    .ok_or_else(|| {
        Error::InvalidArgument(format!("heatmap: {modality} log-likelihoods not computed"))
    })?;

    let mut raster = vec![None; grid.width() * grid.height()];
    for (pose, &ll) in hyps.poses.iter().zip(lls.iter()) {
        if let Some(idx) = grid.world_to_cell(pose.position()) {
            let slot = &mut raster[idx.row * grid.width() + idx.col];
            match slot {
                Some(prev) if *prev >= ll => {}
                _ => *slot = Some(ll),
            }
        }
    }
    Ok(raster)
}

/// Cell holding the raster maximum (first in row-major order on exact ties).
pub fn raster_argmax_cell(raster: &[Option<f64>], width: usize) -> Option<GridIndex> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in raster.iter().enumerate() {
        if let Some(v) = v {
            if best.map_or(true, |(_, bv)| *v > bv) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| GridIndex::new(i / width, i % width))
}

/// Optional pose markers drawn over an exported heatmap.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeatmapOverlay {
    pub estimate: Option<Pose2D>,
    pub ground_truth: Option<Pose2D>,
}

/// Export the likelihood raster as a grayscale P5 PGM. Cells without
/// hypotheses render black; values map to 55..=255 (a uniform field renders
/// at full brightness). The estimate draws as a white cross, ground truth as
/// a black cross.
pub fn export_heatmap(
    hyps: &HypothesisSet,
    modality: Modality,
    grid: &OccupancyGridMap,
    path: impl AsRef<Path>,
    overlay: HeatmapOverlay,
) -> Result<()> {
    let raster = rasterize_likelihood(hyps, modality, grid)?;
    let finite: Vec<f64> = raster.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let (min, max) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });

    let (w, h) = (grid.width(), grid.height());
    let mut pixels = vec![0u8; w * h];
    for (i, v) in raster.iter().enumerate() {
        if let Some(v) = v {
            pixels[i] = if !v.is_finite() {
                20
            } else if max > min {
                (55.0 + 200.0 * (v - min) / (max - min)).round() as u8
            } else {
                255
            };
        }
    }

    let mut draw_cross = |pose: &Pose2D, value: u8| {
        if let Some(center) = grid.world_to_cell(pose.position()) {
            for d in -4i64..=4 {
                for (r, c) in [
                    (center.row as i64 + d, center.col as i64),
                    (center.row as i64, center.col as i64 + d),
                ] {
                    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                        pixels[r as usize * w + c as usize] = value;
                    }
                }
            }
        }
    };
    if let Some(gt) = &overlay.ground_truth {
        draw_cross(gt, 0);
    }
    if let Some(est) = &overlay.estimate {
        draw_cross(est, 255);
    }

    let path = path.as_ref();
    let mut data = Vec::with_capacity(w * h + 32);
    data.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for row in (0..h).rev() {
        data.extend_from_slice(&pixels[row * w..(row + 1) * w]);
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&data))
        .map_err(|e| Error::io(path.display(), e))
}
