//! Synthetic environments, scans and datasets: everything needed to exercise
//! the localization pipeline at desk scale.
//!
//! Worlds come in four archetypes crossing geometric layout with label
//! appearance: `UG/*` places objects on a regular lattice, `DG/*` scatters
//! varied-size objects; `*/UA` draws labels from a tiny vocabulary (heavy
//! repetition), `*/DA` gives every object a distinct label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::detection::{oracle_detect, LabelObservation, NoiseModel, ObservationSource};
use crate::error::{Error, Result};
use crate::geometry::{cast_ray_occupancy, GridIndex, Polygon, Pose2D, Ray, Vec2};
use crate::likelihood::{ScanEndpoint, ScanObservation};
use crate::maps::{CellState, LabeledFootprintMap, Landmark, OccupancyGridMap};
use crate::seeding::derive_seed;
use crate::visibility::CameraRig;

/// Environment archetype: Uniform/Diverse Geometry x Uniform/Diverse
/// Appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchetypeKind {
    UgUa,
    UgDa,
    DgUa,
    DgDa,
}

impl ArchetypeKind {
    pub const ALL: [ArchetypeKind; 4] = [
        ArchetypeKind::UgUa,
        ArchetypeKind::UgDa,
        ArchetypeKind::DgUa,
        ArchetypeKind::DgDa,
    ];

    pub fn uniform_geometry(&self) -> bool {
        matches!(self, ArchetypeKind::UgUa | ArchetypeKind::UgDa)
    }

    pub fn uniform_appearance(&self) -> bool {
        matches!(self, ArchetypeKind::UgUa | ArchetypeKind::DgUa)
    }
}

impl fmt::Display for ArchetypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchetypeKind::UgUa => "UG/UA",
            ArchetypeKind::UgDa => "UG/DA",
            ArchetypeKind::DgUa => "DG/UA",
            ArchetypeKind::DgDa => "DG/DA",
        };
        write!(f, "{s}")
    }
}

impl FromStr for ArchetypeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_uppercase().replace('-', "/").as_str() {
            "UG/UA" => Ok(ArchetypeKind::UgUa),
            "UG/DA" => Ok(ArchetypeKind::UgDa),
            "DG/UA" => Ok(ArchetypeKind::DgUa),
            "DG/DA" => Ok(ArchetypeKind::DgDa),
            other => Err(Error::InvalidArgument(format!(
                "unknown archetype {other}; expected UG/UA, UG/DA, DG/UA or DG/DA"
            ))),
        }
    }
}

/// Parameters of a generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub kind: ArchetypeKind,
    /// World extent in meters (width, height).
    pub world_size: (f64, f64),
    pub object_count: usize,
    /// Distinct labels available to UA worlds (at most 3); ignored by DA
    /// worlds, whose labels are all distinct.
    pub label_vocabulary_size: usize,
    pub resolution: f64,
    pub seed: u64,
}

impl ArchetypeSpec {
    pub fn new(kind: ArchetypeKind, seed: u64) -> Self {
        ArchetypeSpec {
            kind,
            world_size: (20.0, 20.0),
            // Diverse-geometry rooms are densely furnished; the uniform
            // lattice uses fewer, larger objects.
            object_count: if kind.uniform_geometry() { 16 } else { 16 },
            label_vocabulary_size: match kind {
                ArchetypeKind::UgUa => 1,
                ArchetypeKind::DgUa => 3,
                _ => 0,
            },
            resolution: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_count == 0 {
            return Err(Error::InvalidArgument("object_count must be >= 1".into()));
        }
        if !(self.resolution > 0.0) || !(self.world_size.0 > 0.0) || !(self.world_size.1 > 0.0) {
            return Err(Error::InvalidArgument(
                "world_size and resolution must be positive".into(),
            ));
        }
        if self.kind.uniform_appearance()
            && !(1..=3).contains(&self.label_vocabulary_size)
        {
            return Err(Error::InvalidArgument(format!(
                "UA worlds need a 1..=3 word vocabulary, got {}",
                self.label_vocabulary_size
            )));
        }
        Ok(())
    }
}

const UA_VOCABULARY: [&str; 3] = ["shelf", "table", "crate"];

/// Spreadsheet-style distinct labels: A..Z, AA, AB, ...
fn letter_label(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

/// Generate the footprint map and occupancy grid for an archetype, sharing
/// one world frame. Footprints are rasterized into the grid as occupied.
/// Deterministic given the spec's seed.
pub fn generate_world(
    spec: &ArchetypeSpec,
) -> Result<(LabeledFootprintMap, OccupancyGridMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = spec.world_size;
    let margin = (w.min(h) * 0.15).max(1.5);

    let mut rects: Vec<(Vec2, Vec2)> = Vec::new(); // (center, half-extents)
    if spec.kind.uniform_geometry() {
        let k = (spec.object_count as f64).sqrt().ceil() as usize;
        let rows = spec.object_count.div_ceil(k);
        let half = match spec.kind {
            ArchetypeKind::UgUa => Vec2::new(0.5, 0.5),
            _ => Vec2::new(1.0, 0.3),
        };
        for i in 0..spec.object_count {
            let (r, c) = (i / k, i % k);
            let fx = if k > 1 { c as f64 / (k - 1) as f64 } else { 0.5 };
            let fy = if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.5 };
            rects.push((
                Vec2::new(margin + fx * (w - 2.0 * margin), margin + fy * (h - 2.0 * margin)),
                half,
            ));
        }
    } else {
        // Dart-throwing scatter with a minimum gap between inflated boxes.
        let gap = 1.0;
        let mut attempts = 0usize;
        let max_attempts = 400 * spec.object_count;
        while rects.len() < spec.object_count {
            if attempts >= max_attempts {
                return Err(Error::WorldGeneration(format!(
                    "could not place {} objects in a {w}x{h} world after {max_attempts} attempts",
                    spec.object_count
                )));
            }
            attempts += 1;
            let half = Vec2::new(rng.random_range(0.35..1.1), rng.random_range(0.35..1.1));
            let c = Vec2::new(
                rng.random_range(margin + half.x..w - margin - half.x),
                rng.random_range(margin + half.y..h - margin - half.y),
            );
            let clear = rects.iter().all(|(oc, oh)| {
                (c.x - oc.x).abs() > half.x + oh.x + gap || (c.y - oc.y).abs() > half.y + oh.y + gap
            });
            if clear {
                rects.push((c, half));
            }
        }
    }

    let vocab: Vec<&str> = UA_VOCABULARY[..spec.label_vocabulary_size.min(3).max(1)].to_vec();
    let center = Vec2::new(w / 2.0, h / 2.0);
    let mut landmarks = Vec::with_capacity(rects.len());
    for (i, (c, half)) in rects.iter().enumerate() {
        let label = if spec.kind.uniform_appearance() {
            if spec.kind.uniform_geometry() {
                // Identical columns: cycle the vocabulary deterministically.
                vocab[i % vocab.len()].to_string()
            } else {
                // Scattered furniture: repeated items come in spatial groups
                // (store sections), assigned by angular sector around the
                // world center.
                let bearing = (c.y - center.y).atan2(c.x - center.x) + std::f64::consts::PI;
                let sector = ((bearing / std::f64::consts::TAU) * vocab.len() as f64)
                    .floor()
                    .min(vocab.len() as f64 - 1.0) as usize;
                vocab[sector].to_string()
            }
        } else {
            letter_label(i)
        };
        let polygon = Polygon::rect(
            Vec2::new(c.x - half.x, c.y - half.y),
            Vec2::new(c.x + half.x, c.y + half.y),
        )?;
        landmarks.push(Landmark::new(label, polygon)?);
    }
    let footprint = LabeledFootprintMap::new("map", landmarks)?;

    let width = (w / spec.resolution).round() as usize;
    let height = (h / spec.resolution).round() as usize;
    let mut grid = OccupancyGridMap::filled(
        spec.resolution,
        Pose2D::new(0.0, 0.0, 0.0)?,
        width,
        height,
        CellState::Free,
    )?;
    for lm in footprint.landmarks() {
        rasterize_polygon(&mut grid, &lm.polygon);
    }
    Ok((footprint, grid))
}

/// Mark every cell whose rectangle touches the polygon as occupied
/// (conservative overfill: interior points always land on occupied cells).
pub fn rasterize_polygon(grid: &mut OccupancyGridMap, poly: &Polygon) {
    let theta = grid.origin().theta();
    let origin = grid.origin().position();
    let res = grid.resolution();
    // Work in grid-local coordinates so cells are axis-aligned boxes.
    let local: Vec<Vec2> = poly
        .vertices()
        .iter()
        .map(|v| v.sub(origin).rotate(-theta))
        .collect();
    let min_x = local.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
    let max_x = local.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = local.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    let max_y = local.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);

    let c0 = (min_x / res).floor().max(0.0) as usize;
    let r0 = (min_y / res).floor().max(0.0) as usize;
    let c1 = ((max_x / res).ceil() as usize).min(grid.width().saturating_sub(1));
    let r1 = ((max_y / res).ceil() as usize).min(grid.height().saturating_sub(1));

    let local_poly = Polygon::new(local).expect("rigid transform preserves validity");
    for row in r0..=r1 {
        for col in c0..=c1 {
            let lo = Vec2::new(col as f64 * res, row as f64 * res);
            let hi = Vec2::new(lo.x + res, lo.y + res);
            if rect_touches_polygon(lo, hi, &local_poly) {
                grid.set_state(GridIndex::new(row, col), CellState::Occupied);
            }
        }
    }
}

fn rect_touches_polygon(lo: Vec2, hi: Vec2, poly: &Polygon) -> bool {
    let corners = [
        lo,
        Vec2::new(hi.x, lo.y),
        hi,
        Vec2::new(lo.x, hi.y),
    ];
    if corners.iter().any(|c| poly.contains(*c)) {
        return true;
    }
    if poly
        .vertices()
        .iter()
        .any(|v| v.x >= lo.x && v.x <= hi.x && v.y >= lo.y && v.y <= hi.y)
    {
        return true;
    }
    // Edge crossings.
    let rect_edges = [
        (corners[0], corners[1]),
        (corners[1], corners[2]),
        (corners[2], corners[3]),
        (corners[3], corners[0]),
    ];
    for (a, b) in poly.edges() {
        for (c, d) in rect_edges {
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let orient = |p: Vec2, q: Vec2, r: Vec2| (q.sub(p)).cross(r.sub(p));
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 >= 0.0) != (d2 >= 0.0) || d1 == 0.0 || d2 == 0.0)
        && ((d3 >= 0.0) != (d4 >= 0.0) || d3 == 0.0 || d4 == 0.0)
}

/// Parameters of the simulated 2D scanner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSimConfig {
    pub beam_count: usize,
    /// Angular coverage in radians.
    pub fov: f64,
    pub max_range: f64,
    pub range_noise_sigma: f64,
}

impl Default for ScanSimConfig {
    fn default() -> Self {
        ScanSimConfig {
            beam_count: 720,
            fov: std::f64::consts::TAU,
            max_range: 12.0,
            range_noise_sigma: 0.01,
        }
    }
}

fn beam_layout(cfg: &ScanSimConfig) -> (f64, f64) {
    // Full circles avoid a duplicate beam at the wrap; partial fans include
    // both endpoints.
    if cfg.fov >= std::f64::consts::TAU - 1e-9 || cfg.beam_count == 1 {
        (-cfg.fov / 2.0, cfg.fov / cfg.beam_count as f64)
    } else {
        (-cfg.fov / 2.0, cfg.fov / (cfg.beam_count - 1) as f64)
    }
}

/// Cast the beam fan from `pose` and return per-beam ranges (dense slots,
/// `None` where no obstacle was hit within range).
pub fn simulate_scan_dense(
    pose: &Pose2D,
    grid: &OccupancyGridMap,
    cfg: &ScanSimConfig,
    seed: u64,
) -> Result<(f64, f64, Vec<Option<f64>>)> {
    match grid.world_to_cell(pose.position()) {
        Some(idx) if grid.state(idx) == CellState::Free => {}
        _ => {
            return Err(Error::InvalidPose(format!(
                "scan pose ({}, {}) is not in free space",
                pose.x(),
                pose.y()
            )))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if cfg.range_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.range_noise_sigma).map_err(|e| {
            Error::InvalidArgument(format!("bad range noise sigma: {e}"))
        })?)
    } else {
        None
    };
    let (angle_min, increment) = beam_layout(cfg);
    let mut ranges = Vec::with_capacity(cfg.beam_count);
    for i in 0..cfg.beam_count {
        let bearing = angle_min + i as f64 * increment;
        let ray = Ray::from_angle(
            pose.position(),
            crate::geometry::wrap_finite(pose.theta() + bearing),
            cfg.max_range,
        )?;
        let d = cast_ray_occupancy(&ray, grid)?;
        if d >= cfg.max_range {
            ranges.push(None);
            continue;
        }
        let noisy = match &noise {
            Some(n) => (d + n.sample(&mut rng)).clamp(1e-6, cfg.max_range),
            None => d,
        };
        ranges.push(Some(noisy));
    }
    Ok((angle_min, increment, ranges))
}

/// Simulated scan as a [`ScanObservation`] (beams with no hit excluded).
pub fn simulate_scan(
    pose: &Pose2D,
    grid: &OccupancyGridMap,
    cfg: &ScanSimConfig,
    seed: u64,
) -> Result<ScanObservation> {
    let (angle_min, increment, ranges) = simulate_scan_dense(pose, grid, cfg, seed)?;
    let endpoints = ranges
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            r.map(|range| ScanEndpoint {
                bearing: angle_min + i as f64 * increment,
                range,
            })
        })
        .collect();
    ScanObservation::new(endpoints, cfg.max_range)
}

/// Serialized scan: dense beam slots so the sensor geometry survives the
/// round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub ranges: Vec<Option<f64>>,
}

impl ScanRecord {
    pub fn to_observation(&self) -> Result<ScanObservation> {
        let endpoints = self
            .ranges
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.map(|range| ScanEndpoint {
                    bearing: self.angle_min + i as f64 * self.angle_increment,
                    range,
                })
            })
            .collect();
        ScanObservation::new(endpoints, self.range_max)
    }
}

/// One dataset entry: ground truth, scan, and either recorded label sets or
/// camera image paths for the remote detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub t: f64,
    pub pose_gt: Pose2D,
    pub scan: ScanRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub images: Option<Vec<String>>,
}

impl DatasetRecord {
    /// Recorded label sets as an observation, matched against the map.
    pub fn observation(&self, map: &LabeledFootprintMap) -> Result<LabelObservation> {
        let labels = self.labels.as_ref().ok_or_else(|| {
            Error::DetectionUnavailable("record carries no label sets".into())
        })?;
        Ok(LabelObservation::from_raw(
            labels.clone(),
            map,
            ObservationSource::Recorded,
        ))
    }
}

/// Load one observation from a dataset record, matched against the map.
pub fn load_recorded_observation(
    record: &DatasetRecord,
    map: &LabeledFootprintMap,
) -> Result<LabelObservation> {
    record.observation(map)
}

/// Waypoint trajectory with a fixed sample spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Vec2>,
    /// Distance between recorded poses, meters.
    pub spacing_m: f64,
    /// Time between records, seconds.
    pub interval_s: f64,
}

impl TrajectorySpec {
    /// Poses at multiples of `spacing_m` along the polyline, heading along
    /// the direction of travel.
    pub fn sample_poses(&self) -> Result<Vec<Pose2D>> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidTrajectory("no waypoints".into()));
        }
        if !(self.spacing_m > 0.0) {
            return Err(Error::InvalidTrajectory(format!(
                "spacing must be positive, got {}",
                self.spacing_m
            )));
        }
        if self.waypoints.len() == 1 {
            return Ok(vec![Pose2D::new(
                self.waypoints[0].x,
                self.waypoints[0].y,
                0.0,
            )?]);
        }
        let mut poses = Vec::new();
        let mut leftover = 0.0f64; // distance into the next sample
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let seg = b.sub(a);
            let len = seg.norm();
            if len < 1e-12 {
                continue;
            }
            let heading = seg.y.atan2(seg.x);
            let mut s = leftover;
            while s <= len + 1e-9 {
                let p = a.add(seg.scale(s / len));
                poses.push(Pose2D::new(p.x, p.y, heading)?);
                s += self.spacing_m;
            }
            leftover = s - len;
        }
        Ok(poses)
    }
}

/// Record scans and oracle detections along a trajectory. Deterministic
/// given `seed`: record `i` derives independent scan and detection streams.
pub fn generate_dataset(
    map: &LabeledFootprintMap,
    grid: &OccupancyGridMap,
    trajectory: &TrajectorySpec,
    rig: &CameraRig,
    noise: &NoiseModel,
    scan_cfg: &ScanSimConfig,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    for (i, wp) in trajectory.waypoints.iter().enumerate() {
        if !grid.is_free_world(*wp) {
            return Err(Error::InvalidTrajectory(format!(
                "waypoint {i} at ({}, {}) is not in free space",
                wp.x, wp.y
            )));
        }
    }
    let poses = trajectory.sample_poses()?;
    let mut records = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        if !grid.is_free_world(pose.position()) {
            return Err(Error::InvalidTrajectory(format!(
                "interpolated pose {i} at ({}, {}) crosses occupied space",
                pose.x(),
                pose.y()
            )));
        }
        records.push(make_record(
            i as f64 * trajectory.interval_s,
            pose,
            map,
            grid,
            rig,
            noise,
            scan_cfg,
            derive_seed(seed, i as u64),
        )?);
    }
    Ok(records)
}

/// Independent global-localization trials: each record gets a fresh uniform
/// random free pose instead of a trajectory sample.
pub fn generate_random_pose_dataset(
    map: &LabeledFootprintMap,
    grid: &OccupancyGridMap,
    rig: &CameraRig,
    noise: &NoiseModel,
    scan_cfg: &ScanSimConfig,
    count: usize,
    interval_s: f64,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    let free = grid.free_cells();
    if free.is_empty() {
        return Err(Error::UnsampleableMap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let cell = free[rng.random_range(0..free.len())];
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let corner = grid.cell_corner(cell);
        let res = grid.resolution();
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pose = Pose2D::new_unchecked(corner.x + u * res, corner.y + v * res, theta);
        records.push(make_record(
            i as f64 * interval_s,
            &pose,
            map,
            grid,
            rig,
            noise,
            scan_cfg,
            derive_seed(seed, i as u64),
        )?);
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    t: f64,
    pose: &Pose2D,
    map: &LabeledFootprintMap,
    grid: &OccupancyGridMap,
    rig: &CameraRig,
    noise: &NoiseModel,
    scan_cfg: &ScanSimConfig,
    record_seed: u64,
) -> Result<DatasetRecord> {
    let (angle_min, angle_increment, ranges) =
        simulate_scan_dense(pose, grid, scan_cfg, derive_seed(record_seed, 0))?;
    let obs = oracle_detect(
        pose,
        rig,
        map,
        &noise.with_seed(derive_seed(record_seed, 1)),
    )?;
    // Record what the detector reported, including off-map items.
    let labels: Vec<Vec<String>> = obs
        .per_camera
        .iter()
        .zip(obs.off_map.iter())
        .map(|(on, off)| on.iter().chain(off.iter()).cloned().collect())
        .collect();
    Ok(DatasetRecord {
        t,
        pose_gt: *pose,
        scan: ScanRecord {
            angle_min,
            angle_increment,
            range_max: scan_cfg.max_range,
            ranges,
        },
        labels: Some(labels),
        images: None,
    })
}

/// Serialize records as newline-delimited JSON.
pub fn dataset_to_ndjson(records: &[DatasetRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Validation(format!("dataset serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_ndjson(records)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display(), e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display(), format!("record {i}: {e}")))?;
        records.push(record);
    }
    Ok(records)
}
