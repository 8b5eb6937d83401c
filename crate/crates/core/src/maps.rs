//! The two map representations sharing one world frame: the labeled
//! footprint map (text labels plus footprint polygons) and the occupancy
//! grid map, plus the Euclidean distance field derived from the grid.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{GridIndex, Polygon, Pose2D, Vec2};

/// One landmark: a non-empty text label and its footprint region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub label: String,
    pub polygon: Polygon,
}

impl Landmark {
    pub fn new(label: impl Into<String>, polygon: Polygon) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::Validation("landmark label is empty".into()));
        }
        Ok(Landmark { label, polygon })
    }
}

/// The labeled footprint map: landmarks and the set of distinct labels.
///
/// The same label may appear on multiple footprints (two shelves can both be
/// labeled "snack").
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFootprintMap {
    frame: String,
    landmarks: Vec<Landmark>,
    label_set: BTreeSet<String>,
}

impl LabeledFootprintMap {
    pub fn new(frame: impl Into<String>, landmarks: Vec<Landmark>) -> Result<Self> {
        for (i, lm) in landmarks.iter().enumerate() {
            if lm.label.trim().is_empty() {
                return Err(Error::Validation(format!("landmark {i} has empty label")));
            }
        }
        let label_set = landmarks.iter().map(|l| l.label.clone()).collect();
        Ok(LabeledFootprintMap {
            frame: frame.into(),
            landmarks,
            label_set,
        })
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    /// The set of distinct labels, in sorted order.
    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    /// A copy of this map without any landmark carrying `label`.
    pub fn without_label(&self, label: &str) -> Result<LabeledFootprintMap> {
        let kept: Vec<Landmark> = self
            .landmarks
            .iter()
            .filter(|lm| lm.label != label)
            .cloned()
            .collect();
        LabeledFootprintMap::new(self.frame.clone(), kept)
    }
}

#[derive(Serialize, Deserialize)]
struct FootprintFileRepr {
    frame: String,
    landmarks: Vec<LandmarkRepr>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRepr {
    label: String,
    polygon: Vec<[f64; 2]>,
}

/// Load a footprint map from its JSON document (see `docs/formats.md`).
pub fn load_footprint_map(path: impl AsRef<Path>) -> Result<LabeledFootprintMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    parse_footprint_map(&text, &path.display().to_string())
}

pub fn parse_footprint_map(text: &str, source: &str) -> Result<LabeledFootprintMap> {
    let repr: FootprintFileRepr =
        serde_json::from_str(text).map_err(|e| Error::parse(source, e.to_string()))?;
    let mut landmarks = Vec::with_capacity(repr.landmarks.len());
    for (i, lm) in repr.landmarks.into_iter().enumerate() {
        let polygon = Polygon::try_from(lm.polygon)
            .map_err(|e| Error::parse(source, format!("landmark {i} ({}): {e}", lm.label)))?;
        let landmark = Landmark::new(lm.label, polygon)
            .map_err(|e| Error::parse(source, format!("landmark {i}: {e}")))?;
        landmarks.push(landmark);
    }
    LabeledFootprintMap::new(repr.frame, landmarks)
}

pub fn save_footprint_map(map: &LabeledFootprintMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let repr = FootprintFileRepr {
        frame: map.frame.clone(),
        landmarks: map
            .landmarks
            .iter()
            .map(|lm| LandmarkRepr {
                label: lm.label.clone(),
                polygon: lm.polygon.clone().into(),
            })
            .collect(),
    };
    let text =
        serde_json::to_string_pretty(&repr).map_err(|e| Error::parse(path.display(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

/// Per-cell occupancy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

/// Rasterized free/occupied/unknown map.
///
/// Cell (0, 0) sits at the grid origin; rows grow along the origin frame's
/// +y axis and columns along +x (the loader flips PGM rows accordingly, so
/// saved images follow the usual top-down convention).
#[derive(Debug, Clone)]
pub struct OccupancyGridMap {
    resolution: f64,
    origin: Pose2D,
    // Cached origin rotation; world-grid transforms run in hot loops.
    rot: (f64, f64),
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

impl OccupancyGridMap {
    pub fn new(
        resolution: f64,
        origin: Pose2D,
        width: usize,
        height: usize,
        cells: Vec<CellState>,
    ) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::Validation(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::Validation(format!(
                "grid cell count {} does not match {}x{}",
                cells.len(),
                width,
                height
            )));
        }
        let (sin_t, cos_t) = origin.theta().sin_cos();
        Ok(OccupancyGridMap {
            resolution,
            origin,
            rot: (cos_t, sin_t),
            width,
            height,
            cells,
        })
    }

    pub fn filled(
        resolution: f64,
        origin: Pose2D,
        width: usize,
        height: usize,
        state: CellState,
    ) -> Result<Self> {
        OccupancyGridMap::new(resolution, origin, width, height, vec![state; width * height])
    }

    #[inline]
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    #[inline]
    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn state(&self, idx: GridIndex) -> CellState {
        self.cells[idx.row * self.width + idx.col]
    }

    pub fn set_state(&mut self, idx: GridIndex, state: CellState) {
        self.cells[idx.row * self.width + idx.col] = state;
    }

    /// World point to grid-local continuous coordinates (in cells).
    #[inline]
    fn world_to_local(&self, p: Vec2) -> Vec2 {
        let (c, s) = self.rot;
        let dx = p.x - self.origin.x();
        let dy = p.y - self.origin.y();
        Vec2::new(
            (c * dx + s * dy) / self.resolution,
            (-s * dx + c * dy) / self.resolution,
        )
    }

    /// Cell containing a world point, or `None` outside the grid.
    #[inline]
    pub fn world_to_cell(&self, p: Vec2) -> Option<GridIndex> {
        let local = self.world_to_local(p);
        if local.x < 0.0 || local.y < 0.0 {
            return None;
        }
        let col = local.x as usize;
        let row = local.y as usize;
        if col >= self.width || row >= self.height {
            return None;
        }
        Some(GridIndex::new(row, col))
    }

    #[inline]
    fn local_to_world(&self, local: Vec2) -> Vec2 {
        let (c, s) = self.rot;
        Vec2::new(
            self.origin.x() + c * local.x - s * local.y,
            self.origin.y() + s * local.x + c * local.y,
        )
    }

    /// World coordinates of a cell center.
    #[inline]
    pub fn cell_center(&self, idx: GridIndex) -> Vec2 {
        self.local_to_world(Vec2::new(
            (idx.col as f64 + 0.5) * self.resolution,
            (idx.row as f64 + 0.5) * self.resolution,
        ))
    }

    /// World coordinates of a cell's low corner.
    #[inline]
    pub fn cell_corner(&self, idx: GridIndex) -> Vec2 {
        self.local_to_world(Vec2::new(
            idx.col as f64 * self.resolution,
            idx.row as f64 * self.resolution,
        ))
    }

    pub fn is_free_world(&self, p: Vec2) -> bool {
        self.world_to_cell(p)
            .map_or(false, |idx| self.state(idx) == CellState::Free)
    }

    /// Exactly the free cells, in row-major order. Unknown cells are never
    /// returned.
    pub fn free_cells(&self) -> Vec<GridIndex> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if self.cells[row * self.width + col] == CellState::Free {
                    out.push(GridIndex::new(row, col));
                }
            }
        }
        out
    }

    pub fn occupied_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| **c == CellState::Occupied)
            .count()
    }

    /// Length of the map diagonal in meters.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64) * self.resolution
    }
}

pub use self::free_cells_fn as free_cells;

/// Free-standing form of [`OccupancyGridMap::free_cells`].
pub fn free_cells_fn(grid: &OccupancyGridMap) -> Vec<GridIndex> {
    grid.free_cells()
}

/// Metadata sidecar for an occupancy grid image, field-compatible with the
/// common robot map-server YAML format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupancyMapMeta {
    #[serde(default)]
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
    #[serde(default)]
    pub negate: i64,
    /// Values in (0, 1] are map-server occupancy fractions; values above 1
    /// are pixel thresholds directly (255 = free convention).
    #[serde(default = "default_free_thresh")]
    pub free_thresh: f64,
    #[serde(default = "default_occupied_thresh")]
    pub occupied_thresh: f64,
}

fn default_free_thresh() -> f64 {
    250.0
}

fn default_occupied_thresh() -> f64 {
    50.0
}

impl OccupancyMapMeta {
    /// Pixel-space thresholds (after the negate convention makes 255 = free):
    /// `pixel >= free` is free, `pixel <= occupied` is occupied.
    pub fn pixel_thresholds(&self) -> (u8, u8) {
        let free = if self.free_thresh <= 1.0 {
            // occupancy fraction below free_thresh is free:
            // (255 - p)/255 < f  <=>  p > 255*(1 - f)
            (255.0 * (1.0 - self.free_thresh)).ceil()
        } else {
            self.free_thresh
        };
        let occupied = if self.occupied_thresh <= 1.0 {
            (255.0 * (1.0 - self.occupied_thresh)).floor()
        } else {
            self.occupied_thresh
        };
        (free.clamp(0.0, 255.0) as u8, occupied.clamp(0.0, 255.0) as u8)
    }
}

/// Load an occupancy grid from a binary P5 PGM plus its metadata file.
pub fn load_occupancy_map(
    pgm_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<OccupancyGridMap> {
    let meta_path = meta_path.as_ref();
    let meta_text =
        std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path.display(), e))?;
    let meta: OccupancyMapMeta = serde_yaml::from_str(&meta_text)
        .map_err(|e| Error::parse(meta_path.display(), e.to_string()))?;

    let pgm_path = pgm_path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(pgm_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(pgm_path.display(), e))?;
    let (width, height, pixels) = parse_pgm(&bytes, &pgm_path.display().to_string())?;

    let origin = Pose2D::new(meta.origin[0], meta.origin[1], meta.origin[2])
        .map_err(|e| Error::parse(meta_path.display(), e.to_string()))?;
    let (free_px, occ_px) = meta.pixel_thresholds();

    let mut cells = vec![CellState::Unknown; width * height];
    for row in 0..height {
        // PGM row 0 is the image top; grid row 0 is at the origin (bottom).
        let img_row = height - 1 - row;
        for col in 0..width {
            let raw = pixels[img_row * width + col];
            let value = if meta.negate != 0 { 255 - raw } else { raw };
            cells[row * width + col] = if value >= free_px {
                CellState::Free
            } else if value <= occ_px {
                CellState::Occupied
            } else {
                CellState::Unknown
            };
        }
    }
    OccupancyGridMap::new(meta.resolution, origin, width, height, cells)
}

/// Write a grid as binary P5 PGM plus metadata. Free cells are written as
/// 254, occupied as 0, unknown as 205, matching the map-server convention.
pub fn save_occupancy_map(
    grid: &OccupancyGridMap,
    pgm_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    let pgm_path = pgm_path.as_ref();
    let meta_path = meta_path.as_ref();

    let mut data = Vec::with_capacity(grid.width * grid.height + 32);
    data.extend_from_slice(format!("P5\n{} {}\n255\n", grid.width, grid.height).as_bytes());
    for row in (0..grid.height).rev() {
        for col in 0..grid.width {
            let byte = match grid.cells[row * grid.width + col] {
                CellState::Free => 254u8,
                CellState::Occupied => 0u8,
                CellState::Unknown => 205u8,
            };
            data.push(byte);
        }
    }
    std::fs::File::create(pgm_path)
        .and_then(|mut f| f.write_all(&data))
        .map_err(|e| Error::io(pgm_path.display(), e))?;

    let image_name = pgm_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut meta = String::new();
    let _ = writeln!(meta, "image: {image_name}");
    let _ = writeln!(meta, "resolution: {}", grid.resolution);
    let _ = writeln!(
        meta,
        "origin: [{}, {}, {}]",
        grid.origin.x(),
        grid.origin.y(),
        grid.origin.theta()
    );
    let _ = writeln!(meta, "negate: 0");
    let _ = writeln!(meta, "free_thresh: 250");
    let _ = writeln!(meta, "occupied_thresh: 50");
    std::fs::write(meta_path, meta).map_err(|e| Error::io(meta_path.display(), e))
}

fn parse_pgm(bytes: &[u8], source: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;

    fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            None
        } else {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        }
    }

    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| Error::parse(source, "missing PGM magic"))?;
    if magic != "P5" {
        return Err(Error::parse(source, format!("expected P5, got {magic}")));
    }
    let width: usize = next_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(source, "bad width"))?;
    let height: usize = next_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(source, "bad height"))?;
    let maxval: usize = next_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(source, "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(source, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(Error::parse(
            source,
            format!(
                "payload has {} bytes, header promises {expected}",
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    Ok((width, height, bytes[pos..pos + expected].to_vec()))
}

/// Per-cell Euclidean distance (meters) to the nearest occupied cell center.
#[derive(Debug, Clone)]
pub struct DistanceField {
    resolution: f64,
    origin: Pose2D,
    rot: (f64, f64),
    width: usize,
    height: usize,
    distances: Vec<f64>,
    /// Set when the source grid had no occupied cell; every distance then
    /// holds the 10x-diagonal sentinel.
    no_obstacles: bool,
}

impl DistanceField {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn no_obstacles(&self) -> bool {
        self.no_obstacles
    }

    #[inline]
    pub fn distance(&self, idx: GridIndex) -> f64 {
        self.distances[idx.row * self.width + idx.col]
    }

    /// Bilinear interpolation of the field over the four surrounding cell
    /// centers, or `None` for points outside the grid.
    #[inline]
    pub fn sample(&self, p: Vec2) -> Option<f64> {
        let (c, s) = self.rot;
        let dx = p.x - self.origin.x();
        let dy = p.y - self.origin.y();
        let local = Vec2::new(
            (c * dx + s * dy) / self.resolution,
            (-s * dx + c * dy) / self.resolution,
        );
        if local.x < 0.0 || local.y < 0.0 {
            return None;
        }
        if local.x >= self.width as f64 || local.y >= self.height as f64 {
            return None;
        }
        // Shift by half a cell so integer coordinates land on cell centers,
        // clamping at the border.
        let gx = (local.x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (local.y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let c0 = gx as usize;
        let r0 = gy as usize;
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fx = gx - c0 as f64;
        let fy = gy - r0 as f64;
        let d00 = self.distances[r0 * self.width + c0];
        let d01 = self.distances[r0 * self.width + c1];
        let d10 = self.distances[r1 * self.width + c0];
        let d11 = self.distances[r1 * self.width + c1];
        let top = d00 + (d01 - d00) * fx;
        let bottom = d10 + (d11 - d10) * fx;
        Some(top + (bottom - top) * fy)
    }
}

/// Exact two-pass Euclidean distance transform (squared-distance parabola
/// envelope per row, then per column).
///
/// Unknown cells count as non-obstacles. A grid with no occupied cell yields
/// a field of the sentinel distance 10x the map diagonal, flagged via
/// [`DistanceField::no_obstacles`].
pub fn build_distance_field(grid: &OccupancyGridMap) -> DistanceField {
    let (w, h) = (grid.width, grid.height);
    let sentinel = 10.0 * grid.diagonal();

    if grid.occupied_count() == 0 {
        return DistanceField {
            resolution: grid.resolution,
            origin: grid.origin,
            rot: grid.rot,
            width: w,
            height: h,
            distances: vec![sentinel; w * h],
            no_obstacles: true,
        };
    }

    const INF: f64 = f64::INFINITY;
    let mut sq = vec![INF; w * h];
    for (i, cell) in grid.cells.iter().enumerate() {
        if *cell == CellState::Occupied {
            sq[i] = 0.0;
        }
    }

    let mut scratch_f = vec![0.0f64; w.max(h)];
    let mut scratch_d = vec![0.0f64; w.max(h)];

    // Rows.
    for row in 0..h {
        let base = row * w;
        scratch_f[..w].copy_from_slice(&sq[base..base + w]);
        dt_1d(&scratch_f[..w], &mut scratch_d[..w]);
        sq[base..base + w].copy_from_slice(&scratch_d[..w]);
    }
    // Columns.
    for col in 0..w {
        for row in 0..h {
            scratch_f[row] = sq[row * w + col];
        }
        dt_1d(&scratch_f[..h], &mut scratch_d[..h]);
        for row in 0..h {
            sq[row * w + col] = scratch_d[row];
        }
    }

    let res = grid.resolution;
    let distances = sq.iter().map(|d2| d2.sqrt() * res).collect();
    DistanceField {
        resolution: grid.resolution,
        origin: grid.origin,
        rot: grid.rot,
        width: w,
        height: h,
        distances,
        no_obstacles: false,
    }
}

/// 1D squared-distance transform via the lower envelope of parabolas.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    debug_assert_eq!(out.len(), n);
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n]; // parabola apex positions
    let mut z = vec![0.0f64; n + 1]; // envelope breakpoints
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;

    let intersect = |f: &[f64], p: usize, q: usize| -> f64 {
        ((f[p] + (p * p) as f64) - (f[q] + (q * q) as f64)) / (2.0 * p as f64 - 2.0 * q as f64)
    };

    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if f[v[k]] == f64::INFINITY {
            v[k] = q;
            continue;
        }
        let mut s = intersect(f, q, v[k]);
        while k > 0 && s <= z[k] {
            k -= 1;
            s = intersect(f, q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }

    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        out[q] = dq * dq + f[v[k]];
    }
}
