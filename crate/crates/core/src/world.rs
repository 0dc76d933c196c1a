//! Occupancy/semantic grid worlds, constraint regions and the PGM + JSON map
//! format.
//!
//! Cell `(col, row)` covers `[origin.x + col·res, origin.x + (col+1)·res)` by
//! `[origin.y + row·res, origin.y + (row+1)·res)`; row 0 is the southern edge
//! and cells are stored row-major. In the PGM file the first row is the
//! northern edge, as image viewers expect.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::geometry::{Point2, Polyline};

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const DEFAULT_FOOTPRINT_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellClass {
    Free,
    Wall,
    Obstacle,
    Rock,
    Grass,
    Road,
    Sidewalk,
    Crosswalk,
}

impl CellClass {
    pub const ALL: [CellClass; 8] = [
        CellClass::Free,
        CellClass::Wall,
        CellClass::Obstacle,
        CellClass::Rock,
        CellClass::Grass,
        CellClass::Road,
        CellClass::Sidewalk,
        CellClass::Crosswalk,
    ];

    /// Wall, Obstacle and Rock block motion. Grass is low like Rock but
    /// traversable.
    pub fn is_blocking(self) -> bool {
        matches!(self, CellClass::Wall | CellClass::Obstacle | CellClass::Rock)
    }

    /// Gray value used when writing maps.
    pub fn default_gray(self) -> u8 {
        match self {
            CellClass::Free => 255,
            CellClass::Wall => 0,
            CellClass::Obstacle => 64,
            CellClass::Rock => 96,
            CellClass::Grass => 160,
            CellClass::Road => 128,
            CellClass::Sidewalk => 200,
            CellClass::Crosswalk => 230,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Free => "Free",
            CellClass::Wall => "Wall",
            CellClass::Obstacle => "Obstacle",
            CellClass::Rock => "Rock",
            CellClass::Grass => "Grass",
            CellClass::Road => "Road",
            CellClass::Sidewalk => "Sidewalk",
            CellClass::Crosswalk => "Crosswalk",
        }
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellClass {
    type Err = WorldError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| WorldError::Format(format!("unknown cell class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    cells: Vec<CellClass>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point2, fill: CellClass) -> Self {
        Self::from_cells(width, height, resolution, origin, vec![fill; width * height])
            .expect("fill constructor is always consistent")
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        cells: Vec<CellClass>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::Format("grid must have at least one cell".into()));
        }
        if width * height != cells.len() {
            return Err(WorldError::Format(format!(
                "{width}x{height} grid needs {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::Format(format!("resolution must be positive, got {resolution}")));
        }
        if !origin.is_finite() {
            return Err(WorldError::Format("origin must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cells(&self) -> &[CellClass] {
        &self.cells
    }

    /// Extent in meters along x and y.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.resolution, self.height as f64 * self.resolution)
    }

    pub fn get(&self, col: usize, row: usize) -> CellClass {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, class: CellClass) {
        self.cells[row * self.width + col] = class;
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.cell_of(p).is_some()
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let gx = ((p.x - self.origin.x) / self.resolution).floor();
        let gy = ((p.y - self.origin.y) / self.resolution).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        Some((gx as usize, gy as usize))
    }

    pub fn class_at(&self, p: Point2) -> Option<CellClass> {
        self.cell_of(p).map(|(c, r)| self.get(c, r))
    }

    /// Fills every cell whose center lies inside the axis-aligned rectangle.
    pub fn fill_rect(&mut self, min: Point2, max: Point2, class: CellClass) {
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell_center(col, row);
                if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                    self.set(col, row, class);
                }
            }
        }
    }

    /// Fills every cell whose center lies within `radius` of `center`.
    pub fn fill_disc(&mut self, center: Point2, radius: f64, class: CellClass) {
        for row in 0..self.height {
            for col in 0..self.width {
                if self.cell_center(col, row).distance(center) <= radius {
                    self.set(col, row, class);
                }
            }
        }
    }

    /// Replaces every cell of class `from` with `to`.
    pub fn reclassify(&self, from: CellClass, to: CellClass) -> OccupancyGrid {
        let mut out = self.clone();
        for c in &mut out.cells {
            if *c == from {
                *c = to;
            }
        }
        out
    }

    /// Index ranges of cells whose centers could lie within `r` of `p`,
    /// widened by one cell on each side.
    fn candidate_range(&self, p: Point2, r: f64) -> (usize, usize, usize, usize) {
        let res = self.resolution;
        let lo = |v: f64, o: f64| (((v - r - o) / res - 0.5).floor() - 1.0).max(0.0) as usize;
        let hi = |v: f64, o: f64, n: usize| {
            let h = ((v + r - o) / res - 0.5).ceil() + 1.0;
            (h.max(0.0) as usize).min(n - 1)
        };
        (
            lo(p.x, self.origin.x),
            hi(p.x, self.origin.x, self.width),
            lo(p.y, self.origin.y),
            hi(p.y, self.origin.y, self.height),
        )
    }

    /// True when `p` is outside the grid or any blocking cell center lies
    /// within `footprint_radius` of it.
    pub fn is_blocked(&self, p: Point2, footprint_radius: f64) -> bool {
        if !self.contains(p) {
            return true;
        }
        let r = footprint_radius.max(0.0);
        let (c0, c1, r0, r1) = self.candidate_range(p, r);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if self.get(col, row).is_blocking() && self.cell_center(col, row).distance(p) <= r {
                    return true;
                }
            }
        }
        false
    }

    /// Marks as Obstacle every non-blocking cell whose center lies within
    /// `radius` of the area of a blocking cell. Blocking cells keep their
    /// class.
    pub fn inflate(&self, radius: f64) -> OccupancyGrid {
        let mut out = self.clone();
        if radius <= 0.0 {
            return out;
        }
        let res = self.resolution;
        let reach = (radius / res + 0.5).ceil() as i64;
        let mut stencil = Vec::new();
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let dx = ((di.abs() as f64) - 0.5).max(0.0) * res;
                let dy = ((dj.abs() as f64) - 0.5).max(0.0) * res;
                if libm::hypot(dx, dy) <= radius {
                    stencil.push((di, dj));
                }
            }
        }
        let (w, h) = (self.width as i64, self.height as i64);
        for row in 0..h {
            for col in 0..w {
                if !self.get(col as usize, row as usize).is_blocking() {
                    continue;
                }
                for &(di, dj) in &stencil {
                    let (c, r) = (col + di, row + dj);
                    if c < 0 || r < 0 || c >= w || r >= h {
                        continue;
                    }
                    let idx = (r * w + c) as usize;
                    if !out.cells[idx].is_blocking() {
                        out.cells[idx] = CellClass::Obstacle;
                    }
                }
            }
        }
        out
    }

    /// Walks the grid cells along a ray and reports the distance to the
    /// boundary of the first blocking cell. Rays that leave the grid or
    /// exceed `max_range` report `(max_range, None)`.
    pub fn raycast(
        &self,
        origin: Point2,
        direction: f64,
        max_range: f64,
    ) -> Result<(f64, Option<CellClass>), WorldError> {
        let (mut col, mut row) = self
            .cell_of(origin)
            .ok_or(WorldError::OutOfBounds { x: origin.x, y: origin.y })?;
        let first = self.get(col, row);
        if first.is_blocking() {
            return Ok((0.0, Some(first)));
        }
        let (dy, dx) = libm::sincos(direction);
        let res = self.resolution;
        let axis = |d: f64, pos: f64, o: f64, idx: usize| -> (i64, f64, f64) {
            if d > 1e-12 {
                let next = o + (idx as f64 + 1.0) * res;
                (1, (next - pos) / d, res / d)
            } else if d < -1e-12 {
                let next = o + idx as f64 * res;
                (-1, (next - pos) / d, -res / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, mut t_max_x, t_delta_x) = axis(dx, origin.x, self.origin.x, col);
        let (step_y, mut t_max_y, t_delta_y) = axis(dy, origin.y, self.origin.y, row);
        loop {
            let t;
            if (t_max_x - t_max_y).abs() <= 1e-12 * t_max_x.max(1.0) {
                // Exact corner crossing: step diagonally without touching
                // the two side cells.
                t = t_max_x;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
                let c = col as i64 + step_x;
                let r = row as i64 + step_y;
                if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
                    return Ok((max_range, None));
                }
                col = c as usize;
                row = r as usize;
            } else if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_delta_x;
                let c = col as i64 + step_x;
                if c < 0 || c >= self.width as i64 {
                    return Ok((max_range, None));
                }
                col = c as usize;
            } else {
                t = t_max_y;
                t_max_y += t_delta_y;
                let r = row as i64 + step_y;
                if r < 0 || r >= self.height as i64 {
                    return Ok((max_range, None));
                }
                row = r as usize;
            }
            if t > max_range {
                return Ok((max_range, None));
            }
            let class = self.get(col, row);
            if class.is_blocking() {
                return Ok((t.max(0.0), Some(class)));
            }
        }
    }

    /// Index of the first segment of `line` that passes through a blocking
    /// cell (or leaves the grid), sampled at a quarter cell. A single-point
    /// line reports segment 0 when that point is blocked.
    pub fn first_blocking_segment(&self, line: &Polyline) -> Option<usize> {
        let blocked = |p: Point2| self.class_at(p).is_none_or(|c| c.is_blocking());
        if line.len() == 1 {
            return blocked(line.first()).then_some(0);
        }
        let step = self.resolution / 4.0;
        for (i, (a, b)) in line.segments().enumerate() {
            let n = ((a.distance(b) / step).ceil() as usize).max(1);
            if (0..=n).any(|k| blocked(a.lerp(b, k as f64 / n as f64))) {
                return Some(i);
            }
        }
        None
    }

    pub fn intersects_blocking(&self, line: &Polyline) -> bool {
        self.first_blocking_segment(line).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    ForbiddenArea,
    CrossOnlyAt,
    DirectionalLane,
}

/// A commonsense constraint attached to a map.
///
/// `CrossOnlyAt` regions guard their polygon (a road, say) and may only be
/// entered inside one of `crossings` (the crosswalks). `DirectionalLane`
/// carries the permitted travel direction in `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRegion {
    pub id: String,
    pub kind: RegionKind,
    pub polygon: Polyline,
    pub direction: Option<f64>,
    pub crossings: Vec<Polyline>,
}

impl ConstraintRegion {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |reason: &str| WorldError::InvalidRegion {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        let check_closed = |poly: &Polyline, what: &str| {
            if poly.len() < 4 {
                return Err(bad(&format!("{what} needs at least 4 points (closed)")));
            }
            if poly.first() != poly.last() {
                return Err(bad(&format!("{what} is not closed")));
            }
            Ok(())
        };
        check_closed(&self.polygon, "polygon")?;
        match self.kind {
            RegionKind::DirectionalLane => {
                if !self.direction.is_some_and(f64::is_finite) {
                    return Err(bad("DirectionalLane requires direction_rad"));
                }
            }
            RegionKind::CrossOnlyAt => {
                for c in &self.crossings {
                    check_closed(c, "crossing")?;
                }
            }
            RegionKind::ForbiddenArea => {}
        }
        if self.kind != RegionKind::CrossOnlyAt && !self.crossings.is_empty() {
            return Err(bad("only CrossOnlyAt regions may declare crossings"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point2) -> bool {
        point_in_polygon(&self.polygon, p)
    }
}

/// Even-odd point-in-region test; points on the boundary count as inside.
pub fn point_in_region(region: &ConstraintRegion, p: Point2) -> bool {
    point_in_polygon(&region.polygon, p)
}

pub fn point_in_polygon(polygon: &Polyline, p: Point2) -> bool {
    const EPS: f64 = 1e-9;
    for (a, b) in polygon.segments() {
        let ab = b - a;
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        if a.lerp(b, t).distance(p) <= EPS {
            return true;
        }
    }
    let mut inside = false;
    for (a, b) in polygon.segments() {
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegionJson {
    id: String,
    kind: RegionKind,
    polygon: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    crossings: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapMetaJson {
    resolution: f64,
    origin: [f64; 2],
    classes: BTreeMap<String, String>,
    #[serde(default)]
    regions: Vec<RegionJson>,
}

fn to_polyline(id: &str, pts: &[[f64; 2]]) -> Result<Polyline, WorldError> {
    Polyline::new(pts.iter().map(|&p| p.into()).collect()).map_err(|e| WorldError::InvalidRegion {
        id: id.to_string(),
        reason: e.to_string(),
    })
}

fn region_from_json(r: &RegionJson) -> Result<ConstraintRegion, WorldError> {
    let region = ConstraintRegion {
        id: r.id.clone(),
        kind: r.kind,
        polygon: to_polyline(&r.id, &r.polygon)?,
        direction: r.direction_rad,
        crossings: r
            .crossings
            .iter()
            .map(|c| to_polyline(&r.id, c))
            .collect::<Result<_, _>>()?,
    };
    region.validate()?;
    Ok(region)
}

fn region_to_json(r: &ConstraintRegion) -> RegionJson {
    let pts = |p: &Polyline| p.points().iter().map(|&q| q.into()).collect();
    RegionJson {
        id: r.id.clone(),
        kind: r.kind,
        polygon: pts(&r.polygon),
        direction_rad: r.direction,
        crossings: r.crossings.iter().map(pts).collect(),
    }
}

/// Parses a P2 or P5 graymap into `(width, height, rows)` with rows
/// top-to-bottom.
fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), WorldError> {
    let err = |m: &str| WorldError::Format(format!("PGM: {m}"));
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Result<String, WorldError> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(err("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    let num = |s: String| s.parse::<usize>().map_err(|_| err(&format!("bad number `{s}`")));
    let width = num(next_token(&mut pos)?)?;
    let height = num(next_token(&mut pos)?)?;
    let maxval = num(next_token(&mut pos)?)?;
    if width == 0 || height == 0 {
        return Err(err("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(&format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let data = match magic.as_str() {
        "P5" => {
            // Exactly one whitespace byte separates the header from the raster.
            if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
                return Err(err("missing raster separator"));
            }
            let raster = &bytes[pos + 1..];
            if raster.len() < n {
                return Err(err(&format!("expected {n} raster bytes, got {}", raster.len())));
            }
            raster[..n].to_vec()
        }
        "P2" => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let v = num(next_token(&mut pos)?)?;
                if v > maxval {
                    return Err(err(&format!("sample {v} exceeds maxval {maxval}")));
                }
                out.push(v as u8);
            }
            out
        }
        other => return Err(err(&format!("unsupported magic `{other}`"))),
    };
    Ok((width, height, data))
}

/// Parses a map from its PGM raster and JSON sidecar.
pub fn load_map(
    pgm_bytes: &[u8],
    meta_json: &[u8],
) -> Result<(OccupancyGrid, Vec<ConstraintRegion>), WorldError> {
    let meta: MapMetaJson =
        serde_json::from_slice(meta_json).map_err(|e| WorldError::Format(format!("map JSON: {e}")))?;
    let mut table = [None; 256];
    for (gray, class) in &meta.classes {
        let g: u8 = gray
            .parse()
            .map_err(|_| WorldError::Format(format!("class key `{gray}` is not a gray value")))?;
        table[g as usize] = Some(class.parse::<CellClass>()?);
    }
    let (width, height, raster) = parse_pgm(pgm_bytes)?;
    let mut cells = vec![CellClass::Free; width * height];
    for (i, &g) in raster.iter().enumerate() {
        let class = table[g as usize].ok_or(WorldError::Class(g))?;
        let (img_row, col) = (i / width, i % width);
        let row = height - 1 - img_row;
        cells[row * width + col] = class;
    }
    let grid = OccupancyGrid::from_cells(width, height, meta.resolution, meta.origin.into(), cells)?;
    let regions = meta.regions.iter().map(region_from_json).collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for r in &regions {
        if !seen.insert(r.id.as_str()) {
            return Err(WorldError::InvalidRegion {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok((grid, regions))
}

/// Serializes a map as `(P5 PGM bytes, JSON sidecar bytes)` using the default
/// gray table.
pub fn save_map(grid: &OccupancyGrid, regions: &[ConstraintRegion]) -> (Vec<u8>, Vec<u8>) {
    let mut pgm = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    for img_row in 0..grid.height {
        let row = grid.height - 1 - img_row;
        pgm.extend((0..grid.width).map(|col| grid.get(col, row).default_gray()));
    }
    let meta = MapMetaJson {
        resolution: grid.resolution,
        origin: grid.origin.into(),
        classes: CellClass::ALL
            .iter()
            .map(|c| (c.default_gray().to_string(), c.name().to_string()))
            .collect(),
        regions: regions.iter().map(region_to_json).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&meta).expect("map metadata serializes");
    json.push(b'\n');
    (pgm, json)
}

/// Reads `map.pgm` and `map.json` from an environment directory.
pub fn load_map_dir(dir: &Path) -> Result<(OccupancyGrid, Vec<ConstraintRegion>), WorldError> {
    let pgm = fs::read(dir.join("map.pgm"))?;
    let meta = fs::read(dir.join("map.json"))?;
    load_map(&pgm, &meta)
}

pub fn save_map_dir(dir: &Path, grid: &OccupancyGrid, regions: &[ConstraintRegion]) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let (pgm, json) = save_map(grid, regions);
    fs::write(dir.join("map.pgm"), pgm)?;
    fs::write(dir.join("map.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(extra: &str) -> String {
        format!(
            r#"{{"resolution": 0.1, "origin": [0, 0], "classes": {{"255": "Free", "0": "Wall", "96": "Rock"}}{extra}}}"#
        )
    }

    #[test]
    fn loads_all_free_p2() {
        let pgm = "P2\n# tiny\n4 4\n255\n".to_string() + &"255 ".repeat(16);
        let (grid, regions) = load_map(pgm.as_bytes(), meta("").as_bytes()).unwrap();
        assert!(grid.cells().iter().all(|&c| c == CellClass::Free));
        let (w, h) = grid.extent();
        assert!((w - 0.4).abs() < 1e-12 && (h - 0.4).abs() < 1e-12);
        assert!(regions.is_empty());
    }

    #[test]
    fn rejects_undeclared_gray() {
        let mut pgm = b"P5\n2 2\n255\n".to_vec();
        pgm.extend([255, 255, 7, 255]);
        assert!(matches!(load_map(&pgm, meta("").as_bytes()), Err(WorldError::Class(7))));
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(matches!(load_map(b"P7\n1 1\n255\n\0", meta("").as_bytes()), Err(WorldError::Format(_))));
        assert!(matches!(load_map(b"P5\n2 2\n255\n\xff", meta("").as_bytes()), Err(WorldError::Format(_))));
        assert!(matches!(load_map(b"P5\n1 1\n255\n\xff", b"{nope"), Err(WorldError::Format(_))));
        let open = meta(r#", "regions": [{"id": "a", "kind": "ForbiddenArea", "polygon": [[0,0],[1,0],[1,1],[0,1]]}]"#);
        assert!(matches!(
            load_map(b"P5\n1 1\n255\n\xff", open.as_bytes()),
            Err(WorldError::InvalidRegion { .. })
        ));
        let lane = meta(r#", "regions": [{"id": "a", "kind": "DirectionalLane", "polygon": [[0,0],[1,0],[1,1],[0,0]]}]"#);
        assert!(load_map(b"P5\n1 1\n255\n\xff", lane.as_bytes()).is_err());
    }

    #[test]
    fn pgm_rows_are_north_first() {
        // Top image row is Wall; it must land in the northern grid row.
        let pgm = b"P2 2 2 255\n0 0\n255 255\n";
        let (grid, _) = load_map(pgm, meta("").as_bytes()).unwrap();
        assert_eq!(grid.get(0, 1), CellClass::Wall);
        assert_eq!(grid.get(0, 0), CellClass::Free);
    }

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> OccupancyGrid {
        let cells = (0..w * h)
            .map(|_| {
                if rng.random::<f64>() < density {
                    [CellClass::Wall, CellClass::Obstacle, CellClass::Rock][rng.random_range(0..3)]
                } else {
                    [CellClass::Free, CellClass::Grass, CellClass::Road][rng.random_range(0..3)]
                }
            })
            .collect();
        OccupancyGrid::from_cells(w, h, 0.1, Point2::new(-1.0, 2.0), cells).unwrap()
    }

    #[test]
    fn save_load_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = random_grid(&mut rng, 13, 7, 0.3);
        let region = ConstraintRegion {
            id: "road".into(),
            kind: RegionKind::CrossOnlyAt,
            polygon: Polyline::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)]).unwrap(),
            direction: None,
            crossings: vec![Polyline::from_xy(&[(0.2, 0.0), (0.4, 0.0), (0.4, 1.0), (0.2, 0.0)]).unwrap()],
        };
        let (pgm, json) = save_map(&grid, std::slice::from_ref(&region));
        let (g1, r1) = load_map(&pgm, &json).unwrap();
        assert_eq!(g1, grid);
        assert_eq!(r1, vec![region]);
        let (pgm2, json2) = save_map(&g1, &r1);
        assert_eq!((pgm2, json2), (pgm, json));
    }

    #[test]
    fn blocked_examples() {
        let mut grid = OccupancyGrid::new(20, 20, 0.1, Point2::ORIGIN, CellClass::Free);
        assert!(!grid.is_blocked(Point2::new(1.0, 1.0), 0.3));
        grid.set(5, 5, CellClass::Rock);
        assert!(grid.is_blocked(grid.cell_center(5, 5), 0.0));
        grid.set(5, 5, CellClass::Grass);
        assert!(!grid.is_blocked(grid.cell_center(5, 5), 0.3));
        assert!(grid.is_blocked(Point2::new(-0.01, 1.0), 0.0));
    }

    #[test]
    fn blocked_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let grid = random_grid(&mut rng, 16, 12, 0.05);
            for _ in 0..40 {
                let p = Point2::new(-1.0 + rng.random::<f64>() * 1.6, 2.0 + rng.random::<f64>() * 1.2);
                let r = rng.random::<f64>() * 0.5;
                let brute = !grid.contains(p)
                    || (0..grid.height()).any(|row| {
                        (0..grid.width()).any(|col| {
                            grid.get(col, row).is_blocking() && grid.cell_center(col, row).distance(p) <= r
                        })
                    });
                assert_eq!(grid.is_blocked(p, r), brute);
                // Just outside the nearest blocking center.
                let nearest = (0..grid.height())
                    .flat_map(|row| (0..grid.width()).map(move |col| (col, row)))
                    .filter(|&(c, r)| grid.get(c, r).is_blocking())
                    .map(|(c, r)| grid.cell_center(c, r).distance(p))
                    .fold(f64::INFINITY, f64::min);
                if grid.contains(p) && nearest.is_finite() {
                    assert!(!grid.is_blocked(p, nearest - 1e-9));
                    assert!(grid.is_blocked(p, nearest + 1e-9));
                }
            }
        }
    }

    #[test]
    fn inflate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = random_grid(&mut rng, 10, 10, 0.2);
        assert_eq!(grid.inflate(0.0), grid);
    }

    #[test]
    fn inflate_one_cell_gives_three_by_three() {
        let mut grid = OccupancyGrid::new(9, 9, 0.1, Point2::ORIGIN, CellClass::Free);
        grid.set(4, 4, CellClass::Obstacle);
        let inflated = grid.inflate(0.1);
        for row in 0..9 {
            for col in 0..9 {
                let expect = (3..=5).contains(&col) && (3..=5).contains(&row);
                assert_eq!(inflated.get(col, row).is_blocking(), expect, "cell {col},{row}");
            }
        }
    }

    #[test]
    fn inflate_preserves_classes() {
        let mut grid = OccupancyGrid::new(9, 9, 0.1, Point2::ORIGIN, CellClass::Grass);
        grid.set(4, 4, CellClass::Wall);
        let inflated = grid.inflate(0.1);
        assert_eq!(inflated.get(4, 4), CellClass::Wall);
        assert_eq!(inflated.get(3, 4), CellClass::Obstacle);
        assert_eq!(inflated.get(0, 0), CellClass::Grass);
    }

    #[test]
    fn raycast_axis_aligned_wall() {
        let mut grid = OccupancyGrid::new(60, 20, 0.1, Point2::ORIGIN, CellClass::Free);
        // Wall face at x = 4.0; origin at x = 1.0.
        grid.fill_rect(Point2::new(4.0, 0.0), Point2::new(6.0, 2.0), CellClass::Wall);
        let (d, class) = grid.raycast(Point2::new(1.0, 1.0), 0.0, 10.0).unwrap();
        assert!((d - 3.0).abs() <= 0.05, "{d}");
        assert_eq!(class, Some(CellClass::Wall));
        let (d, class) = grid.raycast(Point2::new(1.0, 1.0), std::f64::consts::PI, 10.0).unwrap();
        assert_eq!((d, class), (10.0, None));
    }

    #[test]
    fn raycast_errors_and_free_grid() {
        let grid = OccupancyGrid::new(10, 10, 0.1, Point2::ORIGIN, CellClass::Free);
        assert_eq!(grid.raycast(Point2::new(0.5, 0.5), 0.3, 2.0).unwrap(), (2.0, None));
        assert!(matches!(
            grid.raycast(Point2::new(5.0, 0.5), 0.0, 2.0),
            Err(WorldError::OutOfBounds { .. })
        ));
    }

    /// Marches the ray in tiny fixed steps.
    fn march(grid: &OccupancyGrid, o: Point2, dir: f64, max: f64) -> (f64, Option<CellClass>) {
        let step = 1e-4;
        let d = Point2::new(dir.cos(), dir.sin());
        let mut t = 0.0;
        while t <= max {
            match grid.class_at(o + d * t) {
                None => return (max, None),
                Some(c) if c.is_blocking() => return (t, Some(c)),
                _ => {}
            }
            t += step;
        }
        (max, None)
    }

    #[test]
    fn raycast_diagonal_corridor_matches_marcher() {
        // One-cell-wide diagonal corridor carved through walls.
        let mut grid = OccupancyGrid::new(40, 40, 1.0, Point2::ORIGIN, CellClass::Wall);
        for i in 0..40 {
            grid.set(i, i, CellClass::Free);
        }
        let o = grid.cell_center(2, 2);
        for dir in [std::f64::consts::FRAC_PI_4, 0.8, 0.7, 0.9] {
            let (d, c) = grid.raycast(o, dir, 60.0).unwrap();
            let (md, mc) = march(&grid, o, dir, 60.0);
            assert!((d - md).abs() <= 1.0, "dir {dir}: {d} vs {md}");
            assert_eq!(c, mc);
        }
    }

    #[test]
    fn raycast_matches_marcher_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let grid = random_grid(&mut rng, 30, 30, 0.05);
            let o = Point2::new(-1.0 + 0.3 + rng.random::<f64>() * 2.4, 2.3 + rng.random::<f64>() * 2.4);
            let dir = rng.random::<f64>() * std::f64::consts::TAU;
            let (d, c) = grid.raycast(o, dir, 5.0).unwrap();
            let (md, mc) = march(&grid, o, dir, 5.0);
            assert!(d <= 5.0);
            assert!((d - md).abs() <= 2e-4 + 1e-9 || (c.is_none() && mc.is_none()), "{d} vs {md}");
            assert_eq!(c, mc);
        }
    }

    fn unit_square() -> ConstraintRegion {
        ConstraintRegion {
            id: "sq".into(),
            kind: RegionKind::ForbiddenArea,
            polygon: Polyline::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]).unwrap(),
            direction: None,
            crossings: vec![],
        }
    }

    #[test]
    fn point_in_region_examples() {
        let sq = unit_square();
        assert!(point_in_region(&sq, Point2::new(0.5, 0.5)));
        assert!(!point_in_region(&sq, Point2::new(1.5, 0.5)));
        assert!(point_in_region(&sq, Point2::new(1.0, 0.5)));
        assert!(point_in_region(&sq, Point2::new(0.0, 0.0)));
    }

    fn convex_polygon(rng: &mut ChaCha8Rng) -> Vec<Point2> {
        let n = rng.random_range(3..9);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        angles.sort_by(f64::total_cmp);
        let c = Point2::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
        let r = 0.5 + rng.random::<f64>() * 2.0;
        let mut pts: Vec<Point2> = angles.iter().map(|&a| c + Point2::new(a.cos(), a.sin()) * r).collect();
        pts.push(pts[0]);
        pts
    }

    #[test]
    fn point_in_convex_matches_half_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let pts = convex_polygon(&mut rng);
            let region = ConstraintRegion {
                id: "c".into(),
                kind: RegionKind::ForbiddenArea,
                polygon: Polyline::new(pts.clone()).unwrap(),
                direction: None,
                crossings: vec![],
            };
            for _ in 0..50 {
                let p = Point2::new(rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>() * 8.0 - 4.0);
                // CCW vertices: inside iff left of (or on) every edge.
                let half = pts.windows(2).all(|w| (w[1] - w[0]).cross(p - w[0]) >= -1e-12);
                assert_eq!(point_in_region(&region, p), half);
            }
        }
    }

    proptest! {
        #[test]
        fn blocked_monotone_in_radius(seed in 0u64..500, x in 0.0..1.6f64, y in 0.0..1.2f64, r1 in 0.0..0.5f64, dr in 0.0..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = random_grid(&mut rng, 16, 12, 0.05);
            let p = Point2::new(x - 1.0, y + 2.0);
            if grid.is_blocked(p, r1) {
                prop_assert!(grid.is_blocked(p, r1 + dr));
            }
        }

        #[test]
        fn inflate_monotone(seed in 0u64..200, r1 in 0.0..0.4f64, dr in 0.0..0.4f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = random_grid(&mut rng, 12, 12, 0.08);
            let a = grid.inflate(r1);
            let b = grid.inflate(r1 + dr);
            for (ca, cb) in a.cells().iter().zip(b.cells()) {
                prop_assert!(!ca.is_blocking() || cb.is_blocking());
            }
        }
    }
}
