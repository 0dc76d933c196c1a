//! The four bundled environments and their generated datapoints.
//!
//! Each environment is authored as a grid plus a list of routes. A route's
//! demonstration is an A* path through its vertices, shortcut on an
//! inflated grid and driven through a [`TeleopRecorder`] by a scripted
//! pursuit driver. Precise sketches are the route vertices with hand-drawn
//! style jitter; misleading ones come from [`make_misleading`] or are a
//! straight start-to-goal stroke through walls.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{canonical_json, make_misleading, save_datapoint, write_atomic, Condition, Datapoint, TeleopRecorder};
use crate::error::DatasetError;
use crate::geometry::{normalize_angle, Point2, Polyline, Pose2};
use crate::policy::{astar, path_points};
use crate::sim::SimConfig;
use crate::world::{save_map_dir, CellClass, ConstraintRegion, OccupancyGrid, RegionKind};

pub const ENVIRONMENTS: [&str; 4] = ["gallery", "office", "orchard", "street"];

/// File listing named datapoint groups inside an environment directory.
pub const SUITES_FILE: &str = "suites.json";

pub const SUITE_ORACLE: &str = "oracle";
pub const SUITE_BASELINE_PRECISE: &str = "baseline_precise";
pub const SUITE_BASELINE_MISLEADING: &str = "baseline_misleading";
pub const SUITE_ROCKS: &str = "rocks";

const RESOLUTION: f64 = 0.1;
const FIXTURE_SEED: u64 = 20_240_917;
/// Clearance the scripted driver's plan keeps from blocking cells.
const DEMO_INFLATION: f64 = 0.6;
const DRIVE_LOOKAHEAD: f64 = 1.0;
const DRIVE_SPEED: f64 = 1.0;
const DRIVE_STOP: f64 = 0.05;
const DRIVE_TIME_LIMIT: f64 = 600.0;
/// Demo lengths are snapped to this residue modulo the 2 m action horizon.
const SNAP_RESIDUE: f64 = 1.5;
const SNAP_TOLERANCE: f64 = 0.3;
const JITTER_SIGMA: f64 = 0.15;
const JITTER_CLAMP: f64 = 0.35;
const JITTER_SPACING: f64 = 2.5;
const JITTER_TRIES: usize = 64;

/// One environment ready to be written to disk.
#[derive(Debug, Clone)]
pub struct BuiltEnvironment {
    pub name: String,
    pub grid: OccupancyGrid,
    pub regions: Vec<ConstraintRegion>,
    pub datapoints: Vec<Datapoint>,
    pub suites: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
enum SketchKind {
    Jittered,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mislead {
    None,
    Generated,
    /// Straight stroke from start to goal, through whatever lies between.
    Straight,
}

#[derive(Debug, Clone, Copy)]
struct Route {
    pts: &'static [(f64, f64)],
    language: &'static str,
    sketch: SketchKind,
    mislead: Mislead,
    snap: bool,
    precise_suite: Option<&'static str>,
    misleading_suite: Option<&'static str>,
}

const fn route(pts: &'static [(f64, f64)], language: &'static str) -> Route {
    Route {
        pts,
        language,
        sketch: SketchKind::Jittered,
        mislead: Mislead::None,
        snap: true,
        precise_suite: None,
        misleading_suite: None,
    }
}

impl Route {
    const fn misleading(mut self) -> Self {
        self.mislead = Mislead::Generated;
        self
    }

    const fn suite(mut self, name: &'static str) -> Self {
        self.precise_suite = Some(name);
        self
    }

    /// Exact sketch paired with a straight misleading twin.
    const fn through_wall_pair(mut self) -> Self {
        self.sketch = SketchKind::Exact;
        self.mislead = Mislead::Straight;
        self.precise_suite = Some(SUITE_BASELINE_PRECISE);
        self.misleading_suite = Some(SUITE_BASELINE_MISLEADING);
        self
    }

    const fn rock_case(mut self) -> Self {
        self.sketch = SketchKind::Exact;
        self.snap = false;
        self.precise_suite = Some(SUITE_ROCKS);
        self
    }
}

fn rect_polygon(min: (f64, f64), max: (f64, f64)) -> Polyline {
    Polyline::from_xy(&[(min.0, min.1), (max.0, min.1), (max.0, max.1), (min.0, max.1), (min.0, min.1)])
        .expect("finite rectangle")
}

fn rect(g: &mut OccupancyGrid, min: (f64, f64), max: (f64, f64), class: CellClass) {
    g.fill_rect(Point2::new(min.0, min.1), Point2::new(max.0, max.1), class);
}

fn perimeter(g: &mut OccupancyGrid) {
    let (w, h) = g.extent();
    rect(g, (0.0, 0.0), (w, 0.2), CellClass::Wall);
    rect(g, (0.0, h - 0.2), (w, h), CellClass::Wall);
    rect(g, (0.0, 0.0), (0.2, h), CellClass::Wall);
    rect(g, (w - 0.2, 0.0), (w, h), CellClass::Wall);
}

fn grid(w: f64, h: f64, fill: CellClass) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(
        (w / RESOLUTION).round() as usize,
        (h / RESOLUTION).round() as usize,
        RESOLUTION,
        Point2::ORIGIN,
        fill,
    );
    perimeter(&mut g);
    g
}

fn office() -> (OccupancyGrid, Vec<ConstraintRegion>, Vec<Route>) {
    let mut g = grid(30.0, 20.0, CellClass::Free);
    // Corridor walls with three doors each.
    for (y0, y1) in [(7.8, 8.0), (12.0, 12.2)] {
        for (x0, x1) in [(0.0, 4.0), (6.0, 14.5), (16.5, 24.4), (26.4, 30.0)] {
            rect(&mut g, (x0, y0), (x1, y1), CellClass::Wall);
        }
    }
    // Thick structural dividers between rooms.
    for (x0, x1) in [(10.0, 11.0), (20.0, 21.0)] {
        rect(&mut g, (x0, 0.0), (x1, 7.8), CellClass::Wall);
        rect(&mut g, (x0, 12.2), (x1, 20.0), CellClass::Wall);
    }
    for (min, max) in [
        ((1.0, 17.5), (3.0, 19.0)),
        ((17.5, 17.5), (19.5, 19.0)),
        ((26.0, 17.5), (28.5, 19.0)),
        ((1.0, 1.0), (3.0, 2.5)),
        ((17.5, 1.0), (19.5, 2.5)),
        ((26.0, 1.0), (28.5, 2.5)),
    ] {
        rect(&mut g, min, max, CellClass::Obstacle);
    }
    let routes = vec![
        route(
            &[(7.0, 16.0), (5.0, 13.2), (5.0, 10.0), (15.5, 10.0), (15.5, 13.2), (14.0, 16.5)],
            "leave the room, follow the corridor east and enter the next room through its door",
        )
        .through_wall_pair(),
        route(
            &[(17.0, 15.0), (15.5, 13.2), (15.5, 10.0), (25.4, 10.0), (25.4, 13.2), (25.0, 16.5)],
            "go out to the corridor and take the east room door on the left",
        )
        .through_wall_pair(),
        route(
            &[(7.0, 4.0), (5.0, 6.7), (5.0, 10.0), (15.5, 10.0), (15.5, 6.7), (14.0, 3.5)],
            "exit north, walk along the corridor and come back down into the middle room",
        )
        .through_wall_pair(),
        route(
            &[(17.0, 5.0), (15.5, 6.7), (15.5, 10.0), (25.4, 10.0), (25.4, 6.7), (24.5, 3.5)],
            "head into the corridor, turn right and enter the south-east room",
        )
        .through_wall_pair(),
        route(
            &[(24.0, 16.0), (25.4, 13.2), (25.4, 10.0), (5.0, 10.0), (5.0, 13.2), (7.0, 16.5)],
            "cross the whole corridor westward and enter the north-west room",
        )
        .through_wall_pair(),
        route(&[(3.0, 15.0), (5.0, 13.2), (5.0, 10.0), (15.5, 10.0), (15.5, 6.5), (14.0, 3.5)], "go from the meeting room to the south printer room")
            .misleading()
            .suite(SUITE_ORACLE),
        route(&[(2.0, 10.0), (28.0, 10.0)], "drive straight down the corridor to the far end")
            .misleading()
            .suite(SUITE_ORACLE),
        route(&[(3.0, 5.0), (5.0, 6.7), (5.0, 10.0), (25.4, 10.0), (25.4, 13.2), (27.0, 16.0)], "from the south-west office go to the north-east lounge")
            .misleading()
            .suite(SUITE_ORACLE),
        route(&[(8.0, 14.5), (5.0, 13.2), (5.0, 10.0), (5.0, 6.7), (8.0, 4.0)], "cross the corridor into the room opposite")
            .misleading()
            .suite(SUITE_ORACLE),
        route(&[(13.0, 15.0), (15.5, 13.2), (15.5, 6.7), (13.0, 3.5)], "go straight through both middle doors to the south room")
            .misleading()
            .suite(SUITE_ORACLE),
        route(&[(23.0, 4.0), (25.4, 6.7), (25.4, 13.2), (23.0, 16.0)], "walk north across the corridor to the east lounge")
            .suite(SUITE_ORACLE),
        route(&[(12.0, 9.0), (27.0, 10.5)], "follow the corridor east and stop near the end").suite(SUITE_ORACLE),
        route(&[(28.0, 15.0), (25.4, 13.2), (25.4, 10.0), (15.5, 10.0), (15.5, 6.7), (18.0, 4.5)], "leave the lounge and go to the south middle room")
            .suite(SUITE_ORACLE),
        route(&[(16.0, 16.5), (15.5, 13.2), (15.5, 10.0), (5.0, 10.0), (5.0, 6.7), (3.0, 4.5)], "take the corridor west and enter the south-west office")
            .suite(SUITE_ORACLE),
        route(&[(6.0, 3.5), (5.0, 6.7), (5.0, 10.0), (15.5, 10.0), (15.5, 13.2), (18.0, 15.5)], "go up the corridor and into the north middle room")
            .suite(SUITE_ORACLE),
    ];
    (g, Vec::new(), routes)
}

const ORCHARD_ROWS: [f64; 5] = [2.5, 7.0, 11.5, 16.0, 20.5];

fn orchard() -> (OccupancyGrid, Vec<ConstraintRegion>, Vec<Route>) {
    let mut g = grid(30.0, 23.0, CellClass::Grass);
    for w in ORCHARD_ROWS.windows(2) {
        let c = (w[0] + w[1]) / 2.0;
        rect(&mut g, (0.2, c - 0.8), (29.8, c + 0.8), CellClass::Free);
    }
    for &y in &ORCHARD_ROWS {
        for i in 0..9 {
            g.fill_disc(Point2::new(3.0 + 3.0 * i as f64, y), 0.4, CellClass::Obstacle);
        }
    }
    for (x, y) in [(7.0, 5.2), (17.0, 8.8), (8.0, 14.2), (18.0, 17.8), (20.0, 4.3), (1.3, 9.0), (28.7, 14.0), (28.7, 5.0), (1.3, 18.0)] {
        g.fill_disc(Point2::new(x, y), 0.3, CellClass::Rock);
    }
    let routes = vec![
        route(&[(4.0, 4.75), (13.5, 4.75)], "drive along the first row past the stones").rock_case(),
        route(&[(14.0, 9.25), (23.5, 9.25)], "follow the second row east").rock_case(),
        route(&[(5.0, 13.75), (14.5, 13.75)], "go down the third row").rock_case(),
        route(&[(15.0, 18.25), (24.5, 18.25)], "run along the top row toward the shed").rock_case(),
        route(&[(17.0, 4.75), (26.5, 4.75)], "continue east along the first row").rock_case(),
        route(&[(2.5, 4.75), (26.0, 4.75)], "drive the full length of the first row").misleading(),
        route(&[(27.0, 9.25), (4.0, 9.25)], "go back west along the second row").misleading(),
        route(&[(3.0, 13.75), (10.5, 13.75), (10.5, 18.25), (26.0, 18.25)], "take the third row, cut through the gap and finish on the top row").misleading(),
        route(&[(25.0, 4.75), (22.5, 4.75), (22.5, 9.25), (8.0, 9.25)], "turn up into the second row and head west").misleading(),
        route(&[(5.0, 18.25), (13.5, 18.25), (13.5, 9.25), (26.0, 9.25)], "come down through the middle gap to the second row").misleading(),
        route(&[(27.0, 13.75), (13.5, 13.75), (13.5, 4.75), (4.0, 4.75)], "cross the orchard south-west through the trees").misleading(),
        route(&[(4.0, 9.25), (10.5, 9.25), (10.5, 13.75), (24.0, 13.75)], "move up one row and continue east"),
        route(&[(20.0, 18.25), (4.0, 18.25)], "follow the top row back to the gate"),
        route(&[(6.0, 4.75), (22.5, 4.75), (22.5, 13.75), (27.0, 13.75)], "go east, climb two rows and finish at the east end"),
        route(&[(25.0, 18.25), (25.5, 13.75), (6.0, 13.75)], "drop one row and drive west"),
        route(&[(3.0, 9.25), (4.5, 9.25), (4.5, 18.25), (14.0, 18.25)], "go north between the first trees to the top row"),
        route(&[(12.0, 13.75), (22.5, 13.75), (22.5, 4.75), (27.0, 4.75)], "head east and come down to the bottom row"),
    ];
    (g, Vec::new(), routes)
}

fn street() -> (OccupancyGrid, Vec<ConstraintRegion>, Vec<Route>) {
    let mut g = grid(40.0, 24.0, CellClass::Sidewalk);
    rect(&mut g, (0.0, 0.0), (40.0, 3.5), CellClass::Wall);
    rect(&mut g, (0.0, 18.5), (40.0, 24.0), CellClass::Wall);
    rect(&mut g, (0.2, 8.0), (39.8, 14.0), CellClass::Road);
    rect(&mut g, (18.0, 8.0), (22.0, 14.0), CellClass::Crosswalk);
    rect(&mut g, (30.0, 3.5), (36.0, 5.5), CellClass::Grass);
    for x in [6.0, 14.0, 26.0, 34.0] {
        g.fill_disc(Point2::new(x, 7.6), 0.3, CellClass::Obstacle);
        g.fill_disc(Point2::new(x, 14.4), 0.3, CellClass::Obstacle);
    }
    let regions = vec![
        ConstraintRegion {
            id: "road".into(),
            kind: RegionKind::CrossOnlyAt,
            polygon: rect_polygon((0.2, 8.0), (39.8, 14.0)),
            direction: None,
            crossings: vec![rect_polygon((18.0, 8.0), (22.0, 14.0))],
        },
        ConstraintRegion {
            id: "bike_lane".into(),
            kind: RegionKind::DirectionalLane,
            polygon: rect_polygon((0.2, 17.0), (39.8, 18.3)),
            direction: Some(0.0),
            crossings: Vec::new(),
        },
        ConstraintRegion {
            id: "lawn".into(),
            kind: RegionKind::ForbiddenArea,
            polygon: rect_polygon((30.0, 3.5), (36.0, 5.5)),
            direction: None,
            crossings: Vec::new(),
        },
    ];
    let routes = vec![
        route(&[(3.0, 6.2), (20.0, 6.2), (20.0, 15.8), (37.0, 15.8)], "walk east, use the crosswalk and continue on the far sidewalk").misleading(),
        route(&[(37.0, 6.2), (20.0, 6.2), (20.0, 15.8), (4.0, 15.8)], "go west to the crosswalk, cross and keep going west").misleading(),
        route(&[(4.0, 15.8), (20.0, 15.8), (20.0, 6.2), (29.0, 6.2)], "cross at the zebra and stop before the lawn").misleading(),
        route(&[(36.0, 15.8), (20.0, 15.8), (20.0, 6.2), (5.0, 6.2)], "take the crosswalk south and walk to the west end").misleading(),
        route(&[(3.0, 15.8), (37.0, 15.6)], "stay on the north sidewalk all the way east").misleading(),
        route(&[(28.0, 6.2), (3.0, 6.2)], "follow the south sidewalk west").misleading(),
        route(&[(12.0, 6.2), (20.0, 6.2), (20.0, 15.5), (31.0, 15.8)], "cross the street at the crosswalk and head east").misleading(),
        route(&[(37.0, 16.0), (24.0, 16.0), (20.0, 15.5), (20.0, 6.2), (13.0, 6.2)], "go to the crosswalk, cross and turn right"),
        route(&[(10.0, 15.8), (20.0, 15.8), (20.0, 6.5), (27.0, 6.2)], "cross to the south side and walk toward the lawn"),
        route(&[(25.0, 6.2), (20.0, 6.2), (20.0, 15.8), (12.0, 15.8)], "use the crosswalk and walk west on the far side"),
        route(&[(6.0, 15.8), (30.0, 15.8)], "walk east along the north sidewalk"),
        route(&[(38.0, 6.4), (28.0, 6.4), (17.0, 6.2)], "walk west along the shops past the lawn"),
        route(&[(15.0, 6.2), (20.0, 6.2), (20.0, 15.8), (21.0, 15.8), (35.0, 15.8)], "cross north and continue east"),
        route(&[(33.0, 15.8), (20.0, 15.8), (20.0, 6.2), (9.0, 6.2)], "come back across the street and go west"),
        route(&[(2.5, 6.2), (16.0, 6.2)], "walk to the corner before the crosswalk"),
    ];
    (g, regions, routes)
}

fn gallery() -> (OccupancyGrid, Vec<ConstraintRegion>, Vec<Route>) {
    let mut g = grid(26.0, 20.0, CellClass::Free);
    rect(&mut g, (8.6, 0.0), (9.0, 4.0), CellClass::Wall);
    rect(&mut g, (8.6, 6.5), (9.0, 13.5), CellClass::Wall);
    rect(&mut g, (8.6, 16.0), (9.0, 20.0), CellClass::Wall);
    rect(&mut g, (17.0, 0.0), (17.4, 8.5), CellClass::Wall);
    rect(&mut g, (17.0, 11.5), (17.4, 20.0), CellClass::Wall);
    rect(&mut g, (11.5, 8.5), (14.5, 11.5), CellClass::Obstacle);
    for (x, y, r) in [(4.5, 10.0, 0.5), (3.0, 16.5, 0.6), (21.5, 4.5, 0.5), (21.5, 15.5, 0.5), (24.0, 10.0, 0.5)] {
        g.fill_disc(Point2::new(x, y), r, CellClass::Obstacle);
    }
    let regions = vec![ConstraintRegion {
        id: "exhibit_rope".into(),
        kind: RegionKind::ForbiddenArea,
        polygon: rect_polygon((10.8, 7.8), (15.2, 12.2)),
        direction: None,
        crossings: Vec::new(),
    }];
    let routes = vec![
        route(&[(2.5, 2.5), (6.5, 5.25), (12.0, 5.25), (16.0, 10.0), (20.0, 10.0), (22.5, 12.8)], "go through the first hall and the central room into the east hall").misleading(),
        route(&[(2.0, 13.0), (6.5, 14.75), (12.5, 14.75), (16.0, 10.0), (20.5, 10.0), (20.0, 13.5)], "pass the north doorway, skirt the sculpture and enter the east hall").misleading(),
        route(&[(23.0, 2.0), (19.5, 3.0), (19.0, 10.0), (13.0, 6.0), (6.0, 5.25), (3.0, 7.5)], "return west through both doorways to the first hall").misleading(),
        route(&[(6.0, 2.0), (6.5, 5.25), (10.2, 5.25), (10.2, 14.75), (6.0, 14.75), (2.0, 12.5)], "loop around the central exhibit and come back").misleading(),
        route(&[(24.0, 18.0), (19.0, 10.0), (16.0, 10.0), (15.5, 13.5), (6.5, 14.75), (5.5, 18.0)], "leave the east hall and go to the north-west corner").misleading(),
        route(&[(13.0, 2.0), (16.0, 6.0), (16.0, 9.8), (19.5, 10.0), (23.5, 7.0)], "walk from the central room into the east hall").misleading(),
        route(&[(2.0, 2.0), (2.0, 8.0), (2.5, 12.0), (6.5, 14.75), (11.0, 15.5)], "walk north along the west wall and through the upper door"),
        route(&[(15.5, 17.5), (12.5, 14.75), (6.5, 14.75), (2.0, 13.5)], "head west out of the central room"),
        route(&[(10.5, 2.5), (15.5, 6.5), (16.0, 9.5), (19.0, 10.0), (23.0, 13.0)], "cross diagonally into the east hall"),
        route(&[(20.0, 18.0), (19.0, 10.0), (20.0, 2.0)], "walk the length of the east hall past the doorway"),
        route(&[(4.0, 2.0), (6.5, 5.25), (10.5, 5.25), (15.0, 3.5)], "go through the south doorway to the corner of the central room"),
        route(&[(23.5, 17.5), (19.0, 10.0), (16.0, 10.0), (15.5, 13.5), (12.5, 17.5)], "enter the central room from the east and go north"),
        route(&[(2.5, 4.5), (6.0, 8.0), (6.5, 14.75), (13.0, 17.0)], "go up the first hall and into the upper central room"),
        route(&[(15.5, 2.5), (16.0, 6.0), (16.0, 9.8), (19.5, 10.0), (22.5, 11.8), (23.5, 16.5)], "move to the east hall and walk to its north end"),
    ];
    (g, regions, routes)
}

fn layout(name: &str) -> Result<(OccupancyGrid, Vec<ConstraintRegion>, Vec<Route>), DatasetError> {
    match name {
        "office" => Ok(office()),
        "orchard" => Ok(orchard()),
        "street" => Ok(street()),
        "gallery" => Ok(gallery()),
        _ => Err(DatasetError::Invalid(format!("unknown fixture environment `{name}`"))),
    }
}

fn fixture_err(env: &str, index: usize, what: impl std::fmt::Display) -> DatasetError {
    DatasetError::Invalid(format!("{env} route {index}: {what}"))
}

/// A* through each pair of route vertices on `inflated`, shortcut greedily
/// within the leg.
fn plan_demo_path(inflated: &OccupancyGrid, pts: &[Point2]) -> Option<Polyline> {
    let clear = |a: Point2, b: Point2| !inflated.intersects_blocking(&Polyline::new(vec![a, b]).expect("finite"));
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let cells = astar(inflated, w[0], w[1])?;
        let raw = path_points(inflated, &cells, w[0], w[1]);
        let mut i = 0;
        while i + 1 < raw.len() {
            let mut j = i + 1;
            while j + 1 < raw.len() && clear(raw[i], raw[j + 1]) {
                j += 1;
            }
            out.push(raw[j]);
            i = j;
        }
    }
    Polyline::new(out).ok()
}

fn cut_at(path: &Polyline, s: f64) -> Polyline {
    let cum = path.cumulative_lengths();
    let mut pts: Vec<Point2> = path.points().iter().zip(&cum).filter(|(_, &c)| c < s).map(|(p, _)| *p).collect();
    pts.push(path.point_at(s));
    Polyline::new(pts).expect("finite")
}

/// Scripted pursuit of `path` at walking speed through the recorder.
fn drive(grid: &OccupancyGrid, id: &str, path: &Polyline, cfg: &SimConfig) -> Result<TeleopRecorder, String> {
    let pts = path.points();
    let heading = (pts[1] - pts[0]).angle();
    let mut rec = TeleopRecorder::new(id, Pose2::from_point(pts[0], heading), cfg.clone());
    let total = path.length();
    let end = path.last();
    let mut progress = 0.0_f64;
    while rec.time() < DRIVE_TIME_LIMIT {
        let pose = rec.state().pose;
        progress = progress.max(path.project(pose.position));
        let to_end = pose.position.distance(end);
        if progress > total - DRIVE_LOOKAHEAD && to_end < DRIVE_STOP {
            break;
        }
        let target = path.point_at((progress + DRIVE_LOOKAHEAD).min(total));
        let e = normalize_angle((target - pose.position).angle() - pose.heading);
        let v = DRIVE_SPEED.min(1.5 * to_end) * libm::cos(e).max(0.0).powi(2);
        rec.command(v, 2.5 * e).map_err(|e| e.to_string())?;
        rec.tick(grid);
    }
    if rec.time() >= DRIVE_TIME_LIMIT {
        return Err("scripted driver did not reach the goal".into());
    }
    rec.command(0.0, 0.0).map_err(|e| e.to_string())?;
    rec.tick(grid);
    if rec.collisions() > 0 {
        return Err("scripted driver collided".into());
    }
    Ok(rec)
}

fn residue(len: f64) -> f64 {
    (len - SNAP_RESIDUE).rem_euclid(2.0)
}

fn snapped(len: f64) -> bool {
    let r = residue(len);
    r <= SNAP_TOLERANCE || r >= 2.0 - SNAP_TOLERANCE
}

fn jittered(grid: &OccupancyGrid, pts: &[Point2], rng: &mut ChaCha8Rng) -> Polyline {
    let mut dense = vec![pts[0]];
    for w in pts.windows(2) {
        let n = (w[0].distance(w[1]) / JITTER_SPACING).ceil().max(1.0) as usize;
        dense.extend((1..=n).map(|i| w[0].lerp(w[1], i as f64 / n as f64)));
    }
    let noise = Normal::new(0.0, JITTER_SIGMA).expect("positive sigma");
    let n = dense.len();
    for _ in 0..JITTER_TRIES {
        let mut cand = dense.clone();
        for p in &mut cand[1..n - 1] {
            p.x += noise.sample(rng).clamp(-JITTER_CLAMP, JITTER_CLAMP);
            p.y += noise.sample(rng).clamp(-JITTER_CLAMP, JITTER_CLAMP);
        }
        let line = Polyline::new(cand).expect("finite");
        if !grid.intersects_blocking(&line) {
            return line;
        }
    }
    Polyline::new(dense).expect("finite")
}

fn env_constraints(regions: &[ConstraintRegion]) -> Vec<String> {
    let mut ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    ids
}

/// Builds one bundled environment. Fully deterministic.
pub fn build_environment(name: &str) -> Result<BuiltEnvironment, DatasetError> {
    let (grid, regions, routes) = layout(name)?;
    let cfg = SimConfig::default();
    let inflated = grid.inflate(DEMO_INFLATION);
    let env_index = ENVIRONMENTS.iter().position(|e| *e == name).unwrap_or(0) as u64;
    let constraints = env_constraints(&regions);
    let mut datapoints = Vec::new();
    let mut suites: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut next_id = 1;
    let mut take_id = || {
        let id = format!("dp_{next_id:04}");
        next_id += 1;
        id
    };
    for (index, r) in routes.iter().enumerate() {
        let seed = FIXTURE_SEED ^ (env_index << 32) ^ index as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices: Vec<Point2> = r.pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        if let Some(p) = vertices.iter().find(|p| inflated.class_at(**p).is_none_or(CellClass::is_blocking)) {
            return Err(fixture_err(name, index, format!("vertex ({}, {}) lacks clearance", p.x, p.y)));
        }
        if let Some(seg) = grid.first_blocking_segment(&Polyline::new(vertices.clone()).expect("finite")) {
            return Err(fixture_err(name, index, format!("route segment {seg} clips a blocking cell")));
        }
        let mut path = plan_demo_path(&inflated, &vertices).ok_or_else(|| fixture_err(name, index, "no demo path"))?;
        let precise_id = take_id();
        let mut rec = drive(&grid, &precise_id, &path, &cfg).map_err(|e| fixture_err(name, index, e))?;
        if r.snap {
            for _ in 0..6 {
                let len = rec.record().demo().length();
                if snapped(len) {
                    break;
                }
                path = cut_at(&path, path.length() - residue(len));
                rec = drive(&grid, &precise_id, &path, &cfg).map_err(|e| fixture_err(name, index, e))?;
            }
            if !snapped(rec.record().demo().length()) {
                return Err(fixture_err(name, index, "demo length did not settle"));
            }
        }
        let goal = path.last();
        let last_leg = vertices[vertices.len() - 2].distance(vertices[vertices.len() - 1]);
        let moved = goal.distance(vertices[vertices.len() - 1]);
        if moved >= last_leg {
            return Err(fixture_err(name, index, "snapping trimmed past the last route vertex"));
        }
        let mut sketch_vertices = vertices.clone();
        *sketch_vertices.last_mut().expect("route has vertices") = goal;
        let sketch = match r.sketch {
            SketchKind::Exact => Polyline::new(sketch_vertices).expect("finite"),
            SketchKind::Jittered => jittered(&grid, &sketch_vertices, &mut rng),
        };
        let start_heading = {
            let p = path.points();
            (p[1] - p[0]).angle()
        };
        let mut dp = Datapoint::draft(precise_id.clone(), name, sketch.clone(), Condition::Precise);
        dp.language = r.language.to_string();
        dp.constraints = constraints.clone();
        dp.start_pose = Pose2::from_point(path.first(), start_heading);
        let (_, precise) = rec.finish(&dp);
        if let Some(s) = r.precise_suite {
            suites.entry(s.to_string()).or_default().push(precise_id.clone());
        }
        let misleading_sketch = match r.mislead {
            Mislead::None => None,
            Mislead::Generated => Some(make_misleading(&grid, &sketch, seed)?),
            Mislead::Straight => {
                let line = Polyline::new(vec![sketch.first(), sketch.last()]).expect("finite");
                if !grid.intersects_blocking(&line) {
                    return Err(fixture_err(name, index, "straight twin does not cross a wall"));
                }
                Some(line)
            }
        };
        let demo = precise.demo.clone().expect("finished recording has a demo");
        datapoints.push(precise.clone());
        if let Some(ms) = misleading_sketch {
            let id = take_id();
            let mut m = Datapoint::draft(id.clone(), name, ms, Condition::Misleading);
            m.language = r.language.to_string();
            m.constraints = constraints.clone();
            m.start_pose = precise.start_pose;
            m.demo = Some(demo);
            m.demo_duration = precise.demo_duration;
            let m = crate::dataset::annotate_fd(&m)?;
            if let Some(s) = r.misleading_suite {
                suites.entry(s.to_string()).or_default().push(id);
            }
            datapoints.push(m);
        }
    }
    Ok(BuiltEnvironment {
        name: name.to_string(),
        grid,
        regions,
        datapoints,
        suites,
    })
}

pub fn build_all() -> Result<Vec<BuiltEnvironment>, DatasetError> {
    ENVIRONMENTS.iter().map(|e| build_environment(e)).collect()
}

/// Writes `root/<env>/{map.pgm, map.json, suites.json, datapoints/}`.
pub fn write_environment(root: &Path, env: &BuiltEnvironment) -> Result<(), DatasetError> {
    let dir = root.join(&env.name);
    save_map_dir(&dir, &env.grid, &env.regions)?;
    for dp in &env.datapoints {
        save_datapoint(&dir.join("datapoints").join(format!("{}.json", dp.id)), dp, &env.grid)?;
    }
    let path = dir.join(SUITES_FILE);
    write_atomic(&path, canonical_json(&env.suites).as_bytes())
}

/// Named datapoint groups of an environment directory; empty when absent.
pub fn load_suites(env_dir: &Path) -> Result<BTreeMap<String, Vec<String>>, DatasetError> {
    let path = env_dir.join(SUITES_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let bytes = std::fs::read(&path).map_err(|e| DatasetError::file(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DatasetError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
