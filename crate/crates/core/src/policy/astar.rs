//! Deterministic 8-connected A* over occupancy cells.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point2;
use crate::world::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap: reverse so the lowest (f, h, index) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Cell path from `start` to `goal` avoiding blocking cells of `grid`.
///
/// Moves are 8-connected with Euclidean step costs; diagonal moves need
/// both adjacent orthogonal cells free. The open set is ordered by f, then
/// h, then row-major cell index. A blocked start cell is allowed so the
/// search can leave it; a blocked or out-of-grid goal yields `None`.
pub fn astar(grid: &OccupancyGrid, start: Point2, goal: Point2) -> Option<Vec<(usize, usize)>> {
    search(grid, None, start, goal)
}

/// Like [`astar`], but a start inside the blocked area of `grid` may
/// walk out through cells that are free in `escape`. Such cells are only
/// entered from the start or from other escape cells, so once the path
/// reaches a free cell of `grid` it stays in free cells.
pub fn astar_with_escape(
    grid: &OccupancyGrid,
    escape: &OccupancyGrid,
    start: Point2,
    goal: Point2,
) -> Option<Vec<(usize, usize)>> {
    search(grid, Some(escape), start, goal)
}

fn search(
    grid: &OccupancyGrid,
    escape: Option<&OccupancyGrid>,
    start: Point2,
    goal: Point2,
) -> Option<Vec<(usize, usize)>> {
    let (sc, sr) = grid.cell_of(start)?;
    let (gc, gr) = grid.cell_of(goal)?;
    if grid.get(gc, gr).is_blocking() {
        return None;
    }
    let w = grid.width();
    let h = grid.height();
    let idx = |c: usize, r: usize| r * w + c;
    let heuristic = |c: usize, r: usize| ((c as f64 - gc as f64).powi(2) + (r as f64 - gr as f64).powi(2)).sqrt();
    let inside = |c: i64, r: i64| c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h;
    let free = |c: i64, r: i64| inside(c, r) && !grid.get(c as usize, r as usize).is_blocking();
    let soft = |c: i64, r: i64| {
        inside(c, r)
            && grid.get(c as usize, r as usize).is_blocking()
            && escape.is_some_and(|e| !e.get(c as usize, r as usize).is_blocking())
    };

    let mut g = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    let s = idx(sc, sr);
    g[s] = 0.0;
    let h0 = heuristic(sc, sr);
    open.push(Open { f: h0, h: h0, index: s });
    let goal_index = idx(gc, gr);
    while let Some(Open { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == goal_index {
            let mut path = vec![(gc, gr)];
            let mut cur = index;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push((cur % w, cur / w));
            }
            path.reverse();
            return Some(path);
        }
        let (c, r) = ((index % w) as i64, (index / w) as i64);
        let escaping = soft(c, r) || (index == s && grid.get(sc, sr).is_blocking());
        let passable = |c: i64, r: i64| free(c, r) || (escaping && soft(c, r));
        for (dc, dr) in NEIGHBOURS {
            let (nc, nr) = (c + dc, r + dr);
            if !passable(nc, nr) {
                continue;
            }
            if dc != 0 && dr != 0 && !(passable(c + dc, r) && passable(c, r + dr)) {
                continue;
            }
            let ni = idx(nc as usize, nr as usize);
            if closed[ni] {
                continue;
            }
            let step = if dc != 0 && dr != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let ng = g[index] + step;
            if ng < g[ni] {
                g[ni] = ng;
                parent[ni] = index;
                let hn = heuristic(nc as usize, nr as usize);
                open.push(Open { f: ng + hn, h: hn, index: ni });
            }
        }
    }
    None
}

/// Cell path as world points: `start`, the intermediate cell centers, then
/// `goal`.
pub fn path_points(grid: &OccupancyGrid, cells: &[(usize, usize)], start: Point2, goal: Point2) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(cells.len() + 1);
    pts.push(start);
    if cells.len() > 2 {
        pts.extend(cells[1..cells.len() - 1].iter().map(|&(c, r)| grid.cell_center(c, r)));
    }
    pts.push(goal);
    pts
}

pub fn astar_points(grid: &OccupancyGrid, start: Point2, goal: Point2) -> Option<Vec<Point2>> {
    astar(grid, start, goal).map(|cells| path_points(grid, &cells, start, goal))
}
