//! Spanning-tree coverage planning.
//!
//! The field polygon is decomposed into square mega-cells (2×2 subcells,
//! subcell side = lane spacing). A spanning tree over the mega-cells is
//! circumnavigated at subcell resolution, which visits every subcell of
//! every mega-cell exactly once and returns to the start.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{GeometryError, Point, Polygon, Polyline, Rect};
use crate::sensor::CameraModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("overlap must be in [0, 1), got {0}")]
    InvalidOverlap(f64),
    #[error("polygon too small: no {0:.3} m mega-cell fits inside")]
    TooSmall(f64),
    #[error("mega-cell grid is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<MegaCell>> },
    #[error("start subcell ({0}, {1}) is not inside the grid")]
    StartOutsideGrid(i64, i64),
    #[error("edge set does not span the grid: {0}")]
    NotSpanning(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Mega-cell index: column `i` grows with x, row `j` grows with y.
/// Ordering is row-major so `BTreeSet` iteration follows the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MegaCell {
    pub row: i64,
    pub col: i64,
}

impl MegaCell {
    pub const fn new(col: i64, row: i64) -> Self {
        Self { row, col }
    }

    /// Neighbors in preference order: right, down, left, up.
    pub fn neighbors(self) -> [MegaCell; 4] {
        [
            MegaCell::new(self.col + 1, self.row),
            MegaCell::new(self.col, self.row + 1),
            MegaCell::new(self.col - 1, self.row),
            MegaCell::new(self.col, self.row - 1),
        ]
    }
}

/// Subcell index on the half-resolution grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubCell {
    pub row: i64,
    pub col: i64,
}

impl SubCell {
    pub const fn new(col: i64, row: i64) -> Self {
        Self { row, col }
    }

    pub fn mega(self) -> MegaCell {
        MegaCell::new(self.col.div_euclid(2), self.row.div_euclid(2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    /// World position of the top-left corner of mega-cell (0, 0).
    pub origin: Point,
    pub mega_cell_size: f64,
    pub subcell_size: f64,
    pub mega_cells: BTreeSet<MegaCell>,
}

impl GridMap {
    pub fn mega_center(&self, c: MegaCell) -> Point {
        Point::new(
            self.origin.x + (c.col as f64 + 0.5) * self.mega_cell_size,
            self.origin.y + (c.row as f64 + 0.5) * self.mega_cell_size,
        )
    }

    pub fn subcell_center(&self, s: SubCell) -> Point {
        Point::new(
            self.origin.x + (s.col as f64 + 0.5) * self.subcell_size,
            self.origin.y + (s.row as f64 + 0.5) * self.subcell_size,
        )
    }

    pub fn mega_rect(&self, c: MegaCell) -> Rect {
        let x0 = self.origin.x + c.col as f64 * self.mega_cell_size;
        let y0 = self.origin.y + c.row as f64 * self.mega_cell_size;
        Rect::new(x0, y0, x0 + self.mega_cell_size, y0 + self.mega_cell_size)
    }

    pub fn contains_subcell(&self, s: SubCell) -> bool {
        self.mega_cells.contains(&s.mega())
    }

    pub fn subcells(&self) -> impl Iterator<Item = SubCell> + '_ {
        self.mega_cells.iter().flat_map(|m| {
            [(0, 0), (1, 0), (0, 1), (1, 1)]
                .into_iter()
                .map(move |(dc, dr)| SubCell::new(2 * m.col + dc, 2 * m.row + dr))
        })
    }

    pub fn subcell_count(&self) -> usize {
        self.mega_cells.len() * 4
    }

    /// Lowest-index subcell of the lowest-index mega-cell.
    pub fn default_start(&self) -> SubCell {
        let m = self.mega_cells.iter().next().expect("grid is never empty");
        SubCell::new(2 * m.col, 2 * m.row)
    }

    /// Connected components under 4-connectivity, each sorted.
    pub fn components(&self) -> Vec<Vec<MegaCell>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &c in &self.mega_cells {
            if !seen.insert(c) {
                continue;
            }
            let mut comp = vec![c];
            let mut queue = VecDeque::from([c]);
            while let Some(cur) = queue.pop_front() {
                for n in cur.neighbors() {
                    if self.mega_cells.contains(&n) && seen.insert(n) {
                        comp.push(n);
                        queue.push_back(n);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }
}

/// Tree edge between two 4-adjacent mega-cells, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeEdge {
    pub a: MegaCell,
    pub b: MegaCell,
}

impl TreeEdge {
    pub fn new(p: MegaCell, q: MegaCell) -> Self {
        if p <= q {
            Self { a: p, b: q }
        } else {
            Self { a: q, b: p }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanParams {
    pub overlap: f64,
    pub altitude: f64,
    pub dt: f64,
    pub start: SubCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePlan {
    pub path: Polyline,
    pub grid: GridMap,
    pub tree: Vec<TreeEdge>,
    pub params: PlanParams,
}

/// Discretizes `poly` into mega-cells whose subcell side equals the lane
/// spacing `footprint_width · (1 − overlap)`. The grid is centered in the
/// polygon's bounding box; only fully-contained mega-cells are kept.
pub fn discretize(poly: &Polygon, camera: &CameraModel, overlap: f64) -> Result<GridMap, PlanningError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(PlanningError::InvalidOverlap(overlap));
    }
    let subcell_size = camera.footprint_width * (1.0 - overlap);
    let mega = 2.0 * subcell_size;
    let bb = poly.bounding_box();
    let cols = (bb.width() / mega + 1e-9).floor() as i64;
    let rows = (bb.height() / mega + 1e-9).floor() as i64;
    if cols < 1 || rows < 1 {
        return Err(PlanningError::TooSmall(mega));
    }
    let origin = Point::new(
        bb.min.x + (bb.width() - cols as f64 * mega) / 2.0,
        bb.min.y + (bb.height() - rows as f64 * mega) / 2.0,
    );
    let mut grid = GridMap {
        origin,
        mega_cell_size: mega,
        subcell_size,
        mega_cells: BTreeSet::new(),
    };
    for row in 0..rows {
        for col in 0..cols {
            let c = MegaCell::new(col, row);
            if poly.contains_cell(grid.mega_center(c), mega)? {
                grid.mega_cells.insert(c);
            }
        }
    }
    if grid.mega_cells.is_empty() {
        return Err(PlanningError::TooSmall(mega));
    }
    Ok(grid)
}

/// Spanning tree grown depth-first from `start` with neighbor preference
/// right, down, left, up. All edges have unit weight, so any spanning tree
/// is minimal; the traversal order only fixes which one.
pub fn build_mst(grid: &GridMap, start: MegaCell) -> Result<Vec<TreeEdge>, PlanningError> {
    let components = grid.components();
    if components.len() > 1 {
        return Err(PlanningError::Disconnected { components });
    }
    if !grid.mega_cells.contains(&start) {
        return Err(PlanningError::StartOutsideGrid(2 * start.col, 2 * start.row));
    }
    let mut visited = BTreeSet::from([start]);
    let mut stack = vec![start];
    let mut edges = Vec::with_capacity(grid.mega_cells.len().saturating_sub(1));
    while let Some(&cur) = stack.last() {
        let next = cur
            .neighbors()
            .into_iter()
            .find(|n| grid.mega_cells.contains(n) && !visited.contains(n));
        match next {
            Some(n) => {
                visited.insert(n);
                edges.push(TreeEdge::new(cur, n));
                stack.push(n);
            }
            None => {
                stack.pop();
            }
        }
    }
    Ok(edges)
}

/// Position of a subcell inside its mega-cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quadrant {
    TopLeft,
    TopRight,
    BottomRight,
    BottomLeft,
}

fn quadrant(s: SubCell) -> Quadrant {
    match (s.col.rem_euclid(2), s.row.rem_euclid(2)) {
        (0, 0) => Quadrant::TopLeft,
        (1, 0) => Quadrant::TopRight,
        (1, 1) => Quadrant::BottomRight,
        _ => Quadrant::BottomLeft,
    }
}

/// One clockwise step around the tree (rows grow downward, so clockwise on
/// screen is TL → TR → BR → BL). The walk keeps its mega-cell on the right
/// and crosses into a neighbor wherever a tree edge blocks the default move.
fn next_subcell(s: SubCell, adjacency: &BTreeMap<MegaCell, [bool; 4]>) -> SubCell {
    const RIGHT: usize = 0;
    const DOWN: usize = 1;
    const LEFT: usize = 2;
    const UP: usize = 3;
    let links = adjacency[&s.mega()];
    let (dc, dr) = match quadrant(s) {
        Quadrant::TopLeft if links[UP] => (0, -1),
        Quadrant::TopLeft => (1, 0),
        Quadrant::TopRight if links[RIGHT] => (1, 0),
        Quadrant::TopRight => (0, 1),
        Quadrant::BottomRight if links[DOWN] => (0, 1),
        Quadrant::BottomRight => (-1, 0),
        Quadrant::BottomLeft if links[LEFT] => (-1, 0),
        Quadrant::BottomLeft => (0, -1),
    };
    SubCell::new(s.col + dc, s.row + dr)
}

/// Circumnavigates the spanning tree from `start`, producing a closed
/// polyline through every subcell center.
pub fn stc_path(
    grid: &GridMap,
    tree: &[TreeEdge],
    start: SubCell,
    params: PlanParams,
) -> Result<CoveragePlan, PlanningError> {
    if !grid.contains_subcell(start) {
        return Err(PlanningError::StartOutsideGrid(start.col, start.row));
    }
    let expected_edges = grid.mega_cells.len() - 1;
    if tree.len() != expected_edges {
        return Err(PlanningError::NotSpanning(format!(
            "{} edges for {} mega-cells",
            tree.len(),
            grid.mega_cells.len()
        )));
    }
    let mut adjacency: BTreeMap<MegaCell, [bool; 4]> =
        grid.mega_cells.iter().map(|&c| (c, [false; 4])).collect();
    for e in tree {
        let dir = e
            .a
            .neighbors()
            .iter()
            .position(|&n| n == e.b)
            .ok_or_else(|| PlanningError::NotSpanning(format!("{e:?} joins non-adjacent cells")))?;
        let back = (dir + 2) % 4;
        match (adjacency.get(&e.a).is_some(), adjacency.get(&e.b).is_some()) {
            (true, true) => {
                adjacency.get_mut(&e.a).unwrap()[dir] = true;
                adjacency.get_mut(&e.b).unwrap()[back] = true;
            }
            _ => {
                return Err(PlanningError::NotSpanning(format!("{e:?} leaves the grid")));
            }
        }
    }
    let n = grid.subcell_count();
    let mut cells = Vec::with_capacity(n + 1);
    let mut cur = start;
    for _ in 0..n {
        cells.push(cur);
        cur = next_subcell(cur, &adjacency);
        if !grid.contains_subcell(cur) {
            return Err(PlanningError::NotSpanning(format!("walk left the grid at {cur:?}")));
        }
    }
    if cur != start {
        // a cycle in the edge set splits the walk into several loops
        return Err(PlanningError::NotSpanning("walk did not close after visiting every subcell".into()));
    }
    cells.push(start);
    let points = cells.iter().map(|&s| grid.subcell_center(s)).collect();
    Ok(CoveragePlan {
        path: Polyline::new(points)?,
        grid: grid.clone(),
        tree: tree.to_vec(),
        params,
    })
}

/// Full offline phase: discretize, grow the tree from the default start
/// and circumnavigate it.
pub fn plan_coverage(
    poly: &Polygon,
    camera: &CameraModel,
    overlap: f64,
) -> Result<CoveragePlan, PlanningError> {
    let grid = discretize(poly, camera, overlap)?;
    let start = grid.default_start();
    let tree = build_mst(&grid, start.mega())?;
    let params = PlanParams {
        overlap,
        altitude: camera.altitude,
        dt: camera.dt,
        start,
    };
    stc_path(&grid, &tree, start, params)
}

impl CoveragePlan {
    /// Plain-text waypoint file: header comments, then one `x y` pair per line.
    pub fn to_waypoint_text(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(s, "# stc coverage plan");
        let _ = writeln!(
            s,
            "# mega_cell_size={:.6} subcell_size={:.6} mega_cells={} subcells={}",
            g.mega_cell_size,
            g.subcell_size,
            g.mega_cells.len(),
            g.subcell_count()
        );
        let _ = writeln!(
            s,
            "# origin={:.6},{:.6} overlap={} altitude={} dt={} start={},{}",
            g.origin.x, g.origin.y, self.params.overlap, self.params.altitude, self.params.dt,
            self.params.start.col, self.params.start.row
        );
        let _ = writeln!(s, "# length={:.6}", self.path.total_length());
        for p in self.path.points() {
            let _ = writeln!(s, "{:.6} {:.6}", p.x, p.y);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::time::Instant;

    fn grid_from(cells: &[(i64, i64)], sub: f64) -> GridMap {
        GridMap {
            origin: Point::new(0.0, 0.0),
            mega_cell_size: 2.0 * sub,
            subcell_size: sub,
            mega_cells: cells.iter().map(|&(c, r)| MegaCell::new(c, r)).collect(),
        }
    }

    fn params(start: SubCell) -> PlanParams {
        PlanParams { overlap: 0.7, altitude: 10.0, dt: 1.0, start }
    }

    fn plan_grid(grid: &GridMap) -> CoveragePlan {
        let start = grid.default_start();
        let tree = build_mst(grid, start.mega()).unwrap();
        stc_path(grid, &tree, start, params(start)).unwrap()
    }

    /// Independent oracle: count how often each subcell center is visited.
    fn visit_counts(plan: &CoveragePlan) -> HashMap<SubCell, usize> {
        let g = &plan.grid;
        let pts = plan.path.points();
        let mut counts = HashMap::new();
        for p in &pts[..pts.len() - 1] {
            let col = ((p.x - g.origin.x) / g.subcell_size).floor() as i64;
            let row = ((p.y - g.origin.y) / g.subcell_size).floor() as i64;
            *counts.entry(SubCell::new(col, row)).or_insert(0) += 1;
        }
        counts
    }

    fn square_camera(footprint_width: f64) -> CameraModel {
        // gsd 0.02: 640 px → 12.8 m
        CameraModel::new((footprint_width / 0.02).round() as u32, 480, 10.0, 1.0, 0.02).unwrap()
    }

    #[test]
    fn discretize_twenty_meter_square() {
        let poly = Polygon::rectangle(Rect::new(0.0, 0.0, 20.0, 20.0)).unwrap();
        let grid = discretize(&poly, &square_camera(12.8), 0.70).unwrap();
        assert!((grid.subcell_size - 3.84).abs() < 1e-9);
        assert!((grid.mega_cell_size - 7.68).abs() < 1e-9);
        assert_eq!(grid.mega_cells.len(), 4);
        // centered: (20 - 15.36) / 2
        assert!((grid.origin.x - 2.32).abs() < 1e-9);
    }

    #[test]
    fn discretize_zero_overlap_and_errors() {
        let poly = Polygon::rectangle(Rect::new(0.0, 0.0, 60.0, 60.0)).unwrap();
        let grid = discretize(&poly, &square_camera(12.8), 0.0).unwrap();
        assert!((grid.subcell_size - 12.8).abs() < 1e-9);
        let tiny = Polygon::rectangle(Rect::new(0.0, 0.0, 5.0, 5.0)).unwrap();
        assert!(matches!(discretize(&tiny, &square_camera(12.8), 0.7), Err(PlanningError::TooSmall(_))));
        assert!(matches!(discretize(&poly, &square_camera(12.8), 1.0), Err(PlanningError::InvalidOverlap(_))));
    }

    #[test]
    fn discretize_triangle_keeps_only_full_cells() {
        let tri = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(40.0, 0.0), Point::new(0.0, 40.0)]).unwrap();
        let grid = discretize(&tri, &square_camera(12.8), 0.7).unwrap();
        for &c in &grid.mega_cells {
            let r = grid.mega_rect(c);
            assert!(r.max.x + r.max.y <= 40.0 + 1e-9);
        }
        assert!(!grid.mega_cells.is_empty());
    }

    #[test]
    fn mst_small_cases() {
        let one = grid_from(&[(0, 0)], 1.0);
        assert!(build_mst(&one, MegaCell::new(0, 0)).unwrap().is_empty());
        let two = grid_from(&[(0, 0), (1, 0)], 1.0);
        assert_eq!(
            build_mst(&two, MegaCell::new(0, 0)).unwrap(),
            vec![TreeEdge::new(MegaCell::new(0, 0), MegaCell::new(1, 0))]
        );
    }

    #[test]
    fn mst_two_by_two_matches_preference_order() {
        let g = grid_from(&[(0, 0), (1, 0), (0, 1), (1, 1)], 1.0);
        let tree: BTreeSet<TreeEdge> = build_mst(&g, MegaCell::new(0, 0)).unwrap().into_iter().collect();
        // oracle: the 4-cycle has exactly four spanning trees, one per dropped edge
        let cycle = [
            TreeEdge::new(MegaCell::new(0, 0), MegaCell::new(1, 0)),
            TreeEdge::new(MegaCell::new(1, 0), MegaCell::new(1, 1)),
            TreeEdge::new(MegaCell::new(1, 1), MegaCell::new(0, 1)),
            TreeEdge::new(MegaCell::new(0, 1), MegaCell::new(0, 0)),
        ];
        let trees: Vec<BTreeSet<TreeEdge>> = (0..4)
            .map(|drop| cycle.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, e)| *e).collect())
            .collect();
        assert_eq!(tree.len(), 3);
        assert!(trees.contains(&tree));
        // right first, then down from (1,0), then left from (1,1): drops the (0,1)-(0,0) edge
        assert_eq!(tree, trees[3]);
    }

    #[test]
    fn mst_rejects_disconnected() {
        let g = grid_from(&[(0, 0), (2, 0), (2, 1)], 1.0);
        match build_mst(&g, MegaCell::new(0, 0)) {
            Err(PlanningError::Disconnected { components }) => {
                assert_eq!(components.len(), 2);
                assert_eq!(components[0], vec![MegaCell::new(0, 0)]);
            }
            other => panic!("expected disconnected, got {other:?}"),
        }
    }

    #[test]
    fn stc_two_by_two() {
        let g = grid_from(&[(0, 0), (1, 0), (0, 1), (1, 1)], 1.0);
        let plan = plan_grid(&g);
        let pts = plan.path.points();
        assert_eq!(pts.first(), pts.last());
        assert_eq!(pts.len(), 17);
        let counts = visit_counts(&plan);
        assert_eq!(counts.len(), 16);
        assert!(counts.values().all(|&c| c == 1));
        assert!((plan.path.total_length() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn stc_single_cell_loop() {
        let g = grid_from(&[(0, 0)], 2.5);
        let plan = plan_grid(&g);
        assert_eq!(plan.path.points().len(), 5);
        assert!((plan.path.total_length() - 10.0).abs() < 1e-12);
        // clockwise on screen: right, down, left, up
        let p = plan.path.points();
        assert!(p[1].x > p[0].x && p[2].y > p[1].y && p[3].x < p[2].x);
    }

    #[test]
    fn stc_l_shape_visits_each_subcell_once() {
        let g = grid_from(&[(0, 0), (0, 1), (1, 1)], 1.0);
        let plan = plan_grid(&g);
        let counts = visit_counts(&plan);
        assert_eq!(counts.len(), 12);
        assert!(counts.values().all(|&c| c == 1));
        for s in g.subcells() {
            assert_eq!(counts.get(&s), Some(&1), "{s:?}");
        }
    }

    #[test]
    fn stc_path_steps_are_unit_moves() {
        let g = grid_from(&[(0, 0), (1, 0), (2, 0), (1, 1), (1, 2), (0, 2)], 1.5);
        let plan = plan_grid(&g);
        for w in plan.path.points().windows(2) {
            assert!((w[0].dist(w[1]) - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn stc_start_outside_grid() {
        let g = grid_from(&[(0, 0)], 1.0);
        let s = SubCell::new(5, 5);
        assert!(matches!(stc_path(&g, &[], s, params(s)), Err(PlanningError::StartOutsideGrid(5, 5))));
    }

    #[test]
    fn stc_rejects_non_tree_edges() {
        let g = grid_from(&[(0, 0), (1, 0), (0, 1), (1, 1)], 1.0);
        let s = g.default_start();
        let cyc = vec![
            TreeEdge::new(MegaCell::new(0, 0), MegaCell::new(1, 0)),
            TreeEdge::new(MegaCell::new(0, 1), MegaCell::new(1, 1)),
            TreeEdge::new(MegaCell::new(0, 0), MegaCell::new(0, 0)),
        ];
        assert!(stc_path(&g, &cyc, s, params(s)).is_err());
    }

    #[test]
    fn plans_are_deterministic() {
        let poly = Polygon::rectangle(Rect::new(0.0, 0.0, 60.0, 45.0)).unwrap();
        let cam = square_camera(12.8);
        assert_eq!(plan_coverage(&poly, &cam, 0.7).unwrap(), plan_coverage(&poly, &cam, 0.7).unwrap());
    }

    #[test]
    fn waypoint_text_format() {
        let g = grid_from(&[(0, 0)], 1.0);
        let text = plan_grid(&g).to_waypoint_text();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "0.500000 0.500000");
        assert_eq!(lines[1], "1.500000 0.500000");
    }

    #[test]
    fn planning_scales_roughly_linearly() {
        let cam = square_camera(12.8);
        let time = |side: f64| {
            let poly = Polygon::rectangle(Rect::new(0.0, 0.0, side, side)).unwrap();
            let t = Instant::now();
            for _ in 0..5 {
                plan_coverage(&poly, &cam, 0.7).unwrap();
            }
            t.elapsed().as_secs_f64()
        };
        // warm up, then compare 10x area
        time(300.0);
        let small = time(300.0);
        let large = time(300.0 * 10f64.sqrt());
        assert!(large < 20.0 * small.max(1e-4), "small {small}s large {large}s");
    }
}
