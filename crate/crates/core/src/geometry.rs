//! Planar world frame, raster mapping, polygons and polylines.
//!
//! The world frame is a local metric plane aligned with the field raster:
//! `x` grows with the column index and `y` grows with the row index. Pixel
//! `(c, r)` covers `[ox + c·gsd, ox + (c+1)·gsd) × [oy + r·gsd, oy + (r+1)·gsd)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for boundary-inclusive geometric predicates.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{axis} coordinate {value} outside [{min}, {max})")]
    OutOfRange {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("invalid cell size {0}")]
    InvalidCellSize(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

/// Axis-aligned rectangle `[min.x, max.x] × [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point::new(x0.min(x1), y0.min(y1)),
            max: Point::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x - GEOM_EPS
            && p.x <= self.max.x + GEOM_EPS
            && p.y >= self.min.y - GEOM_EPS
            && p.y <= self.max.y + GEOM_EPS
    }

    /// Shrinks each side inward by `dx` horizontally and `dy` vertically.
    pub fn shrink(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            min: Point::new(self.min.x + dx, self.min.y + dy),
            max: Point::new(self.max.x - dx, self.max.y - dy),
        }
    }
}

/// Georeferencing between world meters and raster pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldFrame {
    pub origin: Point,
    pub gsd: f64,
    pub raster_width: u32,
    pub raster_height: u32,
}

impl FieldFrame {
    pub fn new(
        origin: Point,
        gsd: f64,
        raster_width: u32,
        raster_height: u32,
    ) -> Result<Self, GeometryError> {
        if !(gsd > 0.0 && gsd.is_finite()) {
            return Err(GeometryError::InvalidFrame(format!(
                "gsd must be positive, got {gsd}"
            )));
        }
        if raster_width == 0 || raster_height == 0 {
            return Err(GeometryError::InvalidFrame(format!(
                "raster dims must be positive, got {raster_width}x{raster_height}"
            )));
        }
        Ok(Self {
            origin,
            gsd,
            raster_width,
            raster_height,
        })
    }

    pub fn world_width(&self) -> f64 {
        self.raster_width as f64 * self.gsd
    }

    pub fn world_height(&self) -> f64 {
        self.raster_height as f64 * self.gsd
    }

    pub fn extent(&self) -> Rect {
        Rect {
            min: self.origin,
            max: Point::new(
                self.origin.x + self.world_width(),
                self.origin.y + self.world_height(),
            ),
        }
    }

    /// Maps a world point to the `(col, row)` of the pixel containing it.
    pub fn world_to_raster(&self, p: Point) -> Result<(u32, u32), GeometryError> {
        let col = ((p.x - self.origin.x) / self.gsd).floor();
        let row = ((p.y - self.origin.y) / self.gsd).floor();
        if !(col >= 0.0 && col < self.raster_width as f64) {
            return Err(GeometryError::OutOfRange {
                axis: "x",
                value: p.x,
                min: self.origin.x,
                max: self.origin.x + self.world_width(),
            });
        }
        if !(row >= 0.0 && row < self.raster_height as f64) {
            return Err(GeometryError::OutOfRange {
                axis: "y",
                value: p.y,
                min: self.origin.y,
                max: self.origin.y + self.world_height(),
            });
        }
        Ok((col as u32, row as u32))
    }

    /// World coordinates of the center of pixel `(col, row)`.
    pub fn raster_to_world(&self, col: u32, row: u32) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.gsd,
            self.origin.y + (row as f64 + 0.5) * self.gsd,
        )
    }
}

/// Simple polygon, implicitly closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = GeometryError;

    fn try_from(v: Vec<Point>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = b.sub(a).cross(c.sub(a));
    let o2 = b.sub(a).cross(d.sub(a));
    let o3 = d.sub(c).cross(a.sub(c));
    let o4 = d.sub(c).cross(b.sub(c));
    let sgn = |v: f64| {
        if v > GEOM_EPS {
            1
        } else if v < -GEOM_EPS {
            -1
        } else {
            0
        }
    };
    let (s1, s2, s3, s4) = (sgn(o1), sgn(o2), sgn(o3), sgn(o4));
    if s1 != s2 && s3 != s4 && s1 != 0 && s2 != 0 && s3 != 0 && s4 != 0 {
        return true;
    }
    let on_seg = |p: Point, q: Point, r: Point| {
        r.x >= p.x.min(q.x) - GEOM_EPS
            && r.x <= p.x.max(q.x) + GEOM_EPS
            && r.y >= p.y.min(q.y) - GEOM_EPS
            && r.y <= p.y.max(q.y) + GEOM_EPS
    };
    (s1 == 0 && on_seg(a, b, c))
        || (s2 == 0 && on_seg(a, b, d))
        || (s3 == 0 && on_seg(c, d, a))
        || (s4 == 0 && on_seg(c, d, b))
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::InvalidPolygon("non-finite vertex".into()));
        }
        let poly = Self { vertices };
        if poly.signed_area().abs() <= GEOM_EPS {
            return Err(GeometryError::InvalidPolygon("zero area".into()));
        }
        let n = poly.vertices.len();
        for i in 0..n {
            let (a, b) = poly.edge(i);
            if a.dist(b) <= GEOM_EPS {
                return Err(GeometryError::InvalidPolygon(format!(
                    "repeated vertex at index {i}"
                )));
            }
            for j in (i + 1)..n {
                // adjacent edges share an endpoint by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = poly.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Err(GeometryError::InvalidPolygon(format!(
                        "edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(poly)
    }

    pub fn rectangle(rect: Rect) -> Result<Self, GeometryError> {
        Self::new(vec![
            rect.min,
            Point::new(rect.max.x, rect.min.y),
            rect.max,
            Point::new(rect.min.x, rect.max.y),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn edge(&self, i: usize) -> (Point, Point) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a.cross(b)
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn bounding_box(&self) -> Rect {
        let mut r = Rect {
            min: Point::new(f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for p in &self.vertices {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        r
    }

    fn on_boundary(&self, p: Point) -> bool {
        (0..self.vertices.len()).any(|i| {
            let (a, b) = self.edge(i);
            let ab = b.sub(a);
            let len = ab.norm();
            if ab.cross(p.sub(a)).abs() > GEOM_EPS * len.max(1.0) {
                return false;
            }
            let t = ab.dot(p.sub(a));
            t >= -GEOM_EPS && t <= ab.dot(ab) + GEOM_EPS
        })
    }

    /// Inside-or-on-boundary test.
    pub fn contains_point(&self, p: Point) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (self.vertices[i], self.vertices[j]);
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Full-cell inclusion: all four corners of the square cell lie inside
    /// the polygon or on its boundary.
    pub fn contains_cell(&self, center: Point, cell_size: f64) -> Result<bool, GeometryError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GeometryError::InvalidCellSize(cell_size));
        }
        let h = cell_size / 2.0;
        let corners = [
            Point::new(center.x - h, center.y - h),
            Point::new(center.x + h, center.y - h),
            Point::new(center.x + h, center.y + h),
            Point::new(center.x - h, center.y + h),
        ];
        if !corners.iter().all(|&c| self.contains_point(c)) {
            return Ok(false);
        }
        // corners alone miss notches of concave polygons reaching into the cell
        let cell = Rect::new(center.x - h, center.y - h, center.x + h, center.y + h);
        let strictly_inside = |p: &Point| {
            p.x > cell.min.x + GEOM_EPS
                && p.x < cell.max.x - GEOM_EPS
                && p.y > cell.min.y + GEOM_EPS
                && p.y < cell.max.y - GEOM_EPS
        };
        Ok(!self.vertices.iter().any(strictly_inside))
    }

    /// Erodes the polygon by an axis-aligned rectangle of half extents
    /// `(hx, hy)`: every edge moves inward by the rectangle's support
    /// distance along its normal and adjacent offset lines are re-intersected.
    pub fn inset(&self, hx: f64, hy: f64) -> Result<Polygon, GeometryError> {
        let n = self.vertices.len();
        let ccw = self.signed_area() > 0.0;
        let mut lines = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = self.edge(i);
            let dir = b.sub(a).scale(1.0 / a.dist(b));
            // inward normal
            let normal = if ccw {
                Point::new(-dir.y, dir.x)
            } else {
                Point::new(dir.y, -dir.x)
            };
            let off = normal.x.abs() * hx + normal.y.abs() * hy;
            lines.push((a.add(normal.scale(off)), dir));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (p1, d1) = lines[(i + n - 1) % n];
            let (p2, d2) = lines[i];
            let denom = d1.cross(d2);
            if denom.abs() < 1e-12 {
                // collinear consecutive edges: keep the shifted vertex
                out.push(p2);
                continue;
            }
            let t = p2.sub(p1).cross(d2) / denom;
            out.push(p1.add(d1.scale(t)));
        }
        let inset = Polygon::new(out)
            .map_err(|e| GeometryError::InvalidPolygon(format!("inset collapsed: {e}")))?;
        if (inset.signed_area() > 0.0) != ccw || inset.signed_area().abs() > self.signed_area().abs() {
            return Err(GeometryError::InvalidPolygon("inset collapsed".into()));
        }
        Ok(inset)
    }
}

/// Open polyline with cached cumulative arc lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::InvalidPolyline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].dist(w[1]);
            cumulative.push(acc);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and unit heading at arc length `d`. At joints the outgoing
    /// segment's heading is used; at the very end, the last segment's.
    pub fn arc_position(&self, d: f64) -> Result<(Point, Point), GeometryError> {
        let total = self.total_length();
        if !(d >= 0.0 && d <= total) {
            return Err(GeometryError::OutOfRange {
                axis: "arc length",
                value: d,
                min: 0.0,
                max: total,
            });
        }
        // last segment start with cumulative <= d, skipping zero-length ones
        let mut seg = match self.cumulative.partition_point(|&c| c <= d) {
            0 => 0,
            k => k - 1,
        };
        seg = seg.min(self.points.len() - 2);
        while seg > 0 && self.cumulative[seg + 1] - self.cumulative[seg] <= 0.0 {
            seg -= 1;
        }
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        if len <= 0.0 {
            return Ok((a, Point::new(1.0, 0.0)));
        }
        let t = ((d - self.cumulative[seg]) / len).clamp(0.0, 1.0);
        let heading = b.sub(a).scale(1.0 / len);
        let p = if d == total {
            *self.points.last().unwrap()
        } else {
            a.add(b.sub(a).scale(t))
        };
        Ok((p, heading))
    }

    /// Distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let ab = b.sub(a);
                let l2 = ab.dot(ab);
                if l2 == 0.0 {
                    return p.dist(a);
                }
                let t = (p.sub(a).dot(ab) / l2).clamp(0.0, 1.0);
                p.dist(a.add(ab.scale(t)))
            })
            .fold(f64::INFINITY, f64::min)
    }
}
