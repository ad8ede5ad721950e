//! Rectilinear layout geometry.
//!
//! All coordinates are integer nanometers in a y-up frame. Polygons are stored
//! clockwise, so the interior of every edge lies on its right-hand side and the
//! outward normal is the edge direction rotated a quarter turn counter-clockwise.

mod fragment;
mod layout;
mod raster;
mod svg;
mod synth;

pub use fragment::{
    apply_fragment_normal_moves, fragment_clip, fragment_edge, fragment_lengths, move_point_tangential,
    resolve_cuts, ClipFragmentation, ControlPoint, FragmentPolicy, FragmentedEdge, MoveAxis, MoveOutcome,
    PointKind, MAX_OFFSET_NM,
};
pub use layout::{parse_layout, LayoutClip};
pub use raster::{coverage, rasterize, BinaryGrid, Grid};
pub use svg::{render_svg, SvgOverlay};
pub use synth::{synth_clip, SynthParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge {from:?} -> {to:?} is not axis-parallel")]
    NonRectilinear { from: Point, to: Point },
    #[error("polygon needs at least 4 distinct corners, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is degenerate or self-intersecting")]
    SelfIntersecting,
    #[error("polygon {index} leaves the clip extent {width}x{height}")]
    OutOfBounds { index: usize, width: i64, height: i64 },
    #[error("polygons {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("clip dimensions must be positive")]
    EmptyClip,
    #[error("offset {0} nm exceeds the +/-{MAX_OFFSET_NM} nm movement range")]
    OffsetRange(i64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("synthetic generation failed: {0}")]
    Generation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dir: Dir, amount: i64) -> Self {
        let (dx, dy) = dir.unit();
        Self::new(self.x + dx * amount, self.y + dy * amount)
    }
}

/// A unit axis vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    East,
    North,
    West,
    South,
}

impl Dir {
    pub const fn unit(self) -> (i64, i64) {
        match self {
            Dir::East => (1, 0),
            Dir::North => (0, 1),
            Dir::West => (-1, 0),
            Dir::South => (0, -1),
        }
    }

    pub fn unit_f64(self) -> (f64, f64) {
        let (x, y) = self.unit();
        (x as f64, y as f64)
    }

    /// Quarter turn counter-clockwise.
    pub const fn left(self) -> Self {
        match self {
            Dir::East => Dir::North,
            Dir::North => Dir::West,
            Dir::West => Dir::South,
            Dir::South => Dir::East,
        }
    }

    pub const fn reverse(self) -> Self {
        match self {
            Dir::East => Dir::West,
            Dir::North => Dir::South,
            Dir::West => Dir::East,
            Dir::South => Dir::North,
        }
    }

    pub const fn orientation(self) -> Orientation {
        match self {
            Dir::East | Dir::West => Orientation::Horizontal,
            Dir::North | Dir::South => Orientation::Vertical,
        }
    }

    fn between(a: Point, b: Point) -> Option<Self> {
        match ((b.x - a.x).signum(), (b.y - a.y).signum()) {
            (1, 0) => Some(Dir::East),
            (-1, 0) => Some(Dir::West),
            (0, 1) => Some(Dir::North),
            (0, -1) => Some(Dir::South),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "H")]
    Horizontal,
    #[serde(rename = "V")]
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub index: usize,
    pub p0: Point,
    pub p1: Point,
    pub direction: Dir,
    pub outward_normal: Dir,
    pub length_nm: i64,
}

impl Edge {
    pub fn orientation(&self) -> Orientation {
        self.direction.orientation()
    }

    /// Point at arclength `s` measured from `p0` in the clockwise direction.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (dx, dy) = self.direction.unit_f64();
        (self.p0.x as f64 + dx * s, self.p0.y as f64 + dy * s)
    }

    pub fn point_at_nm(&self, s: i64) -> Point {
        self.p0.offset(self.direction, s)
    }

    /// Squared-free Euclidean distance from `(x, y)` to this segment.
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        segment_distance(self.p0, self.p1, x, y)
    }
}

pub(crate) fn segment_distance(a: Point, b: Point, x: f64, y: f64) -> f64 {
    let (x0, x1) = (a.x.min(b.x) as f64, a.x.max(b.x) as f64);
    let (y0, y1) = (a.y.min(b.y) as f64, a.y.max(b.y) as f64);
    let dx = if x < x0 { x0 - x } else if x > x1 { x - x1 } else { 0.0 };
    let dy = if y < y0 { y0 - y } else if y > y1 { y - y1 } else { 0.0 };
    dx.hypot(dy)
}

/// Distance between two axis-parallel segments.
pub(crate) fn segment_segment_distance(a0: Point, a1: Point, b0: Point, b1: Point) -> f64 {
    let gap = |lo_a: i64, hi_a: i64, lo_b: i64, hi_b: i64| -> f64 {
        if hi_a < lo_b {
            (lo_b - hi_a) as f64
        } else if hi_b < lo_a {
            (lo_a - hi_b) as f64
        } else {
            0.0
        }
    };
    let dx = gap(a0.x.min(a1.x), a0.x.max(a1.x), b0.x.min(b1.x), b0.x.max(b1.x));
    let dy = gap(a0.y.min(a1.y), a0.y.max(a1.y), b0.y.min(b1.y), b0.y.max(b1.y));
    dx.hypot(dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CornerKind {
    Convex,
    Concave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CornerInfo {
    pub vertex: usize,
    pub kind: CornerKind,
}

/// A simple rectilinear polygon with clockwise vertex order.
///
/// Construction normalizes the input: duplicate and collinear vertices are
/// dropped, counter-clockwise input is reversed, and the vertex list is rotated
/// to start at the lexicographically smallest corner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let mut v = cleanup(vertices)?;
        if signed_area2(&v) > 0 {
            v.reverse();
        }
        Self::finish(v)
    }

    /// Like [`Polygon::new`] but fails instead of reversing counter-clockwise input.
    pub(crate) fn new_clockwise(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let v = cleanup(vertices)?;
        if signed_area2(&v) >= 0 {
            return Err(GeometryError::SelfIntersecting);
        }
        Self::finish(v)
    }

    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self, GeometryError> {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x0, y1),
            Point::new(x1, y1),
            Point::new(x1, y0),
        ])
    }

    fn finish(mut v: Vec<Point>) -> Result<Self, GeometryError> {
        if signed_area2(&v) == 0 {
            return Err(GeometryError::SelfIntersecting);
        }
        let start = (0..v.len()).min_by_key(|&i| v[i]).unwrap_or(0);
        v.rotate_left(start);
        let poly = Self { vertices: v };
        if !poly.is_simple() {
            return Err(GeometryError::SelfIntersecting);
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge(&self, i: usize) -> Edge {
        let n = self.vertices.len();
        let p0 = self.vertices[i % n];
        let p1 = self.vertices[(i + 1) % n];
        let direction = Dir::between(p0, p1).expect("validated rectilinear edge");
        Edge {
            index: i % n,
            p0,
            p1,
            direction,
            outward_normal: direction.left(),
            length_nm: (p1.x - p0.x).abs() + (p1.y - p0.y).abs(),
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.vertices.len()).map(|i| self.edge(i))
    }

    pub fn area(&self) -> i64 {
        signed_area2(&self.vertices).abs() / 2
    }

    pub fn perimeter(&self) -> i64 {
        self.edges().map(|e| e.length_nm).sum()
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bbox(&self) -> (Point, Point) {
        let xs = self.vertices.iter().map(|p| p.x);
        let ys = self.vertices.iter().map(|p| p.y);
        (
            Point::new(xs.clone().min().unwrap_or(0), ys.clone().min().unwrap_or(0)),
            Point::new(xs.max().unwrap_or(0), ys.max().unwrap_or(0)),
        )
    }

    /// Half-open point-in-polygon test (`[xmin, xmax) x [ymin, ymax)` for a rectangle).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for e in self.edges().filter(|e| e.orientation() == Orientation::Vertical) {
            let (lo, hi) = (e.p0.y.min(e.p1.y) as f64, e.p0.y.max(e.p1.y) as f64);
            if y >= lo && y < hi && (e.p0.x as f64) > x {
                inside = !inside;
            }
        }
        inside
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect(),
        }
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segment_segment_distance(edges[i].p0, edges[i].p1, edges[j].p0, edges[j].p1) == 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Minimum boundary-to-boundary distance to another polygon.
    pub fn clearance(&self, other: &Polygon) -> f64 {
        let mut best = f64::INFINITY;
        for a in self.edges() {
            for b in other.edges() {
                best = best.min(segment_segment_distance(a.p0, a.p1, b.p0, b.p1));
            }
        }
        best
    }

    /// Edges of length at most `max_jog_nm` whose two neighbours run in the
    /// same direction (a step between two parallel edges).
    pub fn detect_jogs(&self, max_jog_nm: i64) -> Vec<usize> {
        let n = self.vertices.len();
        (0..n)
            .filter(|&i| {
                let e = self.edge(i);
                let prev = self.edge((i + n - 1) % n);
                let next = self.edge((i + 1) % n);
                e.length_nm <= max_jog_nm && prev.direction == next.direction
            })
            .collect()
    }
}

/// One entry per vertex; convex minus concave is always 4 for a simple clockwise polygon.
pub fn classify_corners(poly: &Polygon) -> Vec<CornerInfo> {
    let n = poly.len();
    (0..n)
        .map(|i| CornerInfo { vertex: i, kind: corner_kind(poly, i) })
        .collect()
}

pub fn corner_kind(poly: &Polygon, vertex: usize) -> CornerKind {
    let n = poly.len();
    let din = poly.edge((vertex + n - 1) % n).direction.unit();
    let dout = poly.edge(vertex).direction.unit();
    // Clockwise traversal: right turns are convex.
    if din.0 * dout.1 - din.1 * dout.0 < 0 {
        CornerKind::Convex
    } else {
        CornerKind::Concave
    }
}

fn signed_area2(v: &[Point]) -> i64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

fn cleanup(mut v: Vec<Point>) -> Result<Vec<Point>, GeometryError> {
    v.dedup();
    while v.len() > 1 && v.first() == v.last() {
        v.pop();
    }
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if a.x != b.x && a.y != b.y {
            return Err(GeometryError::NonRectilinear { from: a, to: b });
        }
    }
    // Drop collinear vertices until every corner turns. A reversal (spike) is degenerate.
    loop {
        let n = v.len();
        if n < 4 {
            return Err(GeometryError::TooFewVertices(n));
        }
        let mut removed = false;
        for i in 0..n {
            let prev = v[(i + n - 1) % n];
            let cur = v[i];
            let next = v[(i + 1) % n];
            let (d0, d1) = (Dir::between(prev, cur), Dir::between(cur, next));
            match (d0, d1) {
                (Some(a), Some(b)) if a == b => {
                    v.remove(i);
                    removed = true;
                    break;
                }
                (Some(a), Some(b)) if a == b.reverse() => return Err(GeometryError::SelfIntersecting),
                (None, _) | (_, None) => {
                    v.remove(i);
                    removed = true;
                    break;
                }
                _ => {}
            }
        }
        if !removed {
            return Ok(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(c: &[i64]) -> Vec<Point> {
        c.chunks(2).map(|p| Point::new(p[0], p[1])).collect()
    }

    fn counts(poly: &Polygon) -> (usize, usize) {
        let c = classify_corners(poly);
        let convex = c.iter().filter(|c| c.kind == CornerKind::Convex).count();
        (convex, c.len() - convex)
    }

    #[test]
    fn orientation_is_normalized() {
        let cw = Polygon::new(pts(&[0, 0, 0, 100, 60, 100, 60, 0])).unwrap();
        let ccw = Polygon::new(pts(&[0, 0, 60, 0, 60, 100, 0, 100])).unwrap();
        assert_eq!(cw, ccw);
        assert_eq!(cw.area(), 6000);
        assert_eq!(cw.edge(0).outward_normal, Dir::West);
    }

    #[test]
    fn corner_counts() {
        let rect = Polygon::rect(0, 0, 60, 100).unwrap();
        assert_eq!(counts(&rect), (4, 0));
        let l = Polygon::new(pts(&[0, 0, 0, 200, 100, 200, 100, 100, 200, 100, 200, 0])).unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(counts(&l), (5, 1));
        let u = Polygon::new(pts(&[0, 0, 0, 300, 100, 300, 100, 100, 200, 100, 200, 300, 300, 300, 300, 0])).unwrap();
        assert_eq!(counts(&u), (6, 2));
    }

    #[test]
    fn collinear_and_duplicate_vertices_are_dropped() {
        let p = Polygon::new(pts(&[0, 0, 0, 50, 0, 100, 0, 100, 60, 100, 60, 0, 0, 0])).unwrap();
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn rejects_bad_polygons() {
        assert!(matches!(
            Polygon::new(pts(&[0, 0, 10, 10, 20, 0])),
            Err(GeometryError::NonRectilinear { .. })
        ));
        // Figure-eight: two squares touching at a corner.
        let bowtie = pts(&[0, 0, 0, 10, 10, 10, 10, 20, 20, 20, 20, 10, 10, 10, 10, 0]);
        assert!(Polygon::new(bowtie).is_err());
    }

    #[test]
    fn contains_is_half_open() {
        let r = Polygon::rect(0, 0, 60, 100).unwrap();
        assert!(r.contains(0.0, 0.0));
        assert!(!r.contains(60.0, 50.0));
        assert!(!r.contains(30.0, 100.0));
        assert!(r.contains(59.5, 99.5));
    }

    #[test]
    fn jogs() {
        // A wire whose top edge steps up by 20 nm halfway along.
        let p = Polygon::new(pts(&[0, 0, 0, 60, 200, 60, 200, 80, 400, 80, 400, 0])).unwrap();
        let jogs = p.detect_jogs(40);
        assert_eq!(jogs.len(), 1);
        assert_eq!(p.edge(jogs[0]).length_nm, 20);
        assert!(Polygon::rect(0, 0, 30, 30).unwrap().detect_jogs(40).is_empty());
    }
}
