//! Geometric feature pool, point labeling and movement classes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    corner_kind, ControlPoint, CornerKind, Dir, Edge, LayoutClip, Orientation, PointKind, MAX_OFFSET_NM,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("movement {0} nm is outside +/-{MAX_OFFSET_NM} nm")]
    Range(f64),
    #[error("class count must be in 1..=40, got {0}")]
    Classes(i32),
    #[error("feature `{0}` has no geometric predicate")]
    UnknownFeature(String),
    #[error("duplicate feature `{0}` in pool")]
    Duplicate(String),
    #[error("point {id} is not hosted on the clip: {reason}")]
    Point { id: usize, reason: String },
    #[error("label record: {0}")]
    Record(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Distance thresholds shared by the predicates, in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub near_nm: f64,
    pub far_nm: f64,
    pub jog_nm: i64,
    pub long_path_nm: i64,
    /// Longest edge that counts as a line end, and widest path whose sides count as path sides.
    pub line_end_nm: i64,
    /// Half width of the strip in front of a point that counts as facing it.
    pub facing_half_width_nm: f64,
    pub corner_segment_nm: i64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            near_nm: 100.0,
            far_nm: 500.0,
            jog_nm: 40,
            long_path_nm: 400,
            line_end_nm: 120,
            facing_half_width_nm: 50.0,
            corner_segment_nm: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub description: String,
}

impl FeatureDef {
    pub fn new(name: &str, description: &str) -> Self {
        Self { name: name.into(), description: description.into() }
    }
}

/// Binary features plus the categorical point type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePool {
    pub types_description: String,
    pub features: Vec<FeatureDef>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

const TYPES_DESCRIPTION: &str = "CV for the corner vertical, CH for the corner horizontal, H for the horizontal but not on corner, V for the vertical but not on corner.";

const BUILTIN: [(&str, &str); 24] = [
    ("near_jog", "in the near distance, there is a jog on that edge where it is located"),
    ("face_jog", "there is a jog facing the point"),
    ("on_jog_long_edge", "it is on the jog, but on the long edge of the jog"),
    ("on_jog_short_edge", "it is on the jog, but on the short edge of the jog"),
    ("on_start_corner_seg", "it is on the corner start segment by clockwise"),
    ("on_end_corner_seg", "it is on the corner end segment by clockwise"),
    (
        "near_hor_dir_has_polygon",
        "in the near horizontal direction, there are polygons facing on that edge where it is located, but not connected on edge",
    ),
    (
        "far_hor_dir_has_polygon",
        "in the far horizontal direction, there are polygons facing on that edge where it is located, but not connected on edge",
    ),
    (
        "near_ver_dir_has_polygon",
        "in the near vertical direction, there are polygons facing on that edge where it is located, but not connected on edge",
    ),
    (
        "far_ver_dir_has_polygon",
        "in the far vertical direction, there are no polygons facing on that edge where it is located, but not connected on edge",
    ),
    ("on_horizontal_edge", "the point is located on a horizontal edge"),
    ("on_vertical_edge", "the point is located on a vertical edge"),
    ("near_convex_corner", "there is a convex corner near the point, connected on edge"),
    ("near_concave_corner", "there is a concave corner near the point, connected on edge"),
    ("face_convex_corner", "there is a convex corner facing the point, not connected on edge"),
    ("face_concave_corner", "there is a concave corner facing the point, not connected on edge"),
    ("near_horizontal_edge", "there is a horizontal edge near the point"),
    ("near_vertical_edge", "there is a vertical edge near the point"),
    ("far_horizontal_edge", "there is a horizontal edge far from the point"),
    ("far_vertical_edge", "there is a vertical edge far from the point"),
    ("at_long_path_end", "the point is located at the end of a long path"),
    ("at_short_path_end", "the point is located at the end of a short path"),
    ("at_long_path_side", "the point is located at the side of a long path"),
    ("at_short_path_side", "the point is located at the side of a short path"),
];

const RESERVE: [(&str, &str); 6] = [
    ("near_vel_dir_has_polygon", "another shape lies within the near distance straight out from the host edge"),
    ("far_vel_dir_has_polygon", "the first shape straight out from the host edge lies in the far range"),
    ("next_to_concave_corner", "an endpoint of the host edge is a concave corner"),
    ("on_line_end", "the host edge is a short edge with convex corners at both ends"),
    ("on_short_edge", "the host edge is no longer than two corner segments"),
    ("near_line_end", "a line end other than the host edge lies within the near distance"),
];

pub fn builtin_pool() -> FeaturePool {
    FeaturePool {
        types_description: TYPES_DESCRIPTION.into(),
        features: BUILTIN.iter().map(|(n, d)| FeatureDef::new(n, d)).collect(),
        thresholds: Thresholds::default(),
    }
}

/// Labeled predicates held back for pool refresh rounds, in draw order.
pub fn reserve_features() -> Vec<FeatureDef> {
    RESERVE.iter().map(|(n, d)| FeatureDef::new(n, d)).collect()
}

impl FeaturePool {
    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.features.iter().any(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(FeatureError::Duplicate(f.name.clone()));
            }
        }
        Ok(())
    }

    /// Fails on the first feature the geometric labeler cannot evaluate.
    pub fn check_labelable(&self) -> Result<(), FeatureError> {
        for f in &self.features {
            Predicate::from_name(&f.name).ok_or_else(|| FeatureError::UnknownFeature(f.name.clone()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TypeTag {
    CV,
    CH,
    H,
    V,
}

impl TypeTag {
    pub const ALL: [TypeTag; 4] = [TypeTag::CH, TypeTag::CV, TypeTag::H, TypeTag::V];

    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::CV => "CV",
            TypeTag::CH => "CH",
            TypeTag::H => "H",
            TypeTag::V => "V",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Name of the one-hot column used for tree training.
    pub fn column(self) -> String {
        format!("types_{}", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub point_id: usize,
    pub kind: PointKind,
    pub type_tag: TypeTag,
    /// Aligned with the pool's feature order.
    pub values: Vec<bool>,
}

impl FeatureVector {
    pub fn get(&self, pool: &FeaturePool, name: &str) -> Option<bool> {
        pool.features.iter().position(|f| f.name == name).map(|i| self.values[i])
    }

    /// Type one-hot columns followed by the pool features.
    pub fn columns(&self) -> Vec<bool> {
        let mut out: Vec<bool> = TypeTag::ALL.iter().map(|&t| t == self.type_tag).collect();
        out.extend_from_slice(&self.values);
        out
    }
}

/// Column names matching [`FeatureVector::columns`].
pub fn column_names(pool: &FeaturePool) -> Vec<String> {
    let mut out: Vec<String> = TypeTag::ALL.iter().map(|t| t.column()).collect();
    out.extend(pool.features.iter().map(|f| f.name.clone()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Predicate {
    NearJog,
    FaceJog,
    OnJogLongEdge,
    OnJogShortEdge,
    OnStartCornerSeg,
    OnEndCornerSeg,
    NearHorDirPolygon,
    FarHorDirPolygon,
    NearVerDirPolygon,
    FarVerDirPolygon,
    OnHorizontalEdge,
    OnVerticalEdge,
    NearConvexCorner,
    NearConcaveCorner,
    FaceConvexCorner,
    FaceConcaveCorner,
    NearHorizontalEdge,
    NearVerticalEdge,
    FarHorizontalEdge,
    FarVerticalEdge,
    AtLongPathEnd,
    AtShortPathEnd,
    AtLongPathSide,
    AtShortPathSide,
    NearVelDirPolygon,
    FarVelDirPolygon,
    NextToConcaveCorner,
    OnLineEnd,
    OnShortEdge,
    NearLineEnd,
}

impl Predicate {
    fn from_name(name: &str) -> Option<Self> {
        use Predicate::*;
        Some(match name {
            "near_jog" => NearJog,
            "face_jog" => FaceJog,
            "on_jog_long_edge" => OnJogLongEdge,
            "on_jog_short_edge" => OnJogShortEdge,
            "on_start_corner_seg" => OnStartCornerSeg,
            "on_end_corner_seg" => OnEndCornerSeg,
            "near_hor_dir_has_polygon" => NearHorDirPolygon,
            "far_hor_dir_has_polygon" => FarHorDirPolygon,
            "near_ver_dir_has_polygon" => NearVerDirPolygon,
            "far_ver_dir_has_polygon" => FarVerDirPolygon,
            "on_horizontal_edge" => OnHorizontalEdge,
            "on_vertical_edge" => OnVerticalEdge,
            "near_convex_corner" => NearConvexCorner,
            "near_concave_corner" => NearConcaveCorner,
            "face_convex_corner" => FaceConvexCorner,
            "face_concave_corner" => FaceConcaveCorner,
            "near_horizontal_edge" => NearHorizontalEdge,
            "near_vertical_edge" => NearVerticalEdge,
            "far_horizontal_edge" => FarHorizontalEdge,
            "far_vertical_edge" => FarVerticalEdge,
            "at_long_path_end" => AtLongPathEnd,
            "at_short_path_end" => AtShortPathEnd,
            "at_long_path_side" => AtLongPathSide,
            "at_short_path_side" => AtShortPathSide,
            "near_vel_dir_has_polygon" => NearVelDirPolygon,
            "far_vel_dir_has_polygon" => FarVelDirPolygon,
            "next_to_concave_corner" => NextToConcaveCorner,
            "on_line_end" => OnLineEnd,
            "on_short_edge" => OnShortEdge,
            "near_line_end" => NearLineEnd,
            _ => return None,
        })
    }
}

/// Per-clip edge data reused across points.
#[derive(Debug, Clone)]
pub struct Labeler<'a> {
    clip: &'a LayoutClip,
    th: Thresholds,
    edges: Vec<Vec<Edge>>,
    /// Corner at the start vertex of each edge.
    corners: Vec<Vec<CornerKind>>,
    jogs: Vec<Vec<bool>>,
    line_ends: Vec<Vec<bool>>,
}

/// Where a point sits, in world coordinates.
struct Site {
    poly: usize,
    edge: usize,
    s: f64,
    len: f64,
    x: f64,
    y: f64,
    tangent: (f64, f64),
    normal: Dir,
}

impl<'a> Labeler<'a> {
    pub fn new(clip: &'a LayoutClip, th: Thresholds) -> Self {
        let mut edges = Vec::new();
        let mut corners = Vec::new();
        let mut jogs = Vec::new();
        let mut line_ends = Vec::new();
        for poly in &clip.polygons {
            let es: Vec<Edge> = poly.edges().collect();
            let n = es.len();
            let cs: Vec<CornerKind> = (0..n).map(|i| corner_kind(poly, i)).collect();
            let jog_set: BTreeSet<usize> = poly.detect_jogs(th.jog_nm).into_iter().collect();
            jogs.push((0..n).map(|i| jog_set.contains(&i)).collect());
            line_ends.push(
                (0..n)
                    .map(|i| {
                        es[i].length_nm <= th.line_end_nm
                            && cs[i] == CornerKind::Convex
                            && cs[(i + 1) % n] == CornerKind::Convex
                    })
                    .collect(),
            );
            edges.push(es);
            corners.push(cs);
        }
        Self { clip, th, edges, corners, jogs, line_ends }
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.th
    }

    fn site(&self, pt: &ControlPoint) -> Result<Site, FeatureError> {
        let bad = |reason: &str| FeatureError::Point { id: pt.id, reason: reason.into() };
        let edges = self.edges.get(pt.polygon).ok_or_else(|| bad("no such polygon"))?;
        let e = edges.get(pt.edge).ok_or_else(|| bad("no such edge"))?;
        if e.length_nm != pt.edge_length_nm {
            return Err(bad("edge length mismatch"));
        }
        let s = pt.arclength_nm as f64;
        if !(0.0..=e.length_nm as f64).contains(&s) {
            return Err(bad("arclength outside the edge"));
        }
        let (x, y) = e.point_at(s);
        Ok(Site {
            poly: pt.polygon,
            edge: pt.edge,
            s,
            len: e.length_nm as f64,
            x,
            y,
            tangent: e.direction.unit_f64(),
            normal: e.outward_normal,
        })
    }

    fn n_edges(&self, poly: usize) -> usize {
        self.edges[poly].len()
    }

    /// Host edge and the two edges sharing its endpoints.
    fn connected(&self, site: &Site, poly: usize, edge: usize) -> bool {
        if poly != site.poly {
            return false;
        }
        let n = self.n_edges(poly);
        edge == site.edge || edge == (site.edge + 1) % n || edge == (site.edge + n - 1) % n
    }

    fn end_corner(&self, site: &Site) -> CornerKind {
        self.corners[site.poly][(site.edge + 1) % self.n_edges(site.poly)]
    }

    fn start_corner(&self, site: &Site) -> CornerKind {
        self.corners[site.poly][site.edge]
    }

    /// Distance to the first non-connected boundary hit by a ray leaving the
    /// point half a nanometre outside its edge.
    fn ray(&self, site: &Site, dir: Dir) -> Option<f64> {
        let (nx, ny) = site.normal.unit_f64();
        let (ox, oy) = (site.x + 0.5 * nx, site.y + 0.5 * ny);
        let (dx, dy) = dir.unit_f64();
        let mut best: Option<f64> = None;
        for (pi, es) in self.edges.iter().enumerate() {
            for e in es {
                if self.connected(site, pi, e.index) || e.orientation() == dir.orientation() {
                    continue;
                }
                let (t, lo, hi, across) = if dx != 0.0 {
                    ((e.p0.x as f64 - ox) * dx, e.p0.y.min(e.p1.y), e.p0.y.max(e.p1.y), oy)
                } else {
                    ((e.p0.y as f64 - oy) * dy, e.p0.x.min(e.p1.x), e.p0.x.max(e.p1.x), ox)
                };
                if t > 0.0 && across >= lo as f64 && across <= hi as f64 && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        }
        best
    }

    /// First-hit distances along the axis directions that leave the host polygon.
    fn axis_hits(&self, site: &Site, orientation: Orientation) -> Vec<f64> {
        let dirs = match orientation {
            Orientation::Horizontal => [Dir::East, Dir::West],
            Orientation::Vertical => [Dir::North, Dir::South],
        };
        dirs.into_iter()
            .filter(|&d| d != site.normal.reverse())
            .filter_map(|d| self.ray(site, d))
            .collect()
    }

    fn near(&self, d: f64) -> bool {
        d <= self.th.near_nm
    }

    fn far(&self, d: f64) -> bool {
        d > self.th.near_nm && d <= self.th.far_nm
    }

    /// Coordinates of `(x, y)` in the point's frame: (along tangent, along outward normal).
    fn local(&self, site: &Site, x: f64, y: f64) -> (f64, f64) {
        let (rx, ry) = (x - site.x, y - site.y);
        let (nx, ny) = site.normal.unit_f64();
        (rx * site.tangent.0 + ry * site.tangent.1, rx * nx + ry * ny)
    }

    fn in_facing_strip(&self, site: &Site, x: f64, y: f64) -> bool {
        let (u, v) = self.local(site, x, y);
        u.abs() <= self.th.facing_half_width_nm && v > 0.0 && v <= self.th.near_nm
    }

    fn face_corner(&self, site: &Site, kind: CornerKind) -> bool {
        let n_host = self.n_edges(site.poly);
        for (pi, poly) in self.clip.polygons.iter().enumerate() {
            for (vi, v) in poly.vertices().iter().enumerate() {
                if pi == site.poly && (vi == site.edge || vi == (site.edge + 1) % n_host) {
                    continue;
                }
                if self.corners[pi][vi] == kind && self.in_facing_strip(site, v.x as f64, v.y as f64) {
                    return true;
                }
            }
        }
        false
    }

    fn face_jog(&self, site: &Site) -> bool {
        for (pi, es) in self.edges.iter().enumerate() {
            for e in es {
                if !self.jogs[pi][e.index] || (pi == site.poly && e.index == site.edge) {
                    continue;
                }
                // Both the strip and the segment are boxes in the local frame.
                let (u0, v0) = self.local(site, e.p0.x as f64, e.p0.y as f64);
                let (u1, v1) = self.local(site, e.p1.x as f64, e.p1.y as f64);
                let (ulo, uhi) = (u0.min(u1), u0.max(u1));
                let (vlo, vhi) = (v0.min(v1), v0.max(v1));
                let w = self.th.facing_half_width_nm;
                if uhi >= -w && ulo <= w && vhi > 0.0 && vlo <= self.th.near_nm {
                    return true;
                }
            }
        }
        false
    }

    fn near_jog(&self, site: &Site) -> bool {
        self.edges[site.poly]
            .iter()
            .filter(|e| self.jogs[site.poly][e.index])
            .any(|e| self.near(e.distance_to(site.x, site.y)))
    }

    /// `Some(true)` when the host borders a jog and is its longer parallel neighbour.
    fn jog_side(&self, site: &Site) -> (bool, bool) {
        let n = self.n_edges(site.poly);
        let es = &self.edges[site.poly];
        let (mut long, mut short) = (false, false);
        for j in [(site.edge + 1) % n, (site.edge + n - 1) % n] {
            if !self.jogs[site.poly][j] || j == site.edge {
                continue;
            }
            let other = if (j + 1) % n == site.edge { (j + n - 1) % n } else { (j + 1) % n };
            if es[site.edge].length_nm >= es[other].length_nm {
                long = true;
            } else {
                short = true;
            }
        }
        (long, short)
    }

    fn edge_distances(&self, site: &Site, orientation: Orientation) -> impl Iterator<Item = f64> + '_ {
        let (x, y) = (site.x, site.y);
        let host = (site.poly, site.edge);
        self.edges.iter().enumerate().flat_map(move |(pi, es)| {
            es.iter()
                .filter(move |e| e.orientation() == orientation)
                .filter(move |e| {
                    let n = es.len();
                    !(pi == host.0
                        && (e.index == host.1 || e.index == (host.1 + 1) % n || e.index == (host.1 + n - 1) % n))
                })
                .map(move |e| e.distance_to(x, y))
        })
    }

    fn path_end(&self, site: &Site) -> Option<bool> {
        if !self.line_ends[site.poly][site.edge] {
            return None;
        }
        let n = self.n_edges(site.poly);
        let es = &self.edges[site.poly];
        let arm = es[(site.edge + 1) % n].length_nm.max(es[(site.edge + n - 1) % n].length_nm);
        Some(arm >= self.th.long_path_nm)
    }

    fn path_side(&self, site: &Site) -> Option<bool> {
        if self.line_ends[site.poly][site.edge] {
            return None;
        }
        // Width of the path: first own-polygon boundary straight inward.
        let inward = site.normal.reverse();
        let (dx, dy) = inward.unit_f64();
        let (ox, oy) = (site.x + 0.5 * dx, site.y + 0.5 * dy);
        let mut width: Option<f64> = None;
        for e in &self.edges[site.poly] {
            if e.index == site.edge || e.orientation() == inward.orientation() {
                continue;
            }
            let (t, lo, hi, across) = if dx != 0.0 {
                ((e.p0.x as f64 - ox) * dx, e.p0.y.min(e.p1.y), e.p0.y.max(e.p1.y), oy)
            } else {
                ((e.p0.y as f64 - oy) * dy, e.p0.x.min(e.p1.x), e.p0.x.max(e.p1.x), ox)
            };
            if t > 0.0 && across >= lo as f64 && across <= hi as f64 && width.is_none_or(|w| t < w) {
                width = Some(t);
            }
        }
        match width {
            Some(w) if w + 0.5 <= self.th.line_end_nm as f64 => Some(site.len as i64 >= self.th.long_path_nm),
            _ => None,
        }
    }

    fn on_start_seg(&self, site: &Site) -> bool {
        site.s <= self.th.corner_segment_nm as f64
    }

    fn on_end_seg(&self, site: &Site) -> bool {
        site.len - site.s <= self.th.corner_segment_nm as f64
    }

    fn eval(&self, site: &Site, p: Predicate) -> bool {
        use Predicate::*;
        let orient = if site.tangent.1 == 0.0 { Orientation::Horizontal } else { Orientation::Vertical };
        match p {
            NearJog => self.near_jog(site),
            FaceJog => self.face_jog(site),
            OnJogLongEdge => self.jog_side(site).0,
            OnJogShortEdge => self.jog_side(site).1,
            OnStartCornerSeg => self.on_start_seg(site),
            OnEndCornerSeg => self.on_end_seg(site),
            NearHorDirPolygon => self.axis_hits(site, Orientation::Horizontal).iter().any(|&d| self.near(d)),
            FarHorDirPolygon => self.axis_hits(site, Orientation::Horizontal).iter().any(|&d| self.far(d)),
            NearVerDirPolygon => self.axis_hits(site, Orientation::Vertical).iter().any(|&d| self.near(d)),
            FarVerDirPolygon => self.axis_hits(site, Orientation::Vertical).iter().any(|&d| self.far(d)),
            OnHorizontalEdge => orient == Orientation::Horizontal,
            OnVerticalEdge => orient == Orientation::Vertical,
            NearConvexCorner => {
                (self.start_corner(site) == CornerKind::Convex && self.near(site.s))
                    || (self.end_corner(site) == CornerKind::Convex && self.near(site.len - site.s))
            }
            NearConcaveCorner => {
                (self.start_corner(site) == CornerKind::Concave && self.near(site.s))
                    || (self.end_corner(site) == CornerKind::Concave && self.near(site.len - site.s))
            }
            FaceConvexCorner => self.face_corner(site, CornerKind::Convex),
            FaceConcaveCorner => self.face_corner(site, CornerKind::Concave),
            NearHorizontalEdge => self.edge_distances(site, Orientation::Horizontal).any(|d| self.near(d)),
            NearVerticalEdge => self.edge_distances(site, Orientation::Vertical).any(|d| self.near(d)),
            FarHorizontalEdge => self.edge_distances(site, Orientation::Horizontal).any(|d| self.far(d)),
            FarVerticalEdge => self.edge_distances(site, Orientation::Vertical).any(|d| self.far(d)),
            AtLongPathEnd => self.path_end(site) == Some(true),
            AtShortPathEnd => self.path_end(site) == Some(false),
            AtLongPathSide => self.path_side(site) == Some(true),
            AtShortPathSide => self.path_side(site) == Some(false),
            NearVelDirPolygon => self.ray(site, site.normal).is_some_and(|d| self.near(d)),
            FarVelDirPolygon => self.ray(site, site.normal).is_some_and(|d| self.far(d)),
            NextToConcaveCorner => {
                self.start_corner(site) == CornerKind::Concave || self.end_corner(site) == CornerKind::Concave
            }
            OnLineEnd => self.line_ends[site.poly][site.edge],
            OnShortEdge => site.len as i64 <= 2 * self.th.corner_segment_nm,
            NearLineEnd => self.edges.iter().enumerate().any(|(pi, es)| {
                es.iter().any(|e| {
                    self.line_ends[pi][e.index]
                        && !(pi == site.poly && e.index == site.edge)
                        && self.near(e.distance_to(site.x, site.y))
                })
            }),
        }
    }

    pub fn type_tag(&self, pt: &ControlPoint) -> Result<TypeTag, FeatureError> {
        let site = self.site(pt)?;
        let corner = self.on_start_seg(&site) || self.on_end_seg(&site);
        Ok(match (site.tangent.1 == 0.0, corner) {
            (true, true) => TypeTag::CH,
            (false, true) => TypeTag::CV,
            (true, false) => TypeTag::H,
            (false, false) => TypeTag::V,
        })
    }

    /// Evaluates a single named feature at the point's nominal position.
    pub fn feature(&self, pt: &ControlPoint, name: &str) -> Result<bool, FeatureError> {
        let p = Predicate::from_name(name).ok_or_else(|| FeatureError::UnknownFeature(name.into()))?;
        Ok(self.eval(&self.site(pt)?, p))
    }

    pub fn label(&self, pt: &ControlPoint, pool: &FeaturePool) -> Result<FeatureVector, FeatureError> {
        let site = self.site(pt)?;
        let values = pool
            .features
            .iter()
            .map(|f| {
                Predicate::from_name(&f.name)
                    .map(|p| self.eval(&site, p))
                    .ok_or_else(|| FeatureError::UnknownFeature(f.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureVector { point_id: pt.id, kind: pt.kind, type_tag: self.type_tag(pt)?, values })
    }
}

/// Labels one point with the pool's own thresholds. Labels describe the
/// nominal (unmoved) position.
pub fn label_point(clip: &LayoutClip, pt: &ControlPoint, pool: &FeaturePool) -> Result<FeatureVector, FeatureError> {
    Labeler::new(clip, pool.thresholds).label(pt, pool)
}

pub fn label_points(clip: &LayoutClip, pts: &[ControlPoint], pool: &FeaturePool) -> Result<Vec<FeatureVector>, FeatureError> {
    let labeler = Labeler::new(clip, pool.thresholds);
    pts.iter().map(|p| labeler.label(p, pool)).collect()
}

/// Rounds half away from zero.
fn round_away(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5).floor()
}

fn check_classes(classes: i32) -> Result<(), FeatureError> {
    if (1..=MAX_OFFSET_NM as i32).contains(&classes) {
        Ok(())
    } else {
        Err(FeatureError::Classes(classes))
    }
}

pub fn step_nm(classes: i32) -> f64 {
    MAX_OFFSET_NM as f64 / classes as f64
}

/// Movement class in `-classes..=classes`.
pub fn bin_movement(delta_nm: f64, classes: i32) -> Result<i32, FeatureError> {
    check_classes(classes)?;
    if !delta_nm.is_finite() || delta_nm.abs() > MAX_OFFSET_NM as f64 {
        return Err(FeatureError::Range(delta_nm));
    }
    let c = round_away(delta_nm / step_nm(classes)) as i32;
    Ok(c.clamp(-classes, classes))
}

/// Centre of a class interval, rounded half away from zero to whole nanometres.
pub fn class_to_offset(class: i32, classes: i32) -> Result<i64, FeatureError> {
    check_classes(classes)?;
    if class.abs() > classes {
        return Err(FeatureError::Record(format!("class {class} outside +/-{classes}")));
    }
    Ok(round_away(class as f64 * step_nm(classes)) as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

/// A point's learned movement split into direction and magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovementRecord {
    pub point_id: usize,
    pub kind: PointKind,
    pub sign: Sign,
    pub distance_nm: i64,
    pub class: i32,
}

impl MovementRecord {
    pub fn new(point_id: usize, kind: PointKind, delta_nm: i64, classes: i32) -> Result<Self, FeatureError> {
        Ok(Self {
            point_id,
            kind,
            sign: if delta_nm < 0 { Sign::Minus } else { Sign::Plus },
            distance_nm: delta_nm.abs(),
            class: bin_movement(delta_nm as f64, classes)?,
        })
    }

    pub fn delta_nm(&self) -> i64 {
        match self.sign {
            Sign::Plus => self.distance_nm,
            Sign::Minus => -self.distance_nm,
        }
    }
}

/// Movement records from points carrying their learned offsets.
pub fn movement_records(points: &[ControlPoint], classes: i32) -> Result<Vec<MovementRecord>, FeatureError> {
    points
        .iter()
        .map(|p| MovementRecord::new(p.id, p.kind, p.tangential_offset_nm, classes))
        .collect()
}

/// One labeled training example as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub epe_id: usize,
    pub features: BTreeMap<String, serde_json::Value>,
    pub result: i32,
}

impl LabelRecord {
    pub fn new(vector: &FeatureVector, pool: &FeaturePool, class: i32) -> Self {
        let mut features = BTreeMap::new();
        features.insert("types".to_string(), serde_json::Value::from(vector.type_tag.as_str()));
        for (f, &v) in pool.features.iter().zip(&vector.values) {
            features.insert(f.name.clone(), serde_json::Value::Bool(v));
        }
        Self { epe_id: vector.point_id, features, result: class }
    }

    /// Rebuilds the vector; the point kind is not part of the record.
    pub fn to_vector(&self, pool: &FeaturePool, kind: PointKind) -> Result<FeatureVector, FeatureError> {
        let tag = self
            .features
            .get("types")
            .and_then(|v| v.as_str())
            .and_then(TypeTag::parse)
            .ok_or_else(|| FeatureError::Record(format!("record {} lacks a valid types entry", self.epe_id)))?;
        let values = pool
            .features
            .iter()
            .map(|f| {
                self.features
                    .get(&f.name)
                    .and_then(|v| v.as_bool())
                    .ok_or_else(|| FeatureError::Record(format!("record {} lacks feature {}", self.epe_id, f.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureVector { point_id: self.epe_id, kind, type_tag: tag, values })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("label record serializes")
    }
}

pub fn write_label_jsonl(records: &[LabelRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn parse_label_jsonl(text: &str) -> Result<Vec<LabelRecord>, FeatureError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(FeatureError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fragment_clip, FragmentPolicy, Point, Polygon};

    fn point_on(clip: &LayoutClip, poly: usize, edge: usize, s: i64) -> ControlPoint {
        let e = clip.polygons[poly].edge(edge);
        ControlPoint {
            id: 0,
            kind: PointKind::Epe,
            polygon: poly,
            edge,
            edge_length_nm: e.length_nm,
            arclength_nm: s,
            tangential_offset_nm: 0,
            clamped: false,
        }
    }

    fn edge_index(poly: &Polygon, p0: Point) -> usize {
        poly.edges().position(|e| e.p0 == p0).unwrap()
    }

    fn rect_clip() -> LayoutClip {
        LayoutClip::new("r", 1000, 1000, vec![Polygon::rect(200, 400, 800, 500).unwrap()]).unwrap()
    }

    #[test]
    fn pool_has_the_listed_features() {
        let pool = builtin_pool();
        pool.validate().unwrap();
        pool.check_labelable().unwrap();
        assert_eq!(pool.features.len(), 24);
        let f = pool.features.iter().find(|f| f.name == "on_jog_long_edge").unwrap();
        assert_eq!(f.description, "it is on the jog, but on the long edge of the jog");
        for r in reserve_features() {
            assert!(!pool.contains(&r.name));
            assert!(Predicate::from_name(&r.name).is_some());
        }
    }

    #[test]
    fn rectangle_mid_edge() {
        let clip = rect_clip();
        let pool = builtin_pool();
        // Top edge runs west to east from (200, 500).
        let top = edge_index(&clip.polygons[0], Point::new(200, 500));
        let v = label_point(&clip, &point_on(&clip, 0, top, 300), &pool).unwrap();
        assert_eq!(v.get(&pool, "on_horizontal_edge"), Some(true));
        assert_eq!(v.get(&pool, "on_vertical_edge"), Some(false));
        assert_eq!(v.get(&pool, "near_jog"), Some(false));
        assert_eq!(v.get(&pool, "near_convex_corner"), Some(false));
        assert_eq!(v.type_tag, TypeTag::H);
        // 600x100 rectangle: the top edge is the side of a long path.
        assert_eq!(v.get(&pool, "at_long_path_side"), Some(true));
    }

    #[test]
    fn corner_distance_threshold() {
        let clip = rect_clip();
        let pool = builtin_pool();
        let top = edge_index(&clip.polygons[0], Point::new(200, 500));
        let v = label_point(&clip, &point_on(&clip, 0, top, 20), &pool).unwrap();
        assert_eq!(v.get(&pool, "near_convex_corner"), Some(true));
        assert_eq!(v.get(&pool, "on_start_corner_seg"), Some(true));
        assert_eq!(v.type_tag, TypeTag::CH);
        let v = label_point(&clip, &point_on(&clip, 0, top, 101), &pool).unwrap();
        assert_eq!(v.get(&pool, "near_convex_corner"), Some(false));
    }

    #[test]
    fn line_end_and_facing_neighbour() {
        // A 60 nm wide vertical wire ending 80 nm below a horizontal bar.
        let wire = Polygon::rect(470, 100, 530, 600).unwrap();
        let bar = Polygon::rect(200, 680, 800, 740).unwrap();
        let clip = LayoutClip::new("t", 1000, 1000, vec![wire, bar]).unwrap();
        let pool = builtin_pool();
        let end = edge_index(&clip.polygons[0], Point::new(470, 600));
        let v = label_point(&clip, &point_on(&clip, 0, end, 30), &pool).unwrap();
        assert_eq!(v.get(&pool, "at_long_path_end"), Some(true));
        assert_eq!(v.get(&pool, "near_ver_dir_has_polygon"), Some(true));
        assert_eq!(v.get(&pool, "far_ver_dir_has_polygon"), Some(false));
        assert_eq!(v.get(&pool, "near_hor_dir_has_polygon"), Some(false));
        assert_eq!(v.get(&pool, "near_horizontal_edge"), Some(true));
        // Bar corners sit 230 nm to the side, outside the facing strip.
        assert_eq!(v.get(&pool, "face_convex_corner"), Some(false));
        let labeler = Labeler::new(&clip, pool.thresholds);
        assert!(labeler.feature(&point_on(&clip, 0, end, 30), "near_vel_dir_has_polygon").unwrap());
        assert!(labeler.feature(&point_on(&clip, 0, end, 30), "on_line_end").unwrap());
    }

    #[test]
    fn jog_sides() {
        // Wire 60 wide whose longer upper part steps right by 20 nm.
        let poly = Polygon::new(vec![
            Point::new(100, 100),
            Point::new(100, 500),
            Point::new(120, 500),
            Point::new(120, 950),
            Point::new(180, 950),
            Point::new(180, 500),
            Point::new(160, 500),
            Point::new(160, 100),
        ])
        .unwrap();
        let clip = LayoutClip::new("j", 1000, 1000, vec![poly]).unwrap();
        let p = &clip.polygons[0];
        assert_eq!(p.detect_jogs(40).len(), 2);
        let pool = builtin_pool();
        let lower_left = edge_index(p, Point::new(100, 100));
        let upper_left = edge_index(p, Point::new(120, 500));
        let v = label_point(&clip, &point_on(&clip, 0, lower_left, 380), &pool).unwrap();
        assert_eq!(v.get(&pool, "near_jog"), Some(true));
        assert_eq!(v.get(&pool, "on_jog_long_edge"), Some(false));
        assert_eq!(v.get(&pool, "on_jog_short_edge"), Some(true));
        let v = label_point(&clip, &point_on(&clip, 0, upper_left, 10), &pool).unwrap();
        assert_eq!(v.get(&pool, "on_jog_long_edge"), Some(true));
        assert_eq!(v.get(&pool, "near_concave_corner"), Some(true));
    }

    #[test]
    fn unknown_feature_is_an_error() {
        let clip = rect_clip();
        let mut pool = builtin_pool();
        pool.features.push(FeatureDef::new("mystery", "?"));
        assert!(matches!(
            label_point(&clip, &point_on(&clip, 0, 0, 10), &pool),
            Err(FeatureError::UnknownFeature(_))
        ));
    }

    #[test]
    fn every_fragment_point_is_labelable() {
        let clip = crate::geometry::synth_clip(5, &Default::default()).unwrap();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let pool = builtin_pool();
        let vs = label_points(&clip, &frag.points, &pool).unwrap();
        assert_eq!(vs.len(), frag.points.len());
        for v in &vs {
            assert_eq!(v.values.len(), pool.features.len());
            let h = v.get(&pool, "on_horizontal_edge").unwrap();
            assert_ne!(h, v.get(&pool, "on_vertical_edge").unwrap());
        }
    }

    #[test]
    fn binning_examples() {
        assert_eq!(bin_movement(0.0, 4).unwrap(), 0);
        assert_eq!(bin_movement(40.0, 4).unwrap(), 4);
        assert_eq!(bin_movement(-12.0, 4).unwrap(), -1);
        assert_eq!(bin_movement(5.0, 4).unwrap(), 1);
        assert_eq!(bin_movement(-5.0, 4).unwrap(), -1);
        assert_eq!(bin_movement(4.9, 4).unwrap(), 0);
        assert!(bin_movement(40.5, 4).is_err());
        assert!(bin_movement(1.0, 0).is_err());
        assert_eq!(class_to_offset(-3, 4).unwrap(), -30);
        assert_eq!(class_to_offset(1, 3).unwrap(), 13);
    }

    #[test]
    fn movement_record_split() {
        let r = MovementRecord::new(7, PointKind::Frag, -23, 4).unwrap();
        assert_eq!((r.sign, r.distance_nm, r.class), (Sign::Minus, 23, -2));
        assert_eq!(r.delta_nm(), -23);
        let r = MovementRecord::new(1, PointKind::Epe, 4, 4).unwrap();
        assert_eq!((r.sign, r.class), (Sign::Plus, 0));
    }

    #[test]
    fn label_record_shape() {
        let clip = rect_clip();
        let pool = builtin_pool();
        let mut pt = point_on(&clip, 0, 0, 50);
        pt.id = 10;
        let v = label_point(&clip, &pt, &pool).unwrap();
        let rec = LabelRecord::new(&v, &pool, 4);
        let line = rec.to_json_line();
        let json: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(json["epe_id"], 10);
        assert_eq!(json["result"], 4);
        assert_eq!(json["features"]["on_vertical_edge"], true);
        assert!(json["features"]["types"].is_string());
        let back = parse_label_jsonl(&write_label_jsonl(&[rec.clone()])).unwrap();
        assert_eq!(back, vec![rec]);
        assert_eq!(back[0].to_vector(&pool, PointKind::Epe).unwrap(), v);
    }
}
