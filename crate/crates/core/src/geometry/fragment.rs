//! Edge fragmentation, control points and fragment perturbation.

use serde::{Deserialize, Serialize};

use super::{Edge, GeometryError, LayoutClip, Point, Polygon};

/// Largest tangential relocation of a control point, either direction.
pub const MAX_OFFSET_NM: i64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentPolicy {
    pub corner_segment_nm: i64,
    pub max_fragment_nm: i64,
    pub min_fragment_nm: i64,
}

impl Default for FragmentPolicy {
    fn default() -> Self {
        Self { corner_segment_nm: 40, max_fragment_nm: 80, min_fragment_nm: 20 }
    }
}

impl FragmentPolicy {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::Config(m.to_string()));
        if self.min_fragment_nm < 1 {
            return bad("min_fragment_nm must be >= 1");
        }
        if self.min_fragment_nm > self.max_fragment_nm {
            return bad("min_fragment_nm must not exceed max_fragment_nm");
        }
        if self.corner_segment_nm < 1 || self.corner_segment_nm > self.max_fragment_nm {
            return bad("corner_segment_nm must lie in [1, max_fragment_nm]");
        }
        Ok(())
    }
}

/// Fragment lengths for an edge, in traversal order, plus a degenerate flag.
///
/// Corner segments go at both ends first; the interior is split into
/// `ceil(interior / max)` near-equal parts with the remainder spread over the
/// leading parts. Edges too short for two corner segments are halved, and
/// edges shorter than `2 * min_fragment_nm` stay whole and are flagged.
pub fn fragment_lengths(length: i64, policy: &FragmentPolicy) -> (Vec<i64>, bool) {
    if length < 2 * policy.min_fragment_nm {
        return (vec![length], true);
    }
    let interior = length - 2 * policy.corner_segment_nm;
    if interior < policy.min_fragment_nm {
        let half = length / 2;
        return (vec![half, length - half], false);
    }
    let parts = (interior + policy.max_fragment_nm - 1) / policy.max_fragment_nm;
    let base = interior / parts;
    let extra = interior % parts;
    let mut out = Vec::with_capacity(parts as usize + 2);
    out.push(policy.corner_segment_nm);
    out.extend((0..parts).map(|k| base + i64::from(k < extra)));
    out.push(policy.corner_segment_nm);
    (out, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointKind {
    #[serde(rename = "EPE")]
    Epe,
    #[serde(rename = "FRAG")]
    Frag,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Epe => "EPE",
            PointKind::Frag => "FRAG",
        }
    }
}

/// Axis along which a control point's offset acts.
///
/// `Tangential` relocates points along their host edge. `Normal` leaves
/// positions alone and instead shifts the EPE target along the outward normal
/// (retargeting); FRAG offsets have no effect under `Normal`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveAxis {
    #[default]
    Tangential,
    Normal,
}

/// An EPE measurement point or a fragment boundary on a host edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub id: usize,
    pub kind: PointKind,
    pub polygon: usize,
    pub edge: usize,
    pub edge_length_nm: i64,
    /// Nominal position along the host edge, from its clockwise start.
    pub arclength_nm: i64,
    /// Signed relocation; positive follows the clockwise traversal direction.
    pub tangential_offset_nm: i64,
    #[serde(default)]
    pub clamped: bool,
}

impl ControlPoint {
    pub fn position_nm(&self) -> i64 {
        self.arclength_nm + self.tangential_offset_nm
    }

    pub fn with_offset(mut self, offset: i64) -> Result<Self, GeometryError> {
        self.tangential_offset_nm = 0;
        self.clamped = false;
        move_point_tangential(&self, offset)
    }
}

/// Moves a point along its host edge.
///
/// The accumulated offset must stay within `±MAX_OFFSET_NM`; the resulting
/// position is clamped into the edge span and the clamp is recorded.
pub fn move_point_tangential(pt: &ControlPoint, delta_nm: i64) -> Result<ControlPoint, GeometryError> {
    let offset = pt.tangential_offset_nm + delta_nm;
    if offset.abs() > MAX_OFFSET_NM {
        return Err(GeometryError::OffsetRange(offset));
    }
    let mut out = *pt;
    let pos = pt.arclength_nm + offset;
    let clamped_pos = pos.clamp(0, pt.edge_length_nm);
    out.tangential_offset_nm = clamped_pos - pt.arclength_nm;
    out.clamped = pt.clamped || clamped_pos != pos;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentedEdge {
    pub polygon: usize,
    pub edge: Edge,
    /// Interior fragment boundaries as arclengths, strictly increasing.
    pub cuts: Vec<i64>,
    pub degenerate: bool,
}

impl FragmentedEdge {
    pub fn fragment_count(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn spans(&self) -> Vec<(i64, i64)> {
        spans_of(&self.cuts, self.edge.length_nm)
    }

    pub fn lengths(&self) -> Vec<i64> {
        self.spans().iter().map(|(a, b)| b - a).collect()
    }
}

pub(crate) fn spans_of(cuts: &[i64], length: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        out.push((start, c));
        start = c;
    }
    out.push((start, length));
    out
}

pub fn fragment_edge(polygon: usize, edge: Edge, policy: &FragmentPolicy) -> FragmentedEdge {
    let (lengths, degenerate) = fragment_lengths(edge.length_nm, policy);
    let mut cuts = Vec::with_capacity(lengths.len().saturating_sub(1));
    let mut acc = 0;
    for l in &lengths[..lengths.len() - 1] {
        acc += l;
        cuts.push(acc);
    }
    FragmentedEdge { polygon, edge, cuts, degenerate }
}

/// Fragmentation of every polygon edge in a clip together with its control points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFragmentation {
    pub policy: FragmentPolicy,
    pub edges: Vec<FragmentedEdge>,
    /// Clockwise order: per polygon, per edge, alternating EPE (fragment
    /// midpoint) and FRAG (boundary) points.
    pub points: Vec<ControlPoint>,
    /// `edge_offsets[p]` is the index in `edges` of polygon `p`'s first edge.
    pub edge_offsets: Vec<usize>,
}

impl ClipFragmentation {
    pub fn edge(&self, polygon: usize, edge: usize) -> &FragmentedEdge {
        &self.edges[self.edge_offsets[polygon] + edge]
    }

    pub fn epe_points(&self) -> impl Iterator<Item = &ControlPoint> {
        self.points.iter().filter(|p| p.kind == PointKind::Epe)
    }
}

pub fn fragment_clip(clip: &LayoutClip, policy: &FragmentPolicy) -> Result<ClipFragmentation, GeometryError> {
    policy.validate()?;
    let mut edges = Vec::new();
    let mut points = Vec::new();
    let mut edge_offsets = Vec::with_capacity(clip.polygons.len());
    for (pi, poly) in clip.polygons.iter().enumerate() {
        edge_offsets.push(edges.len());
        for e in poly.edges() {
            let fe = fragment_edge(pi, e, policy);
            for (k, (a, b)) in fe.spans().into_iter().enumerate() {
                let base = ControlPoint {
                    id: points.len(),
                    kind: PointKind::Epe,
                    polygon: pi,
                    edge: e.index,
                    edge_length_nm: e.length_nm,
                    arclength_nm: (a + b) / 2,
                    tangential_offset_nm: 0,
                    clamped: false,
                };
                points.push(base);
                if k < fe.cuts.len() {
                    points.push(ControlPoint {
                        id: points.len(),
                        kind: PointKind::Frag,
                        arclength_nm: fe.cuts[k],
                        ..base
                    });
                }
            }
            edges.push(fe);
        }
    }
    Ok(ClipFragmentation { policy: *policy, edges, points, edge_offsets })
}

/// Cut positions after relocating FRAG points (given in cut order).
///
/// Positions are made strictly increasing with every fragment at least 1 nm
/// long; a boundary pushed past its neighbour stops 1 nm short of it.
pub fn resolve_cuts(length: i64, positions: &[i64]) -> Vec<i64> {
    let k = positions.len() as i64;
    let mut out = Vec::with_capacity(positions.len());
    let mut prev = 0;
    for (i, &p) in positions.iter().enumerate() {
        let hi = length - (k - i as i64);
        let c = p.clamp(prev + 1, hi.max(prev + 1));
        out.push(c);
        prev = c;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveOutcome {
    pub polygon: Polygon,
    /// Set when the requested moves produced an invalid polygon and were limited.
    pub reduced: bool,
    /// Magnitude limit applied to every move when `reduced`.
    pub limit_nm: Option<i64>,
}

/// Translates every fragment along its edge's outward normal.
///
/// `cuts[i]` are the interior boundaries of edge `i` and `moves[i]` holds one
/// signed move per fragment of that edge. Adjacent fragments with different
/// moves get a jog between them. If the result would self-intersect, all moves
/// are clamped to the largest magnitude that still yields a valid polygon.
pub fn apply_fragment_normal_moves(poly: &Polygon, cuts: &[Vec<i64>], moves: &[Vec<i64>]) -> Result<MoveOutcome, GeometryError> {
    let n = poly.len();
    if cuts.len() != n || moves.len() != n {
        return Err(GeometryError::Config(format!("expected fragment data for {n} edges")));
    }
    for i in 0..n {
        let e = poly.edge(i);
        if moves[i].len() != cuts[i].len() + 1 {
            return Err(GeometryError::Config(format!("edge {i}: {} cuts but {} moves", cuts[i].len(), moves[i].len())));
        }
        let mut prev = 0;
        for &c in &cuts[i] {
            if c <= prev || c >= e.length_nm {
                return Err(GeometryError::Config(format!("edge {i}: cut {c} out of order")));
            }
            prev = c;
        }
    }
    if let Ok(p) = build_moved(poly, cuts, moves, i64::MAX) {
        return Ok(MoveOutcome { polygon: p, reduced: false, limit_nm: None });
    }
    let max = moves.iter().flatten().map(|m| m.abs()).max().unwrap_or(0);
    let (mut lo, mut hi) = (0, max);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if build_moved(poly, cuts, moves, mid).is_ok() {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let polygon = build_moved(poly, cuts, moves, lo)?;
    Ok(MoveOutcome { polygon, reduced: true, limit_nm: Some(lo) })
}

fn build_moved(poly: &Polygon, cuts: &[Vec<i64>], moves: &[Vec<i64>], limit: i64) -> Result<Polygon, GeometryError> {
    let n = poly.len();
    let m = |i: usize, k: usize| moves[i][k].clamp(-limit, limit);
    let mut verts: Vec<Point> = Vec::with_capacity(n * 3);
    for i in 0..n {
        let e = poly.edge(i);
        let pi = (i + n - 1) % n;
        let prev = poly.edge(pi);
        let corner = e.p0.offset(e.outward_normal, m(i, 0)).offset(prev.outward_normal, m(pi, moves[pi].len() - 1));
        verts.push(corner);
        for (k, &c) in cuts[i].iter().enumerate() {
            let b = e.point_at_nm(c);
            verts.push(b.offset(e.outward_normal, m(i, k)));
            verts.push(b.offset(e.outward_normal, m(i, k + 1)));
        }
    }
    Polygon::new_clockwise(verts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(c: i64, max: i64, min: i64) -> FragmentPolicy {
        FragmentPolicy { corner_segment_nm: c, max_fragment_nm: max, min_fragment_nm: min }
    }

    #[test]
    fn fragment_length_rules() {
        assert_eq!(fragment_lengths(200, &policy(40, 60, 20)), (vec![40, 60, 60, 40], false));
        assert_eq!(fragment_lengths(30, &policy(40, 60, 20)), (vec![30], true));
        assert_eq!(fragment_lengths(100, &policy(30, 40, 10)), (vec![30, 40, 30], false));
        assert_eq!(fragment_lengths(90, &policy(40, 60, 20)), (vec![45, 45], false));
        assert_eq!(fragment_lengths(205, &policy(40, 60, 20)), (vec![40, 42, 42, 41, 40], false));
    }

    #[test]
    fn rectangle_fragmentation() {
        let clip = LayoutClip::new("r", 400, 400, vec![Polygon::rect(100, 100, 200, 200).unwrap()]).unwrap();
        let frag = fragment_clip(&clip, &policy(30, 40, 10)).unwrap();
        assert_eq!(frag.edges.len(), 4);
        for fe in &frag.edges {
            assert_eq!(fe.lengths(), vec![30, 40, 30]);
        }
        // 3 EPE + 2 FRAG per edge.
        assert_eq!(frag.points.len(), 20);
        assert_eq!(frag.points.iter().filter(|p| p.kind == PointKind::Frag).count(), 8);
        assert!(frag.points.iter().enumerate().all(|(i, p)| p.id == i));
        assert_eq!(frag.points[0].arclength_nm, 15);
        assert_eq!(frag.points[1].arclength_nm, 30);
    }

    #[test]
    fn tangential_moves() {
        let p = ControlPoint {
            id: 0,
            kind: PointKind::Epe,
            polygon: 0,
            edge: 0,
            edge_length_nm: 100,
            arclength_nm: 50,
            tangential_offset_nm: 0,
            clamped: false,
        };
        assert_eq!(move_point_tangential(&p, 10).unwrap().tangential_offset_nm, 10);
        let p35 = ControlPoint { tangential_offset_nm: 35, ..p };
        assert_eq!(move_point_tangential(&p35, 10), Err(GeometryError::OffsetRange(45)));
        let near_start = ControlPoint { arclength_nm: 5, ..p };
        let moved = move_point_tangential(&near_start, -10).unwrap();
        assert_eq!(moved.position_nm(), 0);
        assert!(moved.clamped);
        assert_eq!((moved.kind, moved.edge), (p.kind, p.edge));
    }

    #[test]
    fn cut_resolution_keeps_order() {
        assert_eq!(resolve_cuts(100, &[30, 70]), vec![30, 70]);
        assert_eq!(resolve_cuts(100, &[60, 50]), vec![60, 61]);
        assert_eq!(resolve_cuts(100, &[-5, 120]), vec![1, 99]);
    }

    #[test]
    fn identity_and_single_edge_moves() {
        let rect = Polygon::rect(100, 100, 160, 200).unwrap();
        let cuts = vec![vec![]; 4];
        let zero = vec![vec![0]; 4];
        let out = apply_fragment_normal_moves(&rect, &cuts, &zero).unwrap();
        assert_eq!(out.polygon, rect);
        // Edge 0 is the west side; grow it by 5.
        let mut moves = zero.clone();
        moves[0][0] = 5;
        let out = apply_fragment_normal_moves(&rect, &cuts, &moves).unwrap();
        assert_eq!(out.polygon, Polygon::rect(95, 100, 160, 200).unwrap());
    }

    #[test]
    fn adjacent_moves_insert_a_jog() {
        let rect = Polygon::rect(100, 100, 160, 200).unwrap();
        let mut cuts = vec![vec![]; 4];
        cuts[0] = vec![50];
        let mut moves = vec![vec![0]; 4];
        moves[0] = vec![4, 0];
        let out = apply_fragment_normal_moves(&rect, &cuts, &moves).unwrap();
        assert_eq!(out.polygon.len(), rect.len() + 2);
        assert!(!out.reduced);
        assert_eq!(out.polygon.area(), rect.area() + 4 * 50);
    }

    #[test]
    fn collapsing_moves_are_reduced() {
        let rect = Polygon::rect(100, 100, 160, 200).unwrap();
        let cuts = vec![vec![]; 4];
        let mut moves = vec![vec![0]; 4];
        moves[0][0] = -40;
        moves[2][0] = -40;
        let out = apply_fragment_normal_moves(&rect, &cuts, &moves).unwrap();
        assert!(out.reduced);
        assert_eq!(out.limit_nm, Some(29));
        assert_eq!(out.polygon, Polygon::rect(129, 100, 131, 200).unwrap());
    }
}
