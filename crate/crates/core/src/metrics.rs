//! EPE, PVB, the composite OPC loss and ratio reporting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{BinaryGrid, ControlPoint, Grid, LayoutClip, PointKind};
use crate::litho::{edge_crossing_distance, LithoConfig};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("grid dimensions differ: {0}x{1} vs {2}x{3}")]
    Dimensions(usize, usize, usize, usize),
    #[error("point {id} is not on a target edge: {reason}")]
    OffEdge { id: usize, reason: String },
    #[error("metric keys differ: {0}")]
    Keys(String),
    #[error("metrics config: {0}")]
    Config(String),
}

/// Which EPE quantity enters the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpeTerm {
    #[default]
    Count,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub epe_term: EpeTerm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 100.0, gamma_w: 1.0, epe_term: EpeTerm::Count }
    }
}

/// Fixed evaluation sites along every target edge, independent of any recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSampling {
    pub pitch_nm: i64,
    /// Sites closer than this to either end of an edge are skipped.
    pub corner_exclusion_nm: i64,
}

impl Default for EvalSampling {
    fn default() -> Self {
        Self { pitch_nm: 10, corner_exclusion_nm: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub guard_nm: i64,
    pub epe_threshold_nm: f64,
    pub sampling: EvalSampling,
    pub weights: LossWeights,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { guard_nm: 100, epe_threshold_nm: 1.0, sampling: EvalSampling::default(), weights: LossWeights::default() }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.guard_nm < 0 || self.sampling.pitch_nm < 1 || self.sampling.corner_exclusion_nm < 0 {
            return Err(MetricsError::Config("guard, pitch and exclusion must be non-negative (pitch >= 1)".into()));
        }
        if !(self.epe_threshold_nm >= 0.0) {
            return Err(MetricsError::Config("EPE threshold must be non-negative".into()));
        }
        let w = &self.weights;
        if !(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma_w >= 0.0) {
            return Err(MetricsError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpeReport {
    pub distances: Vec<f64>,
    pub unresolved: usize,
    pub threshold_nm: f64,
    pub epe_n: usize,
    pub epe_d: f64,
}

impl EpeReport {
    pub fn from_distances(distances: Vec<f64>, threshold_nm: f64) -> Self {
        let mut epe_n = 0;
        let mut epe_d = 0.0;
        for d in &distances {
            if d.abs() > threshold_nm {
                epe_n += 1;
                epe_d += d.abs();
            }
        }
        Self { distances, unresolved: 0, threshold_nm, epe_n, epe_d }
    }

    pub fn max_abs(&self) -> f64 {
        self.distances.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Location and outward normal of a point on its host target edge.
pub fn point_location(clip: &LayoutClip, pt: &ControlPoint) -> Result<((f64, f64), (f64, f64)), MetricsError> {
    let off = |reason: String| MetricsError::OffEdge { id: pt.id, reason };
    let poly = clip.polygons.get(pt.polygon).ok_or_else(|| off(format!("no polygon {}", pt.polygon)))?;
    if pt.edge >= poly.len() {
        return Err(off(format!("polygon {} has no edge {}", pt.polygon, pt.edge)));
    }
    let e = poly.edge(pt.edge);
    let s = pt.position_nm();
    if e.length_nm != pt.edge_length_nm || s < 0 || s > e.length_nm {
        return Err(off(format!("position {s} outside edge of length {}", e.length_nm)));
    }
    Ok((e.point_at(s as f64), e.outward_normal.unit_f64()))
}

/// Signed EPE per point, measured along the host edge's outward normal.
pub fn epe_evaluate(
    points: &[ControlPoint],
    clip: &LayoutClip,
    aerial: &Grid<f64>,
    litho: &LithoConfig,
    threshold_nm: f64,
) -> Result<EpeReport, MetricsError> {
    let mut distances = Vec::with_capacity(points.len());
    let mut unresolved = 0;
    for pt in points {
        let (pos, normal) = point_location(clip, pt)?;
        let c = edge_crossing_distance(aerial, litho, pos, normal);
        unresolved += usize::from(!c.is_resolved());
        distances.push(c.distance(litho.search_range_nm));
    }
    let mut report = EpeReport::from_distances(distances, threshold_nm);
    report.unresolved = unresolved;
    Ok(report)
}

/// Evaluation sites: per edge, the centres of equal sub-intervals of at most
/// `pitch_nm` covering the edge minus the corner exclusion. Sites inside the
/// guard band are dropped.
pub fn eval_sites(clip: &LayoutClip, sampling: &EvalSampling, guard_nm: i64) -> Vec<ControlPoint> {
    let mut out = Vec::new();
    for (pi, poly) in clip.polygons.iter().enumerate() {
        for e in poly.edges() {
            let usable = e.length_nm - 2 * sampling.corner_exclusion_nm;
            if usable <= 0 {
                continue;
            }
            let n = (usable + sampling.pitch_nm - 1) / sampling.pitch_nm;
            for k in 0..n {
                let s = sampling.corner_exclusion_nm + ((2 * k + 1) * usable) / (2 * n);
                let q = e.point_at_nm(s);
                if q.x < guard_nm || q.y < guard_nm || q.x > clip.width_nm - guard_nm || q.y > clip.height_nm - guard_nm {
                    continue;
                }
                out.push(ControlPoint {
                    id: out.len(),
                    kind: PointKind::Epe,
                    polygon: pi,
                    edge: e.index,
                    edge_length_nm: e.length_nm,
                    arclength_nm: s,
                    tangential_offset_nm: 0,
                    clamped: false,
                });
            }
        }
    }
    out
}

fn same_dims<A, B>(a: &Grid<A>, b: &Grid<B>) -> Result<(), MetricsError> {
    if a.width == b.width && a.height == b.height {
        Ok(())
    } else {
        Err(MetricsError::Dimensions(a.width, a.height, b.width, b.height))
    }
}

/// Number of pixels where the two grids differ.
pub fn pvb(z_max: &BinaryGrid, z_min: &BinaryGrid) -> Result<u64, MetricsError> {
    same_dims(z_max, z_min)?;
    Ok(z_max.data.iter().zip(&z_min.data).filter(|(a, b)| a != b).count() as u64)
}

pub fn l2_mismatch(printed: &BinaryGrid, target: &BinaryGrid) -> Result<u64, MetricsError> {
    pvb(printed, target)
}

/// Drops a border band of `guard_nm` (rounded up to whole pixels).
pub fn crop_guard<T: Clone>(grid: &Grid<T>, guard_nm: i64) -> Grid<T> {
    let g = ((guard_nm + grid.pixel_nm - 1) / grid.pixel_nm) as usize;
    if 2 * g >= grid.width || 2 * g >= grid.height {
        return grid.crop(0, 0, 0, 0);
    }
    grid.crop(g, g, grid.width - 2 * g, grid.height - 2 * g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpcLoss {
    pub l2: u64,
    pub epe_term: f64,
    pub pvb_term: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub total: f64,
}

pub fn opc_loss(
    printed_nominal: &BinaryGrid,
    target: &BinaryGrid,
    epe: &EpeReport,
    pvb: u64,
    weights: &LossWeights,
) -> Result<OpcLoss, MetricsError> {
    let l2 = l2_mismatch(printed_nominal, target)?;
    let epe_term = match weights.epe_term {
        EpeTerm::Count => epe.epe_n as f64,
        EpeTerm::Distance => epe.epe_d,
    };
    Ok(OpcLoss::new(l2, epe_term, pvb, weights))
}

impl OpcLoss {
    pub fn new(l2: u64, epe_term: f64, pvb_term: u64, w: &LossWeights) -> Self {
        let total = w.alpha * l2 as f64 + w.beta * epe_term + w.gamma_w * pvb_term as f64;
        Self { l2, epe_term, pvb_term, alpha: w.alpha, beta: w.beta, gamma_w: w.gamma_w, total }
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub clip_id: String,
    pub variant: String,
    pub pvb: u64,
    pub epe_n: usize,
    pub epe_d: f64,
    pub l2: u64,
    pub loss_total: f64,
    pub runtime_ms: u64,
}

/// Rounds half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Value(f64),
    NotAvailable,
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v:.2}"),
            Ratio::NotAvailable => f.write_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub baseline: f64,
    pub variant: f64,
    pub ratio: Ratio,
}

pub fn ratio(baseline: f64, variant: f64) -> Ratio {
    if baseline == 0.0 {
        Ratio::NotAvailable
    } else {
        Ratio::Value(round2(variant / baseline))
    }
}

/// Pairs metrics by key (same keys, same order) and forms variant / baseline ratios.
pub fn ratio_table(baseline: &[(String, f64)], variant: &[(String, f64)]) -> Result<Vec<ReportRow>, MetricsError> {
    let bk: Vec<&str> = baseline.iter().map(|(k, _)| k.as_str()).collect();
    let vk: Vec<&str> = variant.iter().map(|(k, _)| k.as_str()).collect();
    if bk != vk {
        return Err(MetricsError::Keys(format!("{bk:?} vs {vk:?}")));
    }
    Ok(baseline
        .iter()
        .zip(variant)
        .map(|((k, b), (_, v))| ReportRow { metric: k.clone(), baseline: *b, variant: *v, ratio: ratio(*b, *v) })
        .collect())
}

/// Suite totals in the order used for reports: PVBand, EPE N, EPE D.
pub fn suite_totals(rows: &[MetricsRow]) -> Vec<(String, f64)> {
    vec![
        ("PVBand".to_string(), rows.iter().map(|r| r.pvb as f64).sum()),
        ("EPE N".to_string(), rows.iter().map(|r| r.epe_n as f64).sum()),
        ("EPE D".to_string(), rows.iter().map(|r| r.epe_d).sum()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;

    #[test]
    fn epe_counts() {
        let r = EpeReport::from_distances(vec![3.0], 1.0);
        assert_eq!((r.epe_n, r.epe_d), (1, 3.0));
        let r = EpeReport::from_distances(vec![0.5, -2.0, 4.0], 1.0);
        assert_eq!((r.epe_n, r.epe_d), (2, 6.0));
        let r = EpeReport::from_distances(vec![0.0; 5], 1.0);
        assert_eq!((r.epe_n, r.epe_d), (0, 0.0));
    }

    #[test]
    fn pvb_basic() {
        let a = Grid::filled(10, 10, 4, true);
        let b = Grid::filled(10, 10, 4, false);
        assert_eq!(pvb(&a, &b).unwrap(), 100);
        assert_eq!(pvb(&a, &a).unwrap(), 0);
        assert!(pvb(&a, &Grid::filled(9, 10, 4, false)).is_err());
    }

    #[test]
    fn loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(OpcLoss::new(10, 2.0, 5, &w).total, 215.0);
        let w2 = LossWeights { beta: 200.0, ..w };
        assert_eq!(OpcLoss::new(10, 2.0, 5, &w2).total - OpcLoss::new(10, 2.0, 5, &w).total, 200.0);
        assert_eq!(OpcLoss::new(0, 0.0, 0, &w).total, 0.0);
    }

    #[test]
    fn published_ratios() {
        assert_eq!(ratio(53328.0, 51271.0), Ratio::Value(0.96));
        assert_eq!(ratio(693.10, 525.90), Ratio::Value(0.76));
        assert_eq!(ratio(0.0, 3.0).to_string(), "n/a");
        assert_eq!(Ratio::Value(1.0).to_string(), "1.00");
        assert_eq!(round2(-0.125), -0.13);
    }

    #[test]
    fn ratio_table_keys() {
        let b = vec![("a".to_string(), 2.0), ("b".to_string(), 4.0)];
        let rows = ratio_table(&b, &b).unwrap();
        assert!(rows.iter().all(|r| r.ratio == Ratio::Value(1.0)));
        assert!(ratio_table(&b, &b[..1]).is_err());
    }

    #[test]
    fn sites_cover_edges() {
        let clip = LayoutClip::new("t", 1000, 1000, vec![Polygon::rect(300, 300, 360, 500).unwrap()]).unwrap();
        let s = EvalSampling { pitch_nm: 10, corner_exclusion_nm: 10 };
        let sites = eval_sites(&clip, &s, 100);
        // 60 nm edges: 40 usable -> 4 sites; 200 nm edges: 180 usable -> 18 sites.
        assert_eq!(sites.len(), 2 * 4 + 2 * 18);
        assert!(sites.iter().all(|p| p.arclength_nm >= 10 && p.arclength_nm <= p.edge_length_nm - 10));
        assert_eq!(eval_sites(&clip, &s, 400).len(), 0);
    }

    #[test]
    fn off_edge_points_rejected() {
        let clip = LayoutClip::new("t", 1000, 1000, vec![Polygon::rect(300, 300, 360, 500).unwrap()]).unwrap();
        let mut p = eval_sites(&clip, &EvalSampling::default(), 0)[0];
        p.arclength_nm = 10_000;
        assert!(matches!(point_location(&clip, &p), Err(MetricsError::OffEdge { .. })));
        p.polygon = 3;
        assert!(point_location(&clip, &p).is_err());
    }
}
