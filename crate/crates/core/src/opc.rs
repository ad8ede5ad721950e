//! Edge-based feedback OPC: fragments move along their normals until the
//! measured EPE at each fragment's EPE point vanishes.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    apply_fragment_normal_moves, coverage, fragment_clip, rasterize, resolve_cuts, BinaryGrid, ClipFragmentation,
    ControlPoint, FragmentPolicy, GeometryError, LayoutClip, MoveAxis, PointKind, Polygon, MAX_OFFSET_NM,
};
use crate::litho::{edge_crossing_distance, LithoConfig, LithoError, ProcessCorners, Simulator};
use crate::metrics::{crop_guard, epe_evaluate, eval_sites, opc_loss, pvb, EpeReport, MetricsConfig, MetricsError, OpcLoss};

#[derive(Debug, thiserror::Error)]
pub enum OpcError {
    #[error("opc config: {0}")]
    Config(String),
    #[error("control points do not match the clip fragmentation: {0}")]
    Points(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Litho(#[from] LithoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpcConfig {
    pub max_iters: usize,
    pub gain: f64,
    pub per_iter_cap_nm: i64,
    pub stop_epsilon_nm: f64,
    pub fragment_policy: FragmentPolicy,
    pub move_axis: MoveAxis,
}

impl Default for OpcConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            gain: 0.5,
            per_iter_cap_nm: 4,
            stop_epsilon_nm: 0.5,
            fragment_policy: FragmentPolicy::default(),
            move_axis: MoveAxis::Tangential,
        }
    }
}

impl OpcConfig {
    pub fn validate(&self) -> Result<(), OpcError> {
        if self.max_iters < 1 {
            return Err(OpcError::Config("max_iters must be at least 1".into()));
        }
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(OpcError::Config(format!("gain {} outside (0, 1]", self.gain)));
        }
        if self.per_iter_cap_nm < 1 {
            return Err(OpcError::Config("per_iter_cap_nm must be at least 1".into()));
        }
        if !(self.stop_epsilon_nm >= 0.0) {
            return Err(OpcError::Config("stop_epsilon_nm must be non-negative".into()));
        }
        self.fragment_policy.validate()?;
        Ok(())
    }
}

/// Everything about a clip that does not change between OPC runs.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip: LayoutClip,
    pub fragmentation: ClipFragmentation,
    /// Target raster with the guard band removed.
    pub target: BinaryGrid,
    pub sites: Vec<ControlPoint>,
}

/// Scores of one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub epe: EpeReport,
    pub pvb: u64,
    pub loss: OpcLoss,
    pub corners: ProcessCorners,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub max_abs_epe_nm: f64,
    /// Largest fragment displacement applied after this iteration's simulation.
    pub max_move_nm: i64,
}

#[derive(Debug, Clone)]
pub struct OpcResult {
    pub clip_id: String,
    pub mask: Vec<Polygon>,
    pub iterations: usize,
    pub converged: bool,
    /// Some moves were limited to keep polygons valid.
    pub reduced: bool,
    /// Set when a perturbation failed; the result is the last valid state.
    pub aborted: Option<String>,
    pub evaluation: Evaluation,
    pub trace: Vec<TraceEntry>,
}

impl OpcResult {
    pub fn mask_clip(&self, template: &LayoutClip) -> LayoutClip {
        LayoutClip { id: template.id.clone(), width_nm: template.width_nm, height_nm: template.height_nm, polygons: self.mask.clone() }
    }
}

/// Litho, metrics and OPC settings bundled with a reusable kernel.
#[derive(Debug, Clone)]
pub struct OpcEngine {
    pub sim: Simulator,
    pub metrics: MetricsConfig,
    pub opc: OpcConfig,
}

/// Per-edge engine layout: cuts, and for each fragment the EPE position and retarget.
struct EdgePlan {
    cuts: Vec<i64>,
    sites: Vec<(i64, f64)>,
}

impl OpcEngine {
    pub fn new(litho: LithoConfig, metrics: MetricsConfig, opc: OpcConfig) -> Result<Self, OpcError> {
        opc.validate()?;
        metrics.validate()?;
        Ok(Self { sim: Simulator::new(litho)?, metrics, opc })
    }

    pub fn litho(&self) -> &LithoConfig {
        &self.sim.cfg
    }

    pub fn prepare(&self, clip: &LayoutClip) -> Result<PreparedClip, OpcError> {
        let fragmentation = fragment_clip(clip, &self.opc.fragment_policy)?;
        let target = crop_guard(&rasterize(clip, self.sim.cfg.pixel_nm)?, self.metrics.guard_nm);
        let sites = eval_sites(clip, &self.metrics.sampling, self.metrics.guard_nm);
        Ok(PreparedClip { clip: clip.clone(), fragmentation, target, sites })
    }

    /// Simulates a mask and scores it against the target.
    pub fn evaluate(&self, prep: &PreparedClip, mask: &[Polygon]) -> Result<Evaluation, OpcError> {
        let p = self.sim.cfg.pixel_nm;
        let (w, h) = ((prep.clip.width_nm / p) as usize, (prep.clip.height_nm / p) as usize);
        let corners = self.sim.process_corners(&coverage(mask, w, h, p));
        let g = self.metrics.guard_nm;
        let band = pvb(&crop_guard(&corners.max, g), &crop_guard(&corners.min, g))?;
        let epe = epe_evaluate(&prep.sites, &prep.clip, &corners.aerial_nominal, &self.sim.cfg, self.metrics.epe_threshold_nm)?;
        let loss = opc_loss(&crop_guard(&corners.nominal, g), &prep.target, &epe, band, &self.metrics.weights)?;
        Ok(Evaluation { epe, pvb: band, loss, corners })
    }

    fn plan(&self, prep: &PreparedClip, points: &[ControlPoint]) -> Result<Vec<Vec<EdgePlan>>, OpcError> {
        let frag = &prep.fragmentation;
        if points.len() != frag.points.len() {
            return Err(OpcError::Points(format!("{} points, fragmentation has {}", points.len(), frag.points.len())));
        }
        for (a, b) in points.iter().zip(&frag.points) {
            if a.kind != b.kind || a.polygon != b.polygon || a.edge != b.edge || a.arclength_nm != b.arclength_nm {
                return Err(OpcError::Points(format!("point {} differs from its nominal placement", a.id)));
            }
            if a.tangential_offset_nm.abs() > MAX_OFFSET_NM {
                return Err(OpcError::Points(format!("point {} offset {} out of range", a.id, a.tangential_offset_nm)));
            }
        }
        let mut plans: Vec<Vec<EdgePlan>> = prep.clip.polygons.iter().map(|q| Vec::with_capacity(q.len())).collect();
        let mut i = 0;
        while i < points.len() {
            let (pi, ei) = (points[i].polygon, points[i].edge);
            let len = points[i].edge_length_nm;
            let mut frag_pos = Vec::new();
            let mut sites = Vec::new();
            while i < points.len() && points[i].polygon == pi && points[i].edge == ei {
                let pt = &points[i];
                match (pt.kind, self.opc.move_axis) {
                    (PointKind::Frag, MoveAxis::Tangential) => frag_pos.push(pt.position_nm()),
                    (PointKind::Frag, MoveAxis::Normal) => frag_pos.push(pt.arclength_nm),
                    (PointKind::Epe, MoveAxis::Tangential) => sites.push((pt.position_nm().clamp(0, len), 0.0)),
                    (PointKind::Epe, MoveAxis::Normal) => sites.push((pt.arclength_nm, pt.tangential_offset_nm as f64)),
                }
                i += 1;
            }
            plans[pi].push(EdgePlan { cuts: resolve_cuts(len, &frag_pos), sites });
        }
        Ok(plans)
    }

    /// Runs the correction loop from the target with the given control points.
    pub fn run(&self, prep: &PreparedClip, points: &[ControlPoint]) -> Result<OpcResult, OpcError> {
        let plans = self.plan(prep, points)?;
        let clip = &prep.clip;
        let cfg = &self.opc;
        let mut moves: Vec<Vec<Vec<i64>>> = plans.iter().map(|p| p.iter().map(|e| vec![0; e.sites.len()]).collect()).collect();
        let cuts: Vec<Vec<Vec<i64>>> = plans.iter().map(|p| p.iter().map(|e| e.cuts.clone()).collect()).collect();
        let mut mask: Vec<Polygon> = clip.polygons.clone();
        let mut reduced = false;
        let mut aborted = None;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut last_eval;
        let mut it = 0;
        loop {
            let eval = self.evaluate(prep, &mask)?;
            let aerial = &eval.corners.aerial_nominal;
            // EPE at the engine's own measurement points.
            let mut errors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(plans.len());
            let mut max_abs = 0.0f64;
            for (pi, poly) in clip.polygons.iter().enumerate() {
                let mut per_poly = Vec::with_capacity(poly.len());
                for (ei, plan) in plans[pi].iter().enumerate() {
                    let e = poly.edge(ei);
                    let normal = e.outward_normal.unit_f64();
                    let per_edge: Vec<f64> = plan
                        .sites
                        .iter()
                        .map(|&(s, retarget)| {
                            let d = edge_crossing_distance(aerial, &self.sim.cfg, e.point_at(s as f64), normal)
                                .distance(self.sim.cfg.search_range_nm);
                            d - retarget
                        })
                        .collect();
                    max_abs = per_edge.iter().fold(max_abs, |m, d| m.max(d.abs()));
                    per_poly.push(per_edge);
                }
                errors.push(per_poly);
            }
            let mut entry = TraceEntry { iteration: it, loss: eval.loss.total, max_abs_epe_nm: max_abs, max_move_nm: 0 };
            last_eval = eval;
            it += 1;
            if max_abs <= cfg.stop_epsilon_nm {
                converged = true;
                trace.push(entry);
                break;
            }
            if it >= cfg.max_iters {
                trace.push(entry);
                break;
            }
            let mut next_moves = moves.clone();
            for (pi, per_poly) in errors.iter().enumerate() {
                for (ei, per_edge) in per_poly.iter().enumerate() {
                    for (k, &d) in per_edge.iter().enumerate() {
                        let step = ((-cfg.gain * d).round() as i64).clamp(-cfg.per_iter_cap_nm, cfg.per_iter_cap_nm);
                        next_moves[pi][ei][k] += step;
                        entry.max_move_nm = entry.max_move_nm.max(step.abs());
                    }
                }
            }
            trace.push(entry);
            let mut next_mask = Vec::with_capacity(mask.len());
            let mut failure = None;
            for (pi, poly) in clip.polygons.iter().enumerate() {
                match apply_fragment_normal_moves(poly, &cuts[pi], &next_moves[pi]) {
                    Ok(out) => {
                        reduced |= out.reduced;
                        next_mask.push(out.polygon);
                    }
                    Err(e) => {
                        failure = Some(format!("polygon {pi}: {e}"));
                        break;
                    }
                }
            }
            if let Some(f) = failure {
                aborted = Some(f);
                break;
            }
            mask = next_mask;
            moves = next_moves;
        }
        Ok(OpcResult {
            clip_id: clip.id.clone(),
            mask,
            iterations: trace.len(),
            converged,
            reduced,
            aborted,
            evaluation: last_eval,
            trace,
        })
    }

    /// Runs with the nominal control points (no recipe).
    pub fn run_baseline(&self, prep: &PreparedClip) -> Result<OpcResult, OpcError> {
        self.run(prep, &prep.fragmentation.points)
    }
}

/// Sets each point's offset to `class * step_nm`, clamping into its edge.
pub fn apply_recipe_points(points: &[ControlPoint], classes: &[i32], step_nm: i64) -> Result<Vec<ControlPoint>, OpcError> {
    if points.len() != classes.len() {
        return Err(OpcError::Points(format!("{} points but {} classes", points.len(), classes.len())));
    }
    points
        .iter()
        .zip(classes)
        .map(|(p, &c)| p.with_offset(i64::from(c) * step_nm).map_err(OpcError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> OpcEngine {
        OpcEngine::new(LithoConfig::default(), MetricsConfig::default(), OpcConfig::default()).unwrap()
    }

    fn line_clip() -> LayoutClip {
        LayoutClip::new("line", 1024, 1024, vec![Polygon::rect(482, 300, 542, 724).unwrap()]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(OpcConfig { max_iters: 0, ..OpcConfig::default() }.validate().is_err());
        assert!(OpcConfig { gain: 0.0, ..OpcConfig::default() }.validate().is_err());
        assert!(OpcConfig::default().validate().is_ok());
    }

    #[test]
    fn isolated_line_improves() {
        let eng = engine();
        let prep = eng.prepare(&line_clip()).unwrap();
        let res = eng.run_baseline(&prep).unwrap();
        let first = eng.evaluate(&prep, &prep.clip.polygons).unwrap();
        assert!(res.evaluation.epe.epe_d < first.epe.epe_d, "{} vs {}", res.evaluation.epe.epe_d, first.epe.epe_d);
        assert_eq!(res.trace.len(), res.iterations);
        assert!(res.trace.iter().all(|t| t.max_move_nm <= eng.opc.per_iter_cap_nm));
        assert!(res.aborted.is_none());
    }

    #[test]
    fn deterministic_runs() {
        let eng = engine();
        let prep = eng.prepare(&line_clip()).unwrap();
        let a = eng.run_baseline(&prep).unwrap();
        let b = eng.run_baseline(&prep).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.evaluation, b.evaluation);
    }

    #[test]
    fn zero_recipe_is_baseline() {
        let eng = engine();
        let prep = eng.prepare(&line_clip()).unwrap();
        let zero = vec![0; prep.fragmentation.points.len()];
        let pts = apply_recipe_points(&prep.fragmentation.points, &zero, 10).unwrap();
        assert_eq!(pts, prep.fragmentation.points);
        assert_eq!(eng.run(&prep, &pts).unwrap().mask, eng.run_baseline(&prep).unwrap().mask);
    }

    #[test]
    fn fixpoint_when_already_within_epsilon() {
        let eng = OpcEngine::new(
            LithoConfig::default(),
            MetricsConfig::default(),
            OpcConfig { stop_epsilon_nm: 1e9, ..OpcConfig::default() },
        )
        .unwrap();
        let prep = eng.prepare(&line_clip()).unwrap();
        let res = eng.run_baseline(&prep).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        assert_eq!(res.mask, prep.clip.polygons);
        assert_eq!(res.trace[0].max_move_nm, 0);
    }

    #[test]
    fn class_offsets() {
        let eng = engine();
        let prep = eng.prepare(&line_clip()).unwrap();
        let mut classes = vec![0; prep.fragmentation.points.len()];
        classes[1] = 4;
        let pts = apply_recipe_points(&prep.fragmentation.points, &classes, 10).unwrap();
        assert_eq!(pts[1].tangential_offset_nm, 40);
        classes[1] = 5;
        assert!(apply_recipe_points(&prep.fragmentation.points, &classes, 10).is_err());
    }
}
