//! Seeded generator for small metal-layer clips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, LayoutClip, Point, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub width_nm: i64,
    pub height_nm: i64,
    pub min_width_nm: i64,
    pub max_width_nm: i64,
    pub min_space_nm: i64,
    pub min_length_nm: i64,
    pub max_length_nm: i64,
    /// Polygons stay this far from the clip border.
    pub guard_nm: i64,
    pub max_polygons: usize,
    pub allow_jogs: bool,
    pub max_jog_nm: i64,
    /// Coordinates are multiples of this.
    pub snap_nm: i64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width_nm: 1024,
            height_nm: 1024,
            min_width_nm: 60,
            max_width_nm: 100,
            min_space_nm: 60,
            min_length_nm: 200,
            max_length_nm: 480,
            guard_nm: 140,
            max_polygons: 3,
            allow_jogs: true,
            max_jog_nm: 40,
            snap_nm: 2,
        }
    }
}

impl SynthParams {
    fn check(&self) -> Result<(), GeometryError> {
        let fail = |m: &str| Err(GeometryError::Generation(m.to_string()));
        if self.min_width_nm <= 0 || self.min_space_nm <= 0 || self.snap_nm <= 0 {
            return fail("widths, spacing and snap must be positive");
        }
        if self.min_width_nm > self.max_width_nm || self.min_length_nm > self.max_length_nm {
            return fail("min bounds exceed max bounds");
        }
        if self.max_jog_nm < 2 * self.snap_nm && self.allow_jogs {
            return fail("max_jog_nm too small for the snap grid");
        }
        let usable = (self.width_nm.min(self.height_nm) - 2 * self.guard_nm).max(0);
        if usable < self.min_length_nm.max(self.max_width_nm + self.max_jog_nm) {
            return fail("usable area cannot hold a single wire");
        }
        if self.max_polygons == 0 {
            return fail("max_polygons must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Wire,
    JoggedWire,
    Ell,
    Tee,
}

/// Generates a validated clip. The same seed and parameters always give the same clip.
pub fn synth_clip(seed: u64, params: &SynthParams) -> Result<LayoutClip, GeometryError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut polygons: Vec<Polygon> = Vec::new();
    let mut attempts = 0;
    while polygons.len() < params.max_polygons && attempts < 400 {
        attempts += 1;
        let shape = if polygons.is_empty() && params.allow_jogs {
            Shape::JoggedWire
        } else {
            match rng.random_range(0..if params.allow_jogs { 4 } else { 3 }) {
                0 => Shape::Wire,
                1 => Shape::Ell,
                2 => Shape::Tee,
                _ => Shape::JoggedWire,
            }
        };
        let Some(poly) = place(shape, &mut rng, params) else { continue };
        if !params.allow_jogs && !poly.detect_jogs(params.max_jog_nm).is_empty() {
            continue;
        }
        if polygons.iter().all(|q| q.clearance(&poly) >= params.min_space_nm as f64) {
            polygons.push(poly);
        }
    }
    if polygons.is_empty() {
        return Err(GeometryError::Generation("no polygon fits the constraints".into()));
    }
    LayoutClip::new(format!("synth-{seed}"), params.width_nm, params.height_nm, polygons)
}

fn snap(v: i64, s: i64) -> i64 {
    (v / s) * s
}

fn place(shape: Shape, rng: &mut ChaCha8Rng, p: &SynthParams) -> Option<Polygon> {
    let s = p.snap_nm;
    let w = snap(rng.random_range(p.min_width_nm..=p.max_width_nm), s).max(s);
    let len = snap(rng.random_range(p.min_length_nm..=p.max_length_nm), s);
    // Shapes are drawn along +x and then given a random symmetry.
    let local: Vec<(i64, i64)> = match shape {
        Shape::Wire => vec![(0, 0), (0, w), (len, w), (len, 0)],
        Shape::JoggedWire => {
            let jog = snap(rng.random_range(2 * s..=p.max_jog_nm), s);
            let at = snap(rng.random_range(len / 3..=2 * len / 3), s);
            vec![(0, 0), (0, w), (at, w), (at, w + jog), (len, w + jog), (len, 0)]
        }
        Shape::Ell => {
            let arm = snap(rng.random_range(p.min_length_nm / 2..=p.max_length_nm / 2), s).max(w + p.min_width_nm);
            let w2 = snap(rng.random_range(p.min_width_nm..=p.max_width_nm), s);
            vec![(0, 0), (0, arm), (w2, arm), (w2, w), (len, w), (len, 0)]
        }
        Shape::Tee => {
            let stem = snap(rng.random_range(p.min_length_nm / 2..=p.max_length_nm / 2), s).max(w + p.min_width_nm);
            let w2 = snap(rng.random_range(p.min_width_nm..=p.max_width_nm), s);
            let margin = p.max_jog_nm + s;
            if len - w2 - 2 * margin < 0 {
                return None;
            }
            let x0 = snap(rng.random_range(margin..=len - w2 - margin), s);
            vec![(0, 0), (0, w), (x0, w), (x0, stem), (x0 + w2, stem), (x0 + w2, w), (len, w), (len, 0)]
        }
    };
    let sym = rng.random_range(0..8u8);
    let pts: Vec<(i64, i64)> = local
        .into_iter()
        .map(|(x, y)| {
            let (x, y) = if sym & 1 == 1 { (y, x) } else { (x, y) };
            let x = if sym & 2 == 2 { -x } else { x };
            let y = if sym & 4 == 4 { -y } else { y };
            (x, y)
        })
        .collect();
    let minx = pts.iter().map(|p| p.0).min()?;
    let miny = pts.iter().map(|p| p.1).min()?;
    let spanx = pts.iter().map(|p| p.0).max()? - minx;
    let spany = pts.iter().map(|p| p.1).max()? - miny;
    let room_x = p.width_nm - 2 * p.guard_nm - spanx;
    let room_y = p.height_nm - 2 * p.guard_nm - spany;
    if room_x < 0 || room_y < 0 {
        return None;
    }
    let ox = snap(p.guard_nm + rng.random_range(0..=room_x), s);
    let oy = snap(p.guard_nm + rng.random_range(0..=room_y), s);
    let ox = ox.max(p.guard_nm + (s - p.guard_nm % s) % s);
    let oy = oy.max(p.guard_nm + (s - p.guard_nm % s) % s);
    Polygon::new(pts.into_iter().map(|(x, y)| Point::new(x - minx + ox, y - miny + oy)).collect()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_corners, CornerKind};

    #[test]
    fn deterministic() {
        let p = SynthParams::default();
        assert_eq!(synth_clip(7, &p).unwrap().to_text(), synth_clip(7, &p).unwrap().to_text());
        assert_ne!(synth_clip(7, &p).unwrap().to_text(), synth_clip(8, &p).unwrap().to_text());
    }

    #[test]
    fn spacing_holds_by_brute_force() {
        let p = SynthParams { min_space_nm: 50, max_polygons: 4, ..SynthParams::default() };
        for seed in 0..20 {
            let clip = synth_clip(seed, &p).unwrap();
            for i in 0..clip.polygons.len() {
                for j in (i + 1)..clip.polygons.len() {
                    // Independent check: sample every boundary point of one polygon
                    // at 1 nm and measure to every edge of the other.
                    let mut best = f64::INFINITY;
                    for e in clip.polygons[i].edges() {
                        for s in 0..=e.length_nm {
                            let q = e.point_at_nm(s);
                            for f in clip.polygons[j].edges() {
                                best = best.min(f.distance_to(q.x as f64, q.y as f64));
                            }
                        }
                    }
                    assert!(best >= 50.0, "seed {seed}: clearance {best}");
                }
            }
        }
    }

    #[test]
    fn guard_band_and_features() {
        let p = SynthParams::default();
        for seed in 0..30 {
            let clip = synth_clip(seed, &p).unwrap();
            let jogs: usize = clip.polygons.iter().map(|q| q.detect_jogs(p.max_jog_nm).len()).sum();
            assert!(jogs >= 1, "seed {seed}");
            // A line end: an edge whose both corners are convex.
            let has_line_end = clip.polygons.iter().any(|q| {
                let c = classify_corners(q);
                (0..q.len()).any(|i| c[i].kind == CornerKind::Convex && c[(i + 1) % q.len()].kind == CornerKind::Convex)
            });
            assert!(has_line_end);
            for q in &clip.polygons {
                let (lo, hi) = q.bbox();
                assert!(lo.x >= p.guard_nm && lo.y >= p.guard_nm);
                assert!(hi.x <= p.width_nm - p.guard_nm && hi.y <= p.height_nm - p.guard_nm);
                let c = classify_corners(q);
                let convex = c.iter().filter(|c| c.kind == CornerKind::Convex).count() as i64;
                assert_eq!(convex - (c.len() as i64 - convex), 4);
            }
        }
    }

    #[test]
    fn jog_free_when_forbidden() {
        let p = SynthParams { allow_jogs: false, ..SynthParams::default() };
        for seed in 0..20 {
            let clip = synth_clip(seed, &p).unwrap();
            assert!(clip.polygons.iter().all(|q| q.detect_jogs(p.max_jog_nm).is_empty()));
        }
    }

    #[test]
    fn infeasible_params() {
        let p = SynthParams { min_width_nm: 0, ..SynthParams::default() };
        assert!(matches!(synth_clip(1, &p), Err(GeometryError::Generation(_))));
        let p = SynthParams { guard_nm: 500, ..SynthParams::default() };
        assert!(matches!(synth_clip(1, &p), Err(GeometryError::Generation(_))));
    }
}
