use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, Polygon};

/// A rectangular window of layout with its target polygons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutClip {
    pub id: String,
    pub width_nm: i64,
    pub height_nm: i64,
    pub polygons: Vec<Polygon>,
}

impl LayoutClip {
    pub fn new(id: impl Into<String>, width_nm: i64, height_nm: i64, polygons: Vec<Polygon>) -> Result<Self, GeometryError> {
        let clip = Self { id: id.into(), width_nm, height_nm, polygons };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width_nm <= 0 || self.height_nm <= 0 {
            return Err(GeometryError::EmptyClip);
        }
        for (i, p) in self.polygons.iter().enumerate() {
            let (lo, hi) = p.bbox();
            if lo.x < 0 || lo.y < 0 || hi.x > self.width_nm || hi.y > self.height_nm {
                return Err(GeometryError::OutOfBounds { index: i, width: self.width_nm, height: self.height_nm });
            }
        }
        for i in 0..self.polygons.len() {
            for j in (i + 1)..self.polygons.len() {
                if overlaps(&self.polygons[i], &self.polygons[j]) {
                    return Err(GeometryError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn total_area(&self) -> i64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(x, y))
    }

    /// Serializes to the line-oriented layout text format.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LayoutClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CLIP {} {} {}", self.id, self.width_nm, self.height_nm)?;
        for p in &self.polygons {
            write!(f, "POLY")?;
            for v in p.vertices() {
                write!(f, " {} {}", v.x, v.y)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Interiors intersect. Boundaries may touch.
fn overlaps(a: &Polygon, b: &Polygon) -> bool {
    let (alo, ahi) = a.bbox();
    let (blo, bhi) = b.bbox();
    if ahi.x <= blo.x || bhi.x <= alo.x || ahi.y <= blo.y || bhi.y <= alo.y {
        return false;
    }
    // Probe just inside every edge midpoint and every vertex of each polygon.
    let probes = |p: &Polygon| -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for e in p.edges() {
            let (nx, ny) = e.outward_normal.unit_f64();
            let (mx, my) = e.point_at(e.length_nm as f64 / 2.0);
            out.push((mx - 0.25 * nx, my - 0.25 * ny));
            let (dx, dy) = e.direction.unit_f64();
            let (sx, sy) = e.point_at(0.0);
            out.push((sx + 0.25 * dx - 0.25 * nx, sy + 0.25 * dy - 0.25 * ny));
        }
        out
    };
    probes(a).iter().any(|&(x, y)| b.contains(x, y)) || probes(b).iter().any(|&(x, y)| a.contains(x, y)) || crosses(a, b)
}

fn crosses(a: &Polygon, b: &Polygon) -> bool {
    for ea in a.edges() {
        for eb in b.edges() {
            if ea.orientation() == eb.orientation() {
                continue;
            }
            let (h, v) = if ea.orientation() == super::Orientation::Horizontal { (ea, eb) } else { (eb, ea) };
            let (hx0, hx1) = (h.p0.x.min(h.p1.x), h.p0.x.max(h.p1.x));
            let (vy0, vy1) = (v.p0.y.min(v.p1.y), v.p0.y.max(v.p1.y));
            if v.p0.x > hx0 && v.p0.x < hx1 && h.p0.y > vy0 && h.p0.y < vy1 {
                return true;
            }
        }
    }
    false
}

/// Parses the layout text format.
///
/// ```text
/// CLIP <id> <width_nm> <height_nm>
/// POLY x1 y1 x2 y2 ...
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_layout(text: &str) -> Result<LayoutClip, GeometryError> {
    let mut header: Option<(String, i64, i64)> = None;
    let mut polygons = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let err = |message: String| GeometryError::Parse { line, message };
        match keyword {
            "CLIP" => {
                if header.is_some() {
                    return Err(err("duplicate CLIP header".into()));
                }
                let rest: Vec<&str> = tokens.collect();
                if rest.len() != 3 {
                    return Err(err("expected `CLIP <id> <width_nm> <height_nm>`".into()));
                }
                let w = rest[1].parse::<i64>().map_err(|e| err(format!("bad width: {e}")))?;
                let h = rest[2].parse::<i64>().map_err(|e| err(format!("bad height: {e}")))?;
                header = Some((rest[0].to_string(), w, h));
            }
            "POLY" => {
                if header.is_none() {
                    return Err(err("POLY before CLIP header".into()));
                }
                let nums = tokens
                    .map(|t| t.parse::<i64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if nums.len() % 2 != 0 {
                    return Err(err("odd number of coordinates".into()));
                }
                let pts = nums.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
                polygons.push(Polygon::new(pts)?);
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }
    let (id, w, h) = header.ok_or(GeometryError::Parse { line: 0, message: "missing CLIP header".into() })?;
    LayoutClip::new(id, w, h, polygons)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rectangle() {
        let clip = parse_layout("CLIP a 200 200\nPOLY 0 0 0 100 60 100 60 0\n").unwrap();
        assert_eq!(clip.polygons.len(), 1);
        assert_eq!(clip.polygons[0].len(), 4);
        assert_eq!(clip.polygons[0].area(), 6000);
        let ccw = parse_layout("CLIP a 200 200\nPOLY 0 0 60 0 60 100 0 100\n").unwrap();
        assert_eq!(clip, ccw);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_layout("CLIP a 200 200\n\nPOLY 0 0 0 x\n").unwrap_err();
        assert!(matches!(e, GeometryError::Parse { line: 3, .. }), "{e:?}");
        let e = parse_layout("CLIP a 200 200\nPOLY 0 0 0 10 10\n").unwrap_err();
        assert!(matches!(e, GeometryError::Parse { line: 2, .. }));
        let e = parse_layout("CLIP a 200 200\nPOLY 0 0 10 10 20 0\n").unwrap_err();
        assert!(matches!(e, GeometryError::NonRectilinear { .. }));
    }

    #[test]
    fn validates_bounds_and_overlap() {
        assert!(matches!(
            parse_layout("CLIP a 50 50\nPOLY 0 0 0 100 60 100 60 0\n"),
            Err(GeometryError::OutOfBounds { .. })
        ));
        let overlapping = "CLIP a 300 300\nPOLY 0 0 0 100 100 100 100 0\nPOLY 50 50 50 150 150 150 150 50\n";
        assert!(matches!(parse_layout(overlapping), Err(GeometryError::Overlap(0, 1))));
        let crossing = "CLIP a 300 300\nPOLY 50 0 50 200 100 200 100 0\nPOLY 0 80 0 120 200 120 200 80\n";
        assert!(matches!(parse_layout(crossing), Err(GeometryError::Overlap(0, 1))));
        let touching = "CLIP a 300 300\nPOLY 0 0 0 100 100 100 100 0\nPOLY 100 0 100 100 200 100 200 0\n";
        assert!(parse_layout(touching).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let text = "CLIP t 400 400\nPOLY 0 0 0 200 100 200 100 100 200 100 200 0\n";
        let clip = parse_layout(text).unwrap();
        assert_eq!(parse_layout(&clip.to_text()).unwrap(), clip);
    }
}
