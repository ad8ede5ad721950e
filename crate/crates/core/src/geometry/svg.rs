use std::fmt::Write;

use super::{BinaryGrid, ControlPoint, LayoutClip, PointKind};

/// Optional layers drawn over the target polygons.
#[derive(Debug, Clone, Default)]
pub struct SvgOverlay<'a> {
    pub points: &'a [ControlPoint],
    /// Mask polygons after correction, drawn as an outline.
    pub mask: Option<&'a LayoutClip>,
    pub printed: Option<&'a BinaryGrid>,
    pub pvb: Option<&'a BinaryGrid>,
}

/// Renders a clip as SVG in nm units, y up.
pub fn render_svg(clip: &LayoutClip, overlay: &SvgOverlay) -> String {
    let (w, h) = (clip.width_nm, clip.height_nm);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g transform="translate(0 {h}) scale(1 -1)">"#);
    if let Some(g) = overlay.pvb {
        grid_rects(&mut s, g, "pvb", "#f5b041", 0.6);
    }
    if let Some(g) = overlay.printed {
        grid_rects(&mut s, g, "printed", "#5dade2", 0.35);
    }
    let _ = writeln!(s, r#"<g id="target" fill="none" stroke="black" stroke-width="2">"#);
    for p in &clip.polygons {
        polygon(&mut s, p.vertices());
    }
    s.push_str("</g>\n");
    if let Some(mask) = overlay.mask {
        let _ = writeln!(s, r#"<g id="mask" fill="none" stroke="green" stroke-width="1" stroke-dasharray="4 2">"#);
        for p in &mask.polygons {
            polygon(&mut s, p.vertices());
        }
        s.push_str("</g>\n");
    }
    s.push_str("<g id=\"points\">\n");
    for pt in overlay.points {
        let Some(poly) = clip.polygons.get(pt.polygon) else { continue };
        let (x, y) = poly.edge(pt.edge).point_at(pt.position_nm() as f64);
        let color = match pt.kind {
            PointKind::Epe => "red",
            PointKind::Frag => "blue",
        };
        let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="4" fill="{color}"><title>{} {}</title></circle>"#, pt.kind.as_str(), pt.id);
    }
    s.push_str("</g>\n</g>\n</svg>\n");
    s
}

fn polygon(s: &mut String, verts: &[super::Point]) {
    s.push_str("<polygon points=\"");
    for (i, v) in verts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{},{}", v.x, v.y);
    }
    s.push_str("\"/>\n");
}

// One rect per horizontal run of set cells.
fn grid_rects(s: &mut String, g: &BinaryGrid, id: &str, color: &str, opacity: f64) {
    let p = g.pixel_nm;
    let _ = writeln!(s, r#"<g id="{id}" fill="{color}" fill-opacity="{opacity}" stroke="none">"#);
    for y in 0..g.height {
        let mut x = 0;
        while x < g.width {
            if !g.get(x, y) {
                x += 1;
                continue;
            }
            let start = x;
            while x < g.width && g.get(x, y) {
                x += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{p}"/>"#,
                start as i64 * p,
                y as i64 * p,
                (x - start) as i64 * p
            );
        }
    }
    s.push_str("</g>\n");
}
