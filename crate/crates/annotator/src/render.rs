//! Point-centred PNG snapshots of a clip.

use image::{ImageEncoder, Rgb, RgbImage};
use opcrecipe::geometry::{ControlPoint, LayoutClip};
use opcrecipe::metrics::point_location;
use serde::{Deserialize, Serialize};

use crate::AnnotatorError;

pub const POLYGON: [u8; 3] = [40, 70, 160];
pub const EMPTY: [u8; 3] = [255, 255, 255];
pub const OUTSIDE: [u8; 3] = [190, 190, 190];
pub const MARKER: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub canvas_px: u32,
    pub nm_per_px: f64,
    pub marker_radius_px: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        // 1024 nm across: the far distance fits on both sides of the point.
        Self { canvas_px: 256, nm_per_px: 4.0, marker_radius_px: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPointImage {
    #[serde(skip)]
    pub png: Vec<u8>,
    pub canvas_px: u32,
    pub nm_per_px: f64,
    /// Layout coordinates of the canvas's lower-left corner.
    pub origin_nm: (f64, f64),
    pub clip_width_nm: i64,
    pub clip_height_nm: i64,
    /// Marker centre as (column, row), row 0 at the top.
    pub marker_px: (u32, u32),
}

/// Renders the window around `pt` at its current position, offset included.
pub fn render_point_image(clip: &LayoutClip, pt: &ControlPoint, cfg: &RenderConfig) -> Result<RenderedPointImage, AnnotatorError> {
    let (pos, _) = point_location(clip, pt)?;
    render_at(clip, pos, cfg)
}

/// Renders the window centred on an arbitrary location.
pub fn render_at(clip: &LayoutClip, at: (f64, f64), cfg: &RenderConfig) -> Result<RenderedPointImage, AnnotatorError> {
    let n = cfg.canvas_px;
    if n == 0 || !(cfg.nm_per_px > 0.0) {
        return Err(AnnotatorError::Config(vec!["render canvas must be non-empty".into()]));
    }
    let half = n as f64 * cfg.nm_per_px / 2.0;
    let origin = (at.0 - half, at.1 - half);
    let mut img = RgbImage::new(n, n);
    for row in 0..n {
        let y = origin.1 + (n - 1 - row) as f64 * cfg.nm_per_px + cfg.nm_per_px / 2.0;
        for col in 0..n {
            let x = origin.0 + col as f64 * cfg.nm_per_px + cfg.nm_per_px / 2.0;
            let c = if x < 0.0 || y < 0.0 || x > clip.width_nm as f64 || y > clip.height_nm as f64 {
                OUTSIDE
            } else if clip.contains(x, y) {
                POLYGON
            } else {
                EMPTY
            };
            img.put_pixel(col, row, Rgb(c));
        }
    }
    let mc = ((at.0 - origin.0) / cfg.nm_per_px).floor().clamp(0.0, (n - 1) as f64) as u32;
    let mr = (n - 1).saturating_sub(((at.1 - origin.1) / cfg.nm_per_px).floor().clamp(0.0, (n - 1) as f64) as u32);
    let r = cfg.marker_radius_px as i64;
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc > r * r {
                continue;
            }
            let (c, rr) = (mc as i64 + dc, mr as i64 + dr);
            if (0..n as i64).contains(&c) && (0..n as i64).contains(&rr) {
                img.put_pixel(c as u32, rr as u32, Rgb(MARKER));
            }
        }
    }
    let mut png = Vec::new();
    image::codecs::png::PngEncoder::new(&mut png)
        .write_image(img.as_raw(), n, n, image::ExtendedColorType::Rgb8)
        .map_err(|e| AnnotatorError::Image(e.to_string()))?;
    Ok(RenderedPointImage {
        png,
        canvas_px: n,
        nm_per_px: cfg.nm_per_px,
        origin_nm: origin,
        clip_width_nm: clip.width_nm,
        clip_height_nm: clip.height_nm,
        marker_px: (mc, mr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use opcrecipe::geometry::{fragment_clip, FragmentPolicy, Polygon};

    fn decode(png: &[u8]) -> RgbImage {
        image::load_from_memory_with_format(png, image::ImageFormat::Png).unwrap().to_rgb8()
    }

    fn bar() -> LayoutClip {
        LayoutClip::new("bar", 1000, 1000, vec![Polygon::rect(300, 400, 700, 600).unwrap()]).unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        let clip = bar();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let pt = frag.points[3];
        let a = render_point_image(&clip, &pt, &RenderConfig::default()).unwrap();
        let b = render_point_image(&clip, &pt, &RenderConfig::default()).unwrap();
        assert_eq!(a.png, b.png);
    }

    #[test]
    fn marker_sits_on_the_point() {
        let clip = bar();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let cfg = RenderConfig::default();
        for pt in frag.points.iter().take(6) {
            let moved = pt.with_offset(if pt.position_nm() > 100 { -20 } else { 20 }).unwrap();
            let out = render_point_image(&clip, &moved, &cfg).unwrap();
            let img = decode(&out.png);
            let (pos, _) = point_location(&clip, &moved).unwrap();
            let col = ((pos.0 - out.origin_nm.0) / cfg.nm_per_px).floor() as u32;
            let row = cfg.canvas_px - 1 - ((pos.1 - out.origin_nm.1) / cfg.nm_per_px).floor() as u32;
            assert_eq!((col, row), out.marker_px);
            assert_eq!(img.get_pixel(col, row).0, MARKER);
        }
    }

    #[test]
    fn polygons_fill_and_outside_is_grey() {
        let clip = bar();
        let out = render_at(&clip, (500.0, 500.0), &RenderConfig::default()).unwrap();
        let img = decode(&out.png);
        assert_eq!(img.get_pixel(140, 128).0, POLYGON);
        assert_eq!(img.get_pixel(128, 5).0, EMPTY);
        // The 1024 nm window overhangs the 1000 nm clip by 12 nm on each side.
        assert_eq!(img.get_pixel(0, 128).0, OUTSIDE);
    }

    #[test]
    fn empty_clip_has_only_the_marker() {
        let clip = LayoutClip::new("empty", 1000, 1000, vec![]).unwrap();
        let out = render_at(&clip, (500.0, 500.0), &RenderConfig::default()).unwrap();
        let img = decode(&out.png);
        assert!(img.pixels().all(|p| p.0 != POLYGON));
        assert_eq!(img.get_pixel(out.marker_px.0, out.marker_px.1).0, MARKER);
        assert_eq!((img.width(), img.height()), (256, 256));
    }
}
