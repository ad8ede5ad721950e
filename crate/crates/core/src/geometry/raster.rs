use serde::{Deserialize, Serialize};

use super::{GeometryError, LayoutClip, Orientation, Polygon};

/// Row-major 2-D grid. Row 0 is the bottom row (smallest y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub pixel_nm: i64,
    pub data: Vec<T>,
}

pub type BinaryGrid = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, pixel_nm: i64, value: T) -> Self {
        Self { width, height, pixel_nm, data: vec![value; width * height] }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, pixel_nm: self.pixel_nm, data: self.data.iter().map(f).collect() }
    }

    /// Sub-grid `[x0, x0+w) x [y0, y0+h)` in pixels.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self { width: w, height: h, pixel_nm: self.pixel_nm, data }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Grid<bool> {
    pub fn popcount(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

fn grid_dims(clip: &LayoutClip, pixel_nm: i64) -> Result<(usize, usize), GeometryError> {
    if pixel_nm <= 0 || clip.width_nm % pixel_nm != 0 || clip.height_nm % pixel_nm != 0 {
        return Err(GeometryError::Config(format!(
            "clip {}x{} nm is not divisible by pixel size {pixel_nm} nm",
            clip.width_nm, clip.height_nm
        )));
    }
    Ok(((clip.width_nm / pixel_nm) as usize, (clip.height_nm / pixel_nm) as usize))
}

/// Cell-center rasterization: a cell is set iff its center lies inside a polygon.
pub fn rasterize(clip: &LayoutClip, pixel_nm: i64) -> Result<BinaryGrid, GeometryError> {
    let (w, h) = grid_dims(clip, pixel_nm)?;
    let mut grid = Grid::filled(w, h, pixel_nm, false);
    for poly in &clip.polygons {
        fill_centers(poly, &mut grid);
    }
    Ok(grid)
}

fn fill_centers(poly: &Polygon, grid: &mut BinaryGrid) {
    let p = grid.pixel_nm;
    let verticals: Vec<_> = poly.edges().filter(|e| e.orientation() == Orientation::Vertical).collect();
    let (lo, hi) = poly.bbox();
    let row_lo = (lo.y.max(0) / p) as usize;
    let row_hi = (((hi.y + p - 1) / p).max(0) as usize).min(grid.height);
    let mut xs = Vec::new();
    for row in row_lo..row_hi {
        // Doubled coordinates keep the half-pixel center exact.
        let yc2 = (2 * row as i64 + 1) * p;
        xs.clear();
        xs.extend(verticals.iter().filter_map(|e| {
            let (a, b) = (2 * e.p0.y.min(e.p1.y), 2 * e.p0.y.max(e.p1.y));
            (yc2 >= a && yc2 < b).then_some(2 * e.p0.x)
        }));
        xs.sort_unstable();
        for pair in xs.chunks_exact(2) {
            // Columns whose doubled center c satisfies pair[0] <= c < pair[1].
            let c0 = ((pair[0] - p).max(0) + 2 * p - 1) / (2 * p);
            let c1 = ((pair[1] - p).max(0) + 2 * p - 1) / (2 * p);
            for col in (c0 as usize)..(c1 as usize).min(grid.width) {
                grid.set(col, row, true);
            }
        }
    }
}

/// Exact area coverage of each pixel by a set of polygons, in `[0, 1]`.
pub fn coverage<'a>(
    polygons: impl IntoIterator<Item = &'a Polygon>,
    width: usize,
    height: usize,
    pixel_nm: i64,
) -> Grid<f64> {
    let p = pixel_nm;
    let mut acc = vec![0.0f64; (width + 1) * height];
    let full = (p * p) as f64;
    for poly in polygons {
        for e in poly.edges().filter(|e| e.orientation() == Orientation::Vertical) {
            // Clockwise: upward edges bound the interior on their right.
            let sign = if e.p1.y > e.p0.y { 1.0 } else { -1.0 };
            let (y0, y1) = (e.p0.y.min(e.p1.y), e.p0.y.max(e.p1.y));
            let x = e.p0.x;
            let r0 = y0.max(0) / p;
            let r1 = ((y1 + p - 1) / p).min(height as i64);
            for r in r0..r1 {
                let overlap = (y1.min((r + 1) * p) - y0.max(r * p)) as f64;
                if overlap <= 0.0 {
                    continue;
                }
                let row = &mut acc[r as usize * (width + 1)..(r as usize + 1) * (width + 1)];
                if x <= 0 {
                    row[0] += sign * overlap * p as f64;
                } else if x < width as i64 * p {
                    let c = (x / p) as usize;
                    let partial = ((c as i64 + 1) * p - x) as f64;
                    row[c] += sign * overlap * partial;
                    row[c + 1] += sign * overlap * (p as f64 - partial);
                }
            }
        }
    }
    // Each row of `acc` is a difference array: the running sum is the covered
    // area of the pixel (partial in the edge's own column, full beyond it).
    let mut grid = Grid::filled(width, height, pixel_nm, 0.0);
    for r in 0..height {
        let mut run = 0.0;
        for c in 0..width {
            run += acc[r * (width + 1) + c];
            grid.data[r * width + c] = (run / full).clamp(0.0, 1.0);
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn clip_with(polys: Vec<Polygon>, w: i64, h: i64) -> LayoutClip {
        LayoutClip::new("t", w, h, polys).unwrap()
    }

    #[test]
    fn empty_and_full() {
        let empty = clip_with(vec![], 40, 40);
        assert_eq!(rasterize(&empty, 4).unwrap().popcount(), 0);
        let full = clip_with(vec![Polygon::rect(0, 0, 40, 40).unwrap()], 40, 40);
        assert_eq!(rasterize(&full, 4).unwrap().popcount(), 100);
    }

    #[test]
    fn rectangle_popcount() {
        let clip = clip_with(vec![Polygon::rect(1000, 1000, 1060, 1100).unwrap()], 2048, 2048);
        let g = rasterize(&clip, 4).unwrap();
        assert_eq!((g.width, g.height), (512, 512));
        assert_eq!(g.popcount(), 15 * 25);
    }

    #[test]
    fn non_divisible_dims_rejected() {
        let clip = clip_with(vec![], 42, 40);
        assert!(matches!(rasterize(&clip, 4), Err(GeometryError::Config(_))));
    }

    #[test]
    fn cell_center_matches_point_test() {
        let l = Polygon::new(
            [(3, 5), (3, 61), (37, 61), (37, 30), (70, 30), (70, 5)].iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
        .unwrap();
        let clip = clip_with(vec![l.clone()], 80, 80);
        let g = rasterize(&clip, 4).unwrap();
        for y in 0..g.height {
            for x in 0..g.width {
                let inside = l.contains(x as f64 * 4.0 + 2.0, y as f64 * 4.0 + 2.0);
                assert_eq!(g.get(x, y), inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn coverage_is_exact_area() {
        let polys = vec![Polygon::rect(3, 5, 37, 61).unwrap(), Polygon::rect(50, 7, 79, 13).unwrap()];
        let cov = coverage(&polys, 20, 20, 4);
        let total: f64 = cov.data.iter().sum::<f64>() * 16.0;
        assert!((total - (34.0 * 56.0 + 29.0 * 6.0)).abs() < 1e-9);
        assert!((cov.get(0, 1) - 3.0 / 16.0).abs() < 1e-12);
        assert!((cov.get(5, 5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_clips_to_grid() {
        let polys = vec![Polygon::rect(-8, -8, 100, 8).unwrap()];
        let cov = coverage(&polys, 10, 10, 4);
        assert_eq!(cov.data.iter().filter(|&&v| v == 1.0).count(), 20);
        assert_eq!(cov.data.iter().filter(|&&v| v > 0.0).count(), 20);
    }
}
