//! Gaussian-kernel aerial image with a logistic resist and dose corners.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::{BinaryGrid, Grid};

#[derive(Debug, thiserror::Error)]
pub enum LithoError {
    #[error("litho config: {0}")]
    Config(String),
    #[error("grid dimensions differ: {0}x{1} vs {2}x{3}")]
    Dimensions(usize, usize, usize, usize),
    #[error("dose must be positive, got {0}")]
    Dose(f64),
    #[error("float grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LithoConfig {
    pub kernel_sigma_nm: f64,
    pub resist_threshold: f64,
    pub resist_steepness: f64,
    pub dose_nominal: f64,
    pub dose_delta: f64,
    pub pixel_nm: i64,
    /// Search range for contour crossings.
    pub search_range_nm: f64,
}

impl Default for LithoConfig {
    fn default() -> Self {
        Self {
            kernel_sigma_nm: 24.0,
            resist_threshold: 0.225,
            resist_steepness: 50.0,
            dose_nominal: 1.0,
            dose_delta: 0.02,
            pixel_nm: 4,
            search_range_nm: 200.0,
        }
    }
}

impl LithoConfig {
    pub fn validate(&self) -> Result<(), LithoError> {
        let bad = |m: String| Err(LithoError::Config(m));
        if self.pixel_nm < 1 {
            return bad(format!("pixel_nm must be positive, got {}", self.pixel_nm));
        }
        if !(self.kernel_sigma_nm >= self.pixel_nm as f64) {
            return bad(format!("sigma {} nm is below the pixel size {} nm", self.kernel_sigma_nm, self.pixel_nm));
        }
        if !(self.resist_threshold > 0.0 && self.resist_threshold < 1.0) {
            return bad(format!("resist threshold {} outside (0, 1)", self.resist_threshold));
        }
        if !(self.resist_steepness > 0.0) {
            return bad("resist steepness must be positive".into());
        }
        if !(self.dose_delta >= 0.0 && self.dose_delta < 0.1) {
            return bad(format!("dose delta {} outside [0, 0.1)", self.dose_delta));
        }
        if !(self.dose_nominal > self.dose_delta) {
            return bad("nominal dose must exceed the dose delta".into());
        }
        if !(self.search_range_nm > 0.0) {
            return bad("search range must be positive".into());
        }
        Ok(())
    }
}

/// Truncated, normalized Gaussian. Stored as its 1-D factor; the 2-D kernel
/// is the outer product, which is isotropic up to the square truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dx: usize, dy: usize) -> f64 {
        self.taps[dx] * self.taps[dy]
    }

    pub fn to_grid(&self) -> Vec<Vec<f64>> {
        (0..self.side()).map(|y| (0..self.side()).map(|x| self.at(x, y)).collect()).collect()
    }
}

pub fn make_kernel(sigma_nm: f64, pixel_nm: i64) -> Result<Kernel, LithoError> {
    if pixel_nm < 1 || !(sigma_nm >= pixel_nm as f64) {
        return Err(LithoError::Config(format!("sigma {sigma_nm} nm must be at least the pixel size {pixel_nm} nm")));
    }
    let s = sigma_nm / pixel_nm as f64;
    let radius = (3.0 * s).ceil() as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * s * s)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(Kernel { radius, taps })
}

/// `mask ⊛ kernel` with zero padding, at unit dose.
///
/// Both separable passes skip the all-zero margins of each row, which is
/// most of a sparse layout clip.
pub fn convolve(mask: &Grid<f64>, kernel: &Kernel) -> Grid<f64> {
    let (w, h, r) = (mask.width, mask.height, kernel.radius);
    let mut tmp = vec![0.0; w * h];
    // Non-empty column span [lo, hi) of each row of `tmp`.
    let mut spans: Vec<Option<(usize, usize)>> = vec![None; h];
    for y in 0..h {
        let row = &mask.data[y * w..(y + 1) * w];
        let Some(first) = row.iter().position(|&m| m != 0.0) else { continue };
        let last = row.iter().rposition(|&m| m != 0.0).unwrap_or(first);
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, &m) in row.iter().enumerate().take(last + 1).skip(first) {
            if m == 0.0 {
                continue;
            }
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            let taps = &kernel.taps[lo + r - x..hi + r - x];
            for (o, &k) in out[lo..hi].iter_mut().zip(taps) {
                *o += m * k;
            }
        }
        spans[y] = Some((first.saturating_sub(r), (last + r + 1).min(w)));
    }
    let mut out = Grid::filled(w, h, mask.pixel_nm, 0.0);
    for (yy, span) in spans.iter().enumerate() {
        let Some((lo, hi)) = *span else { continue };
        let src = &tmp[yy * w + lo..yy * w + hi];
        let y0 = yy.saturating_sub(r);
        let y1 = (yy + r + 1).min(h);
        for y in y0..y1 {
            let k = kernel.taps[y + r - yy];
            let dst = &mut out.data[y * w + lo..y * w + hi];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LithoImages {
    pub aerial: Grid<f64>,
    pub resist: Grid<f64>,
    pub printed: BinaryGrid,
}

pub fn resist_value(aerial: f64, cfg: &LithoConfig) -> f64 {
    let z = 1.0 / (1.0 + (-(aerial - cfg.resist_threshold) * cfg.resist_steepness).exp());
    z.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Images at one dose from the unit-dose aerial image.
pub fn expose(unit_aerial: &Grid<f64>, cfg: &LithoConfig, dose: f64) -> Result<LithoImages, LithoError> {
    if !(dose > 0.0) {
        return Err(LithoError::Dose(dose));
    }
    let aerial = unit_aerial.map(|&a| a * dose);
    let resist = aerial.map(|&a| resist_value(a, cfg));
    let printed = aerial.map(|&a| a >= cfg.resist_threshold);
    Ok(LithoImages { aerial, resist, printed })
}

/// Aerial, resist and printed images of a mask (pixel coverage in `[0, 1]`).
pub fn simulate(mask: &Grid<f64>, cfg: &LithoConfig, dose: f64) -> Result<LithoImages, LithoError> {
    cfg.validate()?;
    if mask.pixel_nm != cfg.pixel_nm {
        return Err(LithoError::Config(format!("mask pixel {} nm differs from config pixel {} nm", mask.pixel_nm, cfg.pixel_nm)));
    }
    let kernel = make_kernel(cfg.kernel_sigma_nm, cfg.pixel_nm)?;
    expose(&convolve(mask, &kernel), cfg, dose)
}

/// Printed images at nominal, high and low dose, plus the nominal aerial image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessCorners {
    pub aerial_nominal: Grid<f64>,
    pub nominal: BinaryGrid,
    pub max: BinaryGrid,
    pub min: BinaryGrid,
}

/// A kernel built once and reused across simulations.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: LithoConfig,
    pub kernel: Kernel,
}

impl Simulator {
    pub fn new(cfg: LithoConfig) -> Result<Self, LithoError> {
        cfg.validate()?;
        Ok(Self { kernel: make_kernel(cfg.kernel_sigma_nm, cfg.pixel_nm)?, cfg })
    }

    pub fn process_corners(&self, mask: &Grid<f64>) -> ProcessCorners {
        // Dose is a scalar on a linear image: one convolution covers all corners.
        let unit = convolve(mask, &self.kernel);
        let t = self.cfg.resist_threshold;
        let (d0, dd) = (self.cfg.dose_nominal, self.cfg.dose_delta);
        let threshold = |d: f64| unit.map(|&a| a * d >= t);
        ProcessCorners {
            nominal: threshold(d0),
            max: threshold(d0 + dd),
            min: threshold(d0 - dd),
            aerial_nominal: unit.map(|&a| a * d0),
        }
    }
}

pub fn process_corners(mask: &Grid<f64>, cfg: &LithoConfig) -> Result<ProcessCorners, LithoError> {
    Ok(Simulator::new(*cfg)?.process_corners(mask))
}

/// Bilinear intensity at a position in nm; zero outside the grid.
pub fn sample_bilinear(img: &Grid<f64>, x_nm: f64, y_nm: f64) -> f64 {
    let p = img.pixel_nm as f64;
    let fx = x_nm / p - 0.5;
    let fy = y_nm / p - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (tx, ty) = (fx - x0, fy - y0);
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= img.width as f64 || y >= img.height as f64 {
            0.0
        } else {
            img.get(x as usize, y as usize)
        }
    };
    let a = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let b = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    a * (1.0 - ty) + b * ty
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Crossing {
    Found(f64),
    /// No crossing within range; the sign says which side printed.
    Unresolved { printed_at_point: bool },
}

impl Crossing {
    /// Signed distance, with unresolved crossings counted at `cap`.
    pub fn distance(self, cap: f64) -> f64 {
        match self {
            Crossing::Found(d) => d,
            Crossing::Unresolved { printed_at_point: true } => cap,
            Crossing::Unresolved { printed_at_point: false } => -cap,
        }
    }

    pub fn is_resolved(self) -> bool {
        matches!(self, Crossing::Found(_))
    }
}

/// Signed distance from `point` to the printed contour along `dir` (unit).
///
/// Positive when the point is printed and the contour lies further along
/// `dir`, negative when the contour lies behind the point. Sampling is at
/// 1 nm with linear interpolation between samples.
pub fn edge_crossing_distance(aerial: &Grid<f64>, cfg: &LithoConfig, point: (f64, f64), dir: (f64, f64)) -> Crossing {
    let t = cfg.resist_threshold;
    let f = |s: f64| sample_bilinear(aerial, point.0 + s * dir.0, point.1 + s * dir.1) - t;
    let f0 = f(0.0);
    if f0 == 0.0 {
        return Crossing::Found(0.0);
    }
    let printed = f0 > 0.0;
    let sense = if printed { 1.0 } else { -1.0 };
    let steps = cfg.search_range_nm.floor() as usize;
    let mut prev = f0;
    for k in 1..=steps {
        let s = k as f64;
        let cur = f(sense * s);
        if (cur > 0.0) != printed || cur == 0.0 {
            let root = (s - 1.0) + prev / (prev - cur);
            return Crossing::Found(sense * root);
        }
        prev = cur;
    }
    Crossing::Unresolved { printed_at_point: printed }
}

/// Writes a grid as text: `FGRID <width> <height> <pixel_nm>` then one row per line, bottom row first.
pub fn write_float_grid(grid: &Grid<f64>, mut out: impl Write) -> Result<(), LithoError> {
    writeln!(out, "FGRID {} {} {}", grid.width, grid.height, grid.pixel_nm)?;
    for y in 0..grid.height {
        let row: Vec<String> = grid.data[y * grid.width..(y + 1) * grid.width].iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_float_grid(input: impl BufRead) -> Result<Grid<f64>, LithoError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| LithoError::Format("empty file".into()))??;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 || h[0] != "FGRID" {
        return Err(LithoError::Format(format!("bad header {header:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| LithoError::Format(format!("{s:?}: {e}")));
    let (w, ht, p) = (num(h[1])?, num(h[2])?, num(h[3])?);
    let mut data = Vec::with_capacity(w * ht);
    for line in lines {
        for tok in line?.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| LithoError::Format(format!("{tok:?}: {e}")))?);
        }
    }
    if data.len() != w * ht {
        return Err(LithoError::Format(format!("expected {} values, found {}", w * ht, data.len())));
    }
    Ok(Grid { width: w, height: ht, pixel_nm: p as i64, data })
}

pub fn check_same_dims<A: Copy, B: Copy>(a: &Grid<A>, b: &Grid<B>) -> Result<(), LithoError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LithoError::Dimensions(a.width, a.height, b.width, b.height))
    }
}
