//! Training targets built from point annotations: per-class Gaussian density
//! maps, Euclidean distance maps, and thresholded binary pseudo-masks.
//!
//! Targets are rendered directly at the network's output resolution. A point
//! at image pixel coordinate `x` lands at output coordinate
//! `(x + 0.5) * scale - 0.5`, the same half-pixel convention used by the
//! bilinear upsampler, which keeps horizontal mirroring exact at any scale.

pub mod export;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One annotated object center, in image pixel coordinates
/// (`x` is the column, `y` the row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Coordinates of loaded and generated points are snapped to multiples of
/// this (1/65536 px). On that lattice mirroring and integer shifts are exact
/// in `f64`, so a double flip restores every point bit for bit.
pub const COORD_QUANTUM: f64 = 1.0 / 65536.0;

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// A point with both coordinates snapped to the [`COORD_QUANTUM`] lattice.
    pub fn snapped(x: f64, y: f64) -> Self {
        let q = |v: f64| (v / COORD_QUANTUM).round() * COORD_QUANTUM;
        Point { x: q(x), y: q(y) }
    }
}

/// Per-class point lists for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PointAnnotationSet {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub classes: Vec<Vec<Point>>,
}

impl PointAnnotationSet {
    pub fn empty(image_id: impl Into<String>, num_classes: usize, height: usize, width: usize) -> Self {
        PointAnnotationSet {
            image_id: image_id.into(),
            height,
            width,
            classes: vec![Vec::new(); num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width as f64 - 1.0) && p.y <= (self.height as f64 - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("annotation set has zero classes".into()));
        }
        for (k, pts) in self.classes.iter().enumerate() {
            if let Some(p) = pts.iter().find(|p| !self.contains(**p)) {
                return Err(Error::Config(format!(
                    "{}: class {k} point ({}, {}) outside {}x{} image",
                    self.image_id, p.x, p.y, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Gaussian bandwidth per class, in image pixels.
    pub sigma_per_class: Vec<f64>,
    /// Blobs are cut off at this multiple of sigma.
    pub truncation: f64,
    /// Scale each truncated blob to unit discrete mass.
    pub renormalize_blobs: bool,
    /// Output grid extent divided by image extent.
    pub output_scale: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            sigma_per_class: vec![4.0, 8.0],
            truncation: 4.0,
            renormalize_blobs: true,
            output_scale: 0.25,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.sigma_per_class.len() != num_classes {
            return Err(Error::ClassMismatch {
                model: num_classes,
                data: self.sigma_per_class.len(),
            });
        }
        if self.sigma_per_class.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma_per_class must be positive".into()));
        }
        if !(self.truncation >= 2.0) {
            return Err(Error::Config(format!("truncation {} below 2 sigma", self.truncation)));
        }
        if !(self.output_scale > 0.0 && self.output_scale <= 1.0) {
            return Err(Error::Config(format!("output_scale {} not in (0, 1]", self.output_scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Foreground radius around each point, in image pixels.
    pub threshold_j: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { threshold_j: 20.0 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_j > 0.0) {
            return Err(Error::Config(format!("threshold_j {} must be positive", self.threshold_j)));
        }
        Ok(())
    }
}

/// Output-grid extents for an image, failing unless the scale divides evenly.
pub fn output_extent(height: usize, width: usize, scale: f64) -> Result<(usize, usize)> {
    let conv = |n: usize| {
        let v = n as f64 * scale;
        (v.fract() == 0.0 && v >= 1.0)
            .then_some(v as usize)
            .ok_or_else(|| Error::Config(format!("extent {n} times scale {scale} is not a positive integer")))
    };
    Ok((conv(height)?, conv(width)?))
}

/// Maps an image coordinate onto an output grid with the given scale.
pub fn to_output_coord(v: f64, scale: f64) -> f64 {
    (v + 0.5) * scale - 0.5
}

/// Adds one truncated Gaussian blob centred at `(cx, cy)` (grid coordinates).
///
/// With `renormalize` the blob's in-grid mass is exactly one; otherwise the
/// continuous normalization `1 / (2 pi sigma^2)` is used.
pub fn add_blob(
    grid: &mut [f64],
    height: usize,
    width: usize,
    (cx, cy): (f64, f64),
    sigma: f64,
    radius: f64,
    renormalize: bool,
) {
    let y0 = (cy - radius).ceil().max(0.0) as usize;
    let x0 = (cx - radius).ceil().max(0.0) as usize;
    let y1 = ((cy + radius).floor() as isize).min(height as isize - 1);
    let x1 = ((cx + radius).floor() as isize).min(width as isize - 1);
    let r2 = radius * radius;
    let inv = 1.0 / (2.0 * sigma * sigma);

    let mut taps = Vec::new();
    let mut mass = 0.0;
    if y1 >= y0 as isize && x1 >= x0 as isize {
        for y in y0..=y1 as usize {
            let dy = y as f64 - cy;
            for x in x0..=x1 as usize {
                let dx = x as f64 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 {
                    let w = (-d2 * inv).exp();
                    mass += w;
                    taps.push((y * width + x, w));
                }
            }
        }
    }
    if taps.is_empty() {
        // blob narrower than a pixel: put the mass on the nearest cell
        let y = cy.round().clamp(0.0, (height - 1) as f64) as usize;
        let x = cx.round().clamp(0.0, (width - 1) as f64) as usize;
        grid[y * width + x] += if renormalize { 1.0 } else { inv / std::f64::consts::PI };
        return;
    }
    let norm = if renormalize {
        1.0 / mass
    } else {
        inv / std::f64::consts::PI
    };
    for (i, w) in taps {
        grid[i] += w * norm;
    }
}

/// Renders one density channel per class, shape `1 x N x Ho x Wo`.
pub fn render_density_maps(ann: &PointAnnotationSet, cfg: &DensityConfig) -> Result<Tensor> {
    cfg.validate(ann.num_classes())?;
    let (h, w) = output_extent(ann.height, ann.width, cfg.output_scale)?;
    let mut out = Tensor::zeros(Shape::new(1, ann.num_classes(), h, w));
    let s = cfg.output_scale;
    for (k, pts) in ann.classes.iter().enumerate() {
        let sigma = cfg.sigma_per_class[k] * s;
        let radius = cfg.truncation * sigma;
        let plane = out.plane_mut(0, k);
        for p in pts {
            let c = (to_output_coord(p.x, s), to_output_coord(p.y, s));
            add_blob(plane, h, w, c, sigma, radius, cfg.renormalize_blobs);
        }
    }
    Ok(out)
}

/// Minimum Euclidean distance from every cell of a `height x width` grid to
/// the given points (grid coordinates). Row-major output.
pub fn distance_transform(points: &[Point], height: usize, width: usize) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Config("distance transform of an empty point set".into()));
    }
    let mut out = vec![f64::INFINITY; height * width];
    for p in points {
        for y in 0..height {
            let dy = y as f64 - p.y;
            let row = &mut out[y * width..(y + 1) * width];
            for (x, best) in row.iter_mut().enumerate() {
                let dx = x as f64 - p.x;
                let d2 = dx * dx + dy * dy;
                if d2 < *best {
                    *best = d2;
                }
            }
        }
    }
    // sqrt is monotone and correctly rounded, so sqrt(min) == min(sqrt)
    out.iter_mut().for_each(|v| *v = v.sqrt());
    Ok(out)
}

/// 1 where `distance <= threshold`, else 0.
pub fn make_pseudo_mask(distance: &[f64], threshold: f64) -> Vec<f64> {
    distance
        .iter()
        .map(|&d| if d <= threshold { 1.0 } else { 0.0 })
        .collect()
}

/// Renders one binary mask channel per class at the output resolution.
/// Classes without points get all-zero masks.
pub fn render_pseudo_masks(ann: &PointAnnotationSet, cfg: &MaskConfig, output_scale: f64) -> Result<Tensor> {
    cfg.validate()?;
    let (h, w) = output_extent(ann.height, ann.width, output_scale)?;
    let mut out = Tensor::zeros(Shape::new(1, ann.num_classes(), h, w));
    for (k, pts) in ann.classes.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let scaled: Vec<Point> = pts
            .iter()
            .map(|p| Point::new(to_output_coord(p.x, output_scale), to_output_coord(p.y, output_scale)))
            .collect();
        let dist = distance_transform(&scaled, h, w)?;
        out.plane_mut(0, k)
            .copy_from_slice(&make_pseudo_mask(&dist, cfg.threshold_j * output_scale));
    }
    Ok(out)
}
