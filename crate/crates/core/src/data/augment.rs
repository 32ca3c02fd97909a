use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::groundtruth::{Point, PointAnnotationSet};
use crate::tensor::{Shape, Tensor};

/// Horizontal mirror; a point at column `x` moves to `width - 1 - x`.
pub fn flip_augment(sample: &Sample) -> Sample {
    let s = sample.image.shape();
    let mut image = sample.image.clone();
    for b in 0..s.batch {
        for c in 0..s.channels {
            for row in image.plane_mut(b, c).chunks_mut(s.width) {
                row.reverse();
            }
        }
    }
    let w = sample.annotations.width as f64;
    let classes = sample
        .annotations
        .classes
        .iter()
        .map(|pts| pts.iter().map(|p| Point::new(w - 1.0 - p.x, p.y)).collect())
        .collect();
    Sample {
        image,
        annotations: PointAnnotationSet {
            classes,
            ..sample.annotations.clone()
        },
    }
}

/// Cuts the window with top-left corner `(top, left)`. Points outside are
/// dropped; the rest are shifted into window coordinates.
pub fn crop_at(sample: &Sample, top: usize, left: usize, height: usize, width: usize) -> Result<Sample> {
    let s = sample.image.shape();
    if top + height > s.height {
        return Err(Error::shape("height", format!("crop rows {top}..{} exceed {}", top + height, s.height)));
    }
    if left + width > s.width {
        return Err(Error::shape("width", format!("crop cols {left}..{} exceed {}", left + width, s.width)));
    }
    let mut image = Tensor::zeros(Shape::new(s.batch, s.channels, height, width));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = sample.image.plane(b, c);
            let dst = image.plane_mut(b, c);
            for y in 0..height {
                let from = (top + y) * s.width + left;
                dst[y * width..(y + 1) * width].copy_from_slice(&src[from..from + width]);
            }
        }
    }
    let (t, l) = (top as f64, left as f64);
    let (bottom, right) = ((top + height) as f64 - 1.0, (left + width) as f64 - 1.0);
    let classes = sample
        .annotations
        .classes
        .iter()
        .map(|pts| {
            pts.iter()
                .filter(|p| p.y >= t && p.y <= bottom && p.x >= l && p.x <= right)
                .map(|p| Point::new(p.x - l, p.y - t))
                .collect()
        })
        .collect();
    Ok(Sample {
        image,
        annotations: PointAnnotationSet {
            image_id: sample.annotations.image_id.clone(),
            height,
            width,
            classes,
        },
    })
}

/// Uniformly placed crop of the given extent (multiples of 8).
pub fn random_crop<R: Rng>(sample: &Sample, height: usize, width: usize, rng: &mut R) -> Result<Sample> {
    if !height.is_multiple_of(8) || !width.is_multiple_of(8) || height == 0 || width == 0 {
        return Err(Error::Config(format!("crop {height}x{width} must be positive multiples of 8")));
    }
    let s = sample.image.shape();
    if height > s.height || width > s.width {
        return Err(Error::Config(format!(
            "crop {height}x{width} larger than image {}x{}",
            s.height, s.width
        )));
    }
    let top = rng.random_range(0..=s.height - height);
    let left = rng.random_range(0..=s.width - width);
    crop_at(sample, top, left, height, width)
}

/// Random crop, then a mirror with probability `flip_prob`.
pub fn augment<R: Rng>(sample: &Sample, crop: (usize, usize), flip_prob: f64, rng: &mut R) -> Result<Sample> {
    let cropped = random_crop(sample, crop.0, crop.1, rng)?;
    Ok(if rng.random_bool(flip_prob) {
        flip_augment(&cropped)
    } else {
        cropped
    })
}
