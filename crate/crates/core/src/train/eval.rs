use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::ordered_map;
use crate::data::{read_pixmap, Manifest, Sample};
use crate::error::{Error, Result};
use crate::groundtruth::export::{write_grid_stack, write_pgm};
use crate::groundtruth::{render_density_maps, DensityConfig};
use crate::metrics::{count_from_density, evaluate_metrics, CountPair, MetricsReport};
use crate::model::read_checkpoint;
use crate::model::Model;
use crate::tensor::{Shape, Tensor};

/// Input extents must be multiples of this.
pub const MODEL_STRIDE: usize = 8;

/// Zero-pads a `1 x C x H x W` image at the bottom and right up to the next
/// multiple of `stride`. Annotations are unaffected.
pub fn pad_to_stride(image: &Tensor, stride: usize) -> Tensor {
    let s = image.shape();
    let (h, w) = (s.height.div_ceil(stride) * stride, s.width.div_ceil(stride) * stride);
    if (h, w) == (s.height, s.width) {
        return image.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, h, w));
    for b in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..s.height {
                let src = image.index(b, c, y, 0);
                let dst = out.index(b, c, y, 0);
                out.data_mut()[dst..dst + s.width].copy_from_slice(&image.data()[src..src + s.width]);
            }
        }
    }
    out
}

fn gt_counts(s: &Sample) -> Vec<f64> {
    s.annotations.counts().into_iter().map(|c| c as f64).collect()
}

fn check_classes(model_classes: usize, samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    match samples.iter().find(|s| s.annotations.num_classes() != model_classes) {
        Some(s) => Err(Error::ClassMismatch {
            model: model_classes,
            data: s.annotations.num_classes(),
        }),
        None => Ok(()),
    }
}

fn counts_of(density: &Tensor) -> Vec<f64> {
    (0..density.shape().channels)
        .map(|k| count_from_density(density.plane(0, k)))
        .collect()
}

/// Predicted vs annotated counts for every sample, then the metrics.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<MetricsReport> {
    check_classes(model.config().num_classes, samples)?;
    let rows = ordered_map(samples, |s| -> Result<Vec<CountPair>> {
        let pred = model.predict(&pad_to_stride(&s.image, MODEL_STRIDE))?;
        Ok(counts_of(&pred.final_density).into_iter().zip(gt_counts(s)).collect())
    });
    evaluate_metrics(rows.into_iter().collect::<Result<_>>()?)
}

/// Scores the rendered ground-truth densities as if they were predictions.
/// Every error is then the count-conservation residual of the renderer.
pub fn evaluate_oracle(density: &DensityConfig, samples: &[Sample]) -> Result<MetricsReport> {
    let rows = ordered_map(samples, |s| -> Result<Vec<CountPair>> {
        let d = render_density_maps(&s.annotations, density)?;
        Ok(counts_of(&d).into_iter().zip(gt_counts(s)).collect())
    });
    evaluate_metrics(rows.into_iter().collect::<Result<_>>()?)
}

/// Loads a checkpoint read-only and evaluates it on a manifest.
pub fn evaluate_checkpoint(checkpoint: &Path, manifest: &Path) -> Result<MetricsReport> {
    let ckpt = read_checkpoint(checkpoint)?;
    let m = Manifest::read(manifest)?;
    if m.is_empty() {
        return Err(Error::Config(format!("{}: empty manifest", manifest.display())));
    }
    let samples = m.load_samples(ckpt.model.config().num_classes, None)?;
    evaluate(&ckpt.model, &samples)
}

/// What `export_density` wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportSummary {
    /// Predicted count per class (sum of the 64-bit density channel).
    pub counts: Vec<f64>,
    pub density_grids: Vec<PathBuf>,
    pub density_images: Vec<PathBuf>,
    pub attention_grids: Vec<PathBuf>,
    pub attention_images: Vec<PathBuf>,
    pub summary: PathBuf,
}

fn export_planes(out: &Path, stem: &str, t: &Tensor) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    let s = t.shape();
    let (mut grids, mut images) = (Vec::new(), Vec::new());
    for k in 0..s.channels {
        let plane = t.plane(0, k).to_vec();
        let grid = out.join(format!("{stem}_class{k}.grid"));
        write_grid_stack(&grid, &Tensor::from_vec(Shape::new(1, 1, s.height, s.width), plane.clone())?)?;
        let img = out.join(format!("{stem}_class{k}.pgm"));
        write_pgm(&img, &plane, s.height, s.width)?;
        grids.push(grid);
        images.push(img);
    }
    Ok((grids, images))
}

/// Runs the checkpoint on one image and writes, per class, the predicted
/// density (and attention, with CAM) as a raw grid and a graymap, plus a
/// `counts.txt` summary.
pub fn export_density(checkpoint: &Path, image: &Path, out: &Path) -> Result<ExportSummary> {
    let ckpt = read_checkpoint(checkpoint)?;
    let img = read_pixmap(image)?;
    let pred = ckpt.model.predict(&pad_to_stride(&img, MODEL_STRIDE))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (density_grids, density_images) = export_planes(out, "density", &pred.final_density)?;
    let (attention_grids, attention_images) = match &pred.attention {
        Some(a) => export_planes(out, "attention", a)?,
        None => (Vec::new(), Vec::new()),
    };
    let counts = counts_of(&pred.final_density);
    let mut text = format!("image = {}\n", image.display());
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(text, "count_class_{k} = {c}");
    }
    let summary = out.join("counts.txt");
    fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
    Ok(ExportSummary {
        counts,
        density_grids,
        density_images,
        attention_grids,
        attention_images,
        summary,
    })
}
