//! Samples, annotation files, synthetic scenes, augmentation, and the
//! on-disk dataset layout (binary pixmaps plus a manifest).

pub mod annotations;
pub mod augment;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

pub use annotations::{load_annotations, write_annotations, ClassMap};
pub use augment::{augment, flip_augment, random_crop};
pub use synth::{synth_dataset, synth_scene, ClassStyle, SceneConfig};

use crate::error::{Error, Result};
use crate::groundtruth::PointAnnotationSet;
use crate::tensor::{Shape, Tensor};

/// One image (`1 x 3 x H x W`, values in [0, 1]) with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub annotations: PointAnnotationSet,
}

pub fn read_pixmap(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let i = t.index(0, c, y as usize, x as usize);
            t.data_mut()[i] = px[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Writes a `1 x 3 x H x W` tensor as a binary pixmap, clamping to [0, 1].
pub fn write_pixmap(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.batch != 1 || s.channels != 3 {
        return Err(Error::shape("channel", format!("pixmap needs 1x3xHxW, got {s}")));
    }
    let mut bytes = Vec::with_capacity(s.plane() * 3);
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..3 {
                bytes.push((image.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, s.width as u32, s.height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Image/annotation path pairs. On disk: one `image,annotations` pair per
/// line, relative paths resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (img, ann) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected image_path,annotation_path".into(),
            })?;
            entries.push((base.join(img.trim()), base.join(ann.trim())));
        }
        Ok(Manifest { entries })
    }

    /// Writes paths relative to the manifest's directory where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let text: String = self
            .entries
            .iter()
            .map(|(i, a)| format!("{},{}\n", rel(i), rel(a)))
            .collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_samples(&self, num_classes: usize, class_map: Option<&ClassMap>) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|(img, ann)| {
                let image = read_pixmap(img)?;
                let s = image.shape();
                let annotations = load_annotations(ann, (s.height, s.width), num_classes, class_map)?;
                Ok(Sample { image, annotations })
            })
            .collect()
    }
}

/// Writes samples as `<stem>.ppm` / `<stem>.txt` pairs plus `manifest.txt`
/// under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    for s in samples {
        let img = dir.join(format!("{}.ppm", s.annotations.image_id));
        let ann = dir.join(format!("{}.txt", s.annotations.image_id));
        write_pixmap(&img, &s.image)?;
        write_annotations(&ann, &s.annotations)?;
        manifest.entries.push((img, ann));
    }
    let path = dir.join("manifest.txt");
    manifest.write(&path)?;
    Ok(path)
}
