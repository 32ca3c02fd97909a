//! Grid export: raw little-endian `f32` stacks with a one-line text header,
//! and 8-bit graymaps for eyeballing.
//!
//! Raw layout: `MCGRID <N> <H> <W>\n` followed by `N*H*W` little-endian
//! `f32` values, channel-major then row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const GRID_MAGIC: &str = "MCGRID";

/// Writes channels of a `1 x N x H x W` tensor as a raw `f32` grid stack.
pub fn write_grid_stack(path: &Path, grids: &Tensor) -> Result<()> {
    let s = grids.shape();
    if s.batch != 1 {
        return Err(Error::shape("batch", format!("grid stack must have batch 1, got {s}")));
    }
    let mut buf = format!("{GRID_MAGIC} {} {} {}\n", s.channels, s.height, s.width).into_bytes();
    buf.reserve(s.numel() * 4);
    for &v in grids.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_grid_stack(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dims: Vec<usize> = match fields.as_slice() {
        [magic, rest @ ..] if *magic == GRID_MAGIC && rest.len() == 3 => rest
            .iter()
            .map(|f| f.parse().map_err(|_| bad(format!("bad extent {f:?}"))))
            .collect::<Result<_>>()?,
        _ => return Err(bad(format!("bad header {header:?}"))),
    };
    let shape = Shape::new(1, dims[0], dims[1], dims[2]);
    let body = &bytes[nl + 1..];
    if body.len() != shape.numel() * 4 {
        return Err(bad(format!("expected {} payload bytes, found {}", shape.numel() * 4, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(shape, data)
}

/// Writes one plane as a binary graymap, scaled so the maximum maps to 255.
/// An all-zero (or all-negative) plane renders black.
pub fn write_pgm(path: &Path, plane: &[f64], height: usize, width: usize) -> Result<()> {
    if plane.len() != height * width {
        return Err(Error::shape("buffer", format!("{} values for {height}x{width}", plane.len())));
    }
    let max = plane.iter().cloned().fold(0.0f64, f64::max);
    let pixels: Vec<u8> = plane
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoded = Vec::new();
    PnmEncoder::new(&mut encoded)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    file.write_all(&encoded).map_err(|e| Error::io(path, e))
}
