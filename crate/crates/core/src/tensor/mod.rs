//! A small deterministic tensor core: dense 4-axis `f64` arrays, a
//! tape-style computation graph with reverse-mode differentiation, and Adam.
//!
//! Only the operations the counting network needs are provided. There is no
//! broadcasting; binary ops require congruent shapes.

mod adam;
mod graph;
pub(crate) mod kernels;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var};

use crate::error::{Error, Result};

/// Extents of a `batch x channels x height x width` array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    /// A per-channel vector, stored as `1 x n x 1 x 1`.
    pub const fn vector(n: usize) -> Self {
        Shape::new(1, n, 1, 1)
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Vec<usize> = s
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|e| format!("bad extent {d:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match dims[..] {
            [b, c, h, w] => Ok(Shape::new(b, c, h, w)),
            _ => Err(format!("expected 4 extents, got {}", dims.len())),
        }
    }
}

/// Dense row-major `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "buffer",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((b * s.channels + c) * s.height + y) * s.width + x
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(b, c, y, x)]
    }

    /// One `height x width` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Hyperparameters of one square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, dilation 1, and "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: kernel_size / 2,
            dilation: 1,
        }
    }

    /// A size-preserving dilated 3x3 convolution (padding equals the rate).
    pub fn dilated3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size: 3,
            stride: 1,
            padding: dilation,
            dilation,
        }
    }

    pub fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        )
    }

    /// Output extent along one spatial axis, or `None` if the kernel does not fit.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        let eff = self.effective_kernel();
        (padded >= eff).then(|| (padded - eff) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0
            || self.stride == 0
            || self.dilation == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::Config(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        let t = Tensor::from_vec(Shape::new(1, 2, 2, 2), (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 1, 0, 1), 5.0);
        assert_eq!(t.plane(0, 1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn shape_parses_its_display() {
        let s = Shape::new(3, 1, 7, 9);
        assert_eq!(s.to_string().parse::<Shape>().unwrap(), s);
        assert!("3x1x7".parse::<Shape>().is_err());
    }

    #[test]
    fn output_extent_formula() {
        let spec = ConvSpec::dilated3(1, 1, 2);
        assert_eq!(spec.effective_kernel(), 5);
        assert_eq!(spec.output_extent(16), Some(16));
        let tight = ConvSpec {
            padding: 0,
            ..ConvSpec::dilated3(1, 1, 5)
        };
        assert_eq!(tight.output_extent(10), None);
        assert_eq!(tight.output_extent(11), Some(1));
    }

    #[test]
    fn output_extent_grid() {
        for k in 1..=3 {
            for stride in [1, 2] {
                for padding in 0..=2 {
                    for dilation in [1, 2, 3, 5] {
                        let spec = ConvSpec {
                            in_channels: 1,
                            out_channels: 1,
                            kernel_size: k,
                            stride,
                            padding,
                            dilation,
                        };
                        for h in 1..20usize {
                            let expect = (h as i64 + 2 * padding as i64
                                - dilation as i64 * (k as i64 - 1)
                                - 1)
                                .div_euclid(stride as i64)
                                + 1;
                            let fits = h + 2 * padding >= spec.effective_kernel();
                            match spec.output_extent(h) {
                                Some(o) => {
                                    assert!(fits);
                                    assert_eq!(o as i64, expect);
                                }
                                None => assert!(!fits),
                            }
                        }
                    }
                }
            }
        }
    }
}
