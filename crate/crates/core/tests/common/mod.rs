//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use multicount::tensor::{ConvSpec, Shape, Tensor};
use rand::Rng;

pub fn random_tensor(shape: Shape, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct seven-deep loop convolution.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
    let s = x.shape();
    let k = spec.kernel_size;
    let reach = spec.dilation * (k - 1) + 1;
    let oh = (s.height + 2 * spec.padding - reach) / spec.stride + 1;
    let ow = (s.width + 2 * spec.padding - reach) / spec.stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.batch, spec.out_channels, oh, ow));
    for n in 0..s.batch {
        for o in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..spec.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                    continue;
                                }
                                acc += w.at(o, c, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    let i = out.index(n, o, oy, ox);
                    out.data_mut()[i] = acc;
                }
            }
        }
    }
    out
}

pub fn naive_maxpool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, s.height / 2, s.width / 2));
    for n in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..s.height / 2 {
                for xx in 0..s.width / 2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.at(n, c, 2 * y + dy, 2 * xx + dx))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let i = out.index(n, c, y, xx);
                    out.data_mut()[i] = m;
                }
            }
        }
    }
    out
}

/// Half-pixel bilinear resampling evaluated point by point.
pub fn naive_upsample(x: &Tensor, scale: usize) -> Tensor {
    let s = x.shape();
    let (oh, ow) = (s.height * scale, s.width * scale);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, oh, ow));
    let src = |d: usize, n: usize| ((d as f64 + 0.5) / scale as f64 - 0.5).max(0.0).min((n - 1) as f64);
    for b in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let (sy, sx) = (src(y, s.height), src(xx, s.width));
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(s.height - 1), (x0 + 1).min(s.width - 1));
                    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = (1.0 - ty) * (1.0 - tx) * x.at(b, c, y0, x0)
                        + (1.0 - ty) * tx * x.at(b, c, y0, x1)
                        + ty * (1.0 - tx) * x.at(b, c, y1, x0)
                        + ty * tx * x.at(b, c, y1, x1);
                    let i = out.index(b, c, y, xx);
                    out.data_mut()[i] = v;
                }
            }
        }
    }
    out
}

pub fn naive_concat(parts: &[Tensor]) -> Tensor {
    let s0 = parts[0].shape();
    let channels = parts.iter().map(|p| p.shape().channels).sum();
    let mut out = Tensor::zeros(Shape::new(s0.batch, channels, s0.height, s0.width));
    for b in 0..s0.batch {
        let mut base = 0;
        for p in parts {
            for c in 0..p.shape().channels {
                for y in 0..s0.height {
                    for x in 0..s0.width {
                        let i = out.index(b, base + c, y, x);
                        out.data_mut()[i] = p.at(b, c, y, x);
                    }
                }
            }
            base += p.shape().channels;
        }
    }
    out
}
