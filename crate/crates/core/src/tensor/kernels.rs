//! Forward and backward kernels on raw buffers. Shape validation happens in
//! the graph layer; these functions assume congruent inputs.

use super::{ConvSpec, Shape, Tensor};

/// Unrolls one batch item into a `(C*K*K) x (Ho*Wo)` column matrix.
fn im2col(x: &[f64], in_shape: Shape, spec: &ConvSpec, out_h: usize, out_w: usize, cols: &mut [f64]) {
    let k = spec.kernel_size;
    let (h, w) = (in_shape.height as isize, in_shape.width as isize);
    let n = out_h * out_w;
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        let plane = &x[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let off_y = (ky * spec.dilation) as isize - pad;
                let off_x = (kx * spec.dilation) as isize - pad;
                for oy in 0..out_h {
                    let iy = (oy * spec.stride) as isize + off_y;
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= h {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride) as isize + off_x;
                        *d = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one batch item.
fn col2im(cols: &[f64], in_shape: Shape, spec: &ConvSpec, out_h: usize, out_w: usize, dx: &mut [f64]) {
    let k = spec.kernel_size;
    let (h, w) = (in_shape.height as isize, in_shape.width as isize);
    let n = out_h * out_w;
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                let off_y = (ky * spec.dilation) as isize - pad;
                let off_x = (kx * spec.dilation) as isize - pad;
                for oy in 0..out_h {
                    let iy = (oy * spec.stride) as isize + off_y;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                    for ox in 0..out_w {
                        let ix = (ox * spec.stride) as isize + off_x;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers sized for the stated strides and extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &[f64], spec: &ConvSpec) -> Tensor {
    let s = x.shape();
    let out_h = spec.output_extent(s.height).expect("validated");
    let out_w = spec.output_extent(s.width).expect("validated");
    let out_shape = Shape::new(s.batch, spec.out_channels, out_h, out_w);
    let mut out = Tensor::zeros(out_shape);
    let kk = spec.in_channels * spec.kernel_size * spec.kernel_size;
    let n = out_h * out_w;
    let mut cols = vec![0.0; kk * n];
    let in_item = spec.in_channels * s.plane();
    let out_item = spec.out_channels * n;
    for b in 0..s.batch {
        im2col(&x.data()[b * in_item..(b + 1) * in_item], s, spec, out_h, out_w, &mut cols);
        let dst = &mut out.data_mut()[b * out_item..(b + 1) * out_item];
        for (co, row) in dst.chunks_mut(n).enumerate() {
            row.fill(bias[co]);
        }
        gemm(spec.out_channels, kk, n, weight.data(), (kk, 1), &cols, (n, 1), 1.0, dst);
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_input` is false.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    dout: &[f64],
    out_shape: Shape,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (out_h, out_w) = (out_shape.height, out_shape.width);
    let kk = spec.in_channels * spec.kernel_size * spec.kernel_size;
    let n = out_h * out_w;
    let in_item = spec.in_channels * s.plane();
    let out_item = spec.out_channels * n;
    let mut cols = vec![0.0; kk * n];
    let mut dcols = vec![0.0; kk * n];
    let mut dw = vec![0.0; weight.shape().numel()];
    let mut db = vec![0.0; spec.out_channels];
    let mut dx = need_input.then(|| vec![0.0; s.numel()]);
    for b in 0..s.batch {
        let g = &dout[b * out_item..(b + 1) * out_item];
        for (co, row) in g.chunks(n).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        im2col(&x.data()[b * in_item..(b + 1) * in_item], s, spec, out_h, out_w, &mut cols);
        // dW += dOut * cols^T
        gemm(spec.out_channels, n, kk, g, (n, 1), &cols, (1, n), 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dOut
            gemm(kk, spec.out_channels, n, weight.data(), (1, kk), g, (n, 1), 0.0, &mut dcols);
            col2im(&dcols, s, spec, out_h, out_w, &mut dx[b * in_item..(b + 1) * in_item]);
        }
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pool. Also returns, per output site, the flat input index
/// of the winning element (first maximum in row-major window order).
pub(crate) fn maxpool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let out_shape = Shape::new(s.batch, s.channels, s.height / 2, s.width / 2);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.numel()];
    let data = x.data();
    let mut o = 0;
    for bc in 0..s.batch * s.channels {
        let base = bc * s.plane();
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut best_idx = base + 2 * oy * s.width + 2 * ox;
                let mut best = data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * s.width + 2 * ox + dx;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out.data_mut()[o] = best;
                argmax[o] = best_idx;
                o += 1;
            }
        }
    }
    (out, argmax)
}

/// Interpolation taps along one axis: `(lo, hi, w_lo, w_hi)` per destination index.
pub(crate) fn bilinear_taps(src_len: usize, scale: usize) -> Vec<(usize, usize, f64, f64)> {
    let dst_len = src_len * scale;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            let frac = src - lo as f64;
            (lo, hi, 1.0 - frac, frac)
        })
        .collect()
}

pub(crate) fn upsample_forward(x: &Tensor, scale: usize) -> Tensor {
    if scale == 1 {
        return x.clone();
    }
    let s = x.shape();
    let out_shape = Shape::new(s.batch, s.channels, s.height * scale, s.width * scale);
    let ty = bilinear_taps(s.height, scale);
    let tx = bilinear_taps(s.width, scale);
    let mut out = Tensor::zeros(out_shape);
    let src = x.data();
    let dst = out.data_mut();
    for bc in 0..s.batch * s.channels {
        let sp = &src[bc * s.plane()..(bc + 1) * s.plane()];
        let dp = &mut dst[bc * out_shape.plane()..(bc + 1) * out_shape.plane()];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let r0 = &sp[y0 * s.width..(y0 + 1) * s.width];
            let r1 = &sp[y1 * s.width..(y1 + 1) * s.width];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                dp[oy * out_shape.width + ox] =
                    wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(in_shape: Shape, scale: usize, dout: &[f64]) -> Vec<f64> {
    if scale == 1 {
        return dout.to_vec();
    }
    let s = in_shape;
    let (oh, ow) = (s.height * scale, s.width * scale);
    let ty = bilinear_taps(s.height, scale);
    let tx = bilinear_taps(s.width, scale);
    let mut dx = vec![0.0; s.numel()];
    for bc in 0..s.batch * s.channels {
        let g = &dout[bc * oh * ow..(bc + 1) * oh * ow];
        let d = &mut dx[bc * s.plane()..(bc + 1) * s.plane()];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * s.width + x0] += wy0 * wx0 * v;
                d[y0 * s.width + x1] += wy0 * wx1 * v;
                d[y1 * s.width + x0] += wy1 * wx0 * v;
                d[y1 * s.width + x1] += wy1 * wx1 * v;
            }
        }
    }
    dx
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    // keep the open interval even where f64 would round to 0 or 1
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
