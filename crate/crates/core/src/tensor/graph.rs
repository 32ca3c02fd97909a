use super::kernels;
use super::{ConvSpec, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        scale: usize,
    },
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sum(Var),
    SquaredError {
        pred: Var,
        target: Tensor,
    },
    Bce {
        attn: Var,
        mask: Tensor,
        eps: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// An append-only computation tape. Nodes are stored in creation order, which
/// is a topological order, so backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn congruent(a: Shape, b: Shape) -> Result<()> {
    for (axis, (x, y)) in ["batch", "channel", "height", "width"]
        .into_iter()
        .zip(a.dims().into_iter().zip(b.dims()))
    {
        if x != y {
            return Err(Error::shape(axis, format!("{a} vs {b}")));
        }
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient from the most recent [`Graph::backward`], if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    /// Zero-padded dilated cross-correlation plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let xs = self.shape(x);
        if xs.channels != spec.in_channels {
            return Err(Error::shape(
                "channel",
                format!("input has {} channels, conv expects {}", xs.channels, spec.in_channels),
            ));
        }
        congruent(self.shape(w), spec.weight_shape())?;
        congruent(self.shape(b), Shape::vector(spec.out_channels))?;
        for (axis, extent) in [("height", xs.height), ("width", xs.width)] {
            if spec.output_extent(extent).is_none() {
                return Err(Error::shape(
                    axis,
                    format!(
                        "effective kernel {} exceeds padded extent {}",
                        spec.effective_kernel(),
                        extent + 2 * spec.padding
                    ),
                ));
            }
        }
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b).data(), &spec);
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    /// 2x2 window, stride 2. Gradient is routed to the first maximum in
    /// row-major window order.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.height.is_multiple_of(2) {
            return Err(Error::shape("height", format!("odd extent {}", s.height)));
        }
        if !s.width.is_multiple_of(2) {
            return Err(Error::shape("width", format!("odd extent {}", s.width)));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x));
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers and
    /// edge clamping. `scale == 1` is an exact copy.
    pub fn upsample_bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        if scale == 0 {
            return Err(Error::Config("upsample scale must be >= 1".into()));
        }
        let out = kernels::upsample_forward(self.value(x), scale);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Upsample { x, scale }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("channel", "concat of zero tensors"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            congruent(Shape { channels: s.channels, ..s0 }, s)?;
            channels += s.channels;
        }
        let out_shape = Shape { channels, ..s0 };
        let mut data = Vec::with_capacity(out_shape.numel());
        for b in 0..s0.batch {
            for &v in inputs {
                let t = self.value(v);
                let item = t.shape().channels * s0.plane();
                data.extend_from_slice(&t.data()[b * item..(b + 1) * item]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.needs(inputs);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_vec(t.shape(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Logistic function; outputs stay strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let out = Tensor::from_vec(t.shape(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        congruent(self.shape(a), self.shape(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Unnormalized sum of squared differences against a fixed target.
    pub fn sum_squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        congruent(self.shape(pred), target.shape())?;
        let total = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SquaredError {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Per-channel binary cross entropy, averaged over the pixels of each
    /// image and summed over the batch. Output shape is `1 x C x 1 x 1`.
    /// Predictions are clamped to `[eps, 1 - eps]`; `mask` must be 0/1.
    pub fn bce_per_channel(&mut self, attn: Var, mask: &Tensor, eps: f64) -> Result<Var> {
        let s = self.shape(attn);
        congruent(s, mask.shape())?;
        if let Some(bad) = mask.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Config(format!("mask value {bad} is not binary")));
        }
        let r = self.value(attn).data();
        let mut per_channel = vec![0.0; s.channels];
        for b in 0..s.batch {
            for (c, acc) in per_channel.iter_mut().enumerate() {
                let start = (b * s.channels + c) * s.plane();
                let mut sum = 0.0;
                for (&rv, &tv) in r[start..start + s.plane()].iter().zip(&mask.data()[start..start + s.plane()]) {
                    let rv = rv.clamp(eps, 1.0 - eps);
                    sum -= tv * rv.ln() + (1.0 - tv) * (1.0 - rv).ln();
                }
                *acc += sum / s.plane() as f64;
            }
        }
        let out = Tensor::from_vec(Shape::vector(s.channels), per_channel)?;
        let rg = self.needs(&[attn]);
        Ok(self.push(
            out,
            Op::Bce {
                attn,
                mask: mask.clone(),
                eps,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node. Replaces any gradients left by a
    /// previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s.numel() != 1 {
            return Err(Error::shape("batch", format!("backward needs a scalar, got {s}")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for (input, delta) in self.local_grads(node, &g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], delta);
                }
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad { g } else { None };
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node with respect to each of its inputs.
    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(*x), val(*w), spec, g, node.value.shape(), rg(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; val(*x).shape().numel()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
                vec![(*x, dx)]
            }
            Op::Upsample { x, scale } => {
                vec![(*x, kernels::upsample_backward(val(*x).shape(), *scale, g))]
            }
            Op::Concat(inputs) => {
                let s = node.value.shape();
                let mut out: Vec<(Var, Vec<f64>)> = inputs
                    .iter()
                    .map(|&v| (v, Vec::with_capacity(val(v).shape().numel())))
                    .collect();
                let mut offset = 0;
                for _ in 0..s.batch {
                    for (v, buf) in out.iter_mut() {
                        let len = val(*v).shape().channels * s.plane();
                        buf.extend_from_slice(&g[offset..offset + len]);
                        offset += len;
                    }
                }
                out
            }
            Op::Relu(x) => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                vec![(*x, dx)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                let da = tb.iter().zip(g).map(|(y, gv)| y * gv).collect();
                let db = ta.iter().zip(g).map(|(x, gv)| x * gv).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).shape().numel()])],
            Op::SquaredError { pred, target } => {
                let dp = val(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| 2.0 * (p - t) * g[0])
                    .collect();
                vec![(*pred, dp)]
            }
            Op::Bce { attn, mask, eps } => {
                let t = val(*attn);
                let s = t.shape();
                let norm = s.plane() as f64;
                let mut dr = vec![0.0; s.numel()];
                for (i, d) in dr.iter_mut().enumerate() {
                    let c = (i / s.plane()) % s.channels;
                    let (r, tv) = (t.data()[i], mask.data()[i]);
                    if r > *eps && r < 1.0 - eps {
                        *d = g[c] * (-tv / r + (1.0 - tv) / (1.0 - r)) / norm;
                    }
                }
                vec![(*attn, dr)]
            }
        }
    }
}
