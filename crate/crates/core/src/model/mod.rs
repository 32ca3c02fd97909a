//! The counting network.
//!
//! ```text
//! image ─ backbone ─┬ f3 (1/4) ─┐
//!                   ├ f4 (1/8) ─┼ DSAM ─ backend ─ intermediate density ─┐
//!                   └ f5 (1/8) ─┴─────── CAM ── attention (sigmoid) ─────┴ ⊙ ─ final density
//! ```
//!
//! The backbone is the first thirteen VGG-16 convolutions with every channel
//! count scaled by `width_multiplier`, and without the pool between stages 4
//! and 5. All heads emit at 1/4 of the input resolution. With DSAM disabled
//! the backend reads `f5` upsampled by two; with CAM disabled the final
//! density is the intermediate one.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Graph, Shape, Tensor, Var};

/// VGG-16 stage widths and convolution counts.
const VGG_STAGES: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
pub const DSAM_RATES: [usize; 3] = [2, 3, 5];
pub const CAM_RATES: [usize; 4] = [1, 2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneInit {
    /// `N(0, 2 / fan_in)`, standing in for pretrained weights.
    He,
    /// The same `N(0, init_std^2)` as every other layer.
    Gaussian,
}

impl std::str::FromStr for BackboneInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "he" => Ok(BackboneInit::He),
            "gaussian" => Ok(BackboneInit::Gaussian),
            _ => Err(format!("unknown backbone init {s:?}")),
        }
    }
}

impl std::fmt::Display for BackboneInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneInit::He => "he",
            BackboneInit::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub width_multiplier: f64,
    pub use_dsam: bool,
    pub use_cam: bool,
    /// Standard deviation of the Gaussian used for non-backbone weights.
    pub init_std: f64,
    pub backbone_init: BackboneInit,
    /// Initial bias of the density head, keeping every class channel above
    /// the final relu at the start of training.
    pub head_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 2,
            width_multiplier: 0.25,
            use_dsam: true,
            use_cam: true,
            init_std: 0.01,
            backbone_init: BackboneInit::He,
            head_bias: 0.01,
        }
    }
}

/// The four ablation variants, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    WithDsam,
    WithCam,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::WithDsam, Ablation::WithCam, Ablation::Full];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::WithDsam => "baseline+DSAM",
            Ablation::WithCam => "baseline+CAM",
            Ablation::Full => "baseline+DSAM+CAM",
        }
    }

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let (use_dsam, use_cam) = match self {
            Ablation::Baseline => (false, false),
            Ablation::WithDsam => (true, false),
            Ablation::WithCam => (false, true),
            Ablation::Full => (true, true),
        };
        ModelConfig {
            use_dsam,
            use_cam,
            ..cfg.clone()
        }
    }
}

impl ModelConfig {
    /// A VGG-relative channel count under the width multiplier (at least 1).
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "width_multiplier {} not in (0, 1]",
                self.width_multiplier
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} must be positive", self.init_std)));
        }
        if !(self.head_bias >= 0.0 && self.head_bias.is_finite()) {
            return Err(Error::Config(format!("head_bias {} must be nonnegative", self.head_bias)));
        }
        Ok(())
    }
}

/// A named learned tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// One convolution and where its weight and bias live in the parameter list.
#[derive(Clone, Copy, Debug)]
struct Layer {
    weight: usize,
    bias: usize,
    spec: ConvSpec,
}

#[derive(Debug)]
struct Dsam {
    branches: [Layer; 3],
    fuse: Layer,
}

#[derive(Debug)]
struct Cam {
    branches: [Layer; 4],
    fuse: [Layer; 2],
    head: Layer,
}

#[derive(Debug)]
struct Layout {
    stages: Vec<Vec<Layer>>,
    dsam: Option<Dsam>,
    cam: Option<Cam>,
    backend: [Layer; 2],
    head: Layer,
}

/// Collects parameter shapes in creation order.
struct Builder {
    shapes: Vec<(String, Shape, bool)>,
}

impl Builder {
    fn conv(&mut self, name: &str, spec: ConvSpec, backbone: bool) -> Layer {
        let weight = self.shapes.len();
        self.shapes.push((format!("{name}.weight"), spec.weight_shape(), backbone));
        self.shapes.push((format!("{name}.bias"), Shape::vector(spec.out_channels), backbone));
        Layer {
            weight,
            bias: weight + 1,
            spec,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, Shape, bool)>) {
    let mut b = Builder { shapes: Vec::new() };
    let mut stages = Vec::new();
    let mut in_ch = 3;
    for (si, &(width, count)) in VGG_STAGES.iter().enumerate() {
        let out_ch = cfg.scaled(width);
        let layers = (0..count)
            .map(|li| {
                let l = b.conv(
                    &format!("backbone.stage{}.conv{}", si + 1, li + 1),
                    ConvSpec::same(in_ch, out_ch, 3),
                    true,
                );
                in_ch = out_ch;
                l
            })
            .collect();
        stages.push(layers);
    }
    let (c3, c4, c5) = (cfg.scaled(256), cfg.scaled(512), cfg.scaled(512));

    let dsam = cfg.use_dsam.then(|| {
        let w = cfg.scaled(128);
        let branches = [(c3, DSAM_RATES[0]), (c4, DSAM_RATES[1]), (c5, DSAM_RATES[2])]
            .map(|(c, rate)| b.conv(&format!("dsam.branch_d{rate}"), ConvSpec::dilated3(c, w, rate), false));
        let fuse = b.conv("dsam.fuse", ConvSpec::same(3 * w, cfg.scaled(256), 3), false);
        Dsam { branches, fuse }
    });

    let cam = cfg.use_cam.then(|| {
        let w = cfg.scaled(64);
        let branches =
            CAM_RATES.map(|rate| b.conv(&format!("cam.branch_d{rate}"), ConvSpec::dilated3(c5, w, rate), false));
        let f1 = b.conv("cam.fuse1", ConvSpec::same(4 * w, cfg.scaled(128), 3), false);
        let f2 = b.conv("cam.fuse2", ConvSpec::same(cfg.scaled(128), cfg.scaled(64), 3), false);
        let head = b.conv("cam.head", ConvSpec::same(cfg.scaled(64), cfg.num_classes, 1), false);
        Cam {
            branches,
            fuse: [f1, f2],
            head,
        }
    });

    let backend_in = if cfg.use_dsam { cfg.scaled(256) } else { c5 };
    let b1 = b.conv("backend.conv1", ConvSpec::same(backend_in, cfg.scaled(128), 3), false);
    let b2 = b.conv("backend.conv2", ConvSpec::same(cfg.scaled(128), cfg.scaled(64), 3), false);
    let head = b.conv("backend.head", ConvSpec::same(cfg.scaled(64), cfg.num_classes, 1), false);

    (
        Layout {
            stages,
            dsam,
            cam,
            backend: [b1, b2],
            head,
        },
        b.shapes,
    )
}

/// Backbone taps. `f3` is at 1/4 of the input resolution, `f4` and `f5`
/// at 1/8.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f3: Var,
    pub f4: Var,
    pub f5: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub intermediate: Var,
    /// Present only when CAM is enabled.
    pub attention: Option<Var>,
    pub final_density: Var,
}

/// Graph handles for every parameter, in parameter-list order.
#[derive(Clone, Debug)]
pub struct BoundParams(pub Vec<Var>);

/// Materialized outputs of a forward pass (`1 x N x H/4 x W/4` each).
#[derive(Clone, Debug)]
pub struct Prediction {
    pub intermediate: Tensor,
    pub attention: Option<Tensor>,
    pub final_density: Tensor,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

impl Model {
    /// Fresh parameters: biases zero except the density head's
    /// (`cfg.head_bias`), backbone weights per
    /// `cfg.backbone_init`, all other weights `N(0, init_std^2)`.
    /// Deterministic under `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (layout, shapes) = build_layout(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .into_iter()
            .map(|(name, shape, backbone)| {
                let value = if name == "backend.head.bias" {
                    Tensor::full(shape, cfg.head_bias)
                } else if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    let std = match (backbone, cfg.backbone_init) {
                        (true, BackboneInit::He) => {
                            (2.0 / (shape.channels * shape.height * shape.width) as f64).sqrt()
                        }
                        _ => cfg.init_std,
                    };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let data = (0..shape.numel()).map(|_| normal.sample(&mut rng)).collect();
                    Tensor::from_vec(shape, data).expect("sized")
                };
                Param { name, value }
            })
            .collect();
        Ok(Model {
            config: cfg,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against the architecture implied by `cfg`.
    pub fn from_params(cfg: ModelConfig, params: Vec<Param>) -> Result<Self> {
        cfg.validate()?;
        let (layout, shapes) = build_layout(&cfg);
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in shapes.iter().zip(&params) {
            if *name != p.name || *shape != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {} does not match expected {} {}",
                    p.name,
                    p.value.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(Model {
            config: cfg,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Output channel count of backbone stage `stage` (1-based).
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.layout.stages[stage - 1].last().expect("non-empty").spec.out_channels
    }

    /// Effective kernel extents of the DSAM branches, if enabled.
    pub fn dsam_effective_kernels(&self) -> Option<[usize; 3]> {
        self.layout
            .dsam
            .as_ref()
            .map(|d| d.branches.map(|l| l.spec.effective_kernel()))
    }

    /// Inserts every parameter into `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| {
                    if trainable {
                        g.param(p.value.clone())
                    } else {
                        g.constant(p.value.clone())
                    }
                })
                .collect(),
        )
    }

    fn conv(&self, g: &mut Graph, p: &BoundParams, x: Var, layer: &Layer, relu: bool) -> Result<Var> {
        let y = g.conv2d(x, p.0[layer.weight], p.0[layer.bias], layer.spec)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    pub fn backbone_forward(&self, g: &mut Graph, p: &BoundParams, image: Var) -> Result<FeaturePyramid> {
        let s = g.shape(image);
        if s.channels != 3 {
            return Err(Error::shape("channel", format!("image has {} channels, expected 3", s.channels)));
        }
        if !s.height.is_multiple_of(8) {
            return Err(Error::shape("height", format!("{} not divisible by 8", s.height)));
        }
        if !s.width.is_multiple_of(8) {
            return Err(Error::shape("width", format!("{} not divisible by 8", s.width)));
        }
        let mut x = image;
        let mut taps = Vec::with_capacity(3);
        for (si, stage) in self.layout.stages.iter().enumerate() {
            for layer in stage {
                x = self.conv(g, p, x, layer, true)?;
            }
            if si >= 2 {
                taps.push(x);
            }
            // pools follow stages 1-3 only
            if si < 3 {
                x = g.max_pool2d(x)?;
            }
        }
        Ok(FeaturePyramid {
            f3: taps[0],
            f4: taps[1],
            f5: taps[2],
        })
    }

    /// Dilated branches on f3/f4/f5, upsample to f3 resolution, concat, fuse.
    pub fn dsam_forward(&self, g: &mut Graph, p: &BoundParams, pyr: &FeaturePyramid) -> Result<Var> {
        let dsam = self
            .layout
            .dsam
            .as_ref()
            .ok_or_else(|| Error::Config("DSAM disabled in this model".into()))?;
        let (s3, s4, s5) = (g.shape(pyr.f3), g.shape(pyr.f4), g.shape(pyr.f5));
        if (s4.height, s4.width) != (s5.height, s5.width) {
            return Err(Error::shape("height", format!("f4 {s4} vs f5 {s5}")));
        }
        if (s3.height, s3.width) != (2 * s4.height, 2 * s4.width) {
            return Err(Error::shape("height", format!("f3 {s3} is not twice f4 {s4}")));
        }
        let b3 = self.conv(g, p, pyr.f3, &dsam.branches[0], true)?;
        let b4 = self.conv(g, p, pyr.f4, &dsam.branches[1], true)?;
        let b5 = self.conv(g, p, pyr.f5, &dsam.branches[2], true)?;
        let b4 = g.upsample_bilinear(b4, 2)?;
        let b5 = g.upsample_bilinear(b5, 2)?;
        let cat = g.concat_channels(&[b3, b4, b5])?;
        self.conv(g, p, cat, &dsam.fuse, true)
    }

    /// Per-class attention maps in (0, 1) at twice the resolution of `f5`.
    pub fn cam_forward(&self, g: &mut Graph, p: &BoundParams, f5: Var) -> Result<Var> {
        let cam = self
            .layout
            .cam
            .as_ref()
            .ok_or_else(|| Error::Config("CAM disabled in this model".into()))?;
        let branches = cam
            .branches
            .iter()
            .map(|l| self.conv(g, p, f5, l, true))
            .collect::<Result<Vec<_>>>()?;
        let mut x = g.concat_channels(&branches)?;
        for l in &cam.fuse {
            x = self.conv(g, p, x, l, true)?;
        }
        let logits = self.conv(g, p, x, &cam.head, false)?;
        let up = g.upsample_bilinear(logits, 2)?;
        Ok(g.sigmoid(up))
    }

    /// Two 3x3 convolutions, a 1x1 to N channels, and a final relu.
    pub fn backend_forward(&self, g: &mut Graph, p: &BoundParams, fused: Var) -> Result<Var> {
        let mut x = fused;
        for l in &self.layout.backend {
            x = self.conv(g, p, x, l, true)?;
        }
        self.conv(g, p, x, &self.layout.head, true)
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, image: Var) -> Result<ModelOutput> {
        let pyr = self.backbone_forward(g, p, image)?;
        let fused = if self.config.use_dsam {
            self.dsam_forward(g, p, &pyr)?
        } else {
            g.upsample_bilinear(pyr.f5, 2)?
        };
        let intermediate = self.backend_forward(g, p, fused)?;
        if self.config.use_cam {
            let attention = self.cam_forward(g, p, pyr.f5)?;
            let final_density = g.mul(intermediate, attention)?;
            Ok(ModelOutput {
                intermediate,
                attention: Some(attention),
                final_density,
            })
        } else {
            Ok(ModelOutput {
                intermediate,
                attention: None,
                final_density: intermediate,
            })
        }
    }

    /// Inference on one `B x 3 x H x W` image tensor without gradient tracking.
    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok(Prediction {
            intermediate: g.value(out.intermediate).clone(),
            attention: out.attention.map(|a| g.value(a).clone()),
            final_density: g.value(out.final_density).clone(),
        })
    }
}
