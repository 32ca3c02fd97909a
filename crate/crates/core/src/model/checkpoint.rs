//! Checkpoint file: one text header line, then raw little-endian `f64`
//! buffers.
//!
//! ```text
//! MCCKPT version=1 num_classes=2 ... params=backbone.stage1.conv1.weight:16x3x3x3,...\n
//! <parameter buffers in manifest order>
//! <Adam first moments, then second moments, in manifest order; only if adam_step is present>
//! ```
//!
//! Header values are written with Rust's shortest round-trip float
//! formatting, so a load reproduces every field bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, Param};
use crate::error::{Error, Result};
use crate::groundtruth::{DensityConfig, MaskConfig};
use crate::tensor::{AdamConfig, AdamState, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &str = "MCCKPT";
const VERSION: u32 = 2;

/// Everything needed to resume training or evaluate: the model, the target
/// construction it was trained against, and optionally optimizer state.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub density: DensityConfig,
    pub mask: MaskConfig,
    pub optimizer: Option<AdamState>,
}

fn join<T: ToString>(vals: &[T]) -> String {
    vals.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn header(ckpt: &Checkpoint) -> String {
    let m = ckpt.model.config();
    let mut fields = vec![
        CHECKPOINT_MAGIC.to_string(),
        format!("version={VERSION}"),
        format!("num_classes={}", m.num_classes),
        format!("width_multiplier={}", m.width_multiplier),
        format!("use_dsam={}", m.use_dsam),
        format!("use_cam={}", m.use_cam),
        format!("init_std={}", m.init_std),
        format!("backbone_init={}", m.backbone_init),
        format!("head_bias={}", m.head_bias),
        format!("sigma_per_class={}", join(&ckpt.density.sigma_per_class)),
        format!("truncation={}", ckpt.density.truncation),
        format!("renormalize_blobs={}", ckpt.density.renormalize_blobs),
        format!("output_scale={}", ckpt.density.output_scale),
        format!("threshold_j={}", ckpt.mask.threshold_j),
    ];
    if let Some(opt) = &ckpt.optimizer {
        fields.push(format!("adam_step={}", opt.step));
        fields.push(format!("adam_learning_rate={}", opt.config.learning_rate));
        fields.push(format!("adam_beta1={}", opt.config.beta1));
        fields.push(format!("adam_beta2={}", opt.config.beta2));
        fields.push(format!("adam_epsilon={}", opt.config.epsilon));
    }
    let manifest: Vec<String> = ckpt
        .model
        .params()
        .iter()
        .map(|p| format!("{}:{}", p.name, p.value.shape()))
        .collect();
    fields.push(format!("params={}", manifest.join(",")));
    fields.join(" ")
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = header(ckpt).into_bytes();
    buf.push(b'\n');
    for p in ckpt.model.params() {
        push_f64s(&mut buf, p.value.data());
    }
    if let Some(opt) = &ckpt.optimizer {
        for m in opt.first_moment.iter().chain(&opt.second_moment) {
            push_f64s(&mut buf, m);
        }
    }
    // write-then-rename so an interrupted save never clobbers a good file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8".into()))?;
    let mut tokens = line.split(' ');
    if tokens.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let kv: BTreeMap<&str, &str> = tokens
        .map(|t| t.split_once('=').ok_or_else(|| bad(format!("malformed field {t:?}"))))
        .collect::<Result<_>>()?;
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing field {k}")));
    fn num<T: std::str::FromStr>(v: &str, key: &str, path: &Path) -> Result<T> {
        v.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            detail: format!("bad value {v:?} for {key}"),
        })
    }
    let field = |k: &str| get(k).and_then(|v| num::<f64>(v, k, path));
    let flag = |k: &str| get(k).and_then(|v| num::<bool>(v, k, path));

    let version: u32 = num(get("version")?, "version", path)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        num_classes: num(get("num_classes")?, "num_classes", path)?,
        width_multiplier: field("width_multiplier")?,
        use_dsam: flag("use_dsam")?,
        use_cam: flag("use_cam")?,
        init_std: field("init_std")?,
        backbone_init: get("backbone_init")?.parse().map_err(bad)?,
        head_bias: field("head_bias")?,
    };
    let density = DensityConfig {
        sigma_per_class: get("sigma_per_class")?
            .split(',')
            .map(|v| num(v, "sigma_per_class", path))
            .collect::<Result<_>>()?,
        truncation: field("truncation")?,
        renormalize_blobs: flag("renormalize_blobs")?,
        output_scale: field("output_scale")?,
    };
    let mask = MaskConfig {
        threshold_j: field("threshold_j")?,
    };

    let manifest: Vec<(String, Shape)> = get("params")?
        .split(',')
        .map(|entry| {
            let (name, shape) = entry
                .rsplit_once(':')
                .ok_or_else(|| bad(format!("bad manifest entry {entry:?}")))?;
            Ok((name.to_string(), shape.parse().map_err(bad)?))
        })
        .collect::<Result<_>>()?;

    let mut body = &bytes[nl + 1..];
    let mut take = |n: usize| -> Result<Vec<f64>> {
        if body.len() < n * 8 {
            return Err(bad("payload truncated".into()));
        }
        let (head, rest) = body.split_at(n * 8);
        body = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let params = manifest
        .iter()
        .map(|(name, shape)| {
            Ok(Param {
                name: name.clone(),
                value: Tensor::from_vec(*shape, take(shape.numel())?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let optimizer = match kv.get("adam_step") {
        None => None,
        Some(step) => {
            let cfg = AdamConfig {
                learning_rate: field("adam_learning_rate")?,
                beta1: field("adam_beta1")?,
                beta2: field("adam_beta2")?,
                epsilon: field("adam_epsilon")?,
            };
            let mut moments = Vec::with_capacity(2 * manifest.len());
            for _ in 0..2 {
                for (_, shape) in &manifest {
                    moments.push(take(shape.numel())?);
                }
            }
            let second_moment = moments.split_off(manifest.len());
            Some(AdamState {
                config: cfg,
                step: num(step, "adam_step", path)?,
                first_moment: moments,
                second_moment,
            })
        }
    };
    if !body.is_empty() {
        return Err(bad(format!("{} trailing bytes", body.len())));
    }

    let model = Model::from_params(config, params)?;
    Ok(Checkpoint {
        model,
        density,
        mask,
        optimizer,
    })
}
