//! Training, evaluation, density export and the ablation sweep.

mod ablation;
pub mod config;
mod eval;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use ablation::{ablation_sweep, ablation_table, AblationRun};
pub use config::{DataConfig, RunConfig, OUTPUT_ROOT_ENV};
pub use eval::{
    evaluate, evaluate_checkpoint, evaluate_oracle, export_density, pad_to_stride, ExportSummary, MODEL_STRIDE,
};

use crate::data::{augment, flip_augment, synth::derive_seed, synth_dataset, Manifest, Sample};
use crate::error::{Error, Result};
use crate::groundtruth::{render_density_maps, render_pseudo_masks, DensityConfig, MaskConfig};
use crate::loss::{total_loss, LossReport};
use crate::metrics::MetricsReport;
use crate::model::{write_checkpoint, Checkpoint};
use crate::model::Model;
use crate::tensor::{AdamState, Graph, Tensor};

// stream ids mixed into the run seed
const MODEL_STREAM: u64 = 0x6d6f_6465_6c00_0000;
const VAL_STREAM: u64 = 0x7661_6c00_0000_0000;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const METRICS_FILE: &str = "metrics.txt";

/// Ground-truth density stack and pseudo-masks for one annotation set, both
/// `1 x N x H/4 x W/4` at the default output scale.
pub fn build_targets(sample: &Sample, density: &DensityConfig, mask: &MaskConfig) -> Result<(Tensor, Tensor)> {
    let d = render_density_maps(&sample.annotations, density)?;
    let m = render_pseudo_masks(&sample.annotations, mask, density.output_scale)?;
    Ok((d, m))
}

/// Objective and parameter gradients for one image.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: LossReport,
    /// One buffer per parameter, in parameter-list order.
    pub grads: Vec<Vec<f64>>,
}

pub fn sample_gradient(model: &Model, image: &Tensor, density: &Tensor, masks: &Tensor) -> Result<SampleGrad> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let x = g.constant(image.clone());
    let out = model.forward(&mut g, &p, x)?;
    let lv = total_loss(&mut g, &out, density, masks)?;
    let loss = lv.report(&g);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", loss.total)));
    }
    g.backward(lv.total)?;
    let grads = p
        .0
        .iter()
        .zip(model.params())
        .map(|(&v, param)| g.take_grad(v).unwrap_or_else(|| vec![0.0; param.value.shape().numel()]))
        .collect();
    Ok(SampleGrad { loss, grads })
}

/// Maps `f` over `items` on scoped worker threads; results come back in input
/// order regardless of scheduling.
pub(crate) fn ordered_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<U>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Hex SHA-256 prefix over the batch's pixels and annotation points.
pub fn batch_digest(batch: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in batch {
        h.update(s.image.shape().to_string().as_bytes());
        for v in s.image.data() {
            h.update(v.to_le_bytes());
        }
        for (k, pts) in s.annotations.classes.iter().enumerate() {
            h.update((k as u64).to_le_bytes());
            for p in pts {
                h.update(p.x.to_le_bytes());
                h.update(p.y.to_le_bytes());
            }
        }
    }
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The augmented batch for `step`. Depends only on the run seed, the step and
/// the training set, never on the model, so runs that differ only in model
/// configuration see identical batches.
pub fn sample_batch(cfg: &RunConfig, train: &[Sample], step: usize) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step as u64));
    (0..cfg.batch_size)
        .map(|_| {
            let s = &train[rng.random_range(0..train.len())];
            match cfg.crop {
                Some(crop) => augment(s, crop, cfg.flip_prob, &mut rng),
                None if rng.random_bool(cfg.flip_prob) => Ok(flip_augment(s)),
                None => Ok(s.clone()),
            }
        })
        .collect()
}

/// Training and validation samples named by the config: manifests when given,
/// otherwise freshly synthesized scenes.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let n = cfg.model.num_classes;
    let map = cfg.data.class_map();
    if let Some(train) = &cfg.data.train_manifest {
        let train_set = Manifest::read(train)?.load_samples(n, map.as_ref())?;
        let val_set = match &cfg.data.val_manifest {
            Some(p) => Manifest::read(p)?.load_samples(n, map.as_ref())?,
            None => Vec::new(),
        };
        if train_set.is_empty() {
            return Err(Error::Config(format!("{}: empty manifest", train.display())));
        }
        return Ok((train_set, val_set));
    }
    let seed = cfg.data.scene_seed.unwrap_or(cfg.seed);
    let train_set = synth_dataset(&cfg.scene, seed, cfg.data.train_scenes)?;
    let val_set = synth_dataset(&cfg.scene, seed ^ VAL_STREAM, cfg.data.val_scenes)?;
    Ok((train_set, val_set))
}

pub fn model_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, MODEL_STREAM)
}

/// One row of the training log. Everything here is reproducible under the
/// run seed; wall time is kept apart in `TrainOutcome::wall_seconds`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Batch mean of each loss component.
    pub loss: LossReport,
    pub batch_digest: String,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Cumulative wall time after each step.
    pub wall_seconds: Vec<f64>,
    /// `(step, metrics)` for every evaluation on the validation split.
    pub evals: Vec<(usize, MetricsReport)>,
}

fn log_header(n: usize) -> String {
    let bce: String = (0..n).map(|k| format!(",bce_class_{k}")).collect();
    format!("step,l2_intermediate,l2_final{bce},total,batch_digest\n")
}

fn log_line(row: &LogRow, n: usize) -> String {
    let l = &row.loss;
    let mut s = format!("{},{},{}", row.step, l.l2_intermediate, l.l2_final);
    for k in 0..n {
        let _ = write!(s, ",{}", l.bce_per_class.get(k).copied().unwrap_or(0.0));
    }
    let _ = writeln!(s, ",{},{}", l.total, row.batch_digest);
    s
}

/// Appends to a file created fresh at the start of the run.
struct RunFile {
    path: PathBuf,
    text: String,
}

impl RunFile {
    fn new(dir: &Path, name: &str, header: String) -> Self {
        RunFile {
            path: dir.join(name),
            text: header,
        }
    }

    fn push(&mut self, line: &str) -> Result<()> {
        self.text.push_str(line);
        fs::write(&self.path, &self.text).map_err(|e| Error::io(&self.path, e))
    }
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let classes = reports[0].bce_per_class.len();
    let mean = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport {
        l2_intermediate: mean(&|r| r.l2_intermediate),
        l2_final: mean(&|r| r.l2_final),
        bce_per_class: (0..classes).map(|k| mean(&|r| r.bce_per_class[k])).collect(),
        total: mean(&|r| r.total),
    }
}

fn snapshot(model: &Model, cfg: &RunConfig, opt: &AdamState) -> Result<Checkpoint> {
    Ok(Checkpoint {
        model: Model::from_params(model.config().clone(), model.params().to_vec())?,
        density: cfg.density.clone(),
        mask: cfg.mask,
        optimizer: Some(opt.clone()),
    })
}

/// Runs `cfg.steps` optimizer steps. With `out_dir`, writes the config, the
/// training and timing logs, evaluation log, metrics and checkpoint there.
///
/// A non-finite loss or gradient aborts the run with `Error::NonFinite`; the
/// checkpoint on disk then holds the parameters from before the failing step.
pub fn train(cfg: &RunConfig, train_set: &[Sample], val_set: &[Sample], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n = cfg.model.num_classes;
    for s in train_set.iter().chain(val_set) {
        if s.annotations.num_classes() != n {
            return Err(Error::ClassMismatch {
                model: n,
                data: s.annotations.num_classes(),
            });
        }
    }
    let model = Model::new(cfg.model.clone(), model_seed(cfg.seed))?;
    train_from(cfg, model, None, train_set, val_set, out_dir)
}

/// `train` starting from given parameters and optional optimizer state.
pub fn train_from(
    cfg: &RunConfig,
    mut model: Model,
    optimizer: Option<AdamState>,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let n = cfg.model.num_classes;
    let mut opt = optimizer.unwrap_or_else(|| AdamState::new(cfg.optimizer, model.params().iter().map(|p| &p.value)));
    let mut files = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.toml");
            fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            let eval_header = format!(
                "step,mae_mean,mse_mean{}\n",
                (0..n).map(|k| format!(",mae_class_{k},mse_class_{k}")).collect::<String>()
            );
            Some((
                RunFile::new(dir, TRAIN_LOG_FILE, log_header(n)),
                RunFile::new(dir, TIMING_FILE, "step,wall_seconds\n".into()),
                RunFile::new(dir, EVAL_LOG_FILE, eval_header),
            ))
        }
        None => None,
    };
    let ckpt_path = out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let save = |model: &Model, opt: &AdamState| -> Result<()> {
        match &ckpt_path {
            Some(p) => write_checkpoint(p, &snapshot(model, cfg, opt)?),
            None => Ok(()),
        }
    };

    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut wall = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    for step in 1..=cfg.steps {
        let batch = sample_batch(cfg, train_set, step)?;
        let digest = batch_digest(&batch);
        let results = ordered_map(&batch, |s| {
            let (d, m) = build_targets(s, &cfg.density, &cfg.mask)?;
            sample_gradient(&model, &s.image, &d, &m)
        });
        let mut reports = Vec::with_capacity(batch.len());
        let mut grads: Option<Vec<Vec<f64>>> = None;
        for r in results {
            let sg = match r {
                Err(e @ Error::NonFinite(_)) => {
                    save(&model, &opt)?;
                    return Err(Error::NonFinite(format!("step {step}: {e}")));
                }
                other => other?,
            };
            reports.push(sg.loss);
            match &mut grads {
                None => grads = Some(sg.grads),
                Some(acc) => acc
                    .iter_mut()
                    .zip(&sg.grads)
                    .for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, g)| *a += g)),
            }
        }
        let mut grads = grads.expect("batch is nonempty");
        let scale = 1.0 / batch.len() as f64;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);

        let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().map(|p| &mut p.value).collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        if let Err(e) = opt.step(&mut params, &grad_refs) {
            save(&model, &opt)?;
            return Err(match e {
                Error::NonFinite(d) => Error::NonFinite(format!("step {step}: {d}")),
                e => e,
            });
        }

        let row = LogRow {
            step,
            loss: mean_report(&reports),
            batch_digest: digest,
        };
        let secs = start.elapsed().as_secs_f64();
        if let Some((train_log, timing, _)) = &mut files {
            train_log.push(&log_line(&row, n))?;
            timing.push(&format!("{step},{secs:.3}\n"))?;
        }
        log.push(row);
        wall.push(secs);

        let at_interval = cfg.eval_interval > 0 && step % cfg.eval_interval == 0;
        if at_interval || step == cfg.steps {
            if !val_set.is_empty() {
                let report = evaluate(&model, val_set)?;
                if let Some((_, _, eval_log)) = &mut files {
                    let mut line = format!("{step},{},{}", report.mae_mean, report.mse_mean);
                    for k in 0..n {
                        let _ = write!(line, ",{},{}", report.mae_per_class[k], report.mse_per_class[k]);
                    }
                    line.push('\n');
                    eval_log.push(&line)?;
                }
                if step == cfg.steps {
                    if let Some(dir) = out_dir {
                        let p = dir.join(METRICS_FILE);
                        fs::write(&p, report.to_text()).map_err(|e| Error::io(&p, e))?;
                    }
                }
                evals.push((step, report));
            }
            save(&model, &opt)?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&model, cfg, &opt)?,
        log,
        wall_seconds: wall,
        evals,
    })
}

/// Parses a training log written by `train` back into rows.
pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let classes = header.split(',').filter(|c| c.starts_with("bce_class_")).count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let err = |detail: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: detail.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != classes + 5 {
            return Err(err("wrong field count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| err("bad step"))?,
            loss: LossReport {
                l2_intermediate: num(f[1])?,
                l2_final: num(f[2])?,
                bce_per_class: f[3..3 + classes].iter().map(|s| num(s)).collect::<Result<_>>()?,
                total: num(f[3 + classes])?,
            },
            batch_digest: f[4 + classes].to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneConfig;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            steps: 2,
            batch_size: 2,
            eval_interval: 0,
            crop: Some((64, 64)),
            scene: SceneConfig {
                height: 64,
                width: 64,
                ..Default::default()
            },
            data: DataConfig {
                train_scenes: 3,
                val_scenes: 2,
                ..Default::default()
            },
            model: crate::model::ModelConfig {
                width_multiplier: 0.125,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn batches_ignore_model_config() {
        let cfg = tiny_cfg();
        let (train_set, _) = load_data(&cfg).unwrap();
        let mut other = cfg.clone();
        other.model.use_cam = false;
        for step in 1..4 {
            let a = batch_digest(&sample_batch(&cfg, &train_set, step).unwrap());
            let b = batch_digest(&sample_batch(&other, &train_set, step).unwrap());
            assert_eq!(a, b);
        }
        assert_ne!(
            batch_digest(&sample_batch(&cfg, &train_set, 1).unwrap()),
            batch_digest(&sample_batch(&cfg, &train_set, 2).unwrap())
        );
    }

    #[test]
    fn ordered_map_keeps_order() {
        let xs: Vec<usize> = (0..37).collect();
        assert_eq!(ordered_map(&xs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn log_round_trips() {
        let cfg = tiny_cfg();
        let (train_set, val_set) = load_data(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &train_set, &val_set, Some(dir.path())).unwrap();
        let back = read_train_log(&dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(back, out.log);
        assert_eq!(out.evals.len(), 1);
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
        assert!(dir.path().join(METRICS_FILE).exists());
    }

    #[test]
    fn gradient_of_batch_mean_matches_single_sample() {
        let cfg = tiny_cfg();
        let (train_set, _) = load_data(&cfg).unwrap();
        let model = Model::new(cfg.model.clone(), 1).unwrap();
        let s = &train_set[0];
        let (d, m) = build_targets(s, &cfg.density, &cfg.mask).unwrap();
        let a = sample_gradient(&model, &s.image, &d, &m).unwrap();
        let b = sample_gradient(&model, &s.image, &d, &m).unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.grads.len(), model.params().len());
        assert!((a.loss.total - a.loss.component_sum()).abs() < 1e-12 * a.loss.total.abs().max(1.0));
    }
}
