use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClassMap, SceneConfig};
use crate::error::{Error, Result};
use crate::groundtruth::{DensityConfig, MaskConfig};
use crate::model::ModelConfig;
use crate::tensor::AdamConfig;

/// Environment variable that, when set, re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MULTICOUNT_OUTPUT_ROOT";

/// Where training and validation images come from. Without manifests,
/// synthetic scenes are generated from the run's `scene` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// `[source_id, class]` pairs; ids not listed are dropped.
    pub class_map: Option<Vec<(usize, usize)>>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Seed for scene generation; defaults to the run seed.
    pub scene_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_manifest: None,
            val_manifest: None,
            class_map: None,
            train_scenes: 64,
            val_scenes: 16,
            scene_seed: None,
        }
    }
}

impl DataConfig {
    pub fn class_map(&self) -> Option<ClassMap> {
        self.class_map.as_ref().map(|pairs| ClassMap::new(pairs.iter().copied()))
    }
}

/// Everything a training run needs. On disk this is TOML with dotted keys,
/// e.g. `model.width_multiplier = 0.25`; every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Evaluate and checkpoint every this many steps (0: only at the end).
    pub eval_interval: usize,
    pub output_dir: PathBuf,
    /// Training crop `(height, width)`; `None` trains on whole images.
    pub crop: Option<(usize, usize)>,
    pub flip_prob: f64,
    pub model: ModelConfig,
    pub density: DensityConfig,
    pub mask: MaskConfig,
    pub optimizer: AdamConfig,
    pub scene: SceneConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            steps: 2000,
            batch_size: 4,
            eval_interval: 500,
            output_dir: PathBuf::from("runs/default"),
            crop: Some((128, 128)),
            flip_prob: 0.5,
            model: ModelConfig::default(),
            density: DensityConfig::default(),
            mask: MaskConfig::default(),
            optimizer: AdamConfig::default(),
            scene: SceneConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    /// Reads a config file; relative manifest paths resolve against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in [&mut cfg.data.train_manifest, &mut cfg.data.val_manifest].into_iter().flatten() {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} not in [0, 1]", self.flip_prob)));
        }
        self.model.validate()?;
        self.density.validate(self.model.num_classes)?;
        self.mask.validate()?;
        if self.data.train_manifest.is_none() {
            self.scene.validate()?;
            if self.scene.num_classes() != self.model.num_classes {
                return Err(Error::ClassMismatch {
                    model: self.model.num_classes,
                    data: self.scene.num_classes(),
                });
            }
            if self.data.train_scenes == 0 {
                return Err(Error::Config("train_scenes must be >= 1".into()));
            }
        }
        if let Some((h, w)) = self.crop {
            if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
                return Err(Error::Config(format!("crop {h}x{w} must be positive multiples of 8")));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0)
        {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        Ok(())
    }

    /// `output_dir`, re-rooted under `$MULTICOUNT_OUTPUT_ROOT` when that is
    /// set and the configured path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
