//! Trains briefly, saves a checkpoint, and exports predicted density and
//! attention maps for one validation image.
//!
//! cargo run --release --example export_density -- [out_dir]

use std::path::PathBuf;

use multicount::data::write_pixmap;
use multicount::train::{export_density, load_data, train, RunConfig, CHECKPOINT_FILE};
use multicount::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "export_demo".into()));
    let mut cfg = RunConfig {
        steps: 40,
        batch_size: 2,
        crop: Some((64, 64)),
        eval_interval: 0,
        ..Default::default()
    };
    cfg.model.width_multiplier = 0.125;
    cfg.optimizer.learning_rate = 1e-3;
    cfg.data.train_scenes = 8;
    cfg.data.val_scenes = 1;

    let (tr, va) = load_data(&cfg)?;
    train(&cfg, &tr, &va, Some(&out.join("run")))?;
    let image = out.join("val.ppm");
    write_pixmap(&image, &va[0].image)?;
    let summary = export_density(&out.join("run").join(CHECKPOINT_FILE), &image, &out.join("maps"))?;
    for (k, c) in summary.counts.iter().enumerate() {
        println!("class {k}: predicted {c:.3}, annotated {}", va[0].annotations.classes[k].len());
    }
    for p in summary.density_grids.iter().chain(&summary.attention_grids) {
        println!("{}", p.display());
    }
    Ok(())
}
