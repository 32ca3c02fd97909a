//! Overfits a handful of small scenes and prints the loss trace, with both
//! L2 terms and the per-class cross entropies.
//!
//! cargo run --release --example overfit -- [steps]

use multicount::train::{load_data, train, RunConfig};
use multicount::Result;

fn main() -> Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let mut cfg = RunConfig {
        steps,
        batch_size: 2,
        eval_interval: 0,
        crop: None,
        flip_prob: 0.0,
        ..Default::default()
    };
    cfg.scene.height = 64;
    cfg.scene.width = 64;
    cfg.optimizer.learning_rate = 5e-4;
    cfg.data.train_scenes = 4;
    cfg.data.val_scenes = 0;

    let (scenes, _) = load_data(&cfg)?;
    let out = train(&cfg, &scenes, &[], None)?;
    println!("step   l2_int   l2_final  bce_c0   bce_c1   total");
    for r in out.log.iter().filter(|r| r.step == 1 || r.step % 10 == 0) {
        let l = &r.loss;
        println!(
            "{:>4} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
            r.step, l.l2_intermediate, l.l2_final, l.bce_per_class[0], l.bce_per_class[1], l.total
        );
    }
    println!("{:.1}s", out.wall_seconds.last().copied().unwrap_or_default());
    Ok(())
}
