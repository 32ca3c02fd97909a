//! Synthesizes a few scenes, crops and flips them the way the trainer does,
//! and shows that counts and targets follow the geometry.

use multicount::data::{augment, flip_augment, synth_dataset, SceneConfig};
use multicount::groundtruth::{render_density_maps, DensityConfig};
use multicount::train::batch_digest;
use multicount::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let scenes = synth_dataset(&SceneConfig::default(), 3, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in &scenes {
        let crop = augment(s, (64, 64), 0.5, &mut rng)?;
        println!(
            "{}: counts {:?} -> 64x64 crop counts {:?}",
            s.annotations.image_id,
            s.annotations.counts(),
            crop.annotations.counts()
        );
    }

    let s = &scenes[0];
    let cfg = DensityConfig::default();
    let d = render_density_maps(&s.annotations, &cfg)?;
    let df = render_density_maps(&flip_augment(s).annotations, &cfg)?;
    let w = d.shape().width;
    let worst = (0..d.shape().height)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| (df.at(0, 0, y, x) - d.at(0, 0, y, w - 1 - x)).abs())
        .fold(0.0, f64::max);
    println!("flip(density) vs density(flip): max deviation {worst:e}");
    println!("double flip identical: {}", flip_augment(&flip_augment(s)) == *s);
    println!("batch digest of all scenes: {}", batch_digest(&scenes));
    Ok(())
}
