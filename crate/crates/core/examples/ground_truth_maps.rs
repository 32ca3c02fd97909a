//! Renders density maps and pseudo-masks for one synthetic scene and writes
//! them out as raw grids and graymaps.
//!
//! cargo run --example ground_truth_maps -- [out_dir]

use std::path::PathBuf;

use multicount::data::{synth_scene, write_pixmap, SceneConfig};
use multicount::groundtruth::export::{write_grid_stack, write_pgm};
use multicount::groundtruth::{render_density_maps, render_pseudo_masks, DensityConfig, MaskConfig};
use multicount::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gt_maps".into()));
    std::fs::create_dir_all(&out).map_err(|e| multicount::Error::io(&out, e))?;

    let scene = synth_scene(&SceneConfig::default(), 21, "scene")?;
    let density_cfg = DensityConfig::default();
    let density = render_density_maps(&scene.annotations, &density_cfg)?;
    let masks = render_pseudo_masks(&scene.annotations, &MaskConfig::default(), density_cfg.output_scale)?;
    let s = density.shape();

    write_pixmap(&out.join("scene.ppm"), &scene.image)?;
    write_grid_stack(&out.join("density.grid"), &density)?;
    write_grid_stack(&out.join("masks.grid"), &masks)?;
    for k in 0..s.channels {
        write_pgm(&out.join(format!("density_class{k}.pgm")), density.plane(0, k), s.height, s.width)?;
        write_pgm(&out.join(format!("mask_class{k}.pgm")), masks.plane(0, k), s.height, s.width)?;
        let sum: f64 = density.plane(0, k).iter().sum();
        let fg = masks.plane(0, k).iter().filter(|&&v| v == 1.0).count();
        println!(
            "class {k}: {} points, density sum {sum:.12}, mask foreground {fg}/{}",
            scene.annotations.classes[k].len(),
            s.plane()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
