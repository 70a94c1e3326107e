//! Soft segmentation, background and unknown-region masks for a scene where
//! some animals could not be identified.
//!
//! ```text
//! cargo run --example segmentation_masks
//! ```

use fgcount::cluster::{cluster_image_annotations, ClusterParams};
use fgcount::mapgen::{background_channel, unknown_loss_mask, DensityRenderer, Dims, KernelSpec, DEFAULT_TAU};
use fgcount::sim::{simulate_scene, SimConfig};
use fgcount::{Attribute, DensityMethod, SegmentationStack};

fn main() -> fgcount::Result<()> {
    let mut cfg = SimConfig { seed: 3, width: 320, height: 240, n_images: 1, mean_objects: 12.0, ..SimConfig::default() };
    // A third of the animals have an age nobody can tell.
    cfg.priors[Attribute::Age.index()] = [0.4, 0.3, 0.3];
    let scene = simulate_scene(&cfg, 0)?;
    let objects = cluster_image_annotations(&scene.dots, &ClusterParams::default())?;
    let density = DensityRenderer::new(&KernelSpec::default(), 1)?.render(
        &scene.image_id,
        &objects,
        Dims::new(320, 240),
        DensityMethod::Cluster,
    )?;

    let seg = SegmentationStack::from_density(&density, DEFAULT_TAU)?;
    let background = background_channel(&density, DEFAULT_TAU)?;
    let masks = unknown_loss_mask(&density, DEFAULT_TAU)?;
    let total = 320 * 240;
    println!("background: {} of {total} pixels", background.count_set());
    for a in Attribute::ALL {
        println!("{a:<8} masked as unknown: {} pixels", masks[a.index()].count_set());
    }

    // Per-pixel training target: class shares inside the foreground,
    // pure background outside.
    let o = &objects[0];
    let (x, y) = (o.medoid.x as usize, o.medoid.y as usize);
    for a in Attribute::ALL {
        let t = seg.target(a, x, y);
        println!("target at first medoid, {a}: [{:.3}, {:.3}, {:.3}]", t[0], t[1], t[2]);
    }
    let far = (0..total).map(|i| (i % 320, i / 320)).find(|&(x, y)| *background.get(x, y));
    if let Some((x, y)) = far {
        println!("target at background pixel ({x}, {y}): {:?}", seg.target(Attribute::Species, x, y));
    }
    Ok(())
}
