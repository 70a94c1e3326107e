//! Render fixed-kernel and cluster-spread density stacks for one simulated
//! image and compare them.
//!
//! ```text
//! cargo run --example density_maps
//! ```

use fgcount::cluster::{cluster_image_annotations, ClusterParams};
use fgcount::mapgen::{DensityRenderer, Dims, KernelSpec};
use fgcount::sim::{simulate_scene, SimConfig};
use fgcount::{Attribute, DensityMethod, Label};

fn main() -> fgcount::Result<()> {
    let cfg = SimConfig { seed: 11, width: 640, height: 480, n_images: 1, ..SimConfig::default() };
    let scene = simulate_scene(&cfg, 0)?;
    let objects = cluster_image_annotations(&scene.dots, &ClusterParams::default())?;
    let dims = Dims::new(640, 480);
    println!("{} true objects, {} dots, {} clusters", scene.objects.len(), scene.dots.len(), objects.len());

    let kernel = KernelSpec { sigma: 12.0, truncation: 4.0, renormalize: true };
    for downsample in [1, 8] {
        let renderer = DensityRenderer::new(&kernel, downsample)?;
        for method in [DensityMethod::Fixed, DensityMethod::Cluster] {
            let d = renderer.render(&scene.image_id, &objects, dims, method)?;
            let (w, h) = d.dims();
            let peak = d.overall.as_slice().iter().fold(0.0f64, |m, v| m.max(*v));
            print!("{method:<8} {w}x{h}: count {:.3}, peak {peak:.5}", d.count());
            for a in Attribute::ALL {
                let [c0, c1, u] = Label::ALL.map(|l| d.channel(a, l).sum());
                print!("  {a} {c0:.1}/{c1:.1}/{u:.1}");
            }
            println!();
        }
    }
    Ok(())
}
