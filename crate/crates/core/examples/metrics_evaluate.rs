//! Score a deliberately imperfect prediction against ground truth with the
//! training losses and the evaluation metrics.
//!
//! ```text
//! cargo run --example metrics_evaluate
//! ```

use fgcount::cluster::{cluster_image_annotations, ClusterParams};
use fgcount::mapgen::{DensityRenderer, Dims, KernelSpec, DEFAULT_TAU};
use fgcount::metrics::{cmmae_table, evaluate, loss_class_mse, loss_total_count, GroundTruth, PredictionStack};
use fgcount::sim::{simulate_scene, SimConfig};
use fgcount::DensityMethod;

fn main() -> fgcount::Result<()> {
    let cfg = SimConfig { seed: 8, width: 480, height: 360, n_images: 4, ..SimConfig::default() };
    let renderer = DensityRenderer::new(&KernelSpec::default(), 4)?;
    let dims = Dims::new(480, 360);
    let (mut gts, mut preds) = (Vec::new(), Vec::new());
    for i in 0..cfg.n_images {
        let scene = simulate_scene(&cfg, i)?;
        let objects = cluster_image_annotations(&scene.dots, &ClusterParams::default())?;
        let gt = GroundTruth::new(renderer.render(&scene.image_id, &objects, dims, DensityMethod::Cluster)?, DEFAULT_TAU)?;
        // The "model": fixed kernels, every class channel scaled by 0.9.
        let fixed = renderer.render(&scene.image_id, &objects, dims, DensityMethod::Fixed)?;
        let mut pred = PredictionStack::from_density(&fixed);
        pred.classes.iter_mut().flatten().for_each(|g| *g = g.map(|v| v * 0.9));
        println!(
            "{}: masked class loss {:.3e}, unmasked {:.3e}, count loss {:.3e}",
            scene.image_id,
            loss_class_mse(&pred, &gt, true)?,
            loss_class_mse(&pred, &gt, false)?,
            loss_total_count(&pred, &gt)?,
        );
        gts.push(gt);
        preds.push(pred);
    }

    let report = evaluate(&preds, &gts)?;
    println!("MAE {:.4}  CMMAE {:.4}", report.mae, report.cmmae);
    for m in &report.mmae {
        println!("  {:<8} {:<9} MMAE {:.4}", m.attribute.to_string(), m.class, m.mmae);
    }
    assert!((cmmae_table(&report.mmae_table()) - report.cmmae).abs() < 1e-12);
    report.write_csv(std::io::stdout(), "fixed-0.9")?;
    Ok(())
}
