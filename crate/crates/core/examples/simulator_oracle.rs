//! Simulate annotators with known ground truth and measure how well the
//! consensus step recovers it as click noise grows.
//!
//! ```text
//! cargo run --example simulator_oracle
//! ```

use fgcount::cluster::{cluster_image_annotations, ClusterParams};
use fgcount::sim::{oracle_evaluate, simulate_scene, SimConfig};
use fgcount::Attribute;

fn main() -> fgcount::Result<()> {
    let mut cfg = SimConfig { seed: 42, width: 1280, height: 960, n_images: 20, n_users: 8, ..SimConfig::default() };
    // Annotators confuse the sexes a fifth of the time.
    cfg.confusion[Attribute::Sex.index()] = [[0.8, 0.2, 0.0], [0.2, 0.8, 0.0], [0.0, 0.0, 1.0]];

    println!("sigma  exact-count  matched  loc-error  sex-accuracy");
    for sigma in [1.0, 3.0, 6.0, 10.0] {
        cfg.sigma_user = sigma;
        let (mut exact, mut matched, mut truth, mut loc, mut sex) = (0, 0, 0, 0.0, 0.0);
        for i in 0..cfg.n_images {
            let scene = simulate_scene(&cfg, i)?;
            let objects = cluster_image_annotations(&scene.dots, &ClusterParams::default())?;
            let r = oracle_evaluate(&scene, &objects, sigma);
            exact += usize::from(r.count_error == 0);
            matched += r.matched;
            truth += r.n_true;
            loc += r.mean_localization_error.unwrap_or(0.0) * r.matched as f64;
            sex += r.label_accuracy[Attribute::Sex.index()].unwrap_or(1.0) * r.matched as f64;
        }
        println!(
            "{sigma:>5}  {exact:>5}/{:<5}  {:>7.3}  {:>9.2}  {:>12.3}",
            cfg.n_images,
            matched as f64 / truth as f64,
            loc / matched as f64,
            sex / matched as f64
        );
    }
    Ok(())
}
