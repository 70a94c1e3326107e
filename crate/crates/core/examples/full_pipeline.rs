//! Every stage over files, the way the `fgcount` binary runs them:
//! simulate, aggregate, render ground truth and a baseline, evaluate.
//!
//! ```text
//! cargo run --release --example full_pipeline [output-dir]
//! ```

use std::path::PathBuf;

use fgcount::cluster::ClusterParams;
use fgcount::pipeline::{run_aggregate, run_evaluate, run_genmaps, run_simulate, MapOptions};
use fgcount::sim::SimConfig;
use fgcount::DensityMethod;

fn main() -> fgcount::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fgcount-demo"));
    let (sim, agg) = (root.join("sim"), root.join("agg"));
    let cfg = SimConfig { seed: 2015, width: 512, height: 384, n_images: 50, ..SimConfig::default() };

    let s = run_simulate(&cfg, &sim, 0)?;
    println!("simulate: {} images, {} objects, {} dots", s.images, s.objects, s.annotations);
    let a = run_aggregate(&sim.join("annotations.csv"), &sim.join("images.csv"), &ClusterParams::default(), &agg, 0)?;
    println!("aggregate: {} objects, {} dots discarded", a.objects, a.discarded_dots);

    let objects = agg.join("objects.jsonl");
    let images = sim.join("images.csv");
    let mut options = MapOptions { downsample: 4, ..MapOptions::default() };
    run_genmaps(&objects, &images, &options, &root.join("gt"), 0)?;
    options.method = DensityMethod::Fixed;
    run_genmaps(&objects, &images, &options, &root.join("baseline"), 0)?;

    let (report, manifest) = run_evaluate(&root.join("baseline"), &root.join("gt"), &root.join("eval/report.json"), "fixed", 0)?;
    println!("evaluate: MAE {:.4}, CMMAE {:.4}", report.mae, report.cmmae);
    for input in &manifest.inputs {
        println!("  {} sha256 {}", input.path, &input.sha256[..16]);
    }
    println!("outputs under {}", root.display());
    Ok(())
}
