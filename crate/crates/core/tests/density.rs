mod common;

use common::*;
use fgcount::cluster::AggregatedObject;
use fgcount::grid::{downsample_preserving_count, Grid};
use fgcount::mapgen::{
    background_channel, object_density, render_density, unknown_loss_mask, DensityMethod, Dims, KernelSpec,
    SegmentationStack, EPS_DIV,
};
use fgcount::sim::SimRng;
use fgcount::{Attribute, Label};
use proptest::prelude::*;

const METHODS: [DensityMethod; 2] = [DensityMethod::Fixed, DensityMethod::Cluster];

fn random_scene(seed: u64, w: usize, h: usize, n: usize) -> Vec<AggregatedObject> {
    let mut rng = SimRng::new(seed, 0, 0);
    (0..n).map(|_| random_object(&mut rng, "img", w as f64, h as f64, 6)).collect()
}

/// Mean and variance of the mass along each axis.
fn moments(g: &Grid) -> ([f64; 2], [f64; 2]) {
    let total = g.sum();
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let v = g.get(x, y);
            mx += v * x as f64;
            my += v * y as f64;
        }
    }
    let (mx, my) = (mx / total, my / total);
    let (mut vx, mut vy) = (0.0, 0.0);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let v = g.get(x, y);
            vx += v * (x as f64 - mx).powi(2);
            vy += v * (y as f64 - my).powi(2);
        }
    }
    ([mx, my], [vx / total, vy / total])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_object_has_unit_mass(seed in any::<u64>(), w in 8usize..160, h in 8usize..160, sigma in 1.0f64..15.0) {
        let kernel = KernelSpec { sigma, ..KernelSpec::default() };
        let mut rng = SimRng::new(seed, 0, 0);
        let obj = random_object(&mut rng, "img", w as f64, h as f64, 5);
        for m in METHODS {
            let g = object_density(&obj, Dims::new(w, h), &kernel, m).unwrap();
            prop_assert!((g.sum() - 1.0).abs() <= 1e-9, "{m}: mass {}", g.sum());
            prop_assert!(g.as_slice().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn channels_decompose_overall(seed in any::<u64>(), n in 0usize..25, ds in 1usize..6) {
        let objs = random_scene(seed, 130, 90, n);
        for m in METHODS {
            let d = render_density("img", &objs, Dims::new(130, 90), &KernelSpec::default(), m, ds).unwrap();
            for a in Attribute::ALL {
                let [c0, c1, u] = &d.channels[a.index()];
                for i in 0..d.overall.len() {
                    let s = c0.as_slice()[i] + c1.as_slice()[i] + u.as_slice()[i];
                    prop_assert!((s - d.overall.as_slice()[i]).abs() <= 1e-12);
                }
            }
            prop_assert!((d.count() - n as f64).abs() <= 1e-9 * (n.max(1) as f64));
        }
    }

    #[test]
    fn downsampled_render_equals_pooled_full_render(
        seed in any::<u64>(),
        w in 8usize..140,
        h in 8usize..140,
        n in 1usize..12,
        ds in 2usize..10,
        sigma in 1.0f64..9.0,
        renormalize in any::<bool>(),
    ) {
        let kernel = KernelSpec { sigma, renormalize, ..KernelSpec::default() };
        let objs = random_scene(seed, w, h, n);
        for m in METHODS {
            let full = render_density("img", &objs, Dims::new(w, h), &kernel, m, 1).unwrap();
            let direct = render_density("img", &objs, Dims::new(w, h), &kernel, m, ds).unwrap();
            let grids = |d: &fgcount::DensityStack| -> Vec<Grid> {
                std::iter::once(d.overall.clone()).chain(d.channels.iter().flatten().cloned()).collect()
            };
            for (f, d) in grids(&full).iter().zip(grids(&direct)) {
                let pooled = downsample_preserving_count(f, ds).unwrap();
                prop_assert_eq!(pooled.dims(), d.dims());
                for (a, b) in pooled.as_slice().iter().zip(d.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-12, "{m}: {a} vs {b}");
                    prop_assert!(*b >= 0.0);
                }
            }
        }
    }

    #[test]
    fn downsampling_preserves_block_sums(
        w in 1usize..40,
        h in 1usize..40,
        factor in 1usize..9,
        seed in any::<u64>(),
    ) {
        let mut rng = SimRng::new(seed, 0, 0);
        let g = Grid::from_fn(w, h, |_, _| rng.uniform());
        let d = downsample_preserving_count(&g, factor).unwrap();
        prop_assert_eq!(d.dims(), (w.div_ceil(factor), h.div_ceil(factor)));
        for by in 0..d.height() {
            for bx in 0..d.width() {
                let mut block = 0.0;
                for y in by * factor..((by + 1) * factor).min(h) {
                    for x in bx * factor..((bx + 1) * factor).min(w) {
                        block += g.get(x, y);
                    }
                }
                prop_assert!((d.get(bx, by) - block).abs() <= 1e-12);
            }
        }
        prop_assert!((d.sum() - g.sum()).abs() <= 1e-9);
    }

    #[test]
    fn soft_segmentation_is_a_partition(seed in any::<u64>(), n in 1usize..20) {
        let objs = random_scene(seed, 100, 80, n);
        let d = render_density("img", &objs, Dims::new(100, 80), &KernelSpec::default(), DensityMethod::Cluster, 1).unwrap();
        let seg = SegmentationStack::from_density(&d, 1e-4).unwrap();
        for a in Attribute::ALL {
            let [d0, d1, _] = &d.channels[a.index()];
            let [s0, s1] = &seg.soft[a.index()];
            for i in 0..d0.len() {
                let known = d0.as_slice()[i] + d1.as_slice()[i];
                let s = s0.as_slice()[i] + s1.as_slice()[i];
                if known > EPS_DIV {
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }
    }
}

#[test]
fn cluster_spread_adds_member_variance_to_kernel_variance() {
    let dims = Dims::new(200, 200);
    let kernel = KernelSpec::default();
    let members = [(100.2, 97.9), (104.7, 101.1), (96.5, 103.3), (101.9, 99.4)];
    let obj = object("img", &members, all_unknown());
    let fixed = object_density(&obj, dims, &kernel, DensityMethod::Fixed).unwrap();
    let spread = object_density(&obj, dims, &kernel, DensityMethod::Cluster).unwrap();
    let (_, kvar) = moments(&fixed);
    let (mean, var) = moments(&spread);

    // A mixture of equally weighted shifted copies of one kernel has the
    // kernel's variance plus the variance of the shifts.
    let px: Vec<f64> = members.iter().map(|p| p.0.floor()).collect();
    let py: Vec<f64> = members.iter().map(|p| p.1.floor()).collect();
    let pop = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
    };
    let ((mx, vx), (my, vy)) = (pop(&px), pop(&py));
    assert!((mean[0] - mx).abs() < 1e-9 && (mean[1] - my).abs() < 1e-9);
    assert!((var[0] - (kvar[0] + vx)).abs() < 1e-6, "{} vs {}", var[0], kvar[0] + vx);
    assert!((var[1] - (kvar[1] + vy)).abs() < 1e-6, "{} vs {}", var[1], kvar[1] + vy);
    assert!(var[0] > kvar[0] && var[1] > kvar[1]);
}

/// Lattice points `(dx, dy)` of the truncation disk and their unnormalized
/// Gaussian weights.
fn disk(kernel: &KernelSpec) -> Vec<f64> {
    let cut = kernel.truncation * kernel.sigma;
    let r = cut.floor() as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let r2 = (dx * dx + dy * dy) as f64;
            if r2 <= cut * cut {
                out.push((-r2 / (2.0 * kernel.sigma * kernel.sigma)).exp());
            }
        }
    }
    out
}

#[test]
fn background_matches_analytic_kernel_footprint() {
    let dims = Dims::new(200, 160);
    for (sigma, truncation) in [(12.0, 4.0), (5.0, 3.0), (2.5, 2.0)] {
        let kernel = KernelSpec { sigma, truncation, renormalize: true };
        let weights = disk(&kernel);
        let z: f64 = weights.iter().sum();
        let obj = object("img", &[(100.5, 80.5)], all_unknown());
        let d = render_density("img", &[obj], dims, &kernel, DensityMethod::Fixed, 1).unwrap();
        for tau in [1e-4, 1e-3, 1e-12] {
            let fg = weights.iter().filter(|w| *w / z >= tau).count();
            let bg = background_channel(&d, tau).unwrap();
            assert_eq!(bg.count_set(), dims.width * dims.height - fg, "sigma {sigma} tau {tau}");
        }
        // Below every kernel weight, the foreground is exactly the disk.
        let bg = background_channel(&d, 1e-300).unwrap();
        assert_eq!(dims.width * dims.height - bg.count_set(), weights.len());
    }
}

#[test]
fn single_member_clusters_render_identically_under_both_methods() {
    let mut rng = SimRng::new(5, 0, 0);
    let objs: Vec<AggregatedObject> = (0..40)
        .map(|_| {
            let mut o = random_object(&mut rng, "img", 150.0, 100.0, 1);
            o.members.truncate(1);
            o.medoid = fgcount::Point::new(o.members[0].x, o.members[0].y);
            o
        })
        .collect();
    for ds in [1, 3] {
        let f = render_density("img", &objs, Dims::new(150, 100), &KernelSpec::default(), DensityMethod::Fixed, ds).unwrap();
        let c = render_density("img", &objs, Dims::new(150, 100), &KernelSpec::default(), DensityMethod::Cluster, ds).unwrap();
        assert_eq!(f, c);
    }
}

#[test]
fn coincident_members_render_like_one_kernel() {
    let p = (40.25, 33.75);
    let stacked = object("img", &[p, p, p], all_unknown());
    let single = object("img", &[p], all_unknown());
    let k = KernelSpec::default();
    let d = Dims::new(90, 70);
    let a = object_density(&stacked, d, &k, DensityMethod::Cluster).unwrap();
    let b = object_density(&single, d, &k, DensityMethod::Fixed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_objects_are_masked_on_their_foreground_only() {
    let dims = Dims::new(120, 60);
    let unk = object("img", &[(30.0, 30.0), (31.0, 29.0)], all_unknown());
    let known = object("img", &[(95.0, 30.0)], labels(Label::Class0, Label::Class1, Label::Class0));
    let d = render_density("img", &[unk, known], dims, &KernelSpec::default(), DensityMethod::Cluster, 1).unwrap();
    let masks = unknown_loss_mask(&d, 1e-4).unwrap();
    let bg = background_channel(&d, 1e-4).unwrap();
    let seg = SegmentationStack::from_density(&d, 1e-4).unwrap();
    for a in Attribute::ALL {
        let m = &masks[a.index()];
        assert_eq!(*m.get(30, 30), true);
        assert_eq!(*m.get(95, 30), false);
        for y in 0..dims.height {
            for x in 0..dims.width {
                assert!(!(*m.get(x, y) && *bg.get(x, y)));
                if *bg.get(x, y) {
                    assert_eq!(seg.target(a, x, y), [0.0, 0.0, 1.0]);
                }
            }
        }
        let t = seg.target(a, 95, 30);
        assert!((t[0] + t[1] - 1.0).abs() < 1e-12 && t[2] == 0.0);
    }
}

#[test]
fn rendering_rejects_out_of_image_points() {
    let obj = object("img", &[(10.0, 50.0)], all_unknown());
    for m in METHODS {
        assert!(render_density("img", &[obj.clone()], Dims::new(20, 50), &KernelSpec::default(), m, 1).is_err());
    }
}
