use std::collections::BTreeMap;

use fgcount::grid::{Grid, Mask};
use fgcount::mapgen::{DensityStack, SegmentationStack};
use fgcount::metrics::{
    cmmae, cmmae_table, count_mae, evaluate, fuse_density_segmentation, loss_class_mse, loss_soft_xent,
    loss_total_count, masked_mae, ClassGrids, GroundTruth, PredictionStack, SegGrids,
};
use fgcount::sim::SimRng;
use fgcount::{Attribute, Error, Label};
use proptest::prelude::*;

fn random_grid(rng: &mut SimRng, w: usize, h: usize) -> Grid {
    Grid::from_fn(w, h, |_, _| if rng.uniform() < 0.3 { 0.0 } else { rng.uniform() })
}

/// A stack with random channels; overall is the sum of the species channels.
fn random_stack(rng: &mut SimRng, id: &str, w: usize, h: usize) -> DensityStack {
    let mut d = DensityStack::zeros(id, w, h, 1);
    for a in 0..3 {
        for l in 0..3 {
            d.channels[a][l] = random_grid(rng, w, h);
        }
    }
    let sums = d.channels[0].clone();
    d.overall = Grid::from_fn(w, h, |x, y| sums.iter().map(|g| g.get(x, y)).sum());
    d
}

fn random_pred(rng: &mut SimRng, id: &str, w: usize, h: usize) -> PredictionStack {
    PredictionStack {
        image_id: id.into(),
        classes: std::array::from_fn(|_| std::array::from_fn(|_| random_grid(rng, w, h))),
        overall: Some(random_grid(rng, w, h)),
        segmentation: None,
    }
}

fn random_mask(rng: &mut SimRng, w: usize, h: usize, p: f64) -> Mask {
    Grid::from_fn(w, h, |_, _| rng.uniform() < p)
}

fn gt_with_masks(rng: &mut SimRng, id: &str, w: usize, h: usize) -> GroundTruth {
    GroundTruth {
        density: random_stack(rng, id, w, h),
        masks: std::array::from_fn(|_| random_mask(rng, w, h, 0.4)),
    }
}

fn r(v: &[Grid]) -> Vec<&Grid> {
    v.iter().collect()
}

fn m(v: &[Mask]) -> Vec<&Mask> {
    v.iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn masked_mae_is_zero_on_identity_and_count_mae_unmasked(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SimRng::new(seed, 0, 0);
        let preds: Vec<Grid> = (0..n).map(|_| random_grid(&mut rng, 7, 5)).collect();
        let gts: Vec<Grid> = (0..n).map(|_| random_grid(&mut rng, 7, 5)).collect();
        let masks: Vec<Mask> = (0..n).map(|_| random_mask(&mut rng, 7, 5, 0.5)).collect();
        let none: Vec<Mask> = (0..n).map(|_| Grid::new(7, 5)).collect();
        let all: Vec<Mask> = (0..n).map(|_| Grid::filled(7, 5, true)).collect();

        prop_assert_eq!(masked_mae(&r(&gts), &r(&gts), &m(&masks)).unwrap(), 0.0);
        prop_assert_eq!(masked_mae(&r(&preds), &r(&gts), &m(&all)).unwrap(), 0.0);

        let sums = |v: &[Grid]| v.iter().map(Grid::sum).collect::<Vec<_>>();
        let plain = count_mae(&sums(&preds), &sums(&gts)).unwrap();
        prop_assert!((masked_mae(&r(&preds), &r(&gts), &m(&none)).unwrap() - plain).abs() < 1e-12);

        let manual: f64 = (0..n)
            .map(|i| {
                let (mut p, mut g) = (0.0, 0.0);
                for k in 0..35 {
                    if !masks[i].as_slice()[k] {
                        p += preds[i].as_slice()[k];
                        g += gts[i].as_slice()[k];
                    }
                }
                (p - g).abs()
            })
            .sum::<f64>() / n as f64;
        prop_assert!((masked_mae(&r(&preds), &r(&gts), &m(&masks)).unwrap() - manual).abs() < 1e-12);
    }

    #[test]
    fn class_loss_skips_exactly_the_masked_pixels(seed in any::<u64>()) {
        let mut rng = SimRng::new(seed, 0, 0);
        let (w, h) = (6, 4);
        let gt = gt_with_masks(&mut rng, "i", w, h);
        let pred = random_pred(&mut rng, "i", w, h);

        let mut expect = 0.0;
        let mut expect_unmasked = 0.0;
        for a in 0..3 {
            let kept: Vec<usize> = (0..w * h).filter(|&k| !gt.masks[a].as_slice()[k]).collect();
            for c in 0..2 {
                let sq = |k: &usize| (pred.classes[a][c].as_slice()[*k] - gt.density.channels[a][c].as_slice()[*k]).powi(2);
                if !kept.is_empty() {
                    expect += kept.iter().map(sq).sum::<f64>() / kept.len() as f64;
                }
                expect_unmasked += (0..w * h).map(|k| sq(&k)).sum::<f64>() / (w * h) as f64;
            }
        }
        prop_assert!((loss_class_mse(&pred, &gt, true).unwrap() - expect).abs() < 1e-12);
        prop_assert!((loss_class_mse(&pred, &gt, false).unwrap() - expect_unmasked).abs() < 1e-12);

        // Perturbing only masked pixels leaves the masked loss unchanged.
        let mut moved = pred.clone();
        for a in 0..3 {
            for c in 0..2 {
                for k in 0..w * h {
                    if gt.masks[a].as_slice()[k] {
                        moved.classes[a][c].as_mut_slice()[k] += 10.0;
                    }
                }
            }
        }
        prop_assert_eq!(loss_class_mse(&moved, &gt, true).unwrap(), loss_class_mse(&pred, &gt, true).unwrap());
    }

    #[test]
    fn total_count_loss_uses_all_three_gt_channels(seed in any::<u64>()) {
        let mut rng = SimRng::new(seed, 0, 0);
        let (w, h) = (5, 5);
        let gt = gt_with_masks(&mut rng, "i", w, h);
        let pred = random_pred(&mut rng, "i", w, h);
        let mut expect = 0.0;
        for a in 0..3 {
            let ch = &gt.density.channels[a];
            let mut s = 0.0;
            for k in 0..w * h {
                let g = ch[0].as_slice()[k] + ch[1].as_slice()[k] + ch[2].as_slice()[k];
                let p = pred.classes[a][0].as_slice()[k] + pred.classes[a][1].as_slice()[k];
                s += (g - p).powi(2);
            }
            expect += s / (w * h) as f64;
        }
        prop_assert!((loss_total_count(&pred, &gt).unwrap() - expect).abs() < 1e-12);

        // Masks play no part.
        let mut unmasked = gt.clone();
        unmasked.masks = std::array::from_fn(|_| Grid::new(w, h));
        prop_assert_eq!(loss_total_count(&pred, &unmasked).unwrap(), loss_total_count(&pred, &gt).unwrap());
    }

    #[test]
    fn cmmae_ignores_ordering(values in prop::array::uniform6(0.0f64..50.0), rot in 0usize..3, swap in any::<[bool; 3]>()) {
        let table = [[values[0], values[1]], [values[2], values[3]], [values[4], values[5]]];
        let mut permuted = table;
        permuted.rotate_left(rot);
        for (row, s) in permuted.iter_mut().zip(swap) {
            if s {
                row.swap(0, 1);
            }
        }
        prop_assert!((cmmae_table(&table) - cmmae_table(&permuted)).abs() < 1e-12);
        let keyed: BTreeMap<(Attribute, Label), f64> = Attribute::ALL
            .into_iter()
            .flat_map(|a| Label::KNOWN.into_iter().enumerate().map(move |(c, l)| ((a, l), table[a.index()][c])))
            .collect();
        prop_assert_eq!(cmmae(&keyed).unwrap(), cmmae_table(&table));
        let mean = values.iter().sum::<f64>() / 6.0;
        prop_assert!((cmmae_table(&table) - mean).abs() < 1e-9);
    }

    #[test]
    fn evaluation_is_invariant_to_prediction_order(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SimRng::new(seed, 0, 0);
        let gts: Vec<GroundTruth> = (0..n).map(|i| gt_with_masks(&mut rng, &format!("img{i}"), 4, 3)).collect();
        let preds: Vec<PredictionStack> = (0..n).map(|i| random_pred(&mut rng, &format!("img{i}"), 4, 3)).collect();
        let mut reversed = preds.clone();
        reversed.reverse();
        let a = evaluate(&preds, &gts).unwrap();
        let b = evaluate(&reversed, &gts).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn soft_cross_entropy_matches_direct_sum() {
    let mut rng = SimRng::new(3, 0, 0);
    let (w, h) = (4, 3);
    let density = random_stack(&mut rng, "i", w, h);
    let mut density = density;
    // Make a background corner.
    for g in std::iter::once(&mut density.overall).chain(density.channels.iter_mut().flatten()) {
        *g.get_mut(0, 0) = 0.0;
    }
    let gt = SegmentationStack::from_density(&density, 1e-6).unwrap();
    let masks: [Mask; 3] = std::array::from_fn(|_| random_mask(&mut rng, w, h, 0.3));
    let pred: SegGrids = std::array::from_fn(|_| {
        let raw: [Grid; 3] = std::array::from_fn(|_| Grid::from_fn(w, h, |_, _| 0.05 + rng.uniform()));
        let total = Grid::from_fn(w, h, |x, y| raw.iter().map(|g| g.get(x, y)).sum());
        std::array::from_fn(|c| raw[c].zip_map(&total, |v, t| v / t).unwrap())
    });

    let mut expect = 0.0;
    for a in Attribute::ALL {
        let (mut sum, mut n) = (0.0, 0);
        for y in 0..h {
            for x in 0..w {
                if *masks[a.index()].get(x, y) {
                    continue;
                }
                let t = gt.target(a, x, y);
                for c in 0..3 {
                    if t[c] > 0.0 {
                        sum -= t[c] * pred[a.index()][c].get(x, y).ln();
                    }
                }
                n += 1;
            }
        }
        if n > 0 {
            expect += sum / n as f64;
        }
    }
    let got = loss_soft_xent(&pred, &gt, &masks).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert_eq!(gt.target(Attribute::Sex, 0, 0), [0.0, 0.0, 1.0]);

    let mut bad = pred.clone();
    *bad[1][2].get_mut(1, 1) += 0.5;
    assert!(matches!(loss_soft_xent(&bad, &gt, &masks), Err(Error::InvalidParameter(_))));
}

#[test]
fn fused_class_counts_agree_across_attributes() {
    let mut rng = SimRng::new(9, 0, 0);
    let (w, h) = (8, 6);
    let overall = random_grid(&mut rng, w, h);
    let seg: ClassGrids = std::array::from_fn(|_| {
        let s0 = Grid::from_fn(w, h, |_, _| rng.uniform());
        let s1 = s0.map(|v| 1.0 - v);
        [s0, s1]
    });
    let fused = fuse_density_segmentation(&overall, &seg).unwrap();
    let counts: Vec<f64> = fused.iter().map(|row| row[0].sum() + row[1].sum()).collect();
    for c in &counts {
        assert!((c - overall.sum()).abs() < 1e-12);
    }
    assert!(fuse_density_segmentation(&Grid::new(3, 3), &seg).is_err());
}

#[test]
fn evaluation_rejects_unpaired_and_mismatched_inputs() {
    let mut rng = SimRng::new(1, 0, 0);
    let gts = vec![gt_with_masks(&mut rng, "b", 3, 3), gt_with_masks(&mut rng, "a", 3, 3)];
    let preds = vec![random_pred(&mut rng, "a", 3, 3), random_pred(&mut rng, "c", 3, 3)];
    match evaluate(&preds, &gts) {
        Err(Error::UnpairedImages(ids)) => assert_eq!(ids, vec!["b".to_string(), "c".to_string()]),
        other => panic!("unexpected {other:?}"),
    }
    let preds = vec![random_pred(&mut rng, "a", 3, 4), random_pred(&mut rng, "b", 3, 3)];
    assert!(matches!(evaluate(&preds, &gts), Err(Error::DimensionMismatch(_))));
    assert_eq!(count_mae(&[], &[]).unwrap(), 0.0);
}
