//! Counting losses and evaluation metrics.
//!
//! Class-level quantities (`L^c`, `L^s`, masked MAE) skip pixels covered by
//! the ground-truth unknown mask of the attribute. Overall quantities (MAE and
//! the total-count loss) always use every pixel.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, NUM_ATTRIBUTES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::mapgen::{unknown_loss_mask, DensityStack, SegmentationStack};

/// Floor applied to predicted probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;
/// Allowed deviation from 1 of a predicted segmentation triple.
pub const SEG_SUM_TOLERANCE: f64 = 1e-4;

pub type ClassGrids = [[Grid; NUM_CLASSES]; NUM_ATTRIBUTES];
/// Per attribute: class0, class1, background.
pub type SegGrids = [[Grid; 3]; NUM_ATTRIBUTES];

/// Predicted maps for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionStack {
    pub image_id: String,
    /// Predicted class densities, `[attribute][class]`.
    pub classes: ClassGrids,
    pub overall: Option<Grid>,
    pub segmentation: Option<SegGrids>,
}

impl PredictionStack {
    /// The known-class channels of a ground-truth stack, as a prediction.
    pub fn from_density(density: &DensityStack) -> Self {
        PredictionStack {
            image_id: density.image_id.clone(),
            classes: std::array::from_fn(|a| std::array::from_fn(|c| density.channels[a][c].clone())),
            overall: Some(density.overall.clone()),
            segmentation: None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.classes[0][0].dims()
    }

    /// Predicted total count: the overall grid when present, otherwise the
    /// class-sum averaged over attributes.
    pub fn total_count(&self) -> f64 {
        match &self.overall {
            Some(g) => g.sum(),
            None => {
                let per_attr: f64 = self.classes.iter().map(|row| row.iter().map(Grid::sum).sum::<f64>()).sum();
                per_attr / NUM_ATTRIBUTES as f64
            }
        }
    }

    fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        let grids = self
            .classes
            .iter()
            .flatten()
            .chain(self.overall.iter())
            .chain(self.segmentation.iter().flatten().flatten());
        for g in grids {
            if g.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "prediction {} has a {}x{} grid, ground truth is {}x{}",
                    self.image_id,
                    g.width(),
                    g.height(),
                    dims.0,
                    dims.1
                )));
            }
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("prediction {} has non-finite values", self.image_id)));
            }
        }
        Ok(())
    }
}

/// Ground-truth density stack with its unknown masks.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub density: DensityStack,
    pub masks: [Mask; NUM_ATTRIBUTES],
}

impl GroundTruth {
    pub fn new(density: DensityStack, tau: f64) -> Result<Self> {
        let masks = unknown_loss_mask(&density, tau)?;
        Ok(GroundTruth { density, masks })
    }

    pub fn image_id(&self) -> &str {
        &self.density.image_id
    }
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean absolute difference of per-image counts. Zero for no images.
pub fn count_mae(pred_totals: &[f64], gt_totals: &[f64]) -> Result<f64> {
    if pred_totals.len() != gt_totals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted counts vs {} ground-truth counts",
            pred_totals.len(),
            gt_totals.len()
        )));
    }
    if pred_totals.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred_totals.iter().zip(gt_totals).map(|(p, g)| (p - g).abs()).sum();
    Ok(total / pred_totals.len() as f64)
}

/// MAE of counts taken only over unmasked pixels, one grid triple per image.
pub fn masked_mae(pred: &[&Grid], gt: &[&Grid], masks: &[&Mask]) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != masks.len() {
        return Err(Error::DimensionMismatch("masked_mae needs one pred, gt and mask per image".into()));
    }
    let mut p_counts = Vec::with_capacity(pred.len());
    let mut g_counts = Vec::with_capacity(pred.len());
    for ((p, g), m) in pred.iter().zip(gt).zip(masks) {
        p.check_same_dims(g, "masked_mae pred/gt")?;
        g.check_same_dims(m, "masked_mae gt/mask")?;
        p_counts.push(p.sum_unmasked(m));
        g_counts.push(g.sum_unmasked(m));
    }
    count_mae(&p_counts, &g_counts)
}

/// Category-averaged masked MAE: the mean over attributes of the mean over
/// classes.
pub fn cmmae_table(mmae: &[[f64; NUM_CLASSES]; NUM_ATTRIBUTES]) -> f64 {
    let per_attr: f64 = mmae
        .iter()
        .map(|classes| classes.iter().sum::<f64>() / NUM_CLASSES as f64)
        .sum();
    per_attr / NUM_ATTRIBUTES as f64
}

/// [`cmmae_table`] over a keyed table; every attribute/class pair must be present.
pub fn cmmae(values: &BTreeMap<(Attribute, Label), f64>) -> Result<f64> {
    let mut table = [[0.0; NUM_CLASSES]; NUM_ATTRIBUTES];
    for a in Attribute::ALL {
        for (c, l) in Label::KNOWN.into_iter().enumerate() {
            table[a.index()][c] = *values.get(&(a, l)).ok_or_else(|| {
                Error::InvalidParameter(format!("missing MMAE for {} {}", a, a.label_name(l)))
            })?;
        }
    }
    Ok(cmmae_table(&table))
}

// ---------------------------------------------------------------------------
// Losses

fn masked_mse(pred: &Grid, gt: &Grid, mask: Option<&Mask>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (p, g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if mask.is_some_and(|m| m.as_slice()[i]) {
            continue;
        }
        sum += (p - g) * (p - g);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_pair(pred: &PredictionStack, gt: &GroundTruth) -> Result<()> {
    pred.check_dims(gt.density.dims())?;
    for m in &gt.masks {
        gt.density.overall.check_same_dims(m, "ground-truth mask")?;
    }
    Ok(())
}

/// `L^c`: per-pixel MSE summed over every attribute/class channel. With
/// `masked`, pixels under the attribute's unknown mask are dropped from both
/// the sum and the pixel count.
pub fn loss_class_mse(pred: &PredictionStack, gt: &GroundTruth, masked: bool) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for a in 0..NUM_ATTRIBUTES {
        let mask = masked.then_some(&gt.masks[a]);
        for c in 0..NUM_CLASSES {
            total += masked_mse(&pred.classes[a][c], &gt.density.channels[a][c], mask);
        }
    }
    Ok(total)
}

/// `L^t`: per attribute, MSE between the summed ground-truth channels
/// (unknown included) and the summed predicted class channels. Never masked.
pub fn loss_total_count(pred: &PredictionStack, gt: &GroundTruth) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for a in 0..NUM_ATTRIBUTES {
        let [g0, g1, gu] = &gt.density.channels[a];
        let [p0, p1] = &pred.classes[a];
        let n = g0.len();
        let mut sum = 0.0;
        for i in 0..n {
            let g = g0.as_slice()[i] + g1.as_slice()[i] + gu.as_slice()[i];
            let p = p0.as_slice()[i] + p1.as_slice()[i];
            sum += (g - p) * (g - p);
        }
        if n > 0 {
            total += sum / n as f64;
        }
    }
    Ok(total)
}

/// `L^s`: soft cross-entropy of predicted `(class0, class1, background)`
/// triples against the ground-truth targets, averaged over unmasked pixels
/// and summed over attributes.
pub fn loss_soft_xent(pred_seg: &SegGrids, gt_seg: &SegmentationStack, masks: &[Mask; NUM_ATTRIBUTES]) -> Result<f64> {
    let dims = gt_seg.background.dims();
    for g in pred_seg.iter().flatten() {
        if g.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "segmentation grid {}x{} vs ground truth {}x{}",
                g.width(),
                g.height(),
                dims.0,
                dims.1
            )));
        }
    }
    let (w, h) = dims;
    let mut total = 0.0;
    for a in Attribute::ALL {
        let [s0, s1, sb] = &pred_seg[a.index()];
        masks[a.index()].check_same_dims(s0, "segmentation mask")?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                let p = [*s0.get(x, y), *s1.get(x, y), *sb.get(x, y)];
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > SEG_SUM_TOLERANCE || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidParameter(format!(
                        "{a} segmentation channels at ({x}, {y}) are not a distribution: {p:?}"
                    )));
                }
                if *masks[a.index()].get(x, y) {
                    continue;
                }
                let t = gt_seg.target(a, x, y);
                sum -= t.iter().zip(p).map(|(t, p)| if *t == 0.0 { 0.0 } else { t * p.max(LOG_FLOOR).ln() }).sum::<f64>();
                n += 1;
            }
        }
        if n > 0 {
            total += sum / n as f64;
        }
    }
    Ok(total)
}

/// Class densities from one overall density and per-attribute foreground
/// segmentation channels: `D_{a,c} = overall * S_{a,c}` pixelwise.
pub fn fuse_density_segmentation(overall: &Grid, seg: &ClassGrids) -> Result<ClassGrids> {
    let mut out: ClassGrids = Default::default();
    for (a, row) in seg.iter().enumerate() {
        for (c, s) in row.iter().enumerate() {
            out[a][c] = overall.zip_map(s, |d, s| d * s)?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Evaluation report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedCount {
    pub attribute: Attribute,
    pub class: String,
    pub gt: f64,
    pub pred: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    pub gt_count: f64,
    pub pred_count: f64,
    pub abs_error: f64,
    pub masked_counts: Vec<MaskedCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub attribute: Attribute,
    pub class: String,
    pub mmae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub mae: f64,
    pub cmmae: f64,
    /// Attribute-major, class0 before class1.
    pub mmae: Vec<ClassMetric>,
    pub images: Vec<ImageEval>,
}

impl EvalReport {
    pub fn mmae_table(&self) -> [[f64; NUM_CLASSES]; NUM_ATTRIBUTES] {
        let mut t = [[0.0; NUM_CLASSES]; NUM_ATTRIBUTES];
        for m in &self.mmae {
            let a = m.attribute;
            let c = if m.class == a.class_names()[0] { 0 } else { 1 };
            t[a.index()][c] = m.mmae;
        }
        t
    }

    pub fn mmae(&self, attribute: Attribute, label: Label) -> f64 {
        self.mmae_table()[attribute.index()][label.index()]
    }

    pub fn csv_header() -> Vec<String> {
        let mut cols = vec!["method".to_string(), "MAE".into(), "CMMAE".into()];
        for a in Attribute::ALL {
            for c in a.class_names() {
                cols.push(format!("{}_{}", a.name(), c));
            }
        }
        cols
    }

    pub fn csv_row(&self, method: &str) -> Vec<String> {
        let mut row = vec![method.to_string(), self.mae.to_string(), self.cmmae.to_string()];
        row.extend(self.mmae.iter().map(|m| m.mmae.to_string()));
        row
    }

    /// One header row plus one row for this report.
    pub fn write_csv<W: Write>(&self, writer: W, method: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::csv_header())?;
        w.write_record(self.csv_row(method))?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pairs predictions with ground truth by image id and fills an [`EvalReport`].
/// Images are reported in ground-truth order.
pub fn evaluate(preds: &[PredictionStack], gts: &[GroundTruth]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &PredictionStack> = preds.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let gt_ids: HashMap<&str, ()> = gts.iter().map(|g| (g.image_id(), ())).collect();
    let mut unpaired: Vec<String> = gts
        .iter()
        .filter(|g| !by_id.contains_key(g.image_id()))
        .map(|g| g.image_id().to_string())
        .chain(preds.iter().filter(|p| !gt_ids.contains_key(p.image_id.as_str())).map(|p| p.image_id.clone()))
        .collect();
    if by_id.len() != preds.len() || gt_ids.len() != gts.len() {
        return Err(Error::InvalidParameter("duplicate image ids in evaluation input".into()));
    }
    if !unpaired.is_empty() {
        unpaired.sort();
        return Err(Error::UnpairedImages(unpaired));
    }

    let images = gts
        .iter()
        .map(|gt| evaluate_image(by_id[gt.image_id()], gt))
        .collect::<Result<Vec<_>>>()?;
    summarize(images)
}

/// Total and masked per-class counts for one image pair.
pub fn evaluate_image(pred: &PredictionStack, gt: &GroundTruth) -> Result<ImageEval> {
    check_pair(pred, gt)?;
    let (gc, pc) = (gt.density.count(), pred.total_count());
    let mut masked_counts = Vec::with_capacity(NUM_ATTRIBUTES * NUM_CLASSES);
    for a in Attribute::ALL {
        let mask = &gt.masks[a.index()];
        for (c, l) in Label::KNOWN.into_iter().enumerate() {
            masked_counts.push(MaskedCount {
                attribute: a,
                class: a.label_name(l).to_string(),
                gt: gt.density.channel(a, l).sum_unmasked(mask),
                pred: pred.classes[a.index()][c].sum_unmasked(mask),
            });
        }
    }
    Ok(ImageEval {
        image_id: gt.image_id().to_string(),
        gt_count: gc,
        pred_count: pc,
        abs_error: (pc - gc).abs(),
        masked_counts,
    })
}

/// Dataset metrics from per-image results, kept in the given order.
pub fn summarize(images: Vec<ImageEval>) -> Result<EvalReport> {
    let p_tot: Vec<f64> = images.iter().map(|i| i.pred_count).collect();
    let g_tot: Vec<f64> = images.iter().map(|i| i.gt_count).collect();
    let mut table = [[0.0; NUM_CLASSES]; NUM_ATTRIBUTES];
    let mut mmae = Vec::new();
    for a in Attribute::ALL {
        for (c, l) in Label::KNOWN.into_iter().enumerate() {
            let k = a.index() * NUM_CLASSES + c;
            let mut p = Vec::with_capacity(images.len());
            let mut g = Vec::with_capacity(images.len());
            for im in &images {
                let mc = im.masked_counts.get(k).filter(|m| m.attribute == a).ok_or_else(|| {
                    Error::InvalidParameter(format!("image {} lacks masked counts", im.image_id))
                })?;
                p.push(mc.pred);
                g.push(mc.gt);
            }
            let v = count_mae(&p, &g)?;
            table[a.index()][c] = v;
            mmae.push(ClassMetric {
                attribute: a,
                class: a.label_name(l).to_string(),
                mmae: v,
            });
        }
    }
    Ok(EvalReport {
        n_images: images.len(),
        mae: count_mae(&p_tot, &g_tot)?,
        cmmae: cmmae_table(&table),
        mmae,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_mae_examples() {
        assert_eq!(count_mae(&[10.0, 20.0], &[12.0, 17.0]).unwrap(), 2.5);
        assert_eq!(count_mae(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(count_mae(&[1.0], &[]).is_err());
    }

    #[test]
    fn cmmae_recombination_examples() {
        let ours = [[5.38, 9.23], [3.70, 3.76], [4.68, 6.37]];
        let baseline = [[5.55, 9.99], [4.47, 4.68], [4.66, 6.54]];
        assert!((cmmae_table(&ours) - 5.52).abs() <= 0.005);
        assert!((cmmae_table(&baseline) - 5.98).abs() <= 0.005);
        assert!((cmmae_table(&[[2.5; 2]; 3]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn cmmae_missing_entry() {
        let mut m = BTreeMap::new();
        for a in Attribute::ALL {
            for l in Label::KNOWN {
                m.insert((a, l), 1.0);
            }
        }
        assert_eq!(cmmae(&m).unwrap(), 1.0);
        m.remove(&(Attribute::Age, Label::Class1));
        assert!(matches!(cmmae(&m), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn masked_mae_mask_extremes() {
        let p = Grid::from_fn(2, 2, |x, y| (x + y) as f64);
        let g = Grid::filled(2, 2, 0.5);
        let none = Mask::new(2, 2);
        let all = Mask::filled(2, 2, true);
        assert_eq!(masked_mae(&[&p], &[&g], &[&none]).unwrap(), (4.0f64 - 2.0).abs());
        assert_eq!(masked_mae(&[&p], &[&g], &[&all]).unwrap(), 0.0);
        assert!(masked_mae(&[&p], &[&g], &[&Mask::new(3, 2)]).is_err());
    }

    fn gt_single_pixel(values: [[f64; 3]; 3]) -> GroundTruth {
        let mut d = DensityStack::zeros("img", 1, 1, 1);
        let mut overall = 0.0;
        for a in 0..3 {
            for l in 0..3 {
                *d.channels[a][l].get_mut(0, 0) = values[a][l];
            }
        }
        for l in 0..3 {
            overall += values[0][l];
        }
        *d.overall.get_mut(0, 0) = overall;
        GroundTruth::new(d, 1e-4).unwrap()
    }

    #[test]
    fn class_mse_single_pixel() {
        let gt = gt_single_pixel([[0.0, 0.0, 0.0]; 3]);
        let mut pred = PredictionStack::from_density(&gt.density);
        assert_eq!(loss_class_mse(&pred, &gt, true).unwrap(), 0.0);
        *pred.classes[0][0].get_mut(0, 0) = 0.5;
        assert_eq!(loss_class_mse(&pred, &gt, false).unwrap(), 0.25);
    }

    #[test]
    fn swapped_classes_keep_total_loss_zero() {
        let gt = gt_single_pixel([[0.3, 0.1, 0.0], [0.2, 0.2, 0.0], [0.4, 0.0, 0.0]]);
        let mut pred = PredictionStack::from_density(&gt.density);
        pred.classes[0].swap(0, 1);
        assert_eq!(loss_total_count(&pred, &gt).unwrap(), 0.0);
        assert!(loss_class_mse(&pred, &gt, true).unwrap() > 0.0);
    }

    fn seg_pred(p: [f64; 3]) -> SegGrids {
        std::array::from_fn(|_| std::array::from_fn(|c| Grid::filled(1, 1, p[c])))
    }

    #[test]
    fn soft_xent_examples() {
        let bg = gt_single_pixel([[0.0; 3]; 3]);
        let seg = SegmentationStack::from_density(&bg.density, 1e-4).unwrap();
        let l = loss_soft_xent(&seg_pred([0.0, 0.0, 1.0]), &seg, &bg.masks).unwrap();
        assert!(l.abs() <= 1e-10);
        let l = loss_soft_xent(&seg_pred([1.0 / 3.0; 3]), &seg, &bg.masks).unwrap();
        assert!((l - 3.0 * 3f64.ln()).abs() < 1e-12);

        let fg = gt_single_pixel([[0.03, 0.01, 0.0]; 3]);
        let seg = SegmentationStack::from_density(&fg.density, 1e-4).unwrap();
        let l = loss_soft_xent(&seg_pred([0.5, 0.3, 0.2]), &seg, &fg.masks).unwrap();
        let per_pixel = -(0.75 * 0.5f64.ln() + 0.25 * 0.3f64.ln());
        assert!((l - 3.0 * per_pixel).abs() < 1e-12);

        assert!(loss_soft_xent(&seg_pred([0.5, 0.5, 0.5]), &seg, &fg.masks).is_err());
    }

    #[test]
    fn fusion_examples() {
        let overall = Grid::from_fn(3, 2, |x, y| (x * y) as f64 + 0.5);
        let ones: ClassGrids = std::array::from_fn(|_| [Grid::filled(3, 2, 1.0), Grid::filled(3, 2, 0.0)]);
        let fused = fuse_density_segmentation(&overall, &ones).unwrap();
        assert_eq!(fused[0][0], overall);
        let halves: ClassGrids = std::array::from_fn(|_| [Grid::filled(3, 2, 0.5), Grid::filled(3, 2, 0.5)]);
        let fused = fuse_density_segmentation(&overall, &halves).unwrap();
        assert_eq!(fused[1][0].sum(), overall.sum() / 2.0);
        let bad: ClassGrids = std::array::from_fn(|_| [Grid::filled(2, 2, 0.5), Grid::filled(2, 2, 0.5)]);
        assert!(fuse_density_segmentation(&overall, &bad).is_err());
    }

    #[test]
    fn evaluate_identity_and_unpaired() {
        let gt = gt_single_pixel([[0.3, 0.1, 0.2]; 3]);
        let pred = PredictionStack::from_density(&gt.density);
        let r = evaluate(&[pred.clone()], &[gt.clone()]).unwrap();
        assert_eq!((r.mae, r.cmmae), (0.0, 0.0));
        let mut other = pred;
        other.image_id = "zzz".into();
        match evaluate(&[other], &[gt]) {
            Err(Error::UnpairedImages(ids)) => assert_eq!(ids, vec!["img".to_string(), "zzz".to_string()]),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn total_count_without_overall() {
        let gt = gt_single_pixel([[0.3, 0.1, 0.0], [0.1, 0.1, 0.0], [0.0, 0.1, 0.0]]);
        let mut pred = PredictionStack::from_density(&gt.density);
        pred.overall = None;
        assert!((pred.total_count() - 0.7 / 3.0).abs() < 1e-12);
    }
}
