//! Ground-truth map generation: density stacks, soft segmentation,
//! background channel and unknown-region loss masks.
//!
//! Every object contributes exactly one unit of mass (when renormalization is
//! on). The mass goes to the overall grid and, for each attribute, to the
//! channel of the object's label for that attribute, so the three channels of
//! an attribute always add up to the overall grid.
//!
//! Points are rasterized to the pixel containing them, `(floor(x), floor(y))`.
//! Kernels are sampled Gaussians truncated to a disk of radius
//! `truncation * sigma` pixels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, NUM_ATTRIBUTES, NUM_CLASSES};
use crate::cluster::{AggregatedObject, Point};
use crate::error::{Error, Result};
use crate::grid::{downsample_preserving_count, Grid, Mask};

/// Division guard for the soft segmentation ratio.
pub const EPS_DIV: f64 = 1e-12;
/// Default density threshold separating foreground from background.
pub const DEFAULT_TAU: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma: f64,
    /// Truncation radius as a multiple of `sigma`.
    pub truncation: f64,
    /// Rescale each object's in-image mass to exactly 1.
    pub renormalize: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            sigma: 12.0,
            truncation: 4.0,
            renormalize: true,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.truncation.is_finite() && self.truncation >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation must be at least 1, got {}",
                self.truncation
            )));
        }
        Ok(())
    }

    /// Radius of the kernel window in whole pixels.
    pub fn radius(&self) -> usize {
        (self.truncation * self.sigma).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    /// One kernel at the cluster medoid.
    Fixed,
    /// Weight `1/J` at each of the `J` member dots, then smoothed.
    #[default]
    Cluster,
}

impl fmt::Display for DensityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensityMethod::Fixed => "fixed",
            DensityMethod::Cluster => "cluster",
        })
    }
}

/// Sampled, truncated Gaussian normalized to unit sum over its disk.
#[derive(Clone, Debug)]
pub struct KernelTable {
    radius: usize,
    side: usize,
    weights: Vec<f64>,
    /// Per row, running sums of the weights (`side + 1` entries each).
    row_prefix: Vec<f64>,
    /// Per row, the inclusive column range holding nonzero weights.
    row_span: Vec<(usize, usize)>,
}

impl KernelTable {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let radius = spec.radius();
        let side = 2 * radius + 1;
        let cutoff = spec.truncation * spec.sigma;
        let two_var = 2.0 * spec.sigma * spec.sigma;
        let mut weights = vec![0.0; side * side];
        for dy in 0..side {
            for dx in 0..side {
                let (ox, oy) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
                let r2 = ox * ox + oy * oy;
                if r2 <= cutoff * cutoff {
                    weights[dy * side + dx] = (-r2 / two_var).exp();
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut row_prefix = Vec::with_capacity(side * (side + 1));
        let mut row_span = Vec::with_capacity(side);
        for row in weights.chunks(side) {
            let mut acc = 0.0;
            row_prefix.push(acc);
            for w in row {
                acc += w;
                row_prefix.push(acc);
            }
            let first = row.iter().position(|w| *w > 0.0);
            let last = row.iter().rposition(|w| *w > 0.0);
            row_span.push(first.zip(last).unwrap_or((1, 0)));
        }
        Ok(KernelTable {
            radius,
            side,
            weights,
            row_prefix,
            row_span,
        })
    }

    /// Sum of row `ky` over kernel columns `a..=b`.
    fn row_sum(&self, ky: usize, a: usize, b: usize) -> f64 {
        let (lo, hi) = self.row_span[ky];
        let (a, b) = (a.max(lo), b.min(hi));
        if a > b {
            return 0.0;
        }
        let p = &self.row_prefix[ky * (self.side + 1)..];
        p[b + 1] - p[a]
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weight at integer offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: i64, dy: i64) -> f64 {
        let r = self.radius as i64;
        if dx.abs() > r || dy.abs() > r {
            return 0.0;
        }
        self.weights[(dy + r) as usize * self.side + (dx + r) as usize]
    }
}

/// Image dimensions in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// The pixel containing `p`, or an error if `p` lies outside the image.
    pub fn rasterize(&self, p: Point) -> Result<(usize, usize)> {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64) {
            return Err(Error::InvalidParameter(format!(
                "point ({}, {}) outside {}x{} image",
                p.x, p.y, self.width, self.height
            )));
        }
        Ok((p.x as usize, p.y as usize))
    }
}

/// Per-image density maps: the overall grid plus, per attribute, one grid per
/// label (class0, class1, unknown).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityStack {
    pub image_id: String,
    pub downsample_factor: usize,
    pub overall: Grid,
    /// Indexed `[attribute][label]`.
    pub channels: [[Grid; 3]; NUM_ATTRIBUTES],
}

impl DensityStack {
    pub fn zeros(image_id: impl Into<String>, width: usize, height: usize, downsample_factor: usize) -> Self {
        let g = Grid::new(width, height);
        DensityStack {
            image_id: image_id.into(),
            downsample_factor,
            overall: g.clone(),
            channels: std::array::from_fn(|_| std::array::from_fn(|_| g.clone())),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.overall.dims()
    }

    pub fn channel(&self, attribute: Attribute, label: Label) -> &Grid {
        &self.channels[attribute.index()][label.index()]
    }

    /// Number of objects, i.e. the integral of the overall grid.
    pub fn count(&self) -> f64 {
        self.overall.sum()
    }

    /// Sum-pools every grid by `factor`.
    pub fn downsample(&self, factor: usize) -> Result<DensityStack> {
        let pool = |g: &Grid| downsample_preserving_count(g, factor);
        let mut channels: [[Grid; 3]; NUM_ATTRIBUTES] = Default::default();
        for (a, row) in self.channels.iter().enumerate() {
            for (l, g) in row.iter().enumerate() {
                channels[a][l] = pool(g)?;
            }
        }
        Ok(DensityStack {
            image_id: self.image_id.clone(),
            downsample_factor: self.downsample_factor * factor,
            overall: pool(&self.overall)?,
            channels,
        })
    }
}

/// A rendered object before it is added to a stack: a window anchored at
/// `(x0, y0)`.
struct Footprint {
    x0: usize,
    y0: usize,
    width: usize,
    values: Vec<f64>,
}

/// Weighted impulses of one object, keyed by pixel `(y, x)`; weights at the
/// same pixel accumulate.
fn impulses(obj: &AggregatedObject, dims: Dims, method: DensityMethod) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut out = BTreeMap::new();
    match method {
        DensityMethod::Fixed => {
            let (x, y) = dims.rasterize(obj.medoid)?;
            out.insert((y, x), 1.0);
        }
        DensityMethod::Cluster => {
            if obj.members.is_empty() {
                return Err(Error::InvalidParameter("object without member dots".into()));
            }
            let w = 1.0 / obj.members.len() as f64;
            for p in obj.member_points() {
                let (x, y) = dims.rasterize(p)?;
                *out.entry((y, x)).or_insert(0.0) += w;
            }
        }
    }
    Ok(out)
}

fn render_footprint(
    impulses: &BTreeMap<(usize, usize), f64>,
    dims: Dims,
    table: &KernelTable,
    renormalize: bool,
) -> Footprint {
    let r = table.radius;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &(y, x) in impulses.keys() {
        x0 = x0.min(x.saturating_sub(r));
        y0 = y0.min(y.saturating_sub(r));
        x1 = x1.max((x + r).min(dims.width - 1));
        y1 = y1.max((y + r).min(dims.height - 1));
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut values = vec![0.0; bw * bh];
    for (&(py, px), &w) in impulses {
        let ky_lo = r.saturating_sub(py);
        let ky_hi = (r + dims.height - 1 - py).min(2 * r);
        let kx_lo = r.saturating_sub(px);
        let kx_hi = (r + dims.width - 1 - px).min(2 * r);
        for ky in ky_lo..=ky_hi {
            let y = py + ky - r;
            let krow = &table.weights[ky * table.side + kx_lo..=ky * table.side + kx_hi];
            let start = (y - y0) * bw + (px + kx_lo - r - x0);
            let out = &mut values[start..start + krow.len()];
            for (o, k) in out.iter_mut().zip(krow) {
                *o += w * k;
            }
        }
    }
    if renormalize {
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            let scale = 1.0 / total;
            values.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Footprint {
        x0,
        y0,
        width: bw,
        values,
    }
}

/// Density of a single object at full resolution.
pub fn object_density(obj: &AggregatedObject, dims: Dims, kernel: &KernelSpec, method: DensityMethod) -> Result<Grid> {
    dims.validate()?;
    let table = KernelTable::new(kernel)?;
    let fp = render_footprint(&impulses(obj, dims, method)?, dims, &table, kernel.renormalize);
    let mut g = Grid::new(dims.width, dims.height);
    for (i, v) in fp.values.iter().enumerate() {
        *g.get_mut(fp.x0 + i % fp.width, fp.y0 + i / fp.width) += v;
    }
    Ok(g)
}

/// Kernel tables for one kernel and output resolution, reusable across
/// images.
#[derive(Clone, Debug)]
pub struct DensityRenderer {
    table: KernelTable,
    renormalize: bool,
    downsample: usize,
    /// Pooled kernel for each sub-cell phase `fy * downsample + fx`:
    /// width, height and cells.
    phases: Vec<(usize, usize, Vec<f64>)>,
}

impl DensityRenderer {
    pub fn new(kernel: &KernelSpec, downsample: usize) -> Result<Self> {
        if downsample == 0 {
            return Err(Error::InvalidParameter("downsample factor must be positive".into()));
        }
        let table = KernelTable::new(kernel)?;
        let (ds, span) = (downsample, table.side - 1);
        let mut phases = Vec::new();
        if ds > 1 {
            for fy in 0..ds {
                for fx in 0..ds {
                    let (w, h) = ((fx + span) / ds + 1, (fy + span) / ds + 1);
                    let mut cells = vec![0.0; w * h];
                    for ky in 0..table.side {
                        let row = &mut cells[(fy + ky) / ds * w..][..w];
                        for (cx, c) in row.iter_mut().enumerate() {
                            let lo = (cx * ds).saturating_sub(fx);
                            let hi = ((cx + 1) * ds - 1 - fx).min(span);
                            *c += table.row_sum(ky, lo, hi);
                        }
                    }
                    phases.push((w, h, cells));
                }
            }
        }
        Ok(DensityRenderer {
            table,
            renormalize: kernel.renormalize,
            downsample,
            phases,
        })
    }

    /// Renders a density stack at `1/downsample` resolution: each object's
    /// full-resolution density, sum-pooled into the output grids.
    pub fn render(
        &self,
        image_id: &str,
        objects: &[AggregatedObject],
        dims: Dims,
        method: DensityMethod,
    ) -> Result<DensityStack> {
        dims.validate()?;
        let ds = self.downsample;
        let mut stack = DensityStack::zeros(image_id, dims.width.div_ceil(ds), dims.height.div_ceil(ds), ds);
        for obj in objects {
            let fp = self.footprint(&impulses(obj, dims, method)?, dims);
            let labels: [usize; NUM_ATTRIBUTES] = std::array::from_fn(|a| obj.labels.0[a].index());
            let mut targets = vec![&mut stack.overall];
            for (row, &l) in stack.channels.iter_mut().zip(&labels) {
                targets.push(&mut row[l]);
            }
            for g in targets {
                for (r, src) in fp.values.chunks(fp.width).enumerate() {
                    let out = &mut g.row_mut(fp.y0 + r)[fp.x0..fp.x0 + fp.width];
                    for (o, v) in out.iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
        }
        Ok(stack)
    }

    /// One object's density in output cells. Impulses whose kernel lies
    /// inside the image use the pooled kernel of their phase; the others
    /// sum clipped kernel rows cell by cell.
    fn footprint(&self, impulses: &BTreeMap<(usize, usize), f64>, dims: Dims) -> Footprint {
        let (ds, table) = (self.downsample, &self.table);
        if ds == 1 {
            return render_footprint(impulses, dims, table, self.renormalize);
        }
        let r = table.radius;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(y, x) in impulses.keys() {
            x0 = x0.min(x.saturating_sub(r) / ds);
            y0 = y0.min(y.saturating_sub(r) / ds);
            x1 = x1.max((x + r).min(dims.width - 1) / ds);
            y1 = y1.max((y + r).min(dims.height - 1) / ds);
        }
        let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut values = vec![0.0; bw * bh];
        let mut runs = Vec::new();
        for (&(py, px), &w) in impulses {
            if px >= r && py >= r && px + r < dims.width && py + r < dims.height {
                let (ox, oy) = (px - r, py - r);
                let (pw, ph, cells) = &self.phases[(oy % ds) * ds + ox % ds];
                let (cx, cy) = (ox / ds - x0, oy / ds - y0);
                for (row, src) in cells.chunks(*pw).enumerate().take(*ph) {
                    let out = &mut values[(cy + row) * bw + cx..][..*pw];
                    for (o, k) in out.iter_mut().zip(src) {
                        *o += w * k;
                    }
                }
                continue;
            }
            let ky_lo = r.saturating_sub(py);
            let ky_hi = (r + dims.height - 1 - py).min(2 * r);
            let kx_lo = r.saturating_sub(px);
            let kx_hi = (r + dims.width - 1 - px).min(2 * r);
            runs.clear();
            let mut k = kx_lo;
            while k <= kx_hi {
                let cell = (px + k - r) / ds;
                let end = ((cell + 1) * ds - 1 + r - px).min(kx_hi);
                runs.push((cell - x0, k, end));
                k = end + 1;
            }
            for ky in ky_lo..=ky_hi {
                let row = &mut values[((py + ky - r) / ds - y0) * bw..][..bw];
                for &(c, lo, hi) in &runs {
                    row[c] += w * table.row_sum(ky, lo, hi);
                }
            }
        }
        if self.renormalize {
            let total: f64 = values.iter().sum();
            if total > 0.0 {
                let scale = 1.0 / total;
                values.iter_mut().for_each(|v| *v *= scale);
            }
        }
        Footprint {
            x0,
            y0,
            width: bw,
            values,
        }
    }
}

/// Renders a density stack at `1/downsample` resolution. See
/// [`DensityRenderer`] to reuse the kernel tables across images.
pub fn render_density(
    image_id: &str,
    objects: &[AggregatedObject],
    dims: Dims,
    kernel: &KernelSpec,
    method: DensityMethod,
    downsample: usize,
) -> Result<DensityStack> {
    dims.validate()?;
    DensityRenderer::new(kernel, downsample)?.render(image_id, objects, dims, method)
}

fn image_id_of(objects: &[AggregatedObject]) -> &str {
    objects.first().map(|o| o.image_id.as_str()).unwrap_or("")
}

/// One kernel per object at its medoid.
pub fn fixed_kernel_density(objects: &[AggregatedObject], dims: Dims, kernel: &KernelSpec) -> Result<DensityStack> {
    render_density(image_id_of(objects), objects, dims, kernel, DensityMethod::Fixed, 1)
}

/// Weight `1/J_k` at every member dot of object `k`, smoothed by the kernel.
pub fn cluster_spread_density(objects: &[AggregatedObject], dims: Dims, kernel: &KernelSpec) -> Result<DensityStack> {
    render_density(image_id_of(objects), objects, dims, kernel, DensityMethod::Cluster, 1)
}

/// Per attribute, the fraction of known-class density held by each class.
pub type SoftSegmentation = [[Grid; NUM_CLASSES]; NUM_ATTRIBUTES];

/// `S_c = D_c / (D_class0 + D_class1)` where the denominator exceeds
/// [`EPS_DIV`], zero elsewhere, clamped to `[0, 1]`.
pub fn soft_segmentation(density: &DensityStack) -> SoftSegmentation {
    std::array::from_fn(|a| {
        let [d0, d1, _] = &density.channels[a];
        let ratio = |num: &Grid| {
            Grid::from_fn(num.width(), num.height(), |x, y| {
                let den = d0.get(x, y) + d1.get(x, y);
                if den > EPS_DIV {
                    (num.get(x, y) / den).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
        };
        [ratio(d0), ratio(d1)]
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Set where the overall density is below `tau`.
pub fn background_channel(density: &DensityStack, tau: f64) -> Result<Mask> {
    check_tau(tau)?;
    Ok(density.overall.map(|&v| v < tau))
}

/// Per attribute, set on foreground pixels where the unknown channel exceeds
/// both known channels. Masked pixels are excluded from class losses and
/// masked metrics.
pub fn unknown_loss_mask(density: &DensityStack, tau: f64) -> Result<[Mask; NUM_ATTRIBUTES]> {
    check_tau(tau)?;
    let overall = &density.overall;
    Ok(std::array::from_fn(|a| {
        let [d0, d1, du] = &density.channels[a];
        Grid::from_fn(overall.width(), overall.height(), |x, y| {
            *overall.get(x, y) >= tau && *du.get(x, y) > d0.get(x, y).max(*d1.get(x, y))
        })
    }))
}

/// Soft segmentation channels with the background channel and unknown masks.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationStack {
    pub soft: SoftSegmentation,
    pub background: Mask,
    pub unknown_mask: [Mask; NUM_ATTRIBUTES],
}

impl SegmentationStack {
    pub fn from_density(density: &DensityStack, tau: f64) -> Result<Self> {
        Ok(SegmentationStack {
            soft: soft_segmentation(density),
            background: background_channel(density, tau)?,
            unknown_mask: unknown_loss_mask(density, tau)?,
        })
    }

    /// Segmentation target `(class0, class1, background)` at a pixel:
    /// the soft values on foreground, `(0, 0, 1)` on background.
    pub fn target(&self, attribute: Attribute, x: usize, y: usize) -> [f64; 3] {
        if *self.background.get(x, y) {
            [0.0, 0.0, 1.0]
        } else {
            let [s0, s1] = &self.soft[attribute.index()];
            [*s0.get(x, y), *s1.get(x, y), 0.0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::Responses;
    use crate::ingest::DotAnnotation;

    fn object(points: &[(f64, f64)], labels: Responses) -> AggregatedObject {
        let members: Vec<DotAnnotation> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| DotAnnotation {
                image_id: "img".into(),
                user_id: format!("u{i}"),
                x,
                y,
                responses: labels,
            })
            .collect();
        AggregatedObject {
            image_id: "img".into(),
            medoid: Point::new(points[0].0, points[0].1),
            members,
            labels,
        }
    }

    fn known() -> Responses {
        Responses::new(Label::Class0, Label::Class1, Label::Class0)
    }

    #[test]
    fn single_object_unit_integral() {
        let s = fixed_kernel_density(&[object(&[(200.5, 150.2)], known())], Dims::new(400, 300), &KernelSpec::default()).unwrap();
        assert!((s.count() - 1.0).abs() < 1e-12);
        assert!((s.channel(Attribute::Sex, Label::Class1).sum() - 1.0).abs() < 1e-12);
        assert_eq!(s.channel(Attribute::Sex, Label::Class0).sum(), 0.0);
    }

    #[test]
    fn no_objects_all_zero() {
        let s = fixed_kernel_density(&[], Dims::new(10, 10), &KernelSpec::default()).unwrap();
        assert!(s.overall.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.channels.iter().flatten().all(|g| g.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn unknown_label_routes_to_unknown_channel() {
        let labels = Responses::new(Label::Unknown, Label::Class0, Label::Class0);
        let s = fixed_kernel_density(&[object(&[(50.0, 50.0)], labels)], Dims::new(100, 100), &KernelSpec::default()).unwrap();
        assert!((s.channel(Attribute::Species, Label::Unknown).sum() - 1.0).abs() < 1e-12);
        assert_eq!(s.channel(Attribute::Species, Label::Class0).sum(), 0.0);
        assert_eq!(s.channel(Attribute::Species, Label::Class1).sum(), 0.0);
    }

    #[test]
    fn bad_dims_and_kernel() {
        let o = [object(&[(0.0, 0.0)], known())];
        assert!(fixed_kernel_density(&o, Dims::new(0, 10), &KernelSpec::default()).is_err());
        let k = KernelSpec {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(fixed_kernel_density(&o, Dims::new(10, 10), &k).is_err());
        assert!(fixed_kernel_density(&[object(&[(10.0, 3.0)], known())], Dims::new(10, 10), &KernelSpec::default()).is_err());
    }

    #[test]
    fn coincident_members_equal_fixed_kernel() {
        let dims = Dims::new(120, 90);
        let k = KernelSpec::default();
        let one = object(&[(40.3, 50.9)], known());
        let four = object(&[(40.3, 50.9), (40.7, 50.1), (40.0, 50.5), (40.9, 50.99)], known());
        let fixed = fixed_kernel_density(&[one], dims, &k).unwrap();
        let spread = cluster_spread_density(&[four], dims, &k).unwrap();
        assert_eq!(fixed.overall, spread.overall);
    }

    #[test]
    fn border_object_renormalized() {
        let s = fixed_kernel_density(&[object(&[(0.0, 0.0)], known())], Dims::new(60, 60), &KernelSpec::default()).unwrap();
        assert!((s.count() - 1.0).abs() < 1e-12);
        let k = KernelSpec {
            renormalize: false,
            ..Default::default()
        };
        let s = fixed_kernel_density(&[object(&[(0.0, 0.0)], known())], Dims::new(60, 60), &k).unwrap();
        assert!(s.count() < 0.3);
    }

    #[test]
    fn downsampled_render_matches_pooled_full_render() {
        let dims = Dims::new(97, 61);
        let objs = [object(&[(10.0, 10.0), (14.0, 12.0)], known()), object(&[(80.0, 50.0)], known())];
        let k = KernelSpec::default();
        let full = render_density("img", &objs, dims, &k, DensityMethod::Cluster, 1).unwrap();
        let direct = render_density("img", &objs, dims, &k, DensityMethod::Cluster, 8).unwrap();
        let pooled = full.downsample(8).unwrap();
        assert_eq!(direct.dims(), pooled.dims());
        for (a, b) in direct.overall.as_slice().iter().zip(pooled.overall.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(direct.downsample_factor, 8);
    }

    fn stack_with(d0: f64, d1: f64, du: f64) -> DensityStack {
        let mut s = DensityStack::zeros("img", 1, 1, 1);
        for a in 0..3 {
            *s.channels[a][0].get_mut(0, 0) = d0;
            *s.channels[a][1].get_mut(0, 0) = d1;
            *s.channels[a][2].get_mut(0, 0) = du;
        }
        *s.overall.get_mut(0, 0) = d0 + d1 + du;
        s
    }

    #[test]
    fn soft_segmentation_examples() {
        let s = soft_segmentation(&stack_with(0.2, 0.0, 0.0));
        assert_eq!((*s[0][0].get(0, 0), *s[0][1].get(0, 0)), (1.0, 0.0));
        let s = soft_segmentation(&stack_with(0.03, 0.01, 0.0));
        assert!((s[1][0].get(0, 0) - 0.75).abs() < 1e-12);
        assert!((s[1][1].get(0, 0) - 0.25).abs() < 1e-12);
        let s = soft_segmentation(&stack_with(0.0, 0.0, 0.5));
        assert_eq!((*s[2][0].get(0, 0), *s[2][1].get(0, 0)), (0.0, 0.0));
    }

    #[test]
    fn background_threshold() {
        let empty = DensityStack::zeros("img", 4, 3, 1);
        assert_eq!(background_channel(&empty, DEFAULT_TAU).unwrap().count_set(), 12);
        let s = stack_with(0.2, 0.0, 0.0);
        assert!(!*background_channel(&s, f64::MIN_POSITIVE).unwrap().get(0, 0));
        assert!(background_channel(&s, 0.0).is_err());
    }

    #[test]
    fn mask_rules() {
        assert!(*unknown_loss_mask(&stack_with(0.1, 0.1, 0.15), 1e-4).unwrap()[0].get(0, 0));
        // unknown must beat the larger known class, not their sum
        assert!(!*unknown_loss_mask(&stack_with(0.1, 0.2, 0.15), 1e-4).unwrap()[0].get(0, 0));
        // background pixels are never masked
        assert!(!*unknown_loss_mask(&stack_with(0.0, 0.0, 5e-5), 1e-4).unwrap()[0].get(0, 0));
    }

    #[test]
    fn targets() {
        let s = SegmentationStack::from_density(&stack_with(0.03, 0.01, 0.0), 1e-4).unwrap();
        let t = s.target(Attribute::Age, 0, 0);
        assert!((t[0] - 0.75).abs() < 1e-12 && (t[1] - 0.25).abs() < 1e-12 && t[2] == 0.0);
        let s = SegmentationStack::from_density(&stack_with(0.0, 0.0, 0.0), 1e-4).unwrap();
        assert_eq!(s.target(Attribute::Age, 0, 0), [0.0, 0.0, 1.0]);
    }
}
