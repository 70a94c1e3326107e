//! Dense row-major 2-D grids.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T = f64> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary grid; `true` marks a set pixel.
pub type Mask = Grid<bool>;

impl<T: Clone + Default> Grid<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [T] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Errors unless both grids have the same dimensions.
    pub fn check_same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

impl Grid<f64> {
    /// Sum of all cells, accumulated in row-major order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over cells where `mask` is not set.
    pub fn sum_unmasked(&self, mask: &Mask) -> f64 {
        self.data
            .iter()
            .zip(&mask.data)
            .filter(|(_, &m)| !m)
            .map(|(v, _)| *v)
            .sum()
    }

    pub fn zip_map(&self, other: &Grid<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Grid<f64>> {
        self.check_same_dims(other, "elementwise operation")?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Grid<f64>) -> Result<()> {
        self.check_same_dims(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

impl Default for Grid<f64> {
    fn default() -> Self {
        Grid::new(0, 0)
    }
}

impl Mask {
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Sum-pools `factor x factor` blocks. Dimensions that are not multiples of
/// `factor` are padded with zeros, so the output is `ceil(w/f) x ceil(h/f)`
/// and the total is preserved.
pub fn downsample_preserving_count(grid: &Grid<f64>, factor: usize) -> Result<Grid<f64>> {
    if factor == 0 {
        return Err(Error::InvalidParameter("downsample factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (w, h) = grid.dims();
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut out = Grid::new(ow, oh);
    for y in 0..h {
        let orow = out.row_mut(y / factor);
        for (x, v) in grid.row(y).iter().enumerate() {
            orow[x / factor] += *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_is_identity() {
        let g = Grid::from_fn(3, 2, |x, y| (x * 10 + y) as f64);
        assert_eq!(downsample_preserving_count(&g, 1).unwrap(), g);
    }

    #[test]
    fn block_sums() {
        let g = Grid::filled(4, 4, 1.0);
        let d = downsample_preserving_count(&g, 2).unwrap();
        assert_eq!(d, Grid::filled(2, 2, 4.0));
    }

    #[test]
    fn pads_with_zeros() {
        let g = Grid::filled(5, 3, 1.0);
        let d = downsample_preserving_count(&g, 2).unwrap();
        assert_eq!(d.dims(), (3, 2));
        assert_eq!(d.as_slice(), &[4.0, 4.0, 2.0, 2.0, 2.0, 1.0]);
        assert!(downsample_preserving_count(&g, 0).is_err());
    }

    #[test]
    fn from_vec_checks_len() {
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
