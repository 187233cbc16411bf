//! Dense row-major grids and channel stacks.

use thiserror::Error;

use crate::scalar::Scalar;

/// Shape disagreement between two grids or stacks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: {left} vs {right}")]
pub struct ShapeMismatch {
    pub left: String,
    pub right: String,
}

impl ShapeMismatch {
    pub(crate) fn new(left: impl Into<String>, right: impl Into<String>) -> Self {
        Self {
            left: left.into(),
            right: right.into(),
        }
    }
}

/// A `height × width` grid of reals stored row-major.
///
/// Used for the input image, every intermediate map and the final saliency
/// map. The CAM path only ever builds square grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    /// Wraps `data`; fails when its length is not `height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self, ShapeMismatch> {
        if data.len() != height * width {
            return Err(ShapeMismatch::new(
                format!("{height}x{width} grid"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn square(side: usize, data: Vec<T>) -> Result<Self, ShapeMismatch> {
        Self::from_vec(side, side, data)
    }

    /// Builds a grid from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for r in rows {
            assert_eq!(r.as_ref().len(), width, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Side length of a square grid (the height for rectangles).
    #[inline]
    pub fn side(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| U::of(x.wide())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(min, max)` over all entries, `None` for an empty grid.
    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| {
            (if x < lo { x } else { lo }, if x > hi { x } else { hi })
        }))
    }

    pub fn max_value(&self) -> Option<T> {
        self.min_max().map(|(_, hi)| hi)
    }

    pub fn shape_string(&self) -> String {
        format!("({}, {})", self.height, self.width)
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<(), ShapeMismatch> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(ShapeMismatch::new(
                self.shape_string(),
                other.shape_string(),
            ))
        }
    }
}

/// `K` square `G × G` grids: the feature stack `A` or its gradient stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack<T> {
    side: usize,
    maps: Vec<Grid<T>>,
}

/// Activations of one layer, `K × G × G`.
pub type FeatureStack<T> = Stack<T>;
/// Class-score gradients with respect to [`FeatureStack`], same shape.
pub type GradientStack<T> = Stack<T>;

impl<T: Scalar> Stack<T> {
    /// Builds a stack from per-channel grids; all must be `side × side`.
    pub fn from_maps(side: usize, maps: Vec<Grid<T>>) -> Result<Self, ShapeMismatch> {
        if let Some(bad) = maps.iter().find(|m| m.dims() != (side, side)) {
            return Err(ShapeMismatch::new(
                format!("({side}, {side}) channel"),
                bad.shape_string(),
            ));
        }
        Ok(Self { side, maps })
    }

    /// Splits a flat C-order `(channels, side, side)` buffer.
    pub fn from_flat(channels: usize, side: usize, data: &[T]) -> Result<Self, ShapeMismatch> {
        let plane = side * side;
        if data.len() != channels * plane {
            return Err(ShapeMismatch::new(
                format!("({channels}, {side}, {side})"),
                format!("{} values", data.len()),
            ));
        }
        let maps = if plane == 0 {
            (0..channels).map(|_| Grid::zeros(side, side)).collect()
        } else {
            data.chunks_exact(plane)
                .map(|c| Grid {
                    height: side,
                    width: side,
                    data: c.to_vec(),
                })
                .collect()
        };
        Ok(Self { side, maps })
    }

    pub fn filled(channels: usize, side: usize, value: T) -> Self {
        Self {
            side,
            maps: (0..channels)
                .map(|_| Grid::filled(side, side, value))
                .collect(),
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.maps.len()
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// `(K, G, G)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.maps.len(), self.side, self.side)
    }

    pub fn shape_string(&self) -> String {
        let (k, g, _) = self.shape();
        format!("({k}, {g}, {g})")
    }

    #[inline]
    pub fn channel(&self, k: usize) -> &Grid<T> {
        &self.maps[k]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut Grid<T> {
        &mut self.maps[k]
    }

    pub fn maps(&self) -> &[Grid<T>] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<Grid<T>> {
        self.maps
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Grid<T>> {
        self.maps.iter()
    }

    /// Flattened C-order copy of the stack.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.maps.len() * self.side * self.side);
        for m in &self.maps {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    pub fn map_channels(&self, f: impl Fn(&Grid<T>) -> Grid<T>) -> Self {
        let maps: Vec<Grid<T>> = self.maps.iter().map(f).collect();
        let side = maps.first().map_or(self.side, |m| m.side());
        Self { side, maps }
    }

    pub fn cast<U: Scalar>(&self) -> Stack<U> {
        Stack {
            side: self.side,
            maps: self.maps.iter().map(Grid::cast).collect(),
        }
    }

    /// Reorders channels so that output channel `i` is input channel `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            side: self.side,
            maps: order.iter().map(|&k| self.maps[k].clone()).collect(),
        }
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        self.map_channels(|m| m.map(|x| x * factor))
    }

    pub fn all_finite(&self) -> bool {
        self.maps.iter().all(Grid::all_finite)
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<(), ShapeMismatch> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(ShapeMismatch::new(
                self.shape_string(),
                other.shape_string(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Grid::<f32>::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Grid::<f32>::from_vec(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn flat_round_trip() {
        let data: Vec<f32> = (0..18).map(|x| x as f32).collect();
        let s = Stack::from_flat(2, 3, &data).unwrap();
        assert_eq!(s.shape(), (2, 3, 3));
        assert_eq!(s.channel(1).get(0, 0), 9.0);
        assert_eq!(s.to_flat(), data);
        assert!(Stack::from_flat(2, 3, &data[..17]).is_err());
    }

    #[test]
    fn min_max_scan() {
        let g = Grid::from_rows(&[[1.0f64, -2.0], [7.0, 3.0]]);
        assert_eq!(g.min_max(), Some((-2.0, 7.0)));
        assert_eq!(Grid::<f64>::zeros(0, 0).min_max(), None);
    }
}
