//! Dense-grid kernels: bilinear resampling, min-max normalization,
//! Hadamard product and ReLU.

use rayon::prelude::*;

use crate::grid::{Grid, ShapeMismatch};
use crate::scalar::{relu, Scalar};

/// Rows at or above this many output pixels are resampled in parallel.
const PARALLEL_PIXELS: usize = 64 * 64;

/// One output coordinate along an axis: two source taps and the blend factor.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center taps: `s = (i + 0.5) * src / dst - 0.5`, clamped to
/// `[0, src - 1]`.
fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            // (2i + 1) * src / (2 * dst) is exact in f64 for any realistic size.
            let s = ((2 * i + 1) * src) as f64 / (2 * dst) as f64 - 0.5;
            let s = s.clamp(0.0, last);
            let lo = s.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: s - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Resamples a square grid to `dst_side × dst_side` with bilinear weights.
///
/// The same kernel serves downsampling and upsampling. Each output value is
/// clamped to the range of its four source taps so the convex-combination
/// bound survives rounding.
///
/// # Panics
/// If `grid` is not square, is empty, or `dst_side == 0`.
pub fn resize_bilinear<T: Scalar>(grid: &Grid<T>, dst_side: usize) -> Grid<T> {
    assert!(grid.is_square(), "resize_bilinear needs a square grid");
    resize_bilinear_rect(grid, dst_side, dst_side)
}

/// Rectangular variant of [`resize_bilinear`].
pub fn resize_bilinear_rect<T: Scalar>(grid: &Grid<T>, dst_h: usize, dst_w: usize) -> Grid<T> {
    let (src_h, src_w) = grid.dims();
    assert!(src_h > 0 && src_w > 0, "cannot resample an empty grid");
    assert!(dst_h > 0 && dst_w > 0, "destination size must be positive");
    if (src_h, src_w) == (dst_h, dst_w) {
        return grid.clone();
    }

    let rows = axis_taps(src_h, dst_h);
    let cols = axis_taps(src_w, dst_w);
    let col_frac: Vec<T> = cols.iter().map(|t| T::of(t.frac)).collect();
    let src = grid.as_slice();

    let fill_row = |r: usize, out: &mut [T]| {
        let ty = rows[r];
        let fy = T::of(ty.frac);
        let top = &src[ty.lo * src_w..(ty.lo + 1) * src_w];
        let bot = &src[ty.hi * src_w..(ty.hi + 1) * src_w];
        for (c, (o, tx)) in out.iter_mut().zip(&cols).enumerate() {
            let (a, b, p, q) = (top[tx.lo], top[tx.hi], bot[tx.lo], bot[tx.hi]);
            let fx = col_frac[c];
            let v = lerp(lerp(a, b, fx), lerp(p, q, fx), fy);
            let lo = a.min(b).min(p.min(q));
            let hi = a.max(b).max(p.max(q));
            *o = v.max(lo).min(hi);
        }
    };

    let mut data = vec![T::zero(); dst_h * dst_w];
    if dst_h * dst_w >= PARALLEL_PIXELS {
        data.par_chunks_mut(dst_w)
            .enumerate()
            .for_each(|(r, out)| fill_row(r, out));
    } else {
        data.chunks_mut(dst_w)
            .enumerate()
            .for_each(|(r, out)| fill_row(r, out));
    }
    Grid::from_vec(dst_h, dst_w, data).expect("sized above")
}

/// Min-max normalization to `[0, 1]`. A constant grid maps to all zeros.
pub fn normalize_minmax<T: Scalar>(grid: &Grid<T>) -> Grid<T> {
    match grid.min_max() {
        Some((lo, hi)) if hi > lo => {
            let range = hi - lo;
            grid.map(|x| (x - lo) / range)
        }
        _ => Grid::zeros(grid.height(), grid.width()),
    }
}

/// Elementwise product of two equally shaped grids.
pub fn hadamard<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<Grid<T>, ShapeMismatch> {
    a.ensure_same_shape(b)?;
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x * y)
        .collect();
    Grid::from_vec(a.height(), a.width(), data)
}

/// Elementwise `max(x, 0)`.
pub fn relu_grid<T: Scalar>(a: &Grid<T>) -> Grid<T> {
    a.map(relu)
}
