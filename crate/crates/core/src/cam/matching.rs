//! Self-matching of weighted feature maps against the input image, and the
//! channel-weighted fusion that produces the final map.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::{CamError, ChannelWeights, SaliencyMap};
use crate::grid::{FeatureStack, Grid, ShapeMismatch, Stack};
use crate::ops::{hadamard, normalize_minmax, relu_grid, resize_bilinear};
use crate::scalar::Scalar;

/// Channels resampled concurrently per accumulation batch. Batching only
/// bounds memory; accumulation order does not depend on it.
const FUSE_BATCH: usize = 32;

/// `I_M = s(D(I_N))`, `A_hat_M^k = s(U(A_hat_G^k))`, returns
/// `A_tilde_M^k = I_M ∘ A_hat_M^k` for every channel.
pub fn self_match<T: Scalar>(
    image: &Grid<T>,
    weighted: &FeatureStack<T>,
    m: usize,
) -> Result<FeatureStack<T>, CamError> {
    if !image.is_square() {
        return Err(ShapeMismatch::new("square image", image.shape_string()).into());
    }
    let (g, n) = (weighted.side(), image.side());
    if m < g || m > n {
        return Err(CamError::BadIntermediateSize { m, g, n });
    }
    let image_m = normalize_minmax(&resize_bilinear(image, m));
    match_normalized(&image_m, weighted, m)
}

/// Matching with an already prepared `I_M`. [`self_match`] resamples and
/// normalizes the image first; this entry point lets callers substitute it.
pub fn match_normalized<T: Scalar>(
    image_m: &Grid<T>,
    weighted: &FeatureStack<T>,
    m: usize,
) -> Result<FeatureStack<T>, CamError> {
    if image_m.dims() != (m, m) {
        return Err(ShapeMismatch::new(format!("({m}, {m})"), image_m.shape_string()).into());
    }
    let maps = weighted
        .maps()
        .par_iter()
        .map(|a| {
            let up = normalize_minmax(&resize_bilinear(a, m));
            hadamard(image_m, &up).expect("both M x M")
        })
        .collect();
    Ok(Stack::from_maps(m, maps)?)
}

/// `L = s(ReLU(sum_k omega_k U(A_tilde^k)_N))`.
///
/// Each channel is upsampled to `N`, weighted, then summed; ReLU and
/// normalization follow.
pub fn fuse<T: Scalar>(
    matched: &FeatureStack<T>,
    weights: &ChannelWeights<T>,
    n: usize,
) -> Result<SaliencyMap<T>, CamError> {
    if weights.len() != matched.channels() {
        return Err(ShapeMismatch::new(
            format!("{} channel weights", matched.channels()),
            format!("{} weights", weights.len()),
        )
        .into());
    }
    if n == 0 {
        return Err(ShapeMismatch::new("output side >= 1", "0").into());
    }
    let summed = weighted_upsampled_sum(matched.maps(), weights.as_slice(), n);
    Ok(SaliencyMap::from_trusted(normalize_minmax(&relu_grid(
        &summed,
    ))))
}

/// Total order on `(weight, map)` pairs by bit pattern.
fn compare_channels<T: Scalar>(a: (T, &Grid<T>), b: (T, &Grid<T>)) -> Ordering {
    a.0.bit_key().cmp(&b.0.bit_key()).then_with(|| {
        let (x, y) = (a.1.as_slice(), b.1.as_slice());
        x.iter()
            .zip(y)
            .map(|(p, q)| p.bit_key().cmp(&q.bit_key()))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Channel indices with non-zero weight, in a content-defined order.
///
/// Summing in this order makes the result independent of how the channels
/// were numbered, bit for bit. Zero-weight channels are dropped; they add
/// exactly nothing.
pub(crate) fn canonical_order<T: Scalar>(maps: &[Grid<T>], weights: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..maps.len())
        .filter(|&k| weights[k] != T::zero())
        .collect();
    order.sort_by(|&i, &j| compare_channels((weights[i], &maps[i]), (weights[j], &maps[j])));
    order
}

/// `sum_k w_k U(maps_k)_n` with an `f64` accumulator and canonical channel
/// order.
pub(crate) fn weighted_upsampled_sum<T: Scalar>(
    maps: &[Grid<T>],
    weights: &[T],
    n: usize,
) -> Grid<T> {
    let order = canonical_order(maps, weights);
    let mut acc = vec![0.0f64; n * n];
    for batch in order.chunks(FUSE_BATCH) {
        let resized: Vec<Grid<T>> = batch
            .par_iter()
            .map(|&k| resize_bilinear(&maps[k], n))
            .collect();
        for (&k, up) in batch.iter().zip(&resized) {
            let w = weights[k].wide();
            for (a, v) in acc.iter_mut().zip(up.as_slice()) {
                *a += w * v.wide();
            }
        }
    }
    Grid::square(n, acc.into_iter().map(T::of).collect()).expect("n x n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_map() {
        let matched =
            Stack::from_maps(2, vec![Grid::from_rows(&[[0.1f32, 0.9], [0.4, 0.2]])]).unwrap();
        let map = fuse(&matched, &ChannelWeights::new(vec![0.0]), 4).unwrap();
        assert!(map.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_without_resampling() {
        let a = Grid::from_rows(&[[-0.5f64, 0.25], [1.0, 0.75]]);
        let matched = Stack::from_maps(2, vec![a.clone()]).unwrap();
        let map = fuse(&matched, &ChannelWeights::new(vec![1.0]), 2).unwrap();
        assert_eq!(map.grid(), &normalize_minmax(&relu_grid(&a)));
    }

    #[test]
    fn fuse_rejects_weight_count_mismatch() {
        let matched = Stack::<f32>::filled(3, 2, 1.0);
        assert!(matches!(
            fuse(&matched, &ChannelWeights::uniform(2), 4),
            Err(CamError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn self_match_rejects_out_of_range_size() {
        let image = Grid::<f32>::filled(8, 8, 1.0);
        let stack = Stack::<f32>::filled(2, 4, 1.0);
        for m in [3, 9] {
            assert!(matches!(
                self_match(&image, &stack, m),
                Err(CamError::BadIntermediateSize { .. })
            ));
        }
        assert!(self_match(&image, &stack, 4).is_ok());
        assert!(self_match(&image, &stack, 8).is_ok());
    }

    #[test]
    fn dark_region_annihilates_every_channel() {
        let image = Grid::from_fn(4, 4, |_, c| if c < 2 { 0.0f64 } else { 1.0 + c as f64 });
        let feats = Stack::from_maps(
            4,
            (0..3)
                .map(|k| Grid::from_fn(4, 4, |r, c| ((r * 7 + c * 3 + k) % 5) as f64))
                .collect(),
        )
        .unwrap();
        let out = self_match(&image, &feats, 4).unwrap();
        for ch in out.iter() {
            for r in 0..4 {
                assert_eq!(ch.get(r, 0), 0.0);
                assert_eq!(ch.get(r, 1), 0.0);
            }
        }
    }

    #[test]
    fn canonical_order_ignores_numbering() {
        let maps: Vec<Grid<f32>> = (0..4).map(|k| Grid::filled(2, 2, k as f32)).collect();
        let w = [0.5f32, 0.0, 0.5, -1.0];
        let order = canonical_order(&maps, &w);
        assert_eq!(order.len(), 3);
        let rev: Vec<Grid<f32>> = maps.iter().rev().cloned().collect();
        let wr: Vec<f32> = w.iter().rev().copied().collect();
        let a = weighted_upsampled_sum(&maps, &w, 3);
        let b = weighted_upsampled_sum(&rev, &wr, 3);
        assert_eq!(a, b);
    }
}
