//! Straight-line reference implementations.
//!
//! Everything here works on plain row-major `Vec<f64>` buffers with explicit
//! loops and shares no code with the crate under test.

#![allow(clippy::needless_range_loop)]

use std::collections::VecDeque;

/// Square row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Img {
    pub side: usize,
    pub px: Vec<f64>,
}

impl Img {
    pub fn new(side: usize, px: Vec<f64>) -> Self {
        assert_eq!(px.len(), side * side);
        Self { side, px }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.px[r * self.side + c]
    }
}

/// Bilinear resampling with half-pixel centres, written as four explicit
/// corner weights.
pub fn resize(src: &Img, dst: usize) -> Img {
    let s = src.side;
    let mut out = vec![0.0; dst * dst];
    let coord = |i: usize| -> (usize, usize, f64) {
        let mut x = (i as f64 + 0.5) * (s as f64) / (dst as f64) - 0.5;
        if x < 0.0 {
            x = 0.0;
        }
        if x > (s - 1) as f64 {
            x = (s - 1) as f64;
        }
        let x0 = x.floor() as usize;
        let x1 = if x0 + 1 < s { x0 + 1 } else { s - 1 };
        (x0, x1, x - x0 as f64)
    };
    for i in 0..dst {
        let (y0, y1, wy) = coord(i);
        for j in 0..dst {
            let (x0, x1, wx) = coord(j);
            out[i * dst + j] = (1.0 - wy) * (1.0 - wx) * src.at(y0, x0)
                + (1.0 - wy) * wx * src.at(y0, x1)
                + wy * (1.0 - wx) * src.at(y1, x0)
                + wy * wx * src.at(y1, x1);
        }
    }
    Img::new(dst, out)
}

pub fn normalize(a: &Img) -> Img {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &a.px {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let px = if hi > lo {
        a.px.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; a.px.len()]
    };
    Img::new(a.side, px)
}

pub fn relu(a: &Img) -> Img {
    Img::new(
        a.side,
        a.px.iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect(),
    )
}

fn mul(a: &Img, b: &Img) -> Img {
    assert_eq!(a.side, b.side);
    Img::new(a.side, a.px.iter().zip(&b.px).map(|(x, y)| x * y).collect())
}

/// Channel weights: global average of each gradient map.
pub fn gap(grads: &[Img]) -> Vec<f64> {
    grads
        .iter()
        .map(|g| g.px.iter().sum::<f64>() / g.px.len() as f64)
        .collect()
}

/// The full multi-weight self-matching pipeline with average-pooled channel
/// weights.
pub fn ms_cam(image: &Img, features: &[Img], grads: &[Img], m: usize) -> Img {
    let n = image.side;
    let omega = gap(grads);
    let image_m = normalize(&resize(image, m));
    let mut acc = vec![0.0; n * n];
    for k in 0..features.len() {
        let weighted = mul(&relu(&grads[k]), &features[k]);
        let up = normalize(&resize(&weighted, m));
        let matched = mul(&image_m, &up);
        let back = resize(&matched, n);
        for p in 0..n * n {
            acc[p] += omega[k] * back.px[p];
        }
    }
    normalize(&relu(&Img::new(n, acc)))
}

fn weighted_sum(features: &[Img], w: &[f64]) -> Img {
    let g = features[0].side;
    let mut acc = vec![0.0; g * g];
    for (a, &wk) in features.iter().zip(w) {
        for p in 0..g * g {
            acc[p] += wk * a.px[p];
        }
    }
    Img::new(g, acc)
}

pub fn grad_cam(features: &[Img], grads: &[Img], n: usize) -> Img {
    let at_grid = normalize(&relu(&weighted_sum(features, &gap(grads))));
    resize(&at_grid, n)
}

/// `ReLU(sum_k ReLU(g_k) * A_k)` at grid resolution.
pub fn layer_cam_raw(features: &[Img], grads: &[Img]) -> Img {
    let g = features[0].side;
    let mut acc = vec![0.0; g * g];
    for (a, gr) in features.iter().zip(grads) {
        for p in 0..g * g {
            let w = if gr.px[p] > 0.0 { gr.px[p] } else { 0.0 };
            acc[p] += w * a.px[p];
        }
    }
    relu(&Img::new(g, acc))
}

pub fn layer_cam(features: &[Img], grads: &[Img], n: usize) -> Img {
    normalize(&resize(&layer_cam_raw(features, grads), n))
}

pub fn gradcampp_weights(features: &[Img], grads: &[Img]) -> Vec<f64> {
    let mut out = Vec::new();
    for (a, g) in features.iter().zip(grads) {
        let total: f64 = a.px.iter().sum();
        let mut w = 0.0;
        for &x in &g.px {
            let denom = 2.0 * x.powi(2) + total * x.powi(3);
            if denom.abs() >= 1e-8 && x > 0.0 {
                w += x.powi(2) / denom * x;
            }
        }
        out.push(w);
    }
    out
}

pub fn grad_cam_pp(features: &[Img], grads: &[Img], n: usize) -> Img {
    let w = gradcampp_weights(features, grads);
    resize(&normalize(&relu(&weighted_sum(features, &w))), n)
}

/// 8-connected components by breadth-first flood fill. Each component is a
/// sorted pixel list; components are sorted by their first pixel.
pub fn flood_components(h: usize, w: usize, mask: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            comp.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        comp.sort();
        comps.push(comp);
    }
    comps.sort();
    comps
}

/// `(row_min, col_min, row_max, col_max)` of the largest component, ties to
/// the top-left-most box.
pub fn largest_box(comps: &[Vec<(usize, usize)>]) -> Option<(usize, usize, usize, usize)> {
    let boxed: Vec<(usize, (usize, usize, usize, usize))> = comps
        .iter()
        .map(|c| {
            let r0 = c.iter().map(|p| p.0).min().unwrap();
            let c0 = c.iter().map(|p| p.1).min().unwrap();
            let r1 = c.iter().map(|p| p.0).max().unwrap();
            let c1 = c.iter().map(|p| p.1).max().unwrap();
            (c.len(), (r0, c0, r1, c1))
        })
        .collect();
    let best = boxed.iter().map(|b| b.0).max()?;
    boxed
        .iter()
        .filter(|b| b.0 == best)
        .map(|b| b.1)
        .min_by_key(|b| (b.0, b.1))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
