//! Weakly-supervised localization from a saliency map.
//!
//! Threshold at a fraction of the map maximum, group the surviving pixels
//! into 8-connected components, and box the largest one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::scalar::Scalar;

/// Fractions used by [`sweep`] when none are given.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.30, 0.45, 0.60];
/// Single-threshold default.
pub const DEFAULT_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizeError {
    #[error("threshold fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("no threshold fractions given")]
    NoFractions,
    #[error("invalid box: {0}")]
    BadBox(String),
}

/// Boolean grid aligned with its source map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size");
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn new(
        row_min: usize,
        col_min: usize,
        row_max: usize,
        col_max: usize,
    ) -> Result<Self, LocalizeError> {
        let b = Self {
            row_min,
            col_min,
            row_max,
            col_max,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<(), LocalizeError> {
        if self.row_min > self.row_max || self.col_min > self.col_max {
            Err(LocalizeError::BadBox(format!(
                "{self:?} has inverted extents"
            )))
        } else {
            Ok(())
        }
    }

    /// Box fits inside a `height × width` grid.
    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.row_min <= other.row_min
            && self.col_min <= other.col_min
            && self.row_max >= other.row_max
            && self.col_max >= other.col_max
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            row_min: self.row_min.max(other.row_min),
            col_min: self.col_min.max(other.col_min),
            row_max: self.row_max.min(other.row_max),
            col_max: self.col_max.min(other.col_max),
        };
        b.check().ok().map(|_| b)
    }

    pub fn from_json(text: &str) -> Result<Self, LocalizeError> {
        let b: BBox =
            serde_json::from_str(text).map_err(|e| LocalizeError::BadBox(e.to_string()))?;
        b.check()?;
        Ok(b)
    }
}

/// Intersection over union with inclusive pixel counts.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// One 8-connected group of set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Pixels as `(row, col)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

fn check_fraction(fraction: f64) -> Result<(), LocalizeError> {
    if fraction.is_finite() && fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(LocalizeError::BadFraction(fraction))
    }
}

/// `mask[p] = map[p] >= fraction * max(map)`; empty when the maximum is not
/// positive.
pub fn binarize<T: Scalar>(map: &Grid<T>, fraction: f64) -> Result<BinaryMask, LocalizeError> {
    check_fraction(fraction)?;
    let (h, w) = map.dims();
    let max = match map.max_value() {
        Some(m) if m > T::zero() => m.wide(),
        _ => return Ok(BinaryMask::empty(h, w)),
    };
    let threshold = fraction * max;
    let bits = map
        .as_slice()
        .iter()
        .map(|v| v.wide() >= threshold)
        .collect();
    Ok(BinaryMask::new(h, w, bits))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Two-pass union-find labeling with 8-connectivity.
///
/// Components are returned in raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = mask.dims();
    const NONE: usize = usize::MAX;
    let mut labels = vec![NONE; h * w];
    let mut parent: Vec<usize> = Vec::new();

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = [NONE; 4];
            if c > 0 {
                neighbours[0] = labels[r * w + c - 1];
            }
            if r > 0 {
                let up = (r - 1) * w;
                if c > 0 {
                    neighbours[1] = labels[up + c - 1];
                }
                neighbours[2] = labels[up + c];
                if c + 1 < w {
                    neighbours[3] = labels[up + c + 1];
                }
            }
            let mut label = NONE;
            for &n in neighbours.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    union(&mut parent, label, n);
                }
            }
            if label == NONE {
                label = parent.len();
                parent.push(label);
            }
            labels[r * w + c] = label;
        }
    }

    // Roots are renumbered in order of first appearance.
    let mut slot = vec![NONE; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l);
            if slot[root] == NONE {
                slot[root] = components.len();
                components.push(Component {
                    pixels: Vec::new(),
                    bbox: BBox {
                        row_min: r,
                        col_min: c,
                        row_max: r,
                        col_max: c,
                    },
                });
            }
            let comp = &mut components[slot[root]];
            comp.pixels.push((r, c));
            let b = &mut comp.bbox;
            b.row_min = b.row_min.min(r);
            b.col_min = b.col_min.min(c);
            b.row_max = b.row_max.max(r);
            b.col_max = b.col_max.max(c);
        }
    }
    components
}

/// Largest component by pixel count; ties go to the smallest
/// `(row_min, col_min)`.
pub fn largest_component(components: &[Component]) -> Option<&Component> {
    components.iter().min_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then((a.bbox.row_min, a.bbox.col_min).cmp(&(b.bbox.row_min, b.bbox.col_min)))
    })
}

/// Result of localizing at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub threshold_fraction: f64,
    #[serde(skip)]
    pub mask: BinaryMask,
    pub mask_area: usize,
    pub component_count: usize,
    pub largest_component_area: usize,
    pub bbox: Option<BBox>,
    /// Box overlap with the supplied ground truth; the quality proxy.
    pub iou: Option<f64>,
}

/// Threshold, label, and box the largest segment.
pub fn localize<T: Scalar>(
    map: &Grid<T>,
    fraction: f64,
    gt: Option<&BBox>,
) -> Result<LocalizationReport, LocalizeError> {
    let mask = binarize(map, fraction)?;
    let components = connected_components(&mask);
    let largest = largest_component(&components);
    let bbox = largest.map(|c| c.bbox);
    let iou = gt.map(|g| bbox.map_or(0.0, |b| iou(&b, g)));
    Ok(LocalizationReport {
        threshold_fraction: fraction,
        mask_area: mask.count(),
        mask,
        component_count: components.len(),
        largest_component_area: largest.map_or(0, Component::area),
        bbox,
        iou,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub reports: Vec<LocalizationReport>,
    /// Index of the best report by IoU; set only with ground truth.
    pub best: Option<usize>,
}

/// Localizes at every fraction, in the given order.
///
/// With ground truth, `best` is the IoU argmax, ties broken toward the lower
/// fraction.
pub fn sweep<T: Scalar>(
    map: &Grid<T>,
    fractions: &[f64],
    gt: Option<&BBox>,
) -> Result<SweepResult, LocalizeError> {
    if fractions.is_empty() {
        return Err(LocalizeError::NoFractions);
    }
    fractions.iter().try_for_each(|&f| check_fraction(f))?;
    let reports = fractions
        .iter()
        .map(|&f| localize(map, f, gt))
        .collect::<Result<Vec<_>, _>>()?;
    let best = gt.and_then(|_| {
        (0..reports.len()).reduce(|best, i| {
            let (a, b) = (&reports[best], &reports[i]);
            let (ia, ib) = (a.iou.unwrap_or(0.0), b.iou.unwrap_or(0.0));
            if ib > ia || (ib == ia && b.threshold_fraction < a.threshold_fraction) {
                i
            } else {
                best
            }
        })
    });
    Ok(SweepResult { reports, best })
}
