//! Heatmaps, overlays, box annotation and comparison sheets.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::localize::BBox;
use crate::scalar::Scalar;

pub const GUTTER: u32 = 4;
pub const BOX_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
const GUTTER_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("size mismatch: {0}")]
    ShapeMismatch(String),
    #[error("box {bbox:?} outside {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("invalid render spec: {0}")]
    InvalidSpec(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
}

/// JET control points `(value, rgb)`.
const JET: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 128.0]),
    (0.125, [0.0, 0.0, 255.0]),
    (0.375, [0.0, 255.0, 255.0]),
    (0.625, [255.0, 255.0, 0.0]),
    (0.875, [255.0, 0.0, 0.0]),
    (1.0, [128.0, 0.0, 0.0]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub colormap: Colormap,
    pub alpha: f64,
    pub draw_bbox: bool,
    pub columns: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            colormap: Colormap::Jet,
            alpha: 0.5,
            draw_bbox: true,
            columns: 1,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RenderError::InvalidSpec(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.columns == 0 {
            return Err(RenderError::InvalidSpec("columns must be >= 1".into()));
        }
        Ok(())
    }
}

/// Round half up to a byte, saturating.
#[inline]
fn to_u8(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Piecewise-linear JET color before rounding. Values are clamped to `[0, 1]`
/// and NaN maps to 0.
pub fn jet_rgb(value: f64) -> [f64; 3] {
    let v = if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, 1.0)
    };
    let seg = JET
        .windows(2)
        .find(|w| v <= w[1].0)
        .expect("v within control range");
    let ((x0, c0), (x1, c1)) = (seg[0], seg[1]);
    let t = (v - x0) / (x1 - x0);
    [0, 1, 2].map(|i| c0[i] + t * (c1[i] - c0[i]))
}

pub fn jet(value: f64) -> Rgb<u8> {
    Rgb(jet_rgb(value).map(to_u8))
}

/// Colormapped heatmap of a `[0, 1]` map.
pub fn colorize<T: Scalar>(map: &Grid<T>, spec: &RenderSpec) -> RgbImage {
    let Colormap::Jet = spec.colormap;
    let (h, w) = map.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        jet(map.get(y as usize, x as usize).wide())
    })
}

/// `round(alpha * heat + (1 - alpha) * gray)` with `gray = 255 * image`.
pub fn overlay<T: Scalar>(
    image: &Grid<T>,
    heat: &RgbImage,
    alpha: f64,
) -> Result<RgbImage, RenderError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RenderError::InvalidSpec(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let (h, w) = image.dims();
    if heat.dimensions() != (w as u32, h as u32) {
        return Err(RenderError::ShapeMismatch(format!(
            "image {w}x{h} vs heatmap {}x{}",
            heat.width(),
            heat.height()
        )));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let gray = (image.get(y as usize, x as usize).wide() * 255.0).clamp(0.0, 255.0);
        let hp = heat.get_pixel(x, y);
        Rgb([0, 1, 2].map(|i| to_u8(alpha * f64::from(hp[i]) + (1.0 - alpha) * gray)))
    }))
}

/// Grayscale rendering of an intensity grid (the `alpha = 0` overlay).
pub fn grayscale<T: Scalar>(image: &Grid<T>) -> RgbImage {
    let (h, w) = image.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let g = to_u8((image.get(y as usize, x as usize).wide() * 255.0).clamp(0.0, 255.0));
        Rgb([g, g, g])
    })
}

/// Green rectangle of the given thickness along the inside of the box edge.
pub fn draw_bbox(image: &RgbImage, bbox: &BBox, thickness: u32) -> Result<RgbImage, RenderError> {
    let (w, h) = image.dimensions();
    if bbox.check().is_err() || !bbox.fits(h as usize, w as usize) {
        return Err(RenderError::OutOfBounds {
            bbox: *bbox,
            width: w,
            height: h,
        });
    }
    if thickness == 0 {
        return Err(RenderError::InvalidSpec("thickness must be >= 1".into()));
    }
    let t = thickness as usize;
    let mut out = image.clone();
    for r in bbox.row_min..=bbox.row_max {
        for c in bbox.col_min..=bbox.col_max {
            let edge = r < bbox.row_min + t
                || r + t > bbox.row_max
                || c < bbox.col_min + t
                || c + t > bbox.col_max;
            if edge {
                out.put_pixel(c as u32, r as u32, BOX_COLOR);
            }
        }
    }
    Ok(out)
}

/// Row-major montage with white gutters of [`GUTTER`] pixels around and
/// between tiles.
///
/// `labels` must be empty or one per image. Text is not rasterized; labels
/// are recorded by the caller.
pub fn panel(
    images: &[RgbImage],
    labels: &[String],
    columns: usize,
) -> Result<RgbImage, RenderError> {
    let first = images
        .first()
        .ok_or_else(|| RenderError::ShapeMismatch("no images to tile".into()))?;
    if columns == 0 {
        return Err(RenderError::InvalidSpec("columns must be >= 1".into()));
    }
    if !labels.is_empty() && labels.len() != images.len() {
        return Err(RenderError::ShapeMismatch(format!(
            "{} labels for {} images",
            labels.len(),
            images.len()
        )));
    }
    let (tw, th) = first.dimensions();
    if let Some(bad) = images.iter().find(|i| i.dimensions() != (tw, th)) {
        return Err(RenderError::ShapeMismatch(format!(
            "tile {}x{} vs {tw}x{th}",
            bad.width(),
            bad.height()
        )));
    }
    let cols = columns.min(images.len()) as u32;
    let rows = images.len().div_ceil(columns) as u32;
    let (width, height) = panel_dimensions(tw, th, cols, rows);
    let mut out = RgbImage::from_pixel(width, height, GUTTER_COLOR);
    for (i, tile) in images.iter().enumerate() {
        let (r, c) = ((i / columns) as u32, (i % columns) as u32);
        let (x0, y0) = (GUTTER + c * (tw + GUTTER), GUTTER + r * (th + GUTTER));
        for (x, y, p) in tile.enumerate_pixels() {
            out.put_pixel(x0 + x, y0 + y, *p);
        }
    }
    Ok(out)
}

/// Pixel size of a `cols × rows` montage of `tw × th` tiles.
pub fn panel_dimensions(tw: u32, th: u32, cols: u32, rows: u32) -> (u32, u32) {
    (
        cols * tw + (cols + 1) * GUTTER,
        rows * th + (rows + 1) * GUTTER,
    )
}

/// Writes an 8-bit RGB PNG.
pub fn save_png(image: &RgbImage, path: &Path) -> Result<(), RenderError> {
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_control_points_and_midpoint() {
        assert_eq!(jet(0.0), Rgb([0, 0, 128]));
        assert_eq!(jet(0.125), Rgb([0, 0, 255]));
        assert_eq!(jet(0.375), Rgb([0, 255, 255]));
        assert_eq!(jet(0.625), Rgb([255, 255, 0]));
        assert_eq!(jet(0.875), Rgb([255, 0, 0]));
        assert_eq!(jet(1.0), Rgb([128, 0, 0]));
        // 127.5 rounds up
        assert_eq!(jet(0.25), Rgb([0, 128, 255]));
    }

    #[test]
    fn overlay_alpha_extremes_and_mix() {
        let image = Grid::filled(1, 1, 100.0f64 / 255.0);
        let heat = RgbImage::from_pixel(1, 1, Rgb([0, 0, 255]));
        assert_eq!(
            overlay(&image, &heat, 0.5).unwrap().get_pixel(0, 0),
            &Rgb([50, 50, 178])
        );
        assert_eq!(overlay(&image, &heat, 0.0).unwrap(), grayscale(&image));
        assert_eq!(overlay(&image, &heat, 1.0).unwrap(), heat);
        assert!(overlay(&Grid::<f64>::zeros(2, 2), &heat, 0.5).is_err());
    }

    #[test]
    fn bbox_ring() {
        let base = RgbImage::from_pixel(5, 4, Rgb([9, 9, 9]));
        let full = draw_bbox(&base, &BBox::new(0, 0, 3, 4).unwrap(), 1).unwrap();
        for (x, y, p) in full.enumerate_pixels() {
            let edge = x == 0 || y == 0 || x == 4 || y == 3;
            assert_eq!(*p == BOX_COLOR, edge, "({x},{y})");
        }
        let dot = draw_bbox(&base, &BBox::new(2, 1, 2, 1).unwrap(), 1).unwrap();
        assert_eq!(dot.pixels().filter(|p| **p == BOX_COLOR).count(), 1);
        assert_eq!(dot.get_pixel(1, 2), &BOX_COLOR);
        assert!(matches!(
            draw_bbox(&base, &BBox::new(0, 0, 4, 4).unwrap(), 1),
            Err(RenderError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn thick_box_fills_small_boxes() {
        let base = RgbImage::new(6, 6);
        let b = draw_bbox(&base, &BBox::new(1, 1, 4, 4).unwrap(), 2).unwrap();
        assert_eq!(b.pixels().filter(|p| **p == BOX_COLOR).count(), 16);
    }

    #[test]
    fn panel_layouts() {
        let tile = RgbImage::from_pixel(3, 2, Rgb([1, 2, 3]));
        let one = panel(std::slice::from_ref(&tile), &[], 3).unwrap();
        assert_eq!(one.dimensions(), (3 + 8, 2 + 8));
        assert_eq!(one.get_pixel(4, 4), &Rgb([1, 2, 3]));
        assert_eq!(one.get_pixel(0, 0), &GUTTER_COLOR);

        let four = panel(&vec![tile.clone(); 4], &[], 2).unwrap();
        assert_eq!(four.dimensions(), (2 * 3 + 3 * 4, 2 * 2 + 3 * 4));
        let three = panel(&vec![tile.clone(); 3], &[], 2).unwrap();
        assert_eq!(three.dimensions(), four.dimensions());

        assert!(panel(&[], &[], 2).is_err());
        assert!(panel(&[tile.clone(), RgbImage::new(2, 2)], &[], 2).is_err());
        assert!(panel(&[tile], &["a".into(), "b".into()], 2).is_err());
    }
}
