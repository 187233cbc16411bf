//! Class activation maps for SAR target recognition.
//!
//! The crate turns serialized CNN activations (an image, one layer's feature
//! maps and the class-score gradients) into saliency maps, localizes the
//! target by thresholding, and renders heatmaps.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*32` / `*64` aliases below name the concrete instantiations. Bundles on
//! disk are always `f32`.

pub mod bundle;
pub mod cam;
pub mod cli;
pub mod grid;
pub mod localize;
pub mod npy;
pub mod ops;
pub mod render;
pub mod scalar;
pub mod synth;

pub use bundle::{load_bundle, load_image, save_bundle, BundleError, FeatureBundle, Manifest};
pub use cam::{
    compute_cam, CamConfig, CamError, CamMethod, ChannelStrategy, ChannelWeights, ElementWeights,
    IntermediateSize, SaliencyMap,
};
pub use grid::{FeatureStack, GradientStack, Grid, ShapeMismatch, Stack};
pub use localize::{iou, localize, sweep, BBox, BinaryMask, LocalizationReport, SweepResult};
pub use ops::{hadamard, normalize_minmax, relu_grid, resize_bilinear};
pub use scalar::Scalar;

pub type Grid32 = Grid<f32>;
pub type Grid64 = Grid<f64>;
pub type Stack32 = Stack<f32>;
pub type Stack64 = Stack<f64>;
pub type FeatureBundle32 = FeatureBundle<f32>;
pub type FeatureBundle64 = FeatureBundle<f64>;
pub type SaliencyMap32 = SaliencyMap<f32>;
pub type SaliencyMap64 = SaliencyMap<f64>;
