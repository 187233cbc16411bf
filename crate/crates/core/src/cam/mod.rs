//! Saliency maps from activations and gradients.
//!
//! The multi-weight self-matching pipeline runs in four stages:
//!
//! 1. element weights `omega_ele = ReLU(dy^c/dA)` and the weighted stack
//!    `A_hat = omega_ele ∘ A`;
//! 2. self-matching at an intermediate side `M`: the image is downsampled and
//!    normalized, each weighted channel is upsampled and normalized, and the
//!    two are multiplied;
//! 3. channel weights (Grad-CAM average pooling by default);
//! 4. fusion: upsample each matched channel to `N`, weight, sum, ReLU,
//!    normalize.
//!
//! Grad-CAM, Grad-CAM++, Layer-CAM and Self-Matching CAM are presets over the
//! same kernels.

mod matching;
mod weights;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matching::{fuse, match_normalized, self_match};
pub use weights::{
    apply_element_weights, channel_weights_gradcam, channel_weights_gradcampp, element_weights,
    ChannelStrategy, ChannelWeighting, ChannelWeights, ElementWeights, GRADCAMPP_DENOM_EPS,
};

use crate::bundle::{BundleError, FeatureBundle};
use crate::grid::{Grid, ShapeMismatch, Stack};
use crate::ops::{normalize_minmax, relu_grid, resize_bilinear};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CamError {
    #[error("intermediate size {m} outside [{g}, {n}]")]
    BadIntermediateSize { m: usize, g: usize, n: usize },
    #[error("channel index {index} out of range for {channels} channels")]
    BadChannelIndex { index: usize, channels: usize },
    #[error("channel subset is empty")]
    EmptyChannelSubset,
    #[error(transparent)]
    ShapeMismatch(#[from] ShapeMismatch),
    #[error("invalid bundle: {0}")]
    InvalidBundle(#[from] BundleError),
}

/// Final map: `N × N`, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T>(Grid<T>);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("saliency values must be finite and within [0, 1]")]
pub struct OutOfRange;

impl<T: Scalar> SaliencyMap<T> {
    /// Checks the `[0, 1]` range.
    pub fn new(grid: Grid<T>) -> Result<Self, OutOfRange> {
        let ok = grid
            .as_slice()
            .iter()
            .all(|&v| v.is_finite() && v >= T::zero() && v <= T::one());
        if ok {
            Ok(Self(grid))
        } else {
            Err(OutOfRange)
        }
    }

    pub(crate) fn from_trusted(grid: Grid<T>) -> Self {
        debug_assert!(grid
            .as_slice()
            .iter()
            .all(|&v| v >= T::zero() && v <= T::one()));
        Self(grid)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<T> {
        self.0
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.as_slice().iter().all(|v| v.is_zero())
    }
}

impl<T> Deref for SaliencyMap<T> {
    type Target = Grid<T>;

    fn deref(&self) -> &Grid<T> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamMethod {
    #[default]
    MsCam,
    GradCam,
    GradCamPp,
    LayerCam,
    SelfMatchingCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 5] = [
        Self::MsCam,
        Self::GradCam,
        Self::GradCamPp,
        Self::LayerCam,
        Self::SelfMatchingCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MsCam => "ms-cam",
            Self::GradCam => "grad-cam",
            Self::GradCamPp => "grad-cam-pp",
            Self::LayerCam => "layer-cam",
            Self::SelfMatchingCam => "self-matching-cam",
        }
    }

    /// Whether the method matches against the image at an intermediate size.
    pub fn uses_intermediate_size(self) -> bool {
        matches!(self, Self::MsCam | Self::SelfMatchingCam)
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CamMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = match key.as_str() {
            "grad-cam++" | "gradcampp" | "gradcam++" => "grad-cam-pp",
            "gradcam" => "grad-cam",
            "mscam" => "ms-cam",
            "layercam" => "layer-cam",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                format!(
                    "unknown method {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Intermediate matching side `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntermediateSize {
    /// `clamp(round(sqrt(G * N)), G, N)`.
    #[default]
    Auto,
    Explicit(usize),
}

impl IntermediateSize {
    pub fn resolve(self, g: usize, n: usize) -> Result<usize, CamError> {
        match self {
            Self::Auto => Ok(auto_intermediate_side(g, n)),
            Self::Explicit(m) if (g..=n).contains(&m) => Ok(m),
            Self::Explicit(m) => Err(CamError::BadIntermediateSize { m, g, n }),
        }
    }
}

impl fmt::Display for IntermediateSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Explicit(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for IntermediateSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(m) if m > 0 => Ok(Self::Explicit(m)),
            _ => Err(format!(
                "intermediate size must be a positive integer or 'auto', got {s:?}"
            )),
        }
    }
}

/// Geometric mean of the grid and image sides, rounded and kept in `[G, N]`.
pub fn auto_intermediate_side(g: usize, n: usize) -> usize {
    let m = ((g as f64) * (n as f64)).sqrt().round() as usize;
    m.clamp(g.min(n), n.max(g))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CamConfig {
    pub method: CamMethod,
    pub intermediate: IntermediateSize,
    /// Consulted by [`CamMethod::MsCam`] and [`CamMethod::SelfMatchingCam`];
    /// the other presets fix their own channel weights.
    pub channel_strategy: ChannelStrategy,
    /// Channels taking part in the weighted sum; `None` means all.
    pub channel_subset: Option<Vec<usize>>,
}

impl CamConfig {
    pub fn new(method: CamMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn with_intermediate(mut self, m: IntermediateSize) -> Self {
        self.intermediate = m;
        self
    }

    pub fn with_strategy(mut self, s: ChannelStrategy) -> Self {
        self.channel_strategy = s;
        self
    }

    pub fn with_subset(mut self, subset: Vec<usize>) -> Self {
        self.channel_subset = Some(subset);
        self
    }

    fn check_subset(&self, channels: usize) -> Result<(), CamError> {
        match &self.channel_subset {
            Some(s) if s.is_empty() => Err(CamError::EmptyChannelSubset),
            Some(s) => match s.iter().find(|&&k| k >= channels) {
                Some(&index) => Err(CamError::BadChannelIndex { index, channels }),
                None => Ok(()),
            },
            None => Ok(()),
        }
    }

    /// The `M` this config would use for a bundle with the given sides.
    pub fn resolved_intermediate(&self, g: usize, n: usize) -> Result<usize, CamError> {
        self.intermediate.resolve(g, n)
    }
}

/// Which element weights feed the self-matching pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementWeighting {
    /// `ReLU` of the gradients.
    Gradient,
    /// All ones: features enter unweighted.
    Ones,
}

/// The self-matching pipeline with explicit stage choices.
pub fn self_matching_cam<T: Scalar>(
    bundle: &FeatureBundle<T>,
    m: usize,
    element: ElementWeighting,
    channel: &dyn ChannelWeighting<T>,
    subset: Option<&[usize]>,
) -> Result<SaliencyMap<T>, CamError> {
    let (features, grads) = (&bundle.features, &bundle.grads);
    let element_w = match element {
        ElementWeighting::Gradient => element_weights(grads),
        ElementWeighting::Ones => ElementWeights::ones(features.channels(), features.side()),
    };
    let weighted = apply_element_weights(features, &element_w)?;
    let matched = self_match(&bundle.image, &weighted, m)?;
    let channel_w = channel.channel_weights(features, grads)?.restricted(subset);
    fuse(&matched, &channel_w, bundle.image_side())
}

/// Grad-CAM style map: `s(ReLU(sum_k w_k A^k))` at `G`, upsampled to `N`.
pub fn weighted_feature_cam<T: Scalar>(
    features: &Stack<T>,
    weights: &ChannelWeights<T>,
    n: usize,
) -> Result<SaliencyMap<T>, CamError> {
    if weights.len() != features.channels() {
        return Err(ShapeMismatch::new(
            format!("{} channel weights", features.channels()),
            format!("{} weights", weights.len()),
        )
        .into());
    }
    let g = features.side();
    let summed = matching::weighted_upsampled_sum(features.maps(), weights.as_slice(), g);
    let at_grid = normalize_minmax(&relu_grid(&summed));
    Ok(SaliencyMap::from_trusted(resize_bilinear(&at_grid, n)))
}

/// Layer-CAM: `s(U(ReLU(sum_k ReLU(g^k) ∘ A^k))_N)`.
pub fn layer_cam<T: Scalar>(
    bundle: &FeatureBundle<T>,
    subset: Option<&[usize]>,
) -> Result<SaliencyMap<T>, CamError> {
    let weighted = apply_element_weights(&bundle.features, &element_weights(&bundle.grads))?;
    let ones = ChannelWeights::uniform(weighted.channels()).restricted(subset);
    let g = weighted.side();
    let summed = matching::weighted_upsampled_sum(weighted.maps(), ones.as_slice(), g);
    let up = resize_bilinear(&relu_grid(&summed), bundle.image_side());
    Ok(SaliencyMap::from_trusted(normalize_minmax(&up)))
}

/// Computes the saliency map for `bundle` with the configured method.
pub fn compute_cam<T: Scalar>(
    bundle: &FeatureBundle<T>,
    config: &CamConfig,
) -> Result<SaliencyMap<T>, CamError> {
    bundle.validate()?;
    config.check_subset(bundle.channels())?;
    let subset = config.channel_subset.as_deref();
    let (g, n) = (bundle.grid_side(), bundle.image_side());

    match config.method {
        CamMethod::MsCam => self_matching_cam(
            bundle,
            config.resolved_intermediate(g, n)?,
            ElementWeighting::Gradient,
            &config.channel_strategy,
            subset,
        ),
        CamMethod::SelfMatchingCam => self_matching_cam(
            bundle,
            config.resolved_intermediate(g, n)?,
            ElementWeighting::Ones,
            &config.channel_strategy,
            subset,
        ),
        CamMethod::GradCam => {
            let w = channel_weights_gradcam(&bundle.grads).restricted(subset);
            weighted_feature_cam(&bundle.features, &w, n)
        }
        CamMethod::GradCamPp => {
            let w = channel_weights_gradcampp(&bundle.features, &bundle.grads)?.restricted(subset);
            weighted_feature_cam(&bundle.features, &w, n)
        }
        CamMethod::LayerCam => layer_cam(bundle, subset),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_side_is_geometric_mean() {
        assert_eq!(auto_intermediate_side(8, 32), 16);
        assert_eq!(auto_intermediate_side(16, 512), 91);
        assert_eq!(auto_intermediate_side(7, 7), 7);
        assert_eq!(auto_intermediate_side(1, 2), 1);
    }

    #[test]
    fn explicit_side_bounds() {
        assert_eq!(IntermediateSize::Explicit(8).resolve(8, 32).unwrap(), 8);
        assert_eq!(IntermediateSize::Explicit(32).resolve(8, 32).unwrap(), 32);
        assert!(IntermediateSize::Explicit(7).resolve(8, 32).is_err());
        assert!(IntermediateSize::Explicit(33).resolve(8, 32).is_err());
    }

    #[test]
    fn parse_names() {
        for m in CamMethod::ALL {
            assert_eq!(m.name().parse::<CamMethod>().unwrap(), m);
        }
        assert_eq!("MS_CAM".parse::<CamMethod>().unwrap(), CamMethod::MsCam);
        assert_eq!(
            "grad-cam++".parse::<CamMethod>().unwrap(),
            CamMethod::GradCamPp
        );
        assert!("bogus".parse::<CamMethod>().is_err());
        assert_eq!(
            "auto".parse::<IntermediateSize>().unwrap(),
            IntermediateSize::Auto
        );
        assert_eq!(
            "12".parse::<IntermediateSize>().unwrap(),
            IntermediateSize::Explicit(12)
        );
        assert!("0".parse::<IntermediateSize>().is_err());
    }

    #[test]
    fn saliency_range_check() {
        assert!(SaliencyMap::new(Grid::from_rows(&[[0.0f32, 1.0]])).is_ok());
        assert!(SaliencyMap::new(Grid::from_rows(&[[0.0f32, 1.5]])).is_err());
        assert!(SaliencyMap::new(Grid::from_rows(&[[f32::NAN]])).is_err());
    }
}
