//! Element-wise and channel-wise weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::{FeatureStack, GradientStack, ShapeMismatch, Stack};
use crate::ops::{hadamard, relu_grid};
use crate::scalar::{relu, Scalar};

/// Grad-CAM++ alpha denominators below this magnitude give `alpha = 0`.
pub const GRADCAMPP_DENOM_EPS: f64 = 1e-8;

/// Per-channel, per-position weights `ReLU(dy^c/dA)`; same shape as the
/// gradient stack, all entries `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementWeights<T>(Stack<T>);

impl<T: Scalar> ElementWeights<T> {
    /// All-ones weights, which leave features untouched.
    pub fn ones(channels: usize, side: usize) -> Self {
        Self(Stack::filled(channels, side, T::one()))
    }

    /// Wraps an arbitrary stack, clamping negatives to zero.
    pub fn from_stack(stack: Stack<T>) -> Self {
        Self(stack.map_channels(relu_grid))
    }

    pub fn as_stack(&self) -> &Stack<T> {
        &self.0
    }
}

/// One real weight per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights<T>(Vec<T>);

impl<T: Scalar> ChannelWeights<T> {
    pub fn new(weights: Vec<T>) -> Self {
        Self(weights)
    }

    pub fn uniform(channels: usize) -> Self {
        Self(vec![T::one(); channels])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Zeroes every channel not listed in `subset`.
    pub fn restricted(&self, subset: Option<&[usize]>) -> Self {
        match subset {
            None => self.clone(),
            Some(keep) => {
                let mut out = vec![T::zero(); self.0.len()];
                for &k in keep {
                    out[k] = self.0[k];
                }
                Self(out)
            }
        }
    }
}

/// `omega_ele = ReLU(dy^c/dA)`, element by element.
pub fn element_weights<T: Scalar>(grads: &GradientStack<T>) -> ElementWeights<T> {
    ElementWeights(grads.map_channels(relu_grid))
}

/// `A_hat^k = omega_ele^k ∘ A^k`. Shapes are unchanged.
pub fn apply_element_weights<T: Scalar>(
    features: &FeatureStack<T>,
    weights: &ElementWeights<T>,
) -> Result<FeatureStack<T>, ShapeMismatch> {
    features.ensure_same_shape(&weights.0)?;
    let maps = features
        .iter()
        .zip(weights.0.iter())
        .map(|(a, w)| hadamard(w, a))
        .collect::<Result<Vec<_>, _>>()?;
    Stack::from_maps(features.side(), maps)
}

/// Grad-CAM channel weights: global average of each gradient channel.
pub fn channel_weights_gradcam<T: Scalar>(grads: &GradientStack<T>) -> ChannelWeights<T> {
    let area = (grads.side() * grads.side()) as f64;
    ChannelWeights(
        grads
            .iter()
            .map(|g| {
                let sum: f64 = g.as_slice().iter().map(|x| x.wide()).sum();
                T::of(sum / area)
            })
            .collect(),
    )
}

/// Grad-CAM++ channel weights from first-order gradient powers.
///
/// `alpha_ij = g_ij^2 / (2 g_ij^2 + (sum_ab A_ab) g_ij^3)` and
/// `omega = sum_ij alpha_ij ReLU(g_ij)`; `alpha` is 0 where the denominator
/// magnitude is below [`GRADCAMPP_DENOM_EPS`].
pub fn channel_weights_gradcampp<T: Scalar>(
    features: &FeatureStack<T>,
    grads: &GradientStack<T>,
) -> Result<ChannelWeights<T>, ShapeMismatch> {
    features.ensure_same_shape(grads)?;
    let weights = features
        .iter()
        .zip(grads.iter())
        .map(|(a, g)| {
            let activation_sum: f64 = a.as_slice().iter().map(|x| x.wide()).sum();
            let w: f64 = g
                .as_slice()
                .iter()
                .map(|&gij| {
                    let g1 = gij.wide();
                    let g2 = g1 * g1;
                    let denom = 2.0 * g2 + activation_sum * g2 * g1;
                    let alpha = if denom.abs() < GRADCAMPP_DENOM_EPS {
                        0.0
                    } else {
                        g2 / denom
                    };
                    alpha * relu(g1)
                })
                .sum();
            T::of(w)
        })
        .collect();
    Ok(ChannelWeights(weights))
}

/// How channel-wise weights are derived. This is the extension point for
/// further CAM variants.
pub trait ChannelWeighting<T: Scalar>: Sync {
    fn channel_weights(
        &self,
        features: &FeatureStack<T>,
        grads: &GradientStack<T>,
    ) -> Result<ChannelWeights<T>, ShapeMismatch>;
}

/// Built-in channel weight strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelStrategy {
    /// Global average pooling of gradients.
    #[default]
    GradcamGap,
    /// Grad-CAM++ alpha-weighted positive gradients.
    Gradcampp,
    /// Every channel weighted 1.
    Uniform,
}

impl ChannelStrategy {
    pub const ALL: [ChannelStrategy; 3] = [Self::GradcamGap, Self::Gradcampp, Self::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Self::GradcamGap => "gradcam-gap",
            Self::Gradcampp => "gradcampp",
            Self::Uniform => "uniform",
        }
    }
}

impl fmt::Display for ChannelStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| {
                format!(
                    "unknown channel strategy {s:?} (expected gradcam-gap, gradcampp or uniform)"
                )
            })
    }
}

impl<T: Scalar> ChannelWeighting<T> for ChannelStrategy {
    fn channel_weights(
        &self,
        features: &FeatureStack<T>,
        grads: &GradientStack<T>,
    ) -> Result<ChannelWeights<T>, ShapeMismatch> {
        features.ensure_same_shape(grads)?;
        Ok(match self {
            Self::GradcamGap => channel_weights_gradcam(grads),
            Self::Gradcampp => channel_weights_gradcampp(features, grads)?,
            Self::Uniform => ChannelWeights::uniform(features.channels()),
        })
    }
}
