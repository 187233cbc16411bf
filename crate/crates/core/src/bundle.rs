//! Activation bundles: one explanation request on disk.
//!
//! A bundle is a directory holding `manifest.json`, the input image
//! (`.npy` or `.png`), `features.npy` and `grads.npy`. Tensors are NPY v1.0
//! `<f4` C-order with shapes `(N, N)` and `(K, G, G)`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FeatureStack, GradientStack, Grid, Stack};
use crate::npy::{self, NpyError};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file for {key}: {}", path.display())]
    MissingFile { key: String, path: PathBuf },
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("shape mismatch for {key}: expected {expected}, found {found}")]
    ShapeMismatch {
        key: String,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {key} at flat index {index}")]
    NonFiniteValue { key: String, index: usize },
    #[error("negative intensity in {key} at flat index {index}")]
    NegativeIntensity { key: String, index: usize },
    #[error("unsupported dtype {dtype:?} in {key}, expected '<f4'")]
    UnsupportedDType { key: String, dtype: String },
    #[error("malformed tensor in {key}: {source}")]
    Malformed {
        key: String,
        #[source]
        source: NpyError,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

impl BundleError {
    fn shape(key: &str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Self::ShapeMismatch {
            key: key.to_string(),
            expected: expected.into(),
            found: found.into(),
        }
    }

    fn from_npy(key: &str, err: NpyError) -> Self {
        match err {
            NpyError::UnsupportedDType(dtype) => Self::UnsupportedDType {
                key: key.to_string(),
                dtype,
            },
            NpyError::Io(e) => Self::Io(e),
            other => Self::Malformed {
                key: key.to_string(),
                source: other,
            },
        }
    }
}

/// `manifest.json`, keys in on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub model: String,
    pub layer: String,
    pub class_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    pub image_file: String,
    pub features_file: String,
    pub grads_file: String,
    pub image_size: usize,
    pub grid_size: usize,
    pub channels: usize,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => BundleError::MissingFile {
                key: MANIFEST_FILE.into(),
                path: path.clone(),
            },
            _ => BundleError::Io(e),
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| BundleError::BadManifest(e.to_string()))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(BundleError::BadManifest(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Everything one explanation needs: the image `I_N`, the layer's feature
/// maps `A`, the class-score gradients `dy^c/dA`, and provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T> {
    pub image: Grid<T>,
    pub features: FeatureStack<T>,
    pub grads: GradientStack<T>,
    pub class_id: u64,
    pub class_name: Option<String>,
    pub layer_name: String,
    pub model_name: String,
    pub logits: Option<Vec<f64>>,
}

impl<T: Scalar> FeatureBundle<T> {
    /// Image side `N`.
    pub fn image_side(&self) -> usize {
        self.image.height()
    }

    /// Feature grid side `G`.
    pub fn grid_side(&self) -> usize {
        self.features.side()
    }

    /// Channel count `K`.
    pub fn channels(&self) -> usize {
        self.features.channels()
    }

    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<(), BundleError> {
        if !self.image.is_square() || self.image.is_empty() {
            return Err(BundleError::shape(
                "image_file",
                "non-empty square (N, N)",
                self.image.shape_string(),
            ));
        }
        let (k, g, _) = self.features.shape();
        if k == 0 || g == 0 {
            return Err(BundleError::shape(
                "features_file",
                "(K >= 1, G >= 1, G)",
                self.features.shape_string(),
            ));
        }
        if self.grads.shape() != self.features.shape() {
            return Err(BundleError::shape(
                "grads_file",
                self.features.shape_string(),
                self.grads.shape_string(),
            ));
        }
        if self.image_side() < g {
            return Err(BundleError::shape(
                "image_size",
                format!("N >= grid_size {g}"),
                self.image_side().to_string(),
            ));
        }
        check_finite("image_file", self.image.as_slice())?;
        if let Some(index) = self.image.as_slice().iter().position(|&x| x < T::zero()) {
            return Err(BundleError::NegativeIntensity {
                key: "image_file".into(),
                index,
            });
        }
        check_finite("features_file", &self.features.to_flat())?;
        check_finite("grads_file", &self.grads.to_flat())?;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FeatureBundle<U> {
        FeatureBundle {
            image: self.image.cast(),
            features: self.features.cast(),
            grads: self.grads.cast(),
            class_id: self.class_id,
            class_name: self.class_name.clone(),
            layer_name: self.layer_name.clone(),
            model_name: self.model_name.clone(),
            logits: self.logits.clone(),
        }
    }

    /// Manifest describing this bundle as [`save_bundle`] writes it.
    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            model: self.model_name.clone(),
            layer: self.layer_name.clone(),
            class_id: self.class_id,
            class_name: self.class_name.clone(),
            logits: self.logits.clone(),
            image_file: "image.npy".into(),
            features_file: "features.npy".into(),
            grads_file: "grads.npy".into(),
            image_size: self.image_side(),
            grid_size: self.grid_side(),
            channels: self.channels(),
        }
    }
}

fn check_finite<T: Scalar>(key: &str, values: &[T]) -> Result<(), BundleError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(BundleError::NonFiniteValue {
            key: key.into(),
            index,
        }),
        None => Ok(()),
    }
}

fn resolve(dir: &Path, key: &str, name: &str) -> Result<PathBuf, BundleError> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(BundleError::MissingFile {
            key: key.into(),
            path,
        })
    }
}

fn read_tensor(path: &Path, key: &str) -> Result<npy::NpyArray, BundleError> {
    npy::read(path).map_err(|e| BundleError::from_npy(key, e))
}

fn shape_str(shape: &[usize]) -> String {
    match shape {
        [one] => format!("({one},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn read_stack(
    dir: &Path,
    key: &str,
    name: &str,
    manifest: &Manifest,
) -> Result<Stack<f32>, BundleError> {
    let arr = read_tensor(&resolve(dir, key, name)?, key)?;
    let (k, g) = (manifest.channels, manifest.grid_size);
    if arr.shape != [k, g, g] {
        return Err(BundleError::shape(
            key,
            format!("({k}, {g}, {g})"),
            shape_str(&arr.shape),
        ));
    }
    check_finite(key, &arr.data)?;
    Stack::from_flat(k, g, &arr.data).map_err(|e| BundleError::shape(key, e.left, e.right))
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<FeatureBundle<f32>, BundleError> {
    let manifest = Manifest::read(dir)?;

    let image_path = resolve(dir, "image_file", &manifest.image_file)?;
    let image = load_image(&image_path).map_err(|e| match e {
        BundleError::Malformed { source, .. } => BundleError::from_npy("image_file", source),
        BundleError::UnsupportedDType { dtype, .. } => BundleError::UnsupportedDType {
            key: "image_file".into(),
            dtype,
        },
        other => other,
    })?;
    let n = manifest.image_size;
    if image.dims() != (n, n) {
        return Err(BundleError::shape(
            "image_file",
            format!("({n}, {n})"),
            image.shape_string(),
        ));
    }

    let features = read_stack(dir, "features_file", &manifest.features_file, &manifest)?;
    let grads = read_stack(dir, "grads_file", &manifest.grads_file, &manifest)?;

    let bundle = FeatureBundle {
        image,
        features,
        grads,
        class_id: manifest.class_id,
        class_name: manifest.class_name,
        layer_name: manifest.layer,
        model_name: manifest.model,
        logits: manifest.logits,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `bundle` into `dir` (created if needed) as `<f4` tensors plus
/// manifest. Values are narrowed to `f32`.
pub fn save_bundle<T: Scalar>(bundle: &FeatureBundle<T>, dir: &Path) -> Result<(), BundleError> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = bundle.manifest();
    let narrow = |v: &[T]| {
        v.iter()
            .map(|x| x.to_f32().unwrap_or(f32::NAN))
            .collect::<Vec<_>>()
    };

    let n = bundle.image_side();
    let (k, g, _) = bundle.features.shape();
    npy::write(
        &dir.join(&manifest.image_file),
        &[n, n],
        &narrow(bundle.image.as_slice()),
    )?;
    npy::write(
        &dir.join(&manifest.features_file),
        &[k, g, g],
        &narrow(&bundle.features.to_flat()),
    )?;
    npy::write(
        &dir.join(&manifest.grads_file),
        &[k, g, g],
        &narrow(&bundle.grads.to_flat()),
    )?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(())
}

/// Loads a single-channel image from a PNG (8/16-bit gray or RGB) or a 2-D
/// `<f4` NPY tensor.
///
/// RGB collapses to the unweighted channel mean; integer samples are divided
/// by 255 or 65535.
pub fn load_image(path: &Path) -> Result<Grid<f32>, BundleError> {
    if !path.is_file() {
        return Err(BundleError::MissingFile {
            key: "image".into(),
            path: path.to_path_buf(),
        });
    }
    let is_npy = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("npy"));
    if is_npy {
        let arr = read_tensor(path, "image")?;
        return match arr.shape.as_slice() {
            &[h, w] => Ok(Grid::from_vec(h, w, arr.data).expect("npy sized")),
            other => Err(BundleError::shape("image", "(H, W)", shape_str(other))),
        };
    }

    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| BundleError::UnsupportedFormat(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::DynamicImage as D;
    let data: Vec<f32> = match &img {
        D::ImageLuma8(b) => b
            .pixels()
            .map(|p| f64::from(p[0]) / 255.0)
            .map(|v| v as f32)
            .collect(),
        D::ImageLuma16(b) => b
            .pixels()
            .map(|p| (f64::from(p[0]) / 65535.0) as f32)
            .collect(),
        D::ImageRgb8(b) => b
            .pixels()
            .map(|p| (rgb_mean(p.0.map(f64::from)) / 255.0) as f32)
            .collect(),
        D::ImageRgb16(b) => b
            .pixels()
            .map(|p| (rgb_mean(p.0.map(f64::from)) / 65535.0) as f32)
            .collect(),
        other => {
            return Err(BundleError::UnsupportedFormat(format!(
                "{:?} pixels (expected 8/16-bit gray or RGB)",
                other.color()
            )))
        }
    };
    Ok(Grid::from_vec(h, w, data).expect("decoded image sized"))
}

fn rgb_mean(p: [f64; 3]) -> f64 {
    (p[0] + p[1] + p[2]) / 3.0
}
