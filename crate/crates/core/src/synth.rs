//! Deterministic synthetic bundles with known localization ground truth.
//!
//! Every generator draws from `ChaCha8Rng::seed_from_u64(seed)` in a fixed
//! loop order, so a `(seed, N, G, K, pattern)` tuple always yields the same
//! bytes.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bundle::{save_bundle, BundleError, FeatureBundle};
use crate::grid::{Grid, Stack};
use crate::localize::BBox;

pub const GROUND_TRUTH_FILE: &str = "gt.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad fixture shape: {0}")]
    BadShape(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// One bright square target with positive gradients on its cells.
    Blob,
    /// A large and a small target; ground truth is the large one.
    TwoBlobs,
    /// Random content with all-zero gradients.
    ZeroGrads,
    /// Uniform random image, features and signed gradients.
    Random,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Self::Blob, Self::TwoBlobs, Self::ZeroGrads, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Blob => "blob",
            Self::TwoBlobs => "two-blobs",
            Self::ZeroGrads => "zero-grads",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| format!("unknown fixture pattern {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub bundle: FeatureBundle<f32>,
    pub ground_truth: Option<BBox>,
}

impl Fixture {
    /// Writes the bundle and, when known, `gt.json`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        save_bundle(&self.bundle, dir)?;
        if let Some(gt) = &self.ground_truth {
            let mut text = serde_json::to_string(gt).expect("bbox serializes");
            text.push('\n');
            fs::write(dir.join(GROUND_TRUTH_FILE), text)?;
        }
        Ok(())
    }
}

/// Half-open block of feature cells.
#[derive(Debug, Clone, Copy)]
struct Cells {
    rows: (usize, usize),
    cols: (usize, usize),
}

impl Cells {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&r) && (self.cols.0..self.cols.1).contains(&c)
    }

    fn dilated(&self, g: usize) -> Cells {
        Cells {
            rows: (self.rows.0.saturating_sub(1), (self.rows.1 + 1).min(g)),
            cols: (self.cols.0.saturating_sub(1), (self.cols.1 + 1).min(g)),
        }
    }

    /// Inclusive pixel box covered by these cells at `scale` pixels per cell.
    fn pixel_box(&self, scale: usize) -> BBox {
        BBox {
            row_min: self.rows.0 * scale,
            col_min: self.cols.0 * scale,
            row_max: self.rows.1 * scale - 1,
            col_max: self.cols.1 * scale - 1,
        }
    }
}

/// A target: cells it occupies and the image brightness range inside it.
struct Target {
    cells: Cells,
    brightness: (f32, f32),
}

fn check_shape(n: usize, g: usize, k: usize) -> Result<(), SynthError> {
    if g == 0 || k == 0 || n < g {
        return Err(SynthError::BadShape(format!(
            "need N >= G >= 1 and K >= 1, got N={n} G={g} K={k}"
        )));
    }
    Ok(())
}

fn uniform_grid(rng: &mut ChaCha8Rng, side: usize, lo: f32, hi: f32) -> Grid<f32> {
    Grid::from_fn(side, side, |_, _| rng.gen_range(lo..hi))
}

fn uniform_stack(rng: &mut ChaCha8Rng, k: usize, g: usize, lo: f32, hi: f32) -> Stack<f32> {
    Stack::from_maps(g, (0..k).map(|_| uniform_grid(rng, g, lo, hi)).collect()).expect("g x g")
}

fn bundle_from(
    name: &str,
    image: Grid<f32>,
    features: Stack<f32>,
    grads: Stack<f32>,
) -> FeatureBundle<f32> {
    FeatureBundle {
        image,
        features,
        grads,
        class_id: 0,
        class_name: Some(name.to_string()),
        layer_name: "synthetic".into(),
        model_name: "fixture".into(),
        logits: None,
    }
}

/// Uniform random bundle: image in `[0, 1)`, features in `[0, 1)`, gradients
/// in `[-1, 1)`.
pub fn random_bundle(seed: u64, n: usize, g: usize, k: usize) -> FeatureBundle<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = uniform_grid(&mut rng, n, 0.0, 1.0);
    let features = uniform_stack(&mut rng, k, g, 0.0, 1.0);
    let grads = uniform_stack(&mut rng, k, g, -1.0, 1.0);
    bundle_from("random", image, features, grads)
}

fn targets_bundle(
    seed: u64,
    n: usize,
    g: usize,
    k: usize,
    targets: &[Target],
    name: &str,
) -> FeatureBundle<f32> {
    let scale = n / g;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Grid::from_fn(n, n, |r, c| {
        let (cr, cc) = (r / scale, c / scale);
        match targets.iter().find(|t| t.cells.contains(cr, cc)) {
            Some(t) => rng.gen_range(t.brightness.0..t.brightness.1),
            None => rng.gen_range(0.0..0.05),
        }
    });
    let support: Vec<Cells> = targets.iter().map(|t| t.cells.dilated(g)).collect();
    let on_support = |r: usize, c: usize| support.iter().any(|s| s.contains(r, c));
    let features = Stack::from_maps(
        g,
        (0..k)
            .map(|_| {
                Grid::from_fn(g, g, |r, c| {
                    if on_support(r, c) {
                        rng.gen_range(0.8..1.0)
                    } else {
                        rng.gen_range(0.0..0.1)
                    }
                })
            })
            .collect(),
    )
    .expect("g x g");
    let grads = Stack::from_maps(
        g,
        (0..k)
            .map(|_| {
                Grid::from_fn(g, g, |r, c| {
                    if on_support(r, c) {
                        rng.gen_range(0.6..1.0)
                    } else {
                        rng.gen_range(-0.2..0.0)
                    }
                })
            })
            .collect(),
    )
    .expect("g x g");
    bundle_from(name, image, features, grads)
}

/// Builds a fixture. Blob patterns need `N` divisible by `G` and `G >= 4`.
pub fn make_fixture(
    seed: u64,
    n: usize,
    g: usize,
    k: usize,
    pattern: Pattern,
) -> Result<Fixture, SynthError> {
    check_shape(n, g, k)?;
    let needs_grid = matches!(pattern, Pattern::Blob | Pattern::TwoBlobs);
    if needs_grid && (!n.is_multiple_of(g) || g < 4) {
        return Err(SynthError::BadShape(format!(
            "{pattern} needs G >= 4 dividing N, got N={n} G={g}"
        )));
    }
    let scale = n / g;
    Ok(match pattern {
        Pattern::Random => Fixture {
            bundle: random_bundle(seed, n, g, k),
            ground_truth: None,
        },
        Pattern::ZeroGrads => {
            let mut bundle = random_bundle(seed, n, g, k);
            bundle.grads = Stack::filled(k, g, 0.0);
            bundle.class_name = Some(pattern.name().into());
            Fixture {
                bundle,
                ground_truth: None,
            }
        }
        Pattern::Blob => {
            let cells = Cells {
                rows: (3 * g / 8, 5 * g / 8),
                cols: (g / 4, 5 * g / 8),
            };
            let target = Target {
                cells,
                brightness: (0.85, 1.0),
            };
            Fixture {
                bundle: targets_bundle(seed, n, g, k, &[target], pattern.name()),
                ground_truth: Some(cells.pixel_box(scale)),
            }
        }
        Pattern::TwoBlobs => {
            let large = Cells {
                rows: (g / 8, 3 * g / 8),
                cols: (g / 8, g / 2),
            };
            let small = Cells {
                rows: (6 * g / 8, 7 * g / 8),
                cols: (6 * g / 8, 7 * g / 8),
            };
            let targets = [
                Target {
                    cells: large,
                    brightness: (0.9, 1.0),
                },
                Target {
                    cells: small,
                    brightness: (0.7, 0.8),
                },
            ];
            Fixture {
                bundle: targets_bundle(seed, n, g, k, &targets, pattern.name()),
                ground_truth: Some(large.pixel_box(scale)),
            }
        }
    })
}
