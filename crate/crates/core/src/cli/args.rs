//! Flag definitions and config-file merging.
//!
//! Every option that may come from a config file is parsed as a raw string
//! first; the config file fills in whatever the command line left unset, and
//! only then are values converted. Flags always win.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::CliError;
use crate::cam::{CamConfig, CamMethod, ChannelStrategy, IntermediateSize};
use crate::localize::{BBox, DEFAULT_FRACTION, DEFAULT_FRACTIONS};

#[derive(Debug, Parser)]
#[command(
    name = "sarcam",
    version,
    about = "Saliency maps and weakly-supervised localization from CNN activation bundles"
)]
pub struct Cli {
    /// Optional key = value config file mirroring the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a saliency map and render heatmap + overlay.
    Cam(CamArgs),
    /// Threshold the map and box the largest segment.
    Localize(LocalizeArgs),
    /// Localize at several thresholds.
    Sweep(SweepArgs),
    /// Check a bundle and print its shapes.
    Validate(ValidateArgs),
    /// Build a comparison sheet from saliency maps and images.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct MapArgs {
    /// Bundle directory, or a directory of bundle directories.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// ms-cam, grad-cam, grad-cam-pp, layer-cam or self-matching-cam.
    #[arg(long)]
    pub method: Option<String>,
    /// Intermediate matching side: an integer in [G, N] or "auto".
    #[arg(long = "m-size")]
    pub m_size: Option<String>,
    /// gradcam-gap, gradcampp or uniform.
    #[arg(long = "channel-strategy")]
    pub channel_strategy: Option<String>,
    /// Comma-separated channel indices to include in the weighted sum.
    #[arg(long)]
    pub channels: Option<String>,
    /// Heatmap opacity in overlays.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CamArgs {
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Fraction of the map maximum, in (0, 1]. Default 0.45.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Ground-truth box: a JSON file or inline JSON object.
    #[arg(long)]
    pub gt: Option<String>,
    /// Box outline thickness in pixels.
    #[arg(long)]
    pub thickness: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Comma-separated fractions. Default 0.30,0.45,0.60.
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub gt: Option<String>,
    #[arg(long)]
    pub thickness: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Saliency maps (NPY, N x N).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub maps: Vec<PathBuf>,
    /// Images underlying each map (PNG or NPY), same order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub images: Vec<PathBuf>,
    /// Optional tile labels, same order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parsed `key = value` config.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let table = text.parse::<toml::Table>().map_err(|e| {
            CliError::usage(format!("bad config {}: {}", path.display(), e.message()))
        })?;
        Ok(Self { table })
    }

    /// Raw string for `key`; accepts `m-size` or `m_size` spellings.
    pub fn get(&self, key: &str) -> Option<String> {
        let value = self
            .table
            .get(key)
            .or_else(|| self.table.get(&key.replace('-', "_")))?;
        Some(match value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        })
    }

    fn fill(&self, slot: &mut Option<String>, key: &str) {
        if slot.is_none() {
            *slot = self.get(key);
        }
    }

    fn fill_path(&self, slot: &mut Option<PathBuf>, key: &str) {
        if slot.is_none() {
            *slot = self.get(key).map(PathBuf::from);
        }
    }

    pub fn merge_map(&self, args: &mut MapArgs) {
        self.fill_path(&mut args.bundle, "bundle");
        self.fill(&mut args.method, "method");
        self.fill(&mut args.m_size, "m-size");
        self.fill(&mut args.channel_strategy, "channel-strategy");
        self.fill(&mut args.channels, "channels");
        self.fill(&mut args.alpha, "alpha");
        self.fill_path(&mut args.out, "out");
    }

    pub fn merge_localize(&self, args: &mut LocalizeArgs) {
        self.merge_map(&mut args.map);
        self.fill(&mut args.threshold, "threshold");
        self.fill(&mut args.gt, "gt");
        self.fill(&mut args.thickness, "thickness");
    }

    pub fn merge_sweep(&self, args: &mut SweepArgs) {
        self.merge_map(&mut args.map);
        self.fill(&mut args.fractions, "fractions");
        self.fill(&mut args.gt, "gt");
        self.fill(&mut args.thickness, "thickness");
    }

    pub fn merge_validate(&self, args: &mut ValidateArgs) {
        self.fill_path(&mut args.bundle, "bundle");
    }

    pub fn merge_render(&self, args: &mut RenderArgs) {
        self.fill(&mut args.columns, "columns");
        self.fill(&mut args.alpha, "alpha");
        self.fill_path(&mut args.out, "out");
    }
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

/// Locale-independent decimal (dot separator only).
pub fn parse_decimal(text: &str, flag: &str) -> Result<f64, CliError> {
    let t = text.trim();
    let ok = !t.is_empty()
        && t.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    match t.parse::<f64>() {
        Ok(v) if ok && v.is_finite() => Ok(v),
        _ => Err(CliError::usage(format!(
            "--{flag}: {text:?} is not a decimal number"
        ))),
    }
}

pub fn parse_fraction(text: &str, flag: &str) -> Result<f64, CliError> {
    let f = parse_decimal(text, flag)?;
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(CliError::usage(format!(
            "--{flag}: fraction {f} outside (0, 1]"
        )))
    }
}

pub fn parse_fractions(text: Option<&str>) -> Result<Vec<f64>, CliError> {
    match text {
        None => Ok(DEFAULT_FRACTIONS.to_vec()),
        Some(t) => {
            let list = t
                .split(',')
                .map(|p| parse_fraction(p, "fractions"))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(list)
        }
    }
}

pub fn parse_threshold(text: Option<&str>) -> Result<f64, CliError> {
    text.map_or(Ok(DEFAULT_FRACTION), |t| parse_fraction(t, "threshold"))
}

pub fn parse_alpha(text: Option<&str>) -> Result<f64, CliError> {
    match text {
        None => Ok(0.5),
        Some(t) => {
            let a = parse_decimal(t, "alpha")?;
            if (0.0..=1.0).contains(&a) {
                Ok(a)
            } else {
                Err(CliError::usage(format!("--alpha {a} outside [0, 1]")))
            }
        }
    }
}

pub fn parse_positive(text: Option<&str>, flag: &str, default: usize) -> Result<usize, CliError> {
    match text {
        None => Ok(default),
        Some(t) => match t.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(CliError::usage(format!(
                "--{flag}: expected a positive integer, got {t:?}"
            ))),
        },
    }
}

pub fn cam_config(args: &MapArgs) -> Result<CamConfig, CliError> {
    let method: CamMethod = required(&args.method, "method")?
        .parse()
        .map_err(CliError::usage)?;
    let intermediate = match &args.m_size {
        None => IntermediateSize::Auto,
        Some(s) => s.parse().map_err(CliError::usage)?,
    };
    let channel_strategy = match &args.channel_strategy {
        None => ChannelStrategy::default(),
        Some(s) => s.parse().map_err(CliError::usage)?,
    };
    let channel_subset = match &args.channels {
        None => None,
        Some(s) => Some(
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::usage(format!("--channels: bad index {p:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    Ok(CamConfig {
        method,
        intermediate,
        channel_strategy,
        channel_subset,
    })
}

/// `--gt` takes inline JSON or a path to a JSON file.
pub fn parse_gt(text: Option<&str>) -> Result<Option<BBox>, CliError> {
    let Some(t) = text else {
        return Ok(None);
    };
    let json = if t.trim_start().starts_with('{') {
        t.to_string()
    } else {
        fs::read_to_string(t).map_err(|e| CliError::usage(format!("--gt: cannot read {t}: {e}")))?
    };
    BBox::from_json(&json)
        .map(Some)
        .map_err(|e| CliError::usage(format!("--gt: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse_in_order() {
        assert_eq!(parse_fractions(None).unwrap(), vec![0.30, 0.45, 0.60]);
        assert_eq!(
            parse_fractions(Some("0.2, 0.4,0.6,0.8")).unwrap(),
            vec![0.2, 0.4, 0.6, 0.8]
        );
        assert!(parse_fractions(Some("0,5")).is_err());
        assert!(parse_fractions(Some("0.3;0.4")).is_err());
        assert!(parse_threshold(Some("0")).is_err());
        assert!(parse_threshold(Some("inf")).is_err());
        assert_eq!(parse_threshold(None).unwrap(), 0.45);
    }

    #[test]
    fn config_fills_only_missing_values() {
        let cfg = ConfigFile {
            table: "method = \"grad-cam\"\nm_size = 12\nfractions = [0.2, 0.5]\n"
                .parse()
                .unwrap(),
        };
        let mut args = MapArgs {
            method: Some("layer-cam".into()),
            ..MapArgs::default()
        };
        cfg.merge_map(&mut args);
        assert_eq!(args.method.as_deref(), Some("layer-cam"));
        assert_eq!(args.m_size.as_deref(), Some("12"));
        assert_eq!(cfg.get("fractions").as_deref(), Some("0.2,0.5"));
    }

    #[test]
    fn gt_inline_json() {
        let b = parse_gt(Some(r#"{"row_min":0,"col_min":1,"row_max":2,"col_max":3}"#)).unwrap();
        assert_eq!(b, Some(BBox::new(0, 1, 2, 3).unwrap()));
        assert!(parse_gt(Some("{}")).is_err());
    }

    #[test]
    fn cam_config_from_flags() {
        let args = MapArgs {
            method: Some("ms-cam".into()),
            m_size: Some("auto".into()),
            channels: Some("0,2".into()),
            ..MapArgs::default()
        };
        let c = cam_config(&args).unwrap();
        assert_eq!(c.method, CamMethod::MsCam);
        assert_eq!(c.channel_subset, Some(vec![0, 2]));
        let bad = MapArgs {
            method: Some("bogus".into()),
            ..MapArgs::default()
        };
        assert_eq!(cam_config(&bad).unwrap_err().code, 2);
    }
}
