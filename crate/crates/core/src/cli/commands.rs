use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::args::{
    cam_config, parse_alpha, parse_fractions, parse_gt, parse_positive, parse_threshold, required,
    Cli, Command, ConfigFile, MapArgs, RenderArgs, ValidateArgs,
};
use super::{CliError, EXIT_BUNDLE, EXIT_ZERO_MAP};
use crate::bundle::{load_bundle, load_image, FeatureBundle, MANIFEST_FILE};
use crate::cam::{compute_cam, CamConfig, SaliencyMap};
use crate::grid::Grid;
use crate::localize::{localize, sweep, BBox, LocalizationReport};
use crate::npy;
use crate::render::{colorize, draw_bbox, overlay, panel, save_png, RenderSpec};

pub const SALIENCY_FILE: &str = "saliency.npy";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCALIZATION_FILE: &str = "localization.json";
pub const SWEEP_FILE: &str = "sweep.jsonl";

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = ConfigFile::load(cli.config.as_ref())?;
    let started = Instant::now();
    match cli.command {
        Command::Cam(mut a) => {
            config.merge_map(&mut a.map);
            let job = MapJob::new("cam", &a.map, Mode::Cam)?;
            job.run(started)
        }
        Command::Localize(mut a) => {
            config.merge_localize(&mut a);
            let mode = Mode::Localize {
                threshold: parse_threshold(a.threshold.as_deref())?,
                gt: parse_gt(a.gt.as_deref())?,
                thickness: parse_positive(a.thickness.as_deref(), "thickness", 1)? as u32,
            };
            MapJob::new("localize", &a.map, mode)?.run(started)
        }
        Command::Sweep(mut a) => {
            config.merge_sweep(&mut a);
            let mode = Mode::Sweep {
                fractions: parse_fractions(a.fractions.as_deref())?,
                gt: parse_gt(a.gt.as_deref())?,
                thickness: parse_positive(a.thickness.as_deref(), "thickness", 1)? as u32,
            };
            MapJob::new("sweep", &a.map, mode)?.run(started)
        }
        Command::Validate(mut a) => {
            config.merge_validate(&mut a);
            validate(&a)
        }
        Command::Render(mut a) => {
            config.merge_render(&mut a);
            render(&a, started)
        }
    }
}

#[derive(Debug, Clone)]
enum Mode {
    Cam,
    Localize {
        threshold: f64,
        gt: Option<BBox>,
        thickness: u32,
    },
    Sweep {
        fractions: Vec<f64>,
        gt: Option<BBox>,
        thickness: u32,
    },
}

/// One bundle to process and where its outputs go.
#[derive(Debug, Clone)]
struct Target {
    name: String,
    dir: PathBuf,
    out: PathBuf,
}

/// A directory with a manifest is one bundle; otherwise every child
/// directory holding a manifest is processed into `out/<child>`.
fn discover(bundle: &Path, out: &Path) -> Result<(Vec<Target>, bool), CliError> {
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bundle".into())
    };
    let single = || Target {
        name: name_of(
            &bundle
                .canonicalize()
                .unwrap_or_else(|_| bundle.to_path_buf()),
        ),
        dir: bundle.to_path_buf(),
        out: out.to_path_buf(),
    };
    if !bundle.is_dir() || bundle.join(MANIFEST_FILE).is_file() {
        return Ok((vec![single()], false));
    }
    let mut children: Vec<PathBuf> = fs::read_dir(bundle)
        .map_err(|e| {
            CliError::new(
                EXIT_BUNDLE,
                format!("cannot list {}: {e}", bundle.display()),
            )
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(MANIFEST_FILE).is_file())
        .collect();
    if children.is_empty() {
        return Ok((vec![single()], false));
    }
    children.sort();
    let targets = children
        .into_iter()
        .map(|dir| {
            let name = name_of(&dir);
            Target {
                out: out.join(&name),
                name,
                dir,
            }
        })
        .collect();
    Ok((targets, true))
}

struct MapJob {
    command: &'static str,
    bundle: PathBuf,
    out: PathBuf,
    cam: CamConfig,
    render: RenderSpec,
    mode: Mode,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    bundle: &'a str,
    method: &'a str,
    intermediate_side: usize,
    #[serde(flatten)]
    report: &'a LocalizationReport,
    /// Quality proxy used for `iou` and `best`.
    quality_proxy: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<bool>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::compute(format!("cannot write {}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_map(path: &Path, map: &SaliencyMap<f32>) -> Result<(), CliError> {
    let n = map.side();
    npy::write(path, &[n, n], map.as_slice()).map_err(|e| io_err(path, e))
}

fn fraction_tag(f: f64) -> String {
    format!("t{f}")
}

impl MapJob {
    fn new(command: &'static str, args: &MapArgs, mode: Mode) -> Result<Self, CliError> {
        let cam = cam_config(args)?;
        let render = RenderSpec {
            alpha: parse_alpha(args.alpha.as_deref())?,
            draw_bbox: !matches!(mode, Mode::Cam),
            ..RenderSpec::default()
        };
        Ok(Self {
            command,
            bundle: required(&args.bundle, "bundle")?,
            out: required(&args.out, "out")?,
            cam,
            render,
            mode,
        })
    }

    fn config_echo(&self) -> serde_json::Value {
        let mut cfg = json!({
            "method": self.cam.method.name(),
            "m_size": self.cam.intermediate.to_string(),
            "channel_strategy": self.cam.channel_strategy.name(),
            "channels": self.cam.channel_subset,
            "render": self.render,
        });
        match &self.mode {
            Mode::Cam => {}
            Mode::Localize {
                threshold,
                gt,
                thickness,
            } => {
                cfg["threshold"] = json!(threshold);
                cfg["gt"] = json!(gt);
                cfg["thickness"] = json!(thickness);
            }
            Mode::Sweep {
                fractions,
                gt,
                thickness,
            } => {
                cfg["fractions"] = json!(fractions);
                cfg["gt"] = json!(gt);
                cfg["thickness"] = json!(thickness);
            }
        }
        cfg
    }

    fn run(&self, started: Instant) -> Result<(), CliError> {
        let (targets, batch) = discover(&self.bundle, &self.out)?;
        if batch {
            fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        }
        let results: Vec<Result<Vec<PathBuf>, CliError>> =
            targets.par_iter().map(|t| self.process(t)).collect();

        let mut outputs = Vec::new();
        let mut failures = Vec::new();
        for (t, r) in targets.iter().zip(results) {
            match r {
                Ok(paths) => outputs.extend(paths),
                Err(e) if batch => {
                    failures.push(CliError::new(e.code, format!("{}: {}", t.name, e.message)))
                }
                Err(e) => failures.push(e),
            }
        }
        if !outputs.is_empty() {
            self.write_run_manifest(&targets, &outputs, started)?;
        }
        match failures.len() {
            0 => Ok(()),
            1 => Err(failures.remove(0)),
            n => {
                for f in &failures[1..] {
                    eprintln!("{}", f.line());
                }
                let first = failures.remove(0);
                Err(CliError::new(
                    first.code,
                    format!(
                        "{n} of {} bundles failed; first: {}",
                        targets.len(),
                        first.message
                    ),
                ))
            }
        }
    }

    fn write_run_manifest(
        &self,
        targets: &[Target],
        outputs: &[PathBuf],
        started: Instant,
    ) -> Result<(), CliError> {
        let manifest = json!({
            "command": self.command,
            "tool_version": TOOL_VERSION,
            "config": self.config_echo(),
            "inputs": targets.iter().map(|t| t.dir.display().to_string()).collect::<Vec<_>>(),
            "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "wall_time_ms": started.elapsed().as_millis() as u64,
        });
        let path = self.out.join(RUN_MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("json");
        text.push('\n');
        write_text(&path, &text)
    }

    fn process(&self, target: &Target) -> Result<Vec<PathBuf>, CliError> {
        let bundle = load_bundle(&target.dir)?;
        let map = compute_cam(&bundle, &self.cam)?;
        let (g, n) = (bundle.grid_side(), bundle.image_side());
        let m = if self.cam.method.uses_intermediate_size() {
            self.cam.resolved_intermediate(g, n)?
        } else {
            g
        };
        fs::create_dir_all(&target.out).map_err(|e| io_err(&target.out, e))?;
        let stem = format!("{}_{}_M{m}", target.name, self.cam.method.name());
        let heat = colorize(map.grid(), &self.render);
        let over = overlay(&bundle.image, &heat, self.render.alpha)?;
        let mut outputs = Vec::new();

        match &self.mode {
            Mode::Cam => {
                let p = target.out.join(SALIENCY_FILE);
                write_map(&p, &map)?;
                outputs.push(p);
                let p = target.out.join(format!("{stem}_heatmap.png"));
                save_png(&heat, &p)?;
                outputs.push(p);
                let p = target.out.join(format!("{stem}.png"));
                save_png(&over, &p)?;
                outputs.push(p);
            }
            Mode::Localize {
                threshold,
                gt,
                thickness,
            } => {
                ensure_nonzero(&map)?;
                let report = localize(map.grid(), *threshold, gt.as_ref())
                    .map_err(|e| CliError::usage(e.to_string()))?;
                let record = self.record(target, m, &report, None);
                let p = target.out.join(LOCALIZATION_FILE);
                let mut text = serde_json::to_string_pretty(&record).expect("json");
                text.push('\n');
                write_text(&p, &text)?;
                outputs.push(p);
                let p = target
                    .out
                    .join(format!("{stem}_{}.png", fraction_tag(*threshold)));
                save_png(&annotate(&over, report.bbox.as_ref(), *thickness)?, &p)?;
                outputs.push(p);
            }
            Mode::Sweep {
                fractions,
                gt,
                thickness,
            } => {
                ensure_nonzero(&map)?;
                let result = sweep(map.grid(), fractions, gt.as_ref())
                    .map_err(|e| CliError::usage(e.to_string()))?;
                let mut lines = String::new();
                for (i, report) in result.reports.iter().enumerate() {
                    let best = result.best.map(|b| b == i);
                    let record = self.record(target, m, report, best);
                    lines.push_str(&serde_json::to_string(&record).expect("json"));
                    lines.push('\n');
                    let p = target.out.join(format!(
                        "{stem}_{}.png",
                        fraction_tag(report.threshold_fraction)
                    ));
                    save_png(&annotate(&over, report.bbox.as_ref(), *thickness)?, &p)?;
                    outputs.push(p);
                }
                let p = target.out.join(SWEEP_FILE);
                write_text(&p, &lines)?;
                outputs.insert(0, p);
            }
        }
        Ok(outputs)
    }

    fn record<'a>(
        &'a self,
        target: &'a Target,
        m: usize,
        report: &'a LocalizationReport,
        best: Option<bool>,
    ) -> ReportRecord<'a> {
        ReportRecord {
            bundle: &target.name,
            method: self.cam.method.name(),
            intermediate_side: m,
            report,
            quality_proxy: "iou",
            best,
        }
    }
}

fn ensure_nonzero(map: &SaliencyMap<f32>) -> Result<(), CliError> {
    if map.is_all_zero() {
        Err(CliError::new(
            EXIT_ZERO_MAP,
            "saliency map is identically zero; nothing to localize",
        ))
    } else {
        Ok(())
    }
}

fn annotate(
    image: &image::RgbImage,
    bbox: Option<&BBox>,
    thickness: u32,
) -> Result<image::RgbImage, CliError> {
    match bbox {
        Some(b) => Ok(draw_bbox(image, b, thickness)?),
        None => Ok(image.clone()),
    }
}

fn summary(dir: &Path, b: &FeatureBundle<f32>) -> String {
    let (k, g, _) = b.features.shape();
    let n = b.image_side();
    format!(
        "bundle {}\n  model {} layer {} class_id {}{}\n  image ({n}, {n}) <f4\n  features ({k}, {g}, {g}) <f4\n  grads ({k}, {g}, {g}) <f4\n  ok",
        dir.display(),
        b.model_name,
        b.layer_name,
        b.class_id,
        b.class_name
            .as_ref()
            .map(|c| format!(" ({c})"))
            .unwrap_or_default(),
    )
}

fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let root = required(&args.bundle, "bundle")?;
    let (targets, _) = discover(&root, &root)?;
    for t in &targets {
        let b = load_bundle(&t.dir)
            .map_err(|e| CliError::new(EXIT_BUNDLE, format!("{}: {e}", t.dir.display())))?;
        println!("{}", summary(&t.dir, &b));
    }
    Ok(())
}

fn load_map(path: &Path) -> Result<SaliencyMap<f32>, CliError> {
    let arr = npy::read(path)
        .map_err(|e| CliError::new(EXIT_BUNDLE, format!("{}: {e}", path.display())))?;
    let grid = match arr.shape.as_slice() {
        &[h, w] => Grid::from_vec(h, w, arr.data).expect("npy sized"),
        other => {
            return Err(CliError::new(
                EXIT_BUNDLE,
                format!(
                    "{}: expected a 2-D map, found shape {other:?}",
                    path.display()
                ),
            ))
        }
    };
    SaliencyMap::new(grid)
        .map_err(|e| CliError::new(EXIT_BUNDLE, format!("{}: {e}", path.display())))
}

fn render(args: &RenderArgs, started: Instant) -> Result<(), CliError> {
    let out = required(&args.out, "out")?;
    if args.maps.is_empty() {
        return Err(CliError::usage("--maps needs at least one saliency map"));
    }
    if args.maps.len() != args.images.len() {
        return Err(CliError::usage(format!(
            "{} maps but {} images",
            args.maps.len(),
            args.images.len()
        )));
    }
    if !args.labels.is_empty() && args.labels.len() != args.maps.len() {
        return Err(CliError::usage(format!(
            "{} labels for {} maps",
            args.labels.len(),
            args.maps.len()
        )));
    }
    let spec = RenderSpec {
        alpha: parse_alpha(args.alpha.as_deref())?,
        columns: parse_positive(args.columns.as_deref(), "columns", args.maps.len())?,
        draw_bbox: false,
        ..RenderSpec::default()
    };

    let tiles = args
        .maps
        .iter()
        .zip(&args.images)
        .map(|(m, i)| {
            let map = load_map(m)?;
            let image = load_image(i)
                .map_err(|e| CliError::new(EXIT_BUNDLE, format!("{}: {e}", i.display())))?;
            Ok(overlay(&image, &colorize(map.grid(), &spec), spec.alpha)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let sheet = panel(&tiles, &args.labels, spec.columns)?;

    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
    save_png(&sheet, &out)?;

    let manifest = json!({
        "command": "render",
        "tool_version": TOOL_VERSION,
        "config": { "render": spec, "labels": args.labels },
        "inputs": args.maps.iter().chain(&args.images).map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": [out.display().to_string()],
        "wall_time_ms": started.elapsed().as_millis() as u64,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("json");
    text.push('\n');
    write_text(&parent.join(RUN_MANIFEST_FILE), &text)
}
