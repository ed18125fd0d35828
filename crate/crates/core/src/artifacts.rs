//! On-disk run artifacts.
//!
//! A run directory holds everything needed to reproduce and score a flight:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | resolved configuration snapshot |
//! | `plan.txt` | waypoint file |
//! | `decisions.csv` | `i,t,x,y,s_prev,cr,cl,g1,g2,w1,w2,G,u,s_i` |
//! | `captures.csv` | `index,x,y,heading,speed,t` (heading in degrees) |
//! | `summary.json` | completion time, distance, world hash |
//!
//! `eval` adds `report.json`, `ssim_histogram.csv` and PNG figures. Run
//! directories are staged in a sibling temp directory and renamed into
//! place, and single files are written temp-then-rename, so readers never
//! see partial output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::controller::{ControllerDecision, Gain};
use crate::evaluation::{evaluate_run, EvalError, EvalReport, Evaluation, SSIM_BINS};
use crate::geometry::Point;
use crate::mission::{run_mission, CaptureRecord, FlightMode, MissionError, MissionLog, StepRecord};
use crate::perception::{class_palette, PerceptionError};
use crate::planner::CoveragePlan;
use crate::plot;
use crate::sensor::{BlurLaw, CameraModel};
use crate::worldgen::{FieldWorld, BACKGROUND, CROP, WEED};

pub const CONFIG_FILE: &str = "config.toml";
pub const PLAN_FILE: &str = "plan.txt";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const CAPTURES_FILE: &str = "captures.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "ssim_histogram.csv";

pub const DECISIONS_HEADER: [&str; 14] = ["i", "t", "x", "y", "s_prev", "cr", "cl", "g1", "g2", "w1", "w2", "G", "u", "s_i"];
pub const CAPTURES_HEADER: [&str; 6] = ["index", "x", "y", "heading", "speed", "t"];

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("runs cover different worlds: {0} vs {1}")]
    WorldMismatch(String, String),
    #[error("world content {found} does not match the recorded {recorded}")]
    WorldChanged { recorded: String, found: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, msg: impl ToString) -> ArtifactError {
    ArtifactError::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Writes `bytes` to a temp file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| ArtifactError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

fn png_bytes<P>(img: &image::ImageBuffer<P, Vec<u8>>) -> Vec<u8>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("png encoding to memory");
    buf.into_inner()
}

pub fn write_png(path: &Path, img: &image::RgbImage) -> Result<(), ArtifactError> {
    write_atomic(path, &png_bytes(img))
}

/// A directory assembled under a temporary name and renamed into place.
pub struct StagedDir {
    tmp: tempfile::TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self, ArtifactError> {
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        let tmp = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent).map_err(io_err(parent))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), ArtifactError> {
        let p = self.tmp.path().join(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))
    }

    /// Replaces any existing target directory with the staged one.
    pub fn commit(self) -> Result<PathBuf, ArtifactError> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).map_err(io_err(&self.target))?;
        }
        let staged = self.tmp.keep();
        std::fs::rename(&staged, &self.target).map_err(io_err(&self.target))?;
        Ok(self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub mode: FlightMode,
    pub nominal_speed: f64,
    pub max_discrepancy: f64,
    pub seed: u64,
    pub world_hash: String,
    pub steps: usize,
    pub c_tau: f64,
    pub distance: f64,
    pub path_length: f64,
    pub completed: bool,
    pub t_max: f64,
    pub within_budget: bool,
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn decisions_csv(log: &MissionLog, nominal_speed: f64) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DECISIONS_HEADER).expect("in-memory csv");
    match log.mode {
        FlightMode::Adaptive => {
            for s in &log.decisions {
                let d = &s.decision;
                let g = &d.gain;
                w.write_record([
                    s.index.to_string(),
                    fmt_f(s.t),
                    fmt_f(s.pose.x),
                    fmt_f(s.pose.y),
                    fmt_f(d.s_prev),
                    fmt_f(d.cr),
                    fmt_f(d.cl),
                    fmt_f(g.g1),
                    fmt_f(g.g2),
                    fmt_f(g.w1),
                    fmt_f(g.w2),
                    fmt_f(g.g),
                    fmt_f(d.u),
                    fmt_f(d.speed),
                ])
                .expect("in-memory csv");
            }
        }
        FlightMode::Baseline => {
            // no perception in the loop: only the constant speed is logged
            for c in &log.captures {
                let mut rec = vec![c.index.to_string(), fmt_f(c.t), fmt_f(c.pose.x), fmt_f(c.pose.y), fmt_f(nominal_speed)];
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(fmt_f(nominal_speed));
                w.write_record(rec).expect("in-memory csv");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

pub fn heading_degrees(h: Point) -> f64 {
    h.y.atan2(h.x).to_degrees().rem_euclid(360.0)
}

fn heading_from_degrees(deg: f64) -> Point {
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let r = deg.to_radians();
    Point::new(snap(r.cos()), snap(r.sin()))
}

pub fn captures_csv(log: &MissionLog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CAPTURES_HEADER).expect("in-memory csv");
    for c in &log.captures {
        w.write_record([
            c.index.to_string(),
            fmt_f(c.pose.x),
            fmt_f(c.pose.y),
            fmt_f(heading_degrees(c.heading)),
            fmt_f(c.speed),
            fmt_f(c.t),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let got = r.headers().map_err(|e| format_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(format_err(path, format!("unexpected header {:?}", got.iter().collect::<Vec<_>>())));
    }
    r.records().map(|rec| rec.map_err(|e| format_err(path, e))).collect()
}

fn num<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T, ArtifactError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, format!("bad value in column {i} of row {:?}", rec.iter().collect::<Vec<_>>())))
}

pub fn parse_captures(path: &Path, blur: &BlurLaw) -> Result<Vec<CaptureRecord>, ArtifactError> {
    read_rows(path, &CAPTURES_HEADER)?
        .iter()
        .map(|rec| {
            let speed: f64 = num(path, rec, 4)?;
            Ok(CaptureRecord {
                index: num(path, rec, 0)?,
                pose: Point::new(num(path, rec, 1)?, num(path, rec, 2)?),
                heading: heading_from_degrees(num(path, rec, 3)?),
                speed,
                t: num(path, rec, 5)?,
                d: f64::NAN,
                kernel: blur.kernel_length(speed),
            })
        })
        .collect()
}

pub fn parse_decisions(path: &Path) -> Result<Vec<StepRecord>, ArtifactError> {
    read_rows(path, &DECISIONS_HEADER)?
        .iter()
        .map(|rec| {
            let f = |i| num::<f64>(path, rec, i);
            Ok(StepRecord {
                index: num(path, rec, 0)?,
                t: f(1)?,
                pose: Point::new(f(2)?, f(3)?),
                decision: ControllerDecision {
                    s_prev: f(4)?,
                    cr: f(5)?,
                    cl: f(6)?,
                    gain: Gain {
                        g1: f(7)?,
                        g2: f(8)?,
                        w1: f(9)?,
                        w2: f(10)?,
                        g: f(11)?,
                    },
                    u: f(12)?,
                    speed: f(13)?,
                },
            })
        })
        .collect()
}

/// Field description written next to the rasters by [`write_field`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub world_hash: String,
    pub gsd: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub width_m: f64,
    pub height_m: f64,
    pub background_fraction: f64,
    pub crop_fraction: f64,
    pub weed_fraction: f64,
}

impl FieldSummary {
    pub fn new(world: &FieldWorld) -> Self {
        let e = world.frame.extent();
        Self {
            world_hash: world.content_hash(),
            gsd: world.frame.gsd,
            width_px: world.frame.raster_width,
            height_px: world.frame.raster_height,
            width_m: e.width(),
            height_m: e.height(),
            background_fraction: world.class_fraction(BACKGROUND),
            crop_fraction: world.class_fraction(CROP),
            weed_fraction: world.class_fraction(WEED),
        }
    }
}

/// Writes `orthophoto.png`, `labels.png` (class ids, loadable as an
/// import), `labels_color.png`, `field.json` and the config snapshot into
/// `dir`, atomically as a whole.
pub fn write_field(dir: &Path, cfg: &RunConfig, world: &FieldWorld) -> Result<FieldSummary, ArtifactError> {
    let summary = FieldSummary::new(world);
    let staged = StagedDir::new(dir)?;
    let color = image::RgbImage::from_fn(world.labels.width(), world.labels.height(), |x, y| {
        image::Rgb(class_palette(world.labels.get_pixel(x, y).0[0]))
    });
    let mut snapshot = cfg.clone();
    snapshot.out_dir = None;
    staged.write(CONFIG_FILE, snapshot.to_toml_string().as_bytes())?;
    staged.write("orthophoto.png", &png_bytes(&world.orthophoto))?;
    staged.write("labels.png", &png_bytes(&world.labels))?;
    staged.write("labels_color.png", &png_bytes(&color))?;
    staged.write("field.json", &json(&summary))?;
    staged.commit()?;
    Ok(summary)
}

/// Plan statistics written as `plan.json` by [`write_plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub waypoints: usize,
    pub length: f64,
    pub mega_cells: usize,
    pub subcells: usize,
    pub subcell_size: f64,
    pub footprint_width: f64,
    pub footprint_height: f64,
    pub overlap: f64,
}

impl PlanSummary {
    pub fn new(plan: &CoveragePlan, camera: &CameraModel) -> Self {
        Self {
            waypoints: plan.path.points().len(),
            length: plan.path.total_length(),
            mega_cells: plan.grid.mega_cells.len(),
            subcells: plan.grid.subcell_count(),
            subcell_size: plan.grid.subcell_size,
            footprint_width: camera.footprint_width,
            footprint_height: camera.footprint_height,
            overlap: plan.params.overlap,
        }
    }
}

/// Plans `cfg` over `world` and writes `plan.txt`, `plan.json` and the
/// config snapshot into `dir`.
pub fn write_plan(dir: &Path, cfg: &RunConfig, world: &FieldWorld) -> Result<PlanSummary, ArtifactError> {
    let camera = cfg.camera_model(world.frame.gsd)?;
    let plan = cfg.plan(world, &camera)?;
    let summary = PlanSummary::new(&plan, &camera);
    let mut snapshot = cfg.clone();
    snapshot.out_dir = None;
    let staged = StagedDir::new(dir)?;
    staged.write(CONFIG_FILE, snapshot.to_toml_string().as_bytes())?;
    staged.write(PLAN_FILE, plan.to_waypoint_text().as_bytes())?;
    staged.write("plan.json", &json(&summary))?;
    staged.commit()?;
    Ok(summary)
}

/// A flown mission with the objects it was flown over.
pub struct FlownRun {
    pub config: RunConfig,
    pub camera: CameraModel,
    pub plan: CoveragePlan,
    pub log: MissionLog,
    pub summary: RunSummary,
}

/// Plans and flies `cfg` over `world`.
pub fn fly(cfg: &RunConfig, world: &FieldWorld) -> Result<FlownRun, ArtifactError> {
    cfg.validate()?;
    let camera = cfg.camera_model(world.frame.gsd)?;
    let plan = cfg.plan(world, &camera)?;
    let segmenter = cfg.segmenter.build()?;
    let mission = cfg.mission_config(camera);
    let log = run_mission(world, &plan, &mission, segmenter.as_ref())?;
    let summary = RunSummary {
        mode: cfg.mission.mode,
        nominal_speed: cfg.controller.nominal_speed,
        max_discrepancy: cfg.controller.max_discrepancy,
        seed: cfg.field.seed,
        world_hash: world.content_hash(),
        steps: log.steps(),
        c_tau: log.c_tau,
        distance: log.distance,
        path_length: log.path_length,
        completed: log.completed,
        t_max: cfg.mission.t_max,
        within_budget: log.c_tau <= cfg.mission.t_max,
    };
    let mut config = cfg.clone();
    config.out_dir = None;
    Ok(FlownRun {
        config,
        camera,
        plan,
        log,
        summary,
    })
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serialization");
    s.push('\n');
    s.into_bytes()
}

/// Writes the run directory atomically.
pub fn write_run(dir: &Path, run: &FlownRun) -> Result<PathBuf, ArtifactError> {
    let staged = StagedDir::new(dir)?;
    staged.write(CONFIG_FILE, run.config.to_toml_string().as_bytes())?;
    staged.write(PLAN_FILE, run.plan.to_waypoint_text().as_bytes())?;
    staged.write(DECISIONS_FILE, decisions_csv(&run.log, run.summary.nominal_speed).as_bytes())?;
    staged.write(CAPTURES_FILE, captures_csv(&run.log).as_bytes())?;
    staged.write(SUMMARY_FILE, &json(&run.summary))?;
    staged.commit()
}

pub fn read_summary(dir: &Path) -> Result<RunSummary, ArtifactError> {
    let p = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| format_err(&p, e))
}

/// Loads a run directory back into a mission log.
pub fn load_run(dir: &Path) -> Result<(RunConfig, RunSummary, MissionLog), ArtifactError> {
    let cfg = RunConfig::load(dir.join(CONFIG_FILE))?;
    let summary = read_summary(dir)?;
    let captures = parse_captures(&dir.join(CAPTURES_FILE), &cfg.blur)?;
    let decisions = match summary.mode {
        FlightMode::Adaptive => parse_decisions(&dir.join(DECISIONS_FILE))?,
        FlightMode::Baseline => Vec::new(),
    };
    if summary.mode == FlightMode::Adaptive && decisions.len() != captures.len() {
        return Err(ArtifactError::Invalid(format!(
            "{}: {} decisions for {} captures",
            dir.display(),
            decisions.len(),
            captures.len()
        )));
    }
    let log = MissionLog {
        mode: summary.mode,
        captures,
        decisions,
        c_tau: summary.c_tau,
        distance: summary.distance,
        completed: summary.completed,
        path_length: summary.path_length,
    };
    Ok((cfg, summary, log))
}

/// Evaluation output persisted as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub world_hash: String,
    pub mode: FlightMode,
    pub nominal_speed: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Scores a flown run against its world.
pub fn evaluate(run: &FlownRun, world: &FieldWorld) -> Result<Evaluation, ArtifactError> {
    let segmenter = run.config.segmenter.build()?;
    Ok(evaluate_run(
        world,
        &run.camera,
        &run.log,
        segmenter.as_ref(),
        &run.config.eval_params(),
        run.config.regions(),
        Some(&run.plan.grid),
    )?)
}

/// Writes evaluation artifacts into an existing run directory.
pub fn write_eval(dir: &Path, summary: &RunSummary, log: &MissionLog, ev: &Evaluation) -> Result<EvalRecord, ArtifactError> {
    let record = EvalRecord {
        world_hash: summary.world_hash.clone(),
        mode: summary.mode,
        nominal_speed: summary.nominal_speed,
        seed: summary.seed,
        report: ev.report.clone(),
    };
    let mut hist = String::from("bin_low,bin_high,fraction\n");
    for (i, f) in ev.report.ssim_histogram.iter().enumerate() {
        let _ = writeln!(hist, "{},{},{}", i as f64 / SSIM_BINS as f64, (i + 1) as f64 / SSIM_BINS as f64, f);
    }
    write_atomic(&dir.join(HISTOGRAM_FILE), hist.as_bytes())?;
    let (w, h) = (ev.ssim.width, ev.ssim.height);
    write_png(&dir.join("ssim.png"), &plot::ssim_image(&ev.ssim, 4))?;
    write_png(&dir.join("class_map.png"), &plot::class_image(&ev.class_map, w, h, 4))?;
    write_png(&dir.join("mosaic.png"), &image::imageops::thumbnail(&ev.mosaic.image, w.div_ceil(4), h.div_ceil(4)))?;
    let s = summary.nominal_speed;
    let q = summary.max_discrepancy;
    write_png(&dir.join("speed.png"), &plot::speed_trace(&log.speeds(), s - q, s + q, s))?;
    write_atomic(&dir.join(REPORT_FILE), &json(&record))?;
    Ok(record)
}

/// Re-plans a stored run over its regenerated world and scores it.
pub fn evaluate_dir(dir: &Path) -> Result<EvalRecord, ArtifactError> {
    let (cfg, summary, log) = load_run(dir)?;
    let world = cfg.build_world()?;
    let found = world.content_hash();
    if found != summary.world_hash {
        return Err(ArtifactError::WorldChanged {
            recorded: summary.world_hash,
            found,
        });
    }
    let camera = cfg.camera_model(world.frame.gsd)?;
    let plan = cfg.plan(&world, &camera)?;
    let run = FlownRun {
        config: cfg,
        camera,
        plan,
        log,
        summary,
    };
    let ev = evaluate(&run, &world)?;
    write_eval(dir, &run.summary, &run.log, &ev)
}

pub fn read_report(dir: &Path) -> Result<EvalRecord, ArtifactError> {
    let p = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| format_err(&p, e))
}

/// One line of a comparison or sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub world_hash: String,
    pub seed: u64,
    pub nominal_speed: f64,
    pub mode: FlightMode,
    pub iou_crop: f64,
    pub iou_weed: f64,
    pub c_tau: f64,
    pub objective: f64,
    pub mean_ssim: f64,
    pub completed: bool,
}

impl ComparisonRow {
    pub fn new(run: String, r: &EvalRecord) -> Self {
        Self {
            run,
            world_hash: r.world_hash.clone(),
            seed: r.seed,
            nominal_speed: r.nominal_speed,
            mode: r.mode,
            iou_crop: r.report.iou_crop,
            iou_weed: r.report.iou_weed,
            c_tau: r.report.c_tau,
            objective: r.report.objective,
            mean_ssim: r.report.mean_ssim,
            completed: r.report.completed,
        }
    }
}

pub fn rows_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Collects evaluated runs (evaluating any that lack a report) and refuses
/// to mix worlds. Rows are ordered by speed, then mode, then run name.
pub fn compare(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>, ArtifactError> {
    if dirs.len() < 2 {
        return Err(ArtifactError::Invalid("compare needs at least two run directories".into()));
    }
    let mut rows = Vec::new();
    for d in dirs {
        let summary = read_summary(d)?;
        if let Some(first) = rows.first().map(|r: &ComparisonRow| r.world_hash.clone()) {
            if first != summary.world_hash {
                return Err(ArtifactError::WorldMismatch(first, summary.world_hash));
            }
        }
        let rec = if d.join(REPORT_FILE).exists() { read_report(d)? } else { evaluate_dir(d)? };
        let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push(ComparisonRow::new(name, &rec));
    }
    rows.sort_by(|a, b| {
        a.nominal_speed
            .total_cmp(&b.nominal_speed)
            .then(a.mode.to_string().cmp(&b.mode.to_string()))
            .then(a.run.cmp(&b.run))
    });
    Ok(rows)
}

/// Mean and (population) variance across seeds for one `(speed, mode)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub nominal_speed: f64,
    pub mode: FlightMode,
    pub runs: usize,
    pub iou_crop_mean: f64,
    pub iou_crop_var: f64,
    pub iou_weed_mean: f64,
    pub iou_weed_var: f64,
    pub c_tau_mean: f64,
    pub c_tau_var: f64,
    pub objective_mean: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

pub fn aggregate(rows: &[ComparisonRow]) -> Vec<SweepCell> {
    let mut groups: BTreeMap<(String, String), Vec<&ComparisonRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((format!("{:020.6}", r.nominal_speed), r.mode.to_string())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&ComparisonRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (ic, icv) = mean_var(&col(|r| r.iou_crop));
            let (iw, iwv) = mean_var(&col(|r| r.iou_weed));
            let (c, cv) = mean_var(&col(|r| r.c_tau));
            let (o, _) = mean_var(&col(|r| r.objective));
            SweepCell {
                nominal_speed: g[0].nominal_speed,
                mode: g[0].mode,
                runs: g.len(),
                iou_crop_mean: ic,
                iou_crop_var: icv,
                iou_weed_mean: iw,
                iou_weed_var: iwv,
                c_tau_mean: c,
                c_tau_var: cv,
                objective_mean: o,
            }
        })
        .collect()
}

pub fn run_dir_name(speed: f64, mode: FlightMode, seed: u64) -> String {
    format!("s{speed}_{mode}_seed{seed}")
}

/// Flies and scores every `(speed, mode, seed)` combination in parallel,
/// writes one run directory each plus `runs.csv`, `sweep.csv` and
/// `iou_vs_speed.png` under `root`.
pub fn sweep(
    base: &RunConfig,
    speeds: &[f64],
    modes: &[FlightMode],
    seeds: &[u64],
    root: &Path,
) -> Result<(Vec<ComparisonRow>, Vec<SweepCell>), ArtifactError> {
    if speeds.is_empty() || modes.is_empty() || seeds.is_empty() {
        return Err(ArtifactError::Invalid("sweep needs at least one speed, mode and seed".into()));
    }
    let worlds: Vec<(u64, FieldWorld)> = seeds
        .par_iter()
        .map(|&s| Ok((s, base.clone().with_seed(s).build_world()?)))
        .collect::<Result<_, ArtifactError>>()?;
    let jobs: Vec<(f64, FlightMode, usize)> = speeds
        .iter()
        .flat_map(|&v| modes.iter().flat_map(move |&m| (0..seeds.len()).map(move |i| (v, m, i))))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(speed, mode, wi)| {
            let (seed, world) = &worlds[wi];
            let mut cfg = base.clone().with_seed(*seed);
            cfg.controller.nominal_speed = speed;
            cfg.mission.mode = mode;
            let run = fly(&cfg, world)?;
            let name = run_dir_name(speed, mode, *seed);
            let dir = write_run(&root.join(&name), &run)?;
            let ev = evaluate(&run, world)?;
            let rec = write_eval(&dir, &run.summary, &run.log, &ev)?;
            Ok(ComparisonRow::new(name, &rec))
        })
        .collect::<Result<Vec<_>, ArtifactError>>()?;
    rows.sort_by(|a, b| a.run.cmp(&b.run));
    let cells = aggregate(&rows);
    write_atomic(&root.join("runs.csv"), &rows_csv(&rows))?;
    write_atomic(&root.join("sweep.csv"), &rows_csv(&cells))?;
    let (lo, hi) = speeds.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let series: Vec<plot::Series> = modes
        .iter()
        .map(|m| plot::Series {
            color: match m {
                FlightMode::Adaptive => image::Rgb([30, 90, 200]),
                FlightMode::Baseline => image::Rgb([200, 60, 30]),
            },
            points: cells
                .iter()
                .filter(|c| c.mode == *m)
                .map(|c| (c.nominal_speed, c.iou_crop_mean, c.iou_crop_var))
                .collect(),
        })
        .collect();
    write_png(&root.join("iou_vs_speed.png"), &plot::iou_curves(&series, lo - 0.5, hi + 0.5))?;
    Ok((rows, cells))
}
