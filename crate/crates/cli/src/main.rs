//! `agriscan` command line: generate fields, plan, fly, evaluate, compare
//! and sweep adaptive-speed coverage missions.
//!
//! Every command reads an optional TOML run configuration (`--config`),
//! validates it completely before touching the filesystem, and writes its
//! artifacts atomically. Failures print one diagnostic line to stderr and
//! exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agriscan::artifacts::{self, rows_csv, run_dir_name, write_atomic};
use agriscan::calibration::{self, CalibrationTargets};
use agriscan::fixtures;
use agriscan::perception::SegmenterSpec;
use agriscan::{FlightMode, RunConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "AGRISCAN_OUT";
const DEFAULT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(name = "agriscan", version, about = "Adaptive-speed UAV coverage missions over crop fields")]
struct Cli {
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; defaults to a named directory under the output root.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed of the generated field.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic field and write its rasters.
    GenField(Common),
    /// Plan the STC coverage path over the field.
    Plan(Common),
    /// Fly one mission and write its logs.
    Fly {
        #[command(flatten)]
        common: Common,
        /// Flight mode (adaptive or baseline).
        #[arg(long)]
        mode: Option<FlightMode>,
        /// Nominal speed in m/s.
        #[arg(long)]
        nominal_speed: Option<f64>,
    },
    /// Reconstruct and score one or more run directories in place.
    Eval {
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
    /// Tabulate two or more runs over the same world.
    Compare {
        #[arg(required = true, num_args = 2.., value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
        /// Directory for comparison.csv; printed only when omitted.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Fly and score every speed, mode and seed combination.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Nominal speeds in m/s.
        #[arg(long, value_delimiter = ',', default_values_t = [3.0, 4.0, 5.0, 6.0])]
        speeds: Vec<f64>,
        /// Flight modes.
        #[arg(long, value_delimiter = ',', default_values_t = [FlightMode::Adaptive, FlightMode::Baseline])]
        modes: Vec<FlightMode>,
        /// Field seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
    },
    /// Grid-search the reference segmenter's bandwidth and temperature.
    Calibrate(Common),
    /// Check or regenerate the golden fixture files.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
        /// Fixture directory.
        #[arg(long, global = true, value_name = "DIR", default_value = "crates/core/fixtures/v1")]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Fail with the list of drifted cases if the code moved.
    Check,
    /// Rewrite every fixture file from the current code.
    Regenerate,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

/// `--out`, else `<root>/<name>` where the root comes from the config, then
/// the environment, then `runs/`.
fn out_dir(common: &Common, cfg: &RunConfig, name: &str) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    let root = cfg
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    root.join(name)
}

fn say(quiet: bool, line: impl AsRef<str>) {
    if !quiet {
        println!("{}", line.as_ref());
    }
}

fn gen_field(common: &Common, quiet: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let world = cfg.build_world()?;
    let dir = out_dir(common, &cfg, &format!("field_seed{}", cfg.field.seed));
    let s = artifacts::write_field(&dir, &cfg, &world)?;
    say(
        quiet,
        format!(
            "{}: {}x{} px, crop {:.3}, weed {:.3}, world {}",
            dir.display(),
            s.width_px,
            s.height_px,
            s.crop_fraction,
            s.weed_fraction,
            &s.world_hash[..12]
        ),
    );
    Ok(())
}

fn plan(common: &Common, quiet: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let world = cfg.build_world()?;
    let dir = out_dir(common, &cfg, &format!("plan_seed{}", cfg.field.seed));
    let s = artifacts::write_plan(&dir, &cfg, &world)?;
    say(
        quiet,
        format!(
            "{}: {} waypoints, {} subcells of {:.2} m, length {:.1} m",
            dir.display(),
            s.waypoints,
            s.subcells,
            s.subcell_size,
            s.length
        ),
    );
    Ok(())
}

fn fly(common: &Common, mode: Option<FlightMode>, speed: Option<f64>, quiet: bool) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = mode {
        cfg.mission.mode = m;
    }
    if let Some(s) = speed {
        cfg.controller.nominal_speed = s;
    }
    cfg.validate()?;
    let dir = out_dir(common, &cfg, &run_dir_name(cfg.controller.nominal_speed, cfg.mission.mode, cfg.field.seed));
    info!("generating field (seed {})", cfg.field.seed);
    let world = cfg.build_world()?;
    info!("flying {} at {} m/s", cfg.mission.mode, cfg.controller.nominal_speed);
    let run = artifacts::fly(&cfg, &world)?;
    artifacts::write_run(&dir, &run)?;
    let s = &run.summary;
    say(
        quiet,
        format!(
            "{}: {} steps, C = {:.1} s, {:.1}/{:.1} m{}",
            dir.display(),
            s.steps,
            s.c_tau,
            s.distance.min(s.path_length),
            s.path_length,
            if s.completed { "" } else { " (budget exhausted)" }
        ),
    );
    Ok(())
}

fn eval(runs: &[PathBuf], quiet: bool) -> Result<()> {
    for d in runs {
        info!("evaluating {}", d.display());
        let r = artifacts::evaluate_dir(d).with_context(|| format!("evaluating {}", d.display()))?;
        say(
            quiet,
            format!(
                "{}: IoU crop {:.4}, weed {:.4}, C = {:.1} s, objective {:.4}, mean SSIM {:.4}",
                d.display(),
                r.report.iou_crop,
                r.report.iou_weed,
                r.report.c_tau,
                r.report.objective,
                r.report.mean_ssim
            ),
        );
    }
    Ok(())
}

fn compare(runs: &[PathBuf], out: Option<&Path>, quiet: bool) -> Result<()> {
    let rows = artifacts::compare(runs)?;
    let csv = rows_csv(&rows);
    match out {
        Some(dir) => {
            write_atomic(&dir.join("comparison.csv"), &csv)?;
            say(quiet, format!("{}", dir.join("comparison.csv").display()));
        }
        None => say(quiet, String::from_utf8_lossy(&csv).trim_end()),
    }
    Ok(())
}

fn sweep(common: &Common, speeds: &[f64], modes: &[FlightMode], seeds: &[u64], quiet: bool) -> Result<()> {
    let cfg = load_config(common)?;
    if common.seed.is_some() {
        bail!("sweep takes --seeds, not --seed");
    }
    for &s in speeds {
        let mut probe = cfg.clone();
        probe.controller.nominal_speed = s;
        probe.validate().with_context(|| format!("speed {s}"))?;
    }
    let root = out_dir(common, &cfg, "sweep");
    info!("sweeping {} runs into {}", speeds.len() * modes.len() * seeds.len(), root.display());
    let (_, cells) = artifacts::sweep(&cfg, speeds, modes, seeds, &root)?;
    for c in &cells {
        say(
            quiet,
            format!(
                "s = {} {}: IoU crop {:.4} ± {:.4}, weed {:.4} ± {:.4}, C = {:.1} s",
                c.nominal_speed,
                c.mode,
                c.iou_crop_mean,
                c.iou_crop_var.sqrt(),
                c.iou_weed_mean,
                c.iou_weed_var.sqrt(),
                c.c_tau_mean
            ),
        );
    }
    say(quiet, format!("{}", root.join("sweep.csv").display()));
    Ok(())
}

fn calibrate(common: &Common, quiet: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let SegmenterSpec::Prototype { config: base } = &cfg.segmenter else {
        bail!("calibration applies to the prototype segmenter only");
    };
    let camera = cfg.camera_model(cfg.field.gsd)?;
    let images = calibration::reference_images(cfg.field.seed, &camera)?;
    let (sigmas, temps) = calibration::default_grid();
    let points = calibration::calibrate(&images, base, &sigmas, &temps, &CalibrationTargets::default())?;
    let dir = out_dir(common, &cfg, "calibration");
    write_atomic(&dir.join("calibration.csv"), &rows_csv(&points))?;
    let best = &points[0];
    say(
        quiet,
        format!(
            "best sigma {:.2}, temperature {:.2}: clean cl {:.3}, blurred cl {:.3} ({})",
            best.sigma,
            best.temperature,
            best.clean_cl,
            best.blurred_cl,
            dir.join("calibration.csv").display()
        ),
    );
    Ok(())
}

fn fixtures_cmd(action: &FixtureAction, dir: &Path, quiet: bool) -> Result<()> {
    match action {
        FixtureAction::Check => {
            fixtures::check(dir)?;
            say(quiet, format!("{}: fixtures match", dir.display()));
        }
        FixtureAction::Regenerate => {
            let names = fixtures::regenerate(dir)?;
            say(quiet, format!("{}: wrote {}", dir.display(), names.join(", ")));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let q = cli.quiet;
    match &cli.command {
        Command::GenField(c) => gen_field(c, q),
        Command::Plan(c) => plan(c, q),
        Command::Fly { common, mode, nominal_speed } => fly(common, *mode, *nominal_speed, q),
        Command::Eval { runs } => eval(runs, q),
        Command::Compare { runs, out } => compare(runs, out.as_deref(), q),
        Command::Sweep { common, speeds, modes, seeds } => sweep(common, speeds, modes, seeds, q),
        Command::Calibrate(c) => calibrate(c, q),
        Command::Fixtures { action, dir } => fixtures_cmd(action, dir, q),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ");
            eprintln!("agriscan: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
