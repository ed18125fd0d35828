//! Closed-loop flight simulation.
//!
//! The vehicle moves along the plan polyline with piecewise-constant speed.
//! Every `dt` it takes a frame blurred according to the speed it is flying,
//! and, in adaptive mode, segments the frame and lets the controller pick
//! the speed for the next interval. Turns and speed changes are
//! instantaneous.
//!
//! Captured images are not kept in the log: a capture is a pure function of
//! the world, the camera, the pose, the heading and the kernel length, so
//! [`replay_capture`] regenerates the pixels on demand.

use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerDecision, ControllerError, SpeedController};
use crate::geometry::{GeometryError, Point, Rect};
use crate::perception::{PerceptionError, Segmenter};
use crate::planner::CoveragePlan;
use crate::sensor::{apply_motion_blur, capture, BlurLaw, CameraModel, SensorError};
use crate::worldgen::FieldWorld;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid mission config: {0}")]
    InvalidConfig(String),
    #[error("plan leaves the capturable extent: waypoint ({x:.3}, {y:.3}) outside {extent}")]
    PlanOutsideWorld { x: f64, y: f64, extent: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlightMode {
    Adaptive,
    Baseline,
}

impl std::str::FromStr for FlightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(FlightMode::Adaptive),
            "baseline" => Ok(FlightMode::Baseline),
            other => Err(format!("unknown mode {other:?} (expected adaptive or baseline)")),
        }
    }
}

impl std::fmt::Display for FlightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlightMode::Adaptive => "adaptive",
            FlightMode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub controller: ControllerConfig,
    pub camera: CameraModel,
    pub blur_law: BlurLaw,
    pub t_max: f64,
    pub mode: FlightMode,
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(MissionError::InvalidConfig(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.camera.dt > 0.0) {
            return Err(MissionError::InvalidConfig(format!("dt must be positive, got {}", self.camera.dt)));
        }
        if !(self.blur_law.speed_per_step > 0.0) {
            return Err(MissionError::InvalidConfig("blur speed_per_step must be positive".into()));
        }
        self.controller.validate()?;
        let stride = self.camera.dt * self.controller.max_speed();
        if stride > self.camera.footprint_height {
            warn!(
                "along-track stride {stride:.2} m exceeds footprint height {:.2} m; gaps between frames are possible",
                self.camera.footprint_height
            );
        }
        Ok(())
    }
}

/// Everything needed to regenerate one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub index: usize,
    pub t: f64,
    /// Arc-length position along the plan.
    pub d: f64,
    pub pose: Point,
    pub heading: Point,
    pub speed: f64,
    pub kernel: usize,
}

/// One controller step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    pub pose: Point,
    pub decision: ControllerDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub mode: FlightMode,
    pub captures: Vec<CaptureRecord>,
    /// Empty in baseline mode.
    pub decisions: Vec<StepRecord>,
    /// Completion time `C(τ) = steps · dt`.
    pub c_tau: f64,
    pub distance: f64,
    pub completed: bool,
    pub path_length: f64,
}

impl MissionLog {
    pub fn steps(&self) -> usize {
        self.captures.len()
    }

    /// Speed flown over each interval (after the decision in adaptive mode).
    pub fn speeds(&self) -> Vec<f64> {
        match self.mode {
            FlightMode::Adaptive => self.decisions.iter().map(|d| d.decision.speed).collect(),
            FlightMode::Baseline => self.captures.iter().map(|c| c.speed).collect(),
        }
    }
}

/// Checks that every waypoint keeps the full footprint inside the raster.
pub fn check_extent(world: &FieldWorld, plan: &CoveragePlan, camera: &CameraModel) -> Result<(), MissionError> {
    let f = &world.frame;
    let allowed: Rect = f.extent().shrink(camera.footprint_width / 2.0, camera.footprint_height / 2.0);
    for p in plan.path.points() {
        if !allowed.contains(*p) {
            return Err(MissionError::PlanOutsideWorld {
                x: p.x,
                y: p.y,
                extent: format!(
                    "[{:.3}, {:.3}] x [{:.3}, {:.3}]",
                    allowed.min.x, allowed.max.x, allowed.min.y, allowed.max.y
                ),
            });
        }
    }
    Ok(())
}

/// Regenerates the (blurred) image for a logged capture.
pub fn replay_capture(world: &FieldWorld, camera: &CameraModel, rec: &CaptureRecord) -> Result<RgbImage, MissionError> {
    let raw = capture(world, camera, rec.pose)?;
    Ok(apply_motion_blur(&raw, rec.kernel, rec.heading)?)
}

pub fn run_adaptive(
    world: &FieldWorld,
    plan: &CoveragePlan,
    config: &MissionConfig,
    segmenter: &dyn Segmenter,
) -> Result<MissionLog, MissionError> {
    run(world, plan, config, FlightMode::Adaptive, Some(segmenter))
}

pub fn run_baseline(world: &FieldWorld, plan: &CoveragePlan, config: &MissionConfig) -> Result<MissionLog, MissionError> {
    run(world, plan, config, FlightMode::Baseline, None)
}

/// Dispatches on `config.mode`.
pub fn run_mission(
    world: &FieldWorld,
    plan: &CoveragePlan,
    config: &MissionConfig,
    segmenter: &dyn Segmenter,
) -> Result<MissionLog, MissionError> {
    match config.mode {
        FlightMode::Adaptive => run_adaptive(world, plan, config, segmenter),
        FlightMode::Baseline => run_baseline(world, plan, config),
    }
}

fn run(
    world: &FieldWorld,
    plan: &CoveragePlan,
    config: &MissionConfig,
    mode: FlightMode,
    segmenter: Option<&dyn Segmenter>,
) -> Result<MissionLog, MissionError> {
    config.validate()?;
    check_extent(world, plan, &config.camera)?;
    let cam = &config.camera;
    let dt = cam.dt;
    let length = plan.path.total_length();
    let mut ctl = SpeedController::new(config.controller.clone())?;

    let mut captures = Vec::new();
    let mut decisions = Vec::new();
    let mut d = 0.0f64;
    let mut steps = 0usize;
    let mut speed = config.controller.nominal_speed;
    let completed = loop {
        let t = steps as f64 * dt;
        let (pose, heading) = plan.path.arc_position(d.min(length))?;
        let kernel = config.blur_law.kernel_length(speed);
        let rec = CaptureRecord {
            index: steps,
            t,
            d,
            pose,
            heading,
            speed,
            kernel,
        };
        if let (FlightMode::Adaptive, Some(seg)) = (mode, segmenter) {
            let frame = replay_capture(world, cam, &rec)?;
            let result = seg.segment(&frame)?;
            let decision = ctl.step(&result)?;
            speed = decision.speed;
            decisions.push(StepRecord {
                index: steps,
                t,
                pose,
                decision,
            });
        }
        captures.push(rec);
        d += speed * dt;
        steps += 1;
        if d >= length {
            break true;
        }
        if steps as f64 * dt >= config.t_max {
            break false;
        }
    };

    Ok(MissionLog {
        mode,
        captures,
        decisions,
        c_tau: steps as f64 * dt,
        distance: d.min(length),
        completed,
        path_length: length,
    })
}
