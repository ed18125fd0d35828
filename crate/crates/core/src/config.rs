//! Run configuration: one TOML document describing the field, the plan,
//! the camera, the controller, the mission and the evaluation.
//!
//! Every section is optional and defaults to the reference mission
//! (10 m altitude, 70% side-lap, 640×480 frames at 1 Hz, q = 1 m/s).
//! Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::evaluation::EvalParams;
use crate::geometry::{GeometryError, Point, Polygon, Rect};
use crate::mission::{FlightMode, MissionConfig, MissionError};
use crate::perception::{PerceptionError, SegmenterSpec};
use crate::planner::{plan_coverage, CoveragePlan, PlanningError};
use crate::sensor::{BlurLaw, CameraModel, SensorError};
use crate::worldgen::{generate_field, load_field, FieldSpec, FieldWorld, Region, WorldError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

/// External orthophoto / label rasters instead of a generated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldImport {
    pub orthophoto: PathBuf,
    pub labels: PathBuf,
    pub gsd: f64,
    #[serde(default)]
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    pub overlap: f64,
    pub altitude: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            overlap: 0.70,
            altitude: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    pub image_width: u32,
    pub image_height: u32,
    pub dt: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            image_width: 640,
            image_height: 480,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionParams {
    pub t_max: f64,
    pub mode: FlightMode,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            t_max: 1800.0,
            mode: FlightMode::Adaptive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub alpha: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { alpha: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Output root for artifacts; command-line flags take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub field: FieldSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import: Option<FieldImport>,
    /// Mission area; defaults to the whole field. Shrunk by half a
    /// footprint before planning so every frame stays on the raster.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
    pub planner: PlannerParams,
    pub camera: CameraParams,
    pub controller: ControllerConfig,
    pub mission: MissionParams,
    pub eval: EvalSection,
    pub blur: BlurLaw,
    pub segmenter: SegmenterSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            field: FieldSpec::half_vegetated(1),
            import: None,
            polygon: None,
            planner: PlannerParams::default(),
            camera: CameraParams::default(),
            controller: ControllerConfig::default(),
            mission: MissionParams::default(),
            eval: EvalSection::default(),
            blur: BlurLaw::default(),
            segmenter: SegmenterSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Re-checks every component invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.import.is_none() {
            self.field.validate()?;
        } else if let Some(imp) = &self.import {
            if !(imp.gsd > 0.0) {
                return Err(ConfigError::Invalid(format!("import gsd must be positive, got {}", imp.gsd)));
            }
        }
        if !(0.0..1.0).contains(&self.planner.overlap) {
            return Err(ConfigError::Invalid(format!("overlap must be in [0, 1), got {}", self.planner.overlap)));
        }
        if let Some(poly) = &self.polygon {
            Polygon::new(poly.iter().map(|&[x, y]| Point::new(x, y)).collect())?;
        }
        if !(self.eval.alpha > 0.0) {
            return Err(ConfigError::Invalid(format!("alpha must be positive, got {}", self.eval.alpha)));
        }
        let camera = self.camera_model(self.gsd())?;
        self.mission_config(camera).validate()?;
        if let SegmenterSpec::Prototype { config } = &self.segmenter {
            config.validate()?;
        }
        Ok(())
    }

    pub fn gsd(&self) -> f64 {
        self.import.as_ref().map_or(self.field.gsd, |i| i.gsd)
    }

    /// Named regions used for per-region statistics.
    pub fn regions(&self) -> &[Region] {
        match &self.import {
            Some(i) => &i.regions,
            None => &self.field.regions,
        }
    }

    /// Sets the world seed (generated fields only).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.field.seed = seed;
        self
    }

    pub fn build_world(&self) -> Result<FieldWorld, ConfigError> {
        Ok(match &self.import {
            Some(i) => load_field(&i.orthophoto, &i.labels, i.gsd)?,
            None => generate_field(&self.field)?,
        })
    }

    pub fn camera_model(&self, gsd: f64) -> Result<CameraModel, ConfigError> {
        Ok(CameraModel::new(
            self.camera.image_width,
            self.camera.image_height,
            self.planner.altitude,
            self.camera.dt,
            gsd,
        )?)
    }

    pub fn mission_config(&self, camera: CameraModel) -> MissionConfig {
        MissionConfig {
            controller: self.controller.clone(),
            camera,
            blur_law: self.blur,
            t_max: self.mission.t_max,
            mode: self.mission.mode,
        }
    }

    /// The planning polygon: configured area (or field extent) inset by
    /// half a footprint.
    pub fn planning_polygon(&self, world: &FieldWorld, camera: &CameraModel) -> Result<Polygon, ConfigError> {
        let area = match &self.polygon {
            Some(v) => Polygon::new(v.iter().map(|&[x, y]| Point::new(x, y)).collect())?,
            None => {
                let e: Rect = world.frame.extent();
                Polygon::rectangle(e)?
            }
        };
        Ok(area.inset(camera.footprint_width / 2.0, camera.footprint_height / 2.0)?)
    }

    pub fn plan(&self, world: &FieldWorld, camera: &CameraModel) -> Result<CoveragePlan, ConfigError> {
        let poly = self.planning_polygon(world, camera)?;
        Ok(plan_coverage(&poly, camera, self.planner.overlap)?)
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            alpha: self.eval.alpha,
            t_max: self.mission.t_max,
        }
    }
}
