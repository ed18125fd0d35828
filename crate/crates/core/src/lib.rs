//! Simulator and library for active-sensing coverage flights.
//!
//! A field is planned with spanning-tree coverage, flown by a simulated
//! nadir camera whose images blur with speed, segmented frame by frame, and
//! the segmentation drives the next speed. Runs are scored by mosaic IoU,
//! SSIM against the ground truth orthophoto, and completion time.

pub mod artifacts;
pub mod calibration;
pub mod config;
pub mod controller;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod mission;
pub mod perception;
pub mod planner;
pub mod plot;
pub mod sensor;
pub mod worldgen;

pub use config::RunConfig;
pub use controller::{ControllerConfig, ControllerDecision, SpeedController};
pub use geometry::{FieldFrame, Point, Polygon, Polyline, Rect};
pub use mission::{FlightMode, MissionConfig, MissionLog};
pub use perception::{PrototypeSegmenter, SegmentationResult, Segmenter};
pub use planner::{plan_coverage, CoveragePlan};
pub use sensor::{BlurLaw, CameraModel, Capture};
pub use worldgen::{generate_field, FieldSpec, FieldWorld};
