//! Offline tuning of the reference segmenter's bandwidth and temperature.
//!
//! The controller only sees `cl`, so what matters is where the segmenter's
//! confidence sits on sharp frames and how far it falls under heavy blur.
//! [`calibrate`] grid-searches `(sigma, temperature)` against those two
//! targets over a set of vegetated reference frames, blurring each frame
//! along both image axes.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::confidence_level;
use crate::geometry::Point;
use crate::perception::{PerceptionError, PrototypeSegmenter, Segmenter, SegmenterConfig};
use crate::sensor::{apply_motion_blur, capture, CameraModel, SensorError};
use crate::worldgen::{generate_field, FieldSpec, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub clean_cl: f64,
    pub blurred_cl: f64,
    pub blurred_kernel: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            clean_cl: 0.9,
            blurred_cl: 0.65,
            blurred_kernel: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub sigma: f64,
    pub temperature: f64,
    pub clean_cl: f64,
    pub blurred_cl: f64,
    pub loss: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("no reference images")]
    NoImages,
    #[error("empty search grid")]
    EmptyGrid,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

/// Vegetated frames from the half-vegetated layout, taken at the camera's
/// resolution at a few poses inside the planted half.
pub fn reference_images(seed: u64, camera: &CameraModel) -> Result<Vec<RgbImage>, CalibrationError> {
    let spec = FieldSpec::half_vegetated(seed);
    let world = generate_field(&spec)?;
    let poses = [Point::new(10.0, 10.0), Point::new(20.0, 30.0), Point::new(30.0, 50.0)];
    poses
        .iter()
        .map(|&p| capture(&world, camera, p).map_err(CalibrationError::from))
        .collect()
}

/// Mean `cl` over `images` for kernel `k`, averaged over both blur axes.
pub fn mean_confidence(seg: &dyn Segmenter, images: &[RgbImage], k: usize) -> Result<f64, CalibrationError> {
    let headings = [Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
    let mut sum = 0.0;
    for img in images {
        for h in headings {
            let blurred = apply_motion_blur(img, k, h)?;
            sum += confidence_level(&seg.segment(&blurred)?);
        }
    }
    Ok(sum / (images.len() * headings.len()) as f64)
}

/// Evaluates every `(sigma, temperature)` pair and returns them sorted by
/// squared distance to the targets (ties broken by grid order).
pub fn calibrate(
    images: &[RgbImage],
    base: &SegmenterConfig,
    sigmas: &[f64],
    temperatures: &[f64],
    targets: &CalibrationTargets,
) -> Result<Vec<CalibrationPoint>, CalibrationError> {
    if images.is_empty() {
        return Err(CalibrationError::NoImages);
    }
    if sigmas.is_empty() || temperatures.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }
    let grid: Vec<(f64, f64)> = sigmas.iter().flat_map(|&s| temperatures.iter().map(move |&t| (s, t))).collect();
    let mut points = grid
        .par_iter()
        .map(|&(sigma, temperature)| {
            let seg = PrototypeSegmenter::new(SegmenterConfig { sigma, temperature, ..base.clone() })?;
            let clean_cl = mean_confidence(&seg, images, 1)?;
            let blurred_cl = mean_confidence(&seg, images, targets.blurred_kernel)?;
            let loss = (clean_cl - targets.clean_cl).powi(2) + (blurred_cl - targets.blurred_cl).powi(2);
            Ok(CalibrationPoint {
                sigma,
                temperature,
                clean_cl,
                blurred_cl,
                loss,
            })
        })
        .collect::<Result<Vec<_>, CalibrationError>>()?;
    points.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    Ok(points)
}

/// The grid used for the committed defaults.
pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    let sigmas = (0..9).map(|i| 0.08 + 0.02 * i as f64).collect();
    let temps = (1..9).map(|i| 0.05 * i as f64).collect();
    (sigmas, temps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::ColorModel;
    use image::Rgb;

    fn card() -> RgbImage {
        let c = ColorModel::default();
        RgbImage::from_fn(64, 64, |x, y| {
            if ((x / 6) + (y / 6)) % 2 == 0 {
                Rgb(c.crop)
            } else {
                Rgb(c.soil)
            }
        })
    }

    #[test]
    fn blur_lowers_mean_confidence() {
        let seg = PrototypeSegmenter::default();
        let imgs = [card()];
        let clean = mean_confidence(&seg, &imgs, 1).unwrap();
        let blurred = mean_confidence(&seg, &imgs, 9).unwrap();
        assert!(blurred < clean, "{blurred} !< {clean}");
    }

    #[test]
    fn results_sorted_by_loss() {
        let pts = calibrate(&[card()], &SegmenterConfig::default(), &[0.1, 0.2], &[0.1, 0.3], &CalibrationTargets::default()).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.windows(2).all(|w| w[0].loss <= w[1].loss));
    }

    #[test]
    fn empty_inputs_rejected() {
        let t = CalibrationTargets::default();
        assert!(matches!(calibrate(&[], &SegmenterConfig::default(), &[0.1], &[0.1], &t), Err(CalibrationError::NoImages)));
        assert!(matches!(calibrate(&[card()], &SegmenterConfig::default(), &[], &[0.1], &t), Err(CalibrationError::EmptyGrid)));
    }
}
