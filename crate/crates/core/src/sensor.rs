//! Simulated nadir camera: footprint cropping and speed-dependent motion blur.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FieldFrame, GeometryError, Point, Rect};
use crate::worldgen::FieldWorld;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("footprint out of field extent: {0}")]
    OutOfExtent(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid blur kernel length {0}: must be odd and >= 1")]
    InvalidKernel(usize),
    #[error("heading ({0}, {1}) is not axis-aligned")]
    UnalignedHeading(f64, f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Camera parameters. The camera samples the field raster 1:1, so the
/// ground footprint is `image dims × gsd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub image_width: u32,
    pub image_height: u32,
    pub altitude: f64,
    pub gimbal_pitch_deg: f64,
    /// Capture interval in seconds (inverse of the frame rate).
    pub dt: f64,
    pub footprint_width: f64,
    pub footprint_height: f64,
}

impl CameraModel {
    pub fn new(
        image_width: u32,
        image_height: u32,
        altitude: f64,
        dt: f64,
        gsd: f64,
    ) -> Result<Self, SensorError> {
        if image_width == 0 || image_height == 0 {
            return Err(SensorError::InvalidCamera("image dims must be positive".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SensorError::InvalidCamera(format!("dt must be positive, got {dt}")));
        }
        if !(gsd > 0.0) {
            return Err(SensorError::InvalidCamera(format!("gsd must be positive, got {gsd}")));
        }
        if !(altitude > 0.0) {
            return Err(SensorError::InvalidCamera(format!(
                "altitude must be positive, got {altitude}"
            )));
        }
        Ok(Self {
            image_width,
            image_height,
            altitude,
            gimbal_pitch_deg: -90.0,
            dt,
            footprint_width: image_width as f64 * gsd,
            footprint_height: image_height as f64 * gsd,
        })
    }

    /// Ground rectangle imaged from `pose`.
    pub fn footprint(&self, pose: Point) -> Rect {
        let (hx, hy) = (self.footprint_width / 2.0, self.footprint_height / 2.0);
        Rect::new(pose.x - hx, pose.y - hy, pose.x + hx, pose.y + hy)
    }
}

/// Speed → odd kernel length: `max(1, 2·floor(max(0, (s − free_speed)/speed_per_step)) + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurLaw {
    /// Highest speed captured without blur.
    pub free_speed: f64,
    /// Speed increment that adds one pixel of smear on each side.
    pub speed_per_step: f64,
}

impl Default for BlurLaw {
    fn default() -> Self {
        Self {
            free_speed: 2.0,
            speed_per_step: 1.0,
        }
    }
}

impl BlurLaw {
    pub fn kernel_length(&self, speed: f64) -> usize {
        let steps = ((speed - self.free_speed).max(0.0) / self.speed_per_step).floor();
        (2 * steps as usize + 1).max(1)
    }
}

/// Kernel length under the default law.
pub fn blur_kernel_length(speed: f64) -> usize {
    BlurLaw::default().kernel_length(speed)
}

/// Direction of travel projected on the image axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlurAxis {
    Horizontal,
    Vertical,
}

impl BlurAxis {
    pub fn from_heading(heading: Point) -> Result<Self, SensorError> {
        const TOL: f64 = 1e-6;
        if heading.y.abs() < TOL && (heading.x.abs() - 1.0).abs() < TOL {
            Ok(BlurAxis::Horizontal)
        } else if heading.x.abs() < TOL && (heading.y.abs() - 1.0).abs() < TOL {
            Ok(BlurAxis::Vertical)
        } else {
            Err(SensorError::UnalignedHeading(heading.x, heading.y))
        }
    }
}

/// One acquired frame together with the state it was taken in.
#[derive(Debug, Clone)]
pub struct Capture {
    pub index: usize,
    pub pose: Point,
    pub heading: Point,
    pub speed_at_capture: f64,
    pub t: f64,
    pub image: RgbImage,
}

/// Pixel rectangle `(x0, y0)` of the footprint crop centered at `pose`.
pub fn footprint_origin(
    world: &FieldWorld,
    cam: &CameraModel,
    pose: Point,
) -> Result<(u32, u32), SensorError> {
    crop_origin(&world.frame, cam.image_width, cam.image_height, pose)
}

/// Top-left pixel of a `w × h` crop centered on the pixel under `pose`.
pub fn crop_origin(frame: &FieldFrame, w: u32, h: u32, pose: Point) -> Result<(u32, u32), SensorError> {
    let (c, r) = frame.world_to_raster(pose)?;
    let (hw, hh) = (w / 2, h / 2);
    let fits_x = c >= hw && c - hw + w <= frame.raster_width;
    let fits_y = r >= hh && r - hh + h <= frame.raster_height;
    if !fits_x || !fits_y {
        return Err(SensorError::OutOfExtent(format!(
            "{w}x{h} crop centered at pixel ({c}, {r}) exceeds {}x{} raster",
            frame.raster_width, frame.raster_height
        )));
    }
    Ok((c - hw, r - hh))
}

/// Axis-aligned crop of the orthophoto centered on the pixel under `pose`.
pub fn capture(world: &FieldWorld, cam: &CameraModel, pose: Point) -> Result<RgbImage, SensorError> {
    let (x0, y0) = footprint_origin(world, cam, pose)?;
    Ok(image::imageops::crop_imm(&world.orthophoto, x0, y0, cam.image_width, cam.image_height)
        .to_image())
}

/// Convolves with a normalized 1-D box kernel of length `k` along the
/// travel axis, replicating edge pixels. `k == 1` is the identity.
pub fn apply_motion_blur(image: &RgbImage, k: usize, heading: Point) -> Result<RgbImage, SensorError> {
    if k == 0 || k % 2 == 0 {
        return Err(SensorError::InvalidKernel(k));
    }
    let axis = BlurAxis::from_heading(heading)?;
    if k == 1 {
        return Ok(image.clone());
    }
    Ok(box_blur(image, k, axis))
}

pub(crate) fn box_blur(image: &RgbImage, k: usize, axis: BlurAxis) -> RgbImage {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let src = image.as_raw();
    let mut out = vec![0u8; src.len()];
    let half = (k / 2) as isize;
    // lines run along the blur axis; `stride` steps between neighbors on a line
    let (lines, len, line_step, stride) = match axis {
        BlurAxis::Horizontal => (h, w, w * 3, 3),
        BlurAxis::Vertical => (w, h, 3, w * 3),
    };
    let k32 = k as u32;
    for line in 0..lines {
        let base = line * line_step;
        for ch in 0..3 {
            let at = |i: isize| -> u32 {
                let i = i.clamp(0, len as isize - 1) as usize;
                src[base + i * stride + ch] as u32
            };
            let mut sum: u32 = (-half..=half).map(at).sum();
            for i in 0..len as isize {
                out[base + i as usize * stride + ch] = ((sum + k32 / 2) / k32) as u8;
                sum += at(i + half + 1);
                sum -= at(i - half);
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer size matches")
}
