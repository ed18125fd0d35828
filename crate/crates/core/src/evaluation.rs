//! Post-flight scoring: mosaic reconstruction, IoU, SSIM and the
//! quality-per-time objective.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FieldFrame, Point, Rect};
use crate::mission::{replay_capture, MissionError, MissionLog};
use crate::perception::{PerceptionError, Segmenter};
use crate::planner::GridMap;
use crate::sensor::{crop_origin, CameraModel, SensorError};
use crate::worldgen::{FieldWorld, Region, BACKGROUND, CROP, WEED};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid evaluation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

pub const SSIM_BINS: usize = 32;
const NO_SOURCE: u32 = u32::MAX;

/// Field-sized composite of the captures.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub image: RgbImage,
    /// Capture index that last wrote each pixel, row-major.
    source: Vec<u32>,
}

impl Mosaic {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            image: RgbImage::new(width, height),
            source: vec![NO_SOURCE; (width * height) as usize],
        }
    }

    pub fn source_index(&self, x: u32, y: u32) -> Option<u32> {
        let s = self.source[(y * self.image.width() + x) as usize];
        (s != NO_SOURCE).then_some(s)
    }

    pub fn is_observed(&self, x: u32, y: u32) -> bool {
        self.source_index(x, y).is_some()
    }

    pub fn observed_mask(&self) -> Vec<bool> {
        self.source.iter().map(|&s| s != NO_SOURCE).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.source.iter().filter(|&&s| s != NO_SOURCE).count()
    }

    pub fn coverage(&self) -> f64 {
        self.observed_count() as f64 / self.source.len() as f64
    }

    /// Pastes `img` centered on `pose`; later pastes overwrite earlier ones.
    pub fn paste(&mut self, frame: &FieldFrame, index: u32, pose: Point, img: &RgbImage) -> Result<(), EvalError> {
        if (frame.raster_width, frame.raster_height) != self.image.dimensions() {
            return Err(EvalError::DimensionMismatch("mosaic and frame differ".into()));
        }
        let (x0, y0) = crop_origin(frame, img.width(), img.height(), pose)?;
        let w = self.image.width();
        for (x, y, p) in img.enumerate_pixels() {
            let (mx, my) = (x0 + x, y0 + y);
            self.image.put_pixel(mx, my, *p);
            self.source[(my * w + mx) as usize] = index;
        }
        Ok(())
    }
}

/// Composites `(index, pose, image)` triples in order (most recent wins).
pub fn reconstruct_mosaic<I>(frame: &FieldFrame, captures: I) -> Result<Mosaic, EvalError>
where
    I: IntoIterator<Item = (u32, Point, RgbImage)>,
{
    let mut m = Mosaic::new(frame.raster_width, frame.raster_height);
    let mut any = false;
    for (i, pose, img) in captures {
        m.paste(frame, i, pose, &img)?;
        any = true;
    }
    if !any {
        return Err(EvalError::Invalid("no captures to composite".into()));
    }
    Ok(m)
}

/// Rebuilds the mosaic of a flown mission by replaying its captures.
pub fn mission_mosaic(world: &FieldWorld, camera: &CameraModel, log: &MissionLog) -> Result<Mosaic, EvalError> {
    let mut m = Mosaic::new(world.frame.raster_width, world.frame.raster_height);
    if log.captures.is_empty() {
        return Err(EvalError::Invalid("mission log has no captures".into()));
    }
    for rec in &log.captures {
        let img = replay_capture(world, camera, rec)?;
        m.paste(&world.frame, rec.index as u32, rec.pose, &img)?;
    }
    Ok(m)
}

/// Intersection over union of one class. Both sets empty → 1.0.
pub fn iou(pred: &[u8], gt: &[u8], class: u8) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::DimensionMismatch(format!("{} vs {} pixels", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p == class, g == class);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `(IoU_crop + IoU_weed) / (α·C)`.
pub fn objective(iou_crop: f64, iou_weed: f64, c: f64, alpha: f64) -> Result<f64, EvalError> {
    if !(c > 0.0) || !(alpha > 0.0) {
        return Err(EvalError::Invalid(format!("objective needs C > 0 and alpha > 0, got C={c}, alpha={alpha}")));
    }
    Ok((iou_crop + iou_weed) / (alpha * c))
}

/// Per-pixel SSIM on luma.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Mean over the pixel rectangle `[x0, x1) × [y0, y1)`, clamped to the map.
    pub fn region_mean(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> f64 {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in y0..y1 {
            let row = &self.values[(y * self.width) as usize..][..self.width as usize];
            for &v in &row[x0 as usize..x1 as usize] {
                sum += v as f64;
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    /// Normalized 32-bin histogram over [0, 1]; negative values land in bin 0.
    pub fn histogram(&self) -> [f64; SSIM_BINS] {
        self.histogram_in(0, 0, self.width, self.height)
    }

    pub fn histogram_in(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> [f64; SSIM_BINS] {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        let mut h = [0usize; SSIM_BINS];
        let mut n = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let v = self.values[(y * self.width + x) as usize].clamp(0.0, 1.0);
                h[((v * SSIM_BINS as f32) as usize).min(SSIM_BINS - 1)] += 1;
                n += 1;
            }
        }
        h.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
    }
}

/// Fraction of histogram mass at or above `threshold`, bin-aligned.
pub fn histogram_mass_above(hist: &[f64; SSIM_BINS], threshold: f64) -> f64 {
    let first = (threshold * SSIM_BINS as f64).round() as usize;
    hist[first.min(SSIM_BINS)..].iter().sum()
}

fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|Rgb([r, g, b])| 0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64)
        .collect()
}

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Gaussian-window SSIM (window 11, σ 1.5, K1 0.01, K2 0.03, range 255)
/// with replicated borders, one value per pixel.
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<SsimMap, EvalError> {
    if a.dimensions() != b.dimensions() {
        return Err(EvalError::DimensionMismatch(format!("{:?} vs {:?}", a.dimensions(), b.dimensions())));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w == 0 || h == 0 {
        return Err(EvalError::Invalid("empty image".into()));
    }
    let (la, lb) = (luma(a), luma(b));
    let win = gaussian_window();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    const STRIP: usize = 64;

    let mut values = vec![0.0f32; w * h];
    values.par_chunks_mut(STRIP * w).enumerate().for_each(|(si, out)| {
        let y_start = si * STRIP;
        let rows = out.len() / w;
        // horizontally filtered moments for input rows y_start-5 ..= y_start+rows+4
        let span = rows + 10;
        let mut hm = vec![[0.0f64; 5]; span * w];
        for j in 0..span {
            let y = (y_start as isize + j as isize - 5).clamp(0, h as isize - 1) as usize;
            let (ra, rb) = (&la[y * w..][..w], &lb[y * w..][..w]);
            for x in 0..w {
                let mut m = [0.0f64; 5];
                for (k, &wk) in win.iter().enumerate() {
                    let xx = (x as isize + k as isize - 5).clamp(0, w as isize - 1) as usize;
                    let (p, q) = (ra[xx], rb[xx]);
                    m[0] += wk * p;
                    m[1] += wk * q;
                    m[2] += wk * p * p;
                    m[3] += wk * q * q;
                    m[4] += wk * p * q;
                }
                hm[j * w + x] = m;
            }
        }
        for r in 0..rows {
            for x in 0..w {
                let mut m = [0.0f64; 5];
                for (k, &wk) in win.iter().enumerate() {
                    let v = &hm[(r + k) * w + x];
                    for c in 0..5 {
                        m[c] += wk * v[c];
                    }
                }
                let (mu_a, mu_b) = (m[0], m[1]);
                let va = m[2] - mu_a * mu_a;
                let vb = m[3] - mu_b * mu_b;
                let cov = m[4] - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
                out[r * w + x] = s as f32;
            }
        }
    });
    Ok(SsimMap {
        width: w as u32,
        height: h as u32,
        values,
    })
}

/// Segments a large image in `tile_w × tile_h` tiles (zero-padded at the
/// right and bottom edges) and returns the stitched class map.
pub fn segment_tiled(image: &RgbImage, segmenter: &dyn Segmenter, tile_w: u32, tile_h: u32) -> Result<Vec<u8>, EvalError> {
    let (w, h) = image.dimensions();
    let tiles: Vec<(u32, u32)> = (0..h.div_ceil(tile_h))
        .flat_map(|ty| (0..w.div_ceil(tile_w)).map(move |tx| (tx * tile_w, ty * tile_h)))
        .collect();
    let results: Vec<Result<(u32, u32, Vec<u8>), EvalError>> = tiles
        .par_iter()
        .map(|&(x0, y0)| {
            let mut tile = RgbImage::new(tile_w, tile_h);
            image::imageops::replace(&mut tile, &image::imageops::crop_imm(image, x0, y0, tile_w.min(w - x0), tile_h.min(h - y0)).to_image(), 0, 0);
            let seg = segmenter.segment(&tile)?;
            if (seg.width, seg.height) != (tile_w, tile_h) {
                return Err(EvalError::DimensionMismatch("segmenter changed the tile size".into()));
            }
            Ok((x0, y0, seg.class_map))
        })
        .collect();
    let mut map = vec![BACKGROUND; (w * h) as usize];
    for r in results {
        let (x0, y0, cm) = r?;
        for ty in 0..tile_h.min(h - y0) {
            let src = &cm[(ty * tile_w) as usize..][..tile_w.min(w - x0) as usize];
            let dst = ((y0 + ty) * w + x0) as usize;
            map[dst..dst + src.len()].copy_from_slice(src);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub alpha: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_crop: f64,
    pub iou_weed: f64,
    pub c_tau: f64,
    pub alpha: f64,
    pub objective: f64,
    pub within_budget: bool,
    pub completed: bool,
    pub mean_ssim: f64,
    pub ssim_histogram: Vec<f64>,
    /// Observed pixels over all field pixels.
    pub coverage: f64,
    /// Observed pixels over the pixels of the planned cells.
    pub planned_coverage: Option<f64>,
    /// Mean speed over captures taken inside each named region.
    pub region_speeds: BTreeMap<String, Option<f64>>,
    pub region_ssim: BTreeMap<String, f64>,
    pub region_ssim_histograms: BTreeMap<String, Vec<f64>>,
}

/// Report plus the intermediate rasters, for plotting.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub mosaic: Mosaic,
    pub class_map: Vec<u8>,
    pub ssim: SsimMap,
}

fn rect_pixels(frame: &FieldFrame, r: &Rect) -> (u32, u32, u32, u32) {
    let to_px = |v: f64, o: f64, n: u32| (((v - o) / frame.gsd).round().max(0.0) as u32).min(n);
    (
        to_px(r.min.x, frame.origin.x, frame.raster_width),
        to_px(r.min.y, frame.origin.y, frame.raster_height),
        to_px(r.max.x, frame.origin.x, frame.raster_width),
        to_px(r.max.y, frame.origin.y, frame.raster_height),
    )
}

/// Observed share of the pixels inside the planned mega-cells.
pub fn planned_coverage(mosaic: &Mosaic, frame: &FieldFrame, grid: &GridMap) -> f64 {
    let (mut seen, mut total) = (0usize, 0usize);
    for c in &grid.mega_cells {
        let (x0, y0, x1, y1) = rect_pixels(frame, &grid.mega_rect(*c));
        for y in y0..y1 {
            for x in x0..x1 {
                total += 1;
                seen += mosaic.is_observed(x, y) as usize;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen as f64 / total as f64
    }
}

/// Mean logged speed over captures whose pose falls inside `rect`.
pub fn mean_speed_in(log: &MissionLog, rect: &Rect) -> Option<f64> {
    let speeds = log.speeds();
    let inside: Vec<f64> = log
        .captures
        .iter()
        .zip(&speeds)
        .filter(|(c, _)| rect.contains(c.pose))
        .map(|(_, &s)| s)
        .collect();
    (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
}

pub fn evaluate_run(
    world: &FieldWorld,
    camera: &CameraModel,
    log: &MissionLog,
    segmenter: &dyn Segmenter,
    params: &EvalParams,
    regions: &[Region],
    grid: Option<&GridMap>,
) -> Result<Evaluation, EvalError> {
    let mosaic = mission_mosaic(world, camera, log)?;
    let mut class_map = segment_tiled(&mosaic.image, segmenter, camera.image_width, camera.image_height)?;
    for (c, &s) in class_map.iter_mut().zip(&mosaic.source) {
        if s == NO_SOURCE {
            *c = BACKGROUND;
        }
    }
    let labels = world.labels.as_raw();
    let iou_crop = iou(&class_map, labels, CROP)?;
    let iou_weed = iou(&class_map, labels, WEED)?;
    let ssim = ssim_map(&mosaic.image, &world.orthophoto)?;

    let mut region_speeds = BTreeMap::new();
    let mut region_ssim = BTreeMap::new();
    let mut region_ssim_histograms = BTreeMap::new();
    for r in regions {
        region_speeds.insert(r.name.clone(), mean_speed_in(log, &r.bounds()));
        let (x0, y0, x1, y1) = rect_pixels(&world.frame, &r.bounds());
        region_ssim.insert(r.name.clone(), ssim.region_mean(x0, y0, x1, y1));
        region_ssim_histograms.insert(r.name.clone(), ssim.histogram_in(x0, y0, x1, y1).to_vec());
    }

    let report = EvalReport {
        iou_crop,
        iou_weed,
        c_tau: log.c_tau,
        alpha: params.alpha,
        objective: objective(iou_crop, iou_weed, log.c_tau, params.alpha)?,
        within_budget: log.c_tau <= params.t_max,
        completed: log.completed,
        mean_ssim: ssim.mean(),
        ssim_histogram: ssim.histogram().to_vec(),
        coverage: mosaic.coverage(),
        planned_coverage: grid.map(|g| planned_coverage(&mosaic, &world.frame, g)),
        region_speeds,
        region_ssim,
        region_ssim_histograms,
    };
    Ok(Evaluation {
        report,
        mosaic,
        class_map,
        ssim,
    })
}
