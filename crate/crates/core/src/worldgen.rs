//! Simulated environment: an RGB orthophoto with a per-pixel class raster.
//!
//! Synthetic fields are crop discs planted along parallel rows, irregular
//! weed blobs at Poisson-sampled centers, and textured soil everywhere
//! else. Generation is single-threaded and fully determined by the seed.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{FieldFrame, GeometryError, Point, Rect};

pub const BACKGROUND: u8 = 0;
pub const CROP: u8 = 1;
pub const WEED: u8 = 2;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid field spec: {0}")]
    InvalidSpec(String),
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("dimension mismatch: orthophoto {ortho:?} vs labels {labels:?}")]
    DimensionMismatch { ortho: (u32, u32), labels: (u32, u32) },
    #[error("invalid label value {value} at pixel ({x}, {y}); expected 0, 1 or 2")]
    InvalidLabel { value: u8, x: u32, y: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone)]
pub struct FieldWorld {
    pub frame: FieldFrame,
    pub orthophoto: RgbImage,
    pub labels: GrayImage,
}

impl FieldWorld {
    pub fn new(frame: FieldFrame, orthophoto: RgbImage, labels: GrayImage) -> Result<Self, WorldError> {
        if orthophoto.dimensions() != labels.dimensions() {
            return Err(WorldError::DimensionMismatch {
                ortho: orthophoto.dimensions(),
                labels: labels.dimensions(),
            });
        }
        if orthophoto.dimensions() != (frame.raster_width, frame.raster_height) {
            return Err(WorldError::DimensionMismatch {
                ortho: orthophoto.dimensions(),
                labels: (frame.raster_width, frame.raster_height),
            });
        }
        if let Some((x, y, v)) = labels
            .enumerate_pixels()
            .find(|(_, _, p)| p.0[0] > WEED)
            .map(|(x, y, p)| (x, y, p.0[0]))
        {
            return Err(WorldError::InvalidLabel { value: v, x, y });
        }
        Ok(Self { frame, orthophoto, labels })
    }

    /// SHA-256 over dims, gsd, origin and both rasters.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.frame.raster_width.to_le_bytes());
        h.update(self.frame.raster_height.to_le_bytes());
        h.update(self.frame.gsd.to_le_bytes());
        h.update(self.frame.origin.x.to_le_bytes());
        h.update(self.frame.origin.y.to_le_bytes());
        h.update(self.orthophoto.as_raw());
        h.update(self.labels.as_raw());
        hex::encode(h.finalize())
    }

    pub fn class_fraction(&self, class: u8) -> f64 {
        let n = self.labels.as_raw().iter().filter(|&&v| v == class).count();
        n as f64 / self.labels.as_raw().len() as f64
    }
}

/// Named rectangular area with its own vegetation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    /// `[x0, y0, x1, y1]` in meters.
    pub rect: [f64; 4],
    #[serde(default)]
    pub crops: bool,
    #[serde(default)]
    pub weed_density: f64,
}

impl Region {
    pub fn bounds(&self) -> Rect {
        Rect::new(self.rect[0], self.rect[1], self.rect[2], self.rect[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorModel {
    pub soil: [u8; 3],
    pub crop: [u8; 3],
    pub weed: [u8; 3],
    /// Per-channel Gaussian noise sigma.
    pub noise_sigma: f64,
    /// Amplitude of the low-frequency brightness texture on soil.
    pub soil_texture: f64,
}

impl Default for ColorModel {
    fn default() -> Self {
        Self {
            soil: [120, 90, 60],
            crop: [40, 140, 50],
            weed: [150, 160, 40],
            noise_sigma: 12.0,
            soil_texture: 6.0,
        }
    }
}

impl ColorModel {
    pub fn mean(&self, class: u8) -> [u8; 3] {
        match class {
            CROP => self.crop,
            WEED => self.weed,
            _ => self.soil,
        }
    }
}

/// Parameters of a synthetic field.
///
/// Crop rows run along x. Vegetation settings apply per [`Region`]; points
/// outside every region use the top-level `crops` / `weed_density`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub gsd: f64,
    pub row_spacing_m: f64,
    pub plant_spacing_m: f64,
    pub plant_radius_m: f64,
    /// Fraction applied to position and radius jitter.
    pub plant_jitter: f64,
    pub crops: bool,
    /// Expected weed blobs per m² outside named regions.
    pub weed_density: f64,
    pub weed_radius_m: f64,
    pub regions: Vec<Region>,
    pub colors: ColorModel,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            width_m: 80.0,
            height_m: 60.0,
            gsd: 0.02,
            row_spacing_m: 0.5,
            plant_spacing_m: 0.3,
            plant_radius_m: 0.12,
            plant_jitter: 0.3,
            crops: true,
            weed_density: 0.2,
            weed_radius_m: 0.15,
            regions: Vec::new(),
            colors: ColorModel::default(),
            seed: 1,
        }
    }
}

impl FieldSpec {
    /// Left half planted with crops and weeds, right half bare soil.
    pub fn half_vegetated(seed: u64) -> Self {
        Self {
            crops: false,
            weed_density: 0.0,
            regions: vec![
                Region {
                    name: "vegetated".into(),
                    rect: [0.0, 0.0, 40.0, 60.0],
                    crops: true,
                    weed_density: 0.5,
                },
                Region {
                    name: "bare".into(),
                    rect: [40.0, 0.0, 80.0, 60.0],
                    crops: false,
                    weed_density: 0.0,
                },
            ],
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidSpec(m));
        for (name, v) in [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("gsd", self.gsd),
            ("row_spacing_m", self.row_spacing_m),
            ("plant_spacing_m", self.plant_spacing_m),
            ("plant_radius_m", self.plant_radius_m),
            ("weed_radius_m", self.weed_radius_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.plant_jitter) {
            return bad(format!("plant_jitter must be in [0, 1], got {}", self.plant_jitter));
        }
        if !(self.weed_density >= 0.0 && self.weed_density.is_finite()) {
            return bad(format!("weed_density must be >= 0, got {}", self.weed_density));
        }
        if !(self.colors.noise_sigma >= 0.0 && self.colors.soil_texture >= 0.0) {
            return bad("color noise must be >= 0".into());
        }
        let field = Rect::new(0.0, 0.0, self.width_m, self.height_m);
        for r in &self.regions {
            let b = r.bounds();
            if !(field.contains(b.min) && field.contains(b.max)) || b.area() <= 0.0 {
                return bad(format!("region '{}' must be a non-empty rect inside the field", r.name));
            }
            if !(r.weed_density >= 0.0 && r.weed_density.is_finite()) {
                return bad(format!("region '{}' weed_density must be >= 0", r.name));
            }
        }
        let cols = (self.width_m / self.gsd).round();
        let rows = (self.height_m / self.gsd).round();
        if cols < 1.0 || rows < 1.0 || cols * rows > 4.0e8 {
            return bad(format!("raster {cols}x{rows} out of range"));
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<FieldFrame, WorldError> {
        Ok(FieldFrame::new(
            Point::new(0.0, 0.0),
            self.gsd,
            (self.width_m / self.gsd).round() as u32,
            (self.height_m / self.gsd).round() as u32,
        )?)
    }

    fn crops_at(&self, p: Point) -> bool {
        let mut inside_any = false;
        for r in &self.regions {
            if r.bounds().contains(p) {
                if r.crops {
                    return true;
                }
                inside_any = true;
            }
        }
        !inside_any && self.crops
    }

    fn in_any_region(&self, p: Point) -> bool {
        self.regions.iter().any(|r| r.bounds().contains(p))
    }

    /// Region by name.
    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }
}

/// Fills pixels whose centers satisfy `inside(dx, dy)` relative to `center`,
/// scanning the bounding square of radius `reach`.
fn stamp(
    labels: &mut GrayImage,
    frame: &FieldFrame,
    center: Point,
    reach: f64,
    class: u8,
    inside: impl Fn(f64, f64) -> bool,
) {
    let to_px = |v: f64, o: f64| ((v - o) / frame.gsd).floor();
    let c0 = to_px(center.x - reach, frame.origin.x).max(0.0) as i64;
    let c1 = to_px(center.x + reach, frame.origin.x).min(frame.raster_width as f64 - 1.0) as i64;
    let r0 = to_px(center.y - reach, frame.origin.y).max(0.0) as i64;
    let r1 = to_px(center.y + reach, frame.origin.y).min(frame.raster_height as f64 - 1.0) as i64;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = frame.raster_to_world(c as u32, r as u32);
            if inside(p.x - center.x, p.y - center.y) {
                labels.put_pixel(c as u32, r as u32, Luma([class]));
            }
        }
    }
}

/// One planted disc: center and radius in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub center: Point,
    pub radius: f64,
}

/// Renders the field described by `spec`.
///
/// Draw order is fixed: crop rows top to bottom with plants left to right,
/// then weeds per region in declaration order, then weeds outside all
/// regions, then soil texture and per-pixel noise in raster order.
pub fn generate_field(spec: &FieldSpec) -> Result<FieldWorld, WorldError> {
    Ok(generate_field_with_plants(spec)?.0)
}

/// Like [`generate_field`], also returning the crop discs that were drawn.
pub fn generate_field_with_plants(spec: &FieldSpec) -> Result<(FieldWorld, Vec<Plant>), WorldError> {
    spec.validate()?;
    let frame = spec.frame()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = GrayImage::new(frame.raster_width, frame.raster_height);
    let mut plants = Vec::new();

    let rows = (spec.height_m / spec.row_spacing_m).floor() as usize;
    let per_row = (spec.width_m / spec.plant_spacing_m).floor() as usize;
    let j = spec.plant_jitter;
    for row in 0..rows {
        let y = (row as f64 + 0.5) * spec.row_spacing_m;
        for k in 0..per_row {
            let x = (k as f64 + 0.5) * spec.plant_spacing_m;
            let jx: f64 = rng.random_range(-0.5..0.5) * j * spec.plant_spacing_m;
            let jy: f64 = rng.random_range(-0.5..0.5) * j * spec.row_spacing_m * 0.5;
            let jr: f64 = rng.random_range(-0.5..0.5) * j;
            let center = Point::new(x + jx, y + jy);
            if !spec.crops_at(Point::new(x, y)) {
                continue;
            }
            let radius = spec.plant_radius_m * (1.0 + jr);
            plants.push(Plant { center, radius });
            let r2 = radius * radius;
            stamp(&mut labels, &frame, center, radius, CROP, |dx, dy| dx * dx + dy * dy <= r2);
        }
    }

    let field = Rect::new(0.0, 0.0, spec.width_m, spec.height_m);
    for region in &spec.regions {
        scatter_weeds(&mut rng, &mut labels, &frame, spec, region.bounds(), region.weed_density, |_| true);
    }
    scatter_weeds(&mut rng, &mut labels, &frame, spec, field, spec.weed_density, |p| {
        !spec.in_any_region(p)
    });

    let orthophoto = render(&mut rng, &labels, &frame, &spec.colors);
    Ok((FieldWorld::new(frame, orthophoto, labels)?, plants))
}

fn scatter_weeds(
    rng: &mut ChaCha8Rng,
    labels: &mut GrayImage,
    frame: &FieldFrame,
    spec: &FieldSpec,
    area: Rect,
    density: f64,
    accept: impl Fn(Point) -> bool,
) {
    let lambda = density * area.area();
    if lambda <= 0.0 {
        return;
    }
    let count = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    for _ in 0..count {
        let c = Point::new(
            rng.random_range(area.min.x..area.max.x),
            rng.random_range(area.min.y..area.max.y),
        );
        let base = spec.weed_radius_m * rng.random_range(0.6..1.4);
        let (a2, a3): (f64, f64) = (rng.random_range(0.0..0.35), rng.random_range(0.0..0.25));
        let (p2, p3): (f64, f64) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        if !accept(c) {
            continue;
        }
        let reach = base * (1.0 + a2 + a3);
        stamp(labels, frame, c, reach, WEED, |dx, dy| {
            let th = dy.atan2(dx);
            let r = base * (1.0 + a2 * (2.0 * th + p2).sin() + a3 * (3.0 * th + p3).sin());
            dx * dx + dy * dy <= r * r
        });
    }
}

/// Smooth value noise in [-1, 1] on a lattice of `cell` pixels.
fn value_noise(rng: &mut ChaCha8Rng, w: u32, h: u32, cell: u32) -> Vec<f32> {
    let gw = (w / cell + 2) as usize;
    let gh = (h / cell + 2) as usize;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        let gy = y / cell;
        let ty = (y % cell) as f32 / cell as f32;
        let sy = ty * ty * (3.0 - 2.0 * ty);
        for x in 0..w {
            let gx = x / cell;
            let tx = (x % cell) as f32 / cell as f32;
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let at = |i: u32, j: u32| lattice[j as usize * gw + i as usize];
            let top = at(gx, gy) * (1.0 - sx) + at(gx + 1, gy) * sx;
            let bot = at(gx, gy + 1) * (1.0 - sx) + at(gx + 1, gy + 1) * sx;
            out.push(top * (1.0 - sy) + bot * sy);
        }
    }
    out
}

fn render(rng: &mut ChaCha8Rng, labels: &GrayImage, frame: &FieldFrame, colors: &ColorModel) -> RgbImage {
    let (w, h) = labels.dimensions();
    // soil clods on a ~0.2 m lattice
    let cell = ((0.2 / frame.gsd).round() as u32).max(2);
    let texture = value_noise(rng, w, h, cell);
    let noise = Normal::new(0.0, colors.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut img = RgbImage::new(w, h);
    for (i, (x, y, px)) in img.enumerate_pixels_mut().enumerate() {
        let class = labels.get_pixel(x, y).0[0];
        let mean = colors.mean(class);
        let tex = if class == BACKGROUND {
            texture[i] as f64 * colors.soil_texture
        } else {
            0.0
        };
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let n = if colors.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            out[ch] = (mean[ch] as f64 + tex + n).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(out);
    }
    img
}

/// Loads an orthophoto / label raster pair from image files.
pub fn load_field(
    orthophoto_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    gsd: f64,
) -> Result<FieldWorld, WorldError> {
    let read = |p: &Path| {
        image::open(p).map_err(|source| WorldError::Unreadable {
            path: p.display().to_string(),
            source,
        })
    };
    let ortho = read(orthophoto_path.as_ref())?.to_rgb8();
    let labels = read(labels_path.as_ref())?.to_luma8();
    if ortho.dimensions() != labels.dimensions() {
        return Err(WorldError::DimensionMismatch {
            ortho: ortho.dimensions(),
            labels: labels.dimensions(),
        });
    }
    let frame = FieldFrame::new(Point::new(0.0, 0.0), gsd, ortho.width(), ortho.height())?;
    FieldWorld::new(frame, ortho, labels)
}
