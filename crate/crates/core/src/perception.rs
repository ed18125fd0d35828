//! Semantic segmentation behind a stable interface.
//!
//! [`PrototypeSegmenter`] is a pixel-wise classifier: each pixel is mapped
//! to (hue, excess-green) features, scored against one prototype per class
//! with a Gaussian kernel, and the scores are turned into a 3-way
//! distribution with a temperature softmax. Blur mixes neighboring colors,
//! moving boundary pixels between prototypes, which lowers the confidence.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::Command;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldgen::{BACKGROUND, CROP, WEED};
use crate::sensor::{box_blur, BlurAxis};

pub const NUM_CLASSES: usize = 3;
const SUM_TOL: f32 = 1e-6;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("image has zero size")]
    EmptyImage,
    #[error("segmenter output invalid: {0}")]
    InvalidOutput(String),
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("external segmenter failed: {0}")]
    External(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel class distribution with its argmax and max maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub width: u32,
    pub height: u32,
    /// Row-major, channels ordered (background, crop, weed).
    pub scores: Vec<[f32; NUM_CLASSES]>,
    pub class_map: Vec<u8>,
    pub prob_map: Vec<f32>,
    /// Pixel counts per class, indexed like the channels.
    pub counts: [usize; NUM_CLASSES],
}

fn argmax(s: &[f32; NUM_CLASSES]) -> (u8, f32) {
    // ties resolve toward the lower class index
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if s[c] > s[best] {
            best = c;
        }
    }
    (best as u8, s[best])
}

impl SegmentationResult {
    /// Builds a result from score vectors, deriving class and prob maps.
    pub fn from_scores(width: u32, height: u32, scores: Vec<[f32; NUM_CLASSES]>) -> Result<Self, PerceptionError> {
        let mut class_map = Vec::with_capacity(scores.len());
        let mut prob_map = Vec::with_capacity(scores.len());
        let mut counts = [0usize; NUM_CLASSES];
        for s in &scores {
            let (c, p) = argmax(s);
            class_map.push(c);
            prob_map.push(p);
            counts[c as usize] += 1;
        }
        let r = Self { width, height, scores, class_map, prob_map, counts };
        r.validate()?;
        Ok(r)
    }

    /// Checks every invariant of the contract.
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |m: String| Err(PerceptionError::InvalidOutput(m));
        let n = self.width as usize * self.height as usize;
        if n == 0 {
            return bad("zero-size result".into());
        }
        if self.scores.len() != n || self.class_map.len() != n || self.prob_map.len() != n {
            return bad(format!(
                "map lengths {}/{}/{} do not match {}x{}",
                self.scores.len(),
                self.class_map.len(),
                self.prob_map.len(),
                self.width,
                self.height
            ));
        }
        let mut counts = [0usize; NUM_CLASSES];
        for (i, s) in self.scores.iter().enumerate() {
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("pixel {i}: score outside [0, 1]: {s:?}"));
            }
            let sum: f32 = s.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return bad(format!("pixel {i}: channel sum {sum}"));
            }
            let (c, p) = argmax(s);
            if self.class_map[i] != c {
                return bad(format!("pixel {i}: class {} is not the argmax {c}", self.class_map[i]));
            }
            if self.prob_map[i] != p {
                return bad(format!("pixel {i}: prob {} is not the max score {p}", self.prob_map[i]));
            }
            if p < 1.0 / 3.0 - SUM_TOL {
                return bad(format!("pixel {i}: prob {p} below 1/3"));
            }
            counts[c as usize] += 1;
        }
        if counts != self.counts {
            return bad(format!("counts {:?} do not match class map {counts:?}", self.counts));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.class_map.len()
    }
}

/// Raw output of a foreign segmenter before contract checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegmentation {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Interleaved, `width · height · channels` values.
    pub scores: Vec<f32>,
    pub class_map: Option<Vec<u8>>,
    pub prob_map: Option<Vec<f32>>,
}

impl RawSegmentation {
    /// Validates against the contract; valid maps are accepted verbatim.
    pub fn into_result(self) -> Result<SegmentationResult, PerceptionError> {
        if self.channels as usize != NUM_CLASSES {
            return Err(PerceptionError::InvalidOutput(format!(
                "expected {NUM_CLASSES} classes, got {}",
                self.channels
            )));
        }
        let n = self.width as usize * self.height as usize;
        if self.scores.len() != n * NUM_CLASSES {
            return Err(PerceptionError::InvalidOutput(format!(
                "{} score values for {}x{}x{}",
                self.scores.len(),
                self.width,
                self.height,
                NUM_CLASSES
            )));
        }
        let scores: Vec<[f32; 3]> = self.scores.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut r = SegmentationResult::from_scores(self.width, self.height, scores)?;
        if let Some(cm) = self.class_map {
            r.class_map = cm;
        }
        if let Some(pm) = self.prob_map {
            r.prob_map = pm;
        }
        r.validate()?;
        Ok(r)
    }

    /// Binary wire format: magic `SEG1`, then little-endian u32 width,
    /// height, channels, followed by interleaved f32 scores.
    pub fn read_from(mut r: impl Read) -> Result<Self, PerceptionError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SEG1" {
            return Err(PerceptionError::InvalidOutput("bad magic".into()));
        }
        let mut u = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<u32, PerceptionError> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let width = next_u32(&mut r)?;
        let height = next_u32(&mut r)?;
        let channels = next_u32(&mut r)?;
        let n = width as usize * height as usize * channels as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != n * 4 {
            return Err(PerceptionError::InvalidOutput(format!(
                "payload has {} bytes, expected {}",
                buf.len(),
                n * 4
            )));
        }
        let scores = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { width, height, channels, scores, class_map: None, prob_map: None })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(b"SEG1")?;
        for v in [self.width, self.height, self.channels] {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.scores {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    }
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, image: &RgbImage) -> Result<SegmentationResult, PerceptionError>;
}

/// Feature-space prototype of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prototype {
    pub hue_deg: f64,
    pub exg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    /// Prototypes in channel order (background, crop, weed).
    pub prototypes: [Prototype; NUM_CLASSES],
    /// Gaussian bandwidth in feature space.
    pub sigma: f64,
    pub temperature: f64,
    /// Hue difference that counts as one feature unit.
    pub hue_scale_deg: f64,
    /// Half-width of the square mean filter applied before classification;
    /// 0 classifies raw pixels.
    pub smoothing_radius: u32,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        let colors = crate::worldgen::ColorModel::default();
        let proto = |c: [u8; 3]| {
            let (hue_deg, exg) = features(c);
            Prototype { hue_deg, exg }
        };
        Self {
            prototypes: [proto(colors.soil), proto(colors.crop), proto(colors.weed)],
            sigma: 0.10,
            temperature: 0.10,
            hue_scale_deg: 180.0,
            smoothing_radius: 1,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        for (name, v) in [("sigma", self.sigma), ("temperature", self.temperature), ("hue_scale_deg", self.hue_scale_deg)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PerceptionError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Hue in degrees `[0, 360)` (0 for gray) and excess green `2g − r − b`
/// on channels scaled to `[0, 1]`.
pub fn features(rgb: [u8; 3]) -> (f64, f64) {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let hue = if d <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (hue, 2.0 * g - r - b)
}

#[derive(Debug, Clone, Default)]
pub struct PrototypeSegmenter {
    pub config: SegmenterConfig,
}

impl PrototypeSegmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self, PerceptionError> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Class distribution of a single color.
    pub fn pixel_scores(&self, rgb: [u8; 3]) -> [f32; NUM_CLASSES] {
        let cfg = &self.config;
        let (hue, exg) = features(rgb);
        let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
        let mut logits = [0f64; NUM_CLASSES];
        for (c, p) in cfg.prototypes.iter().enumerate() {
            let mut dh = (hue - p.hue_deg).abs() % 360.0;
            if dh > 180.0 {
                dh = 360.0 - dh;
            }
            let dh = dh / cfg.hue_scale_deg;
            let de = exg - p.exg;
            let score = (-(dh * dh + de * de) * inv).exp();
            logits[c] = score / cfg.temperature;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|l| (l - m).exp());
        let z: f64 = e.iter().sum();
        let mut out = e.map(|v| (v / z) as f32);
        // keep the f32 channel sum within tolerance after rounding
        let drift = 1.0 - out.iter().sum::<f32>();
        let (hi, _) = argmax(&out);
        out[hi as usize] = (out[hi as usize] + drift).min(1.0);
        out
    }
}

impl Segmenter for PrototypeSegmenter {
    fn name(&self) -> &str {
        "prototype"
    }

    fn segment(&self, image: &RgbImage) -> Result<SegmentationResult, PerceptionError> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(PerceptionError::EmptyImage);
        }
        let smoothed;
        let image = match self.config.smoothing_radius {
            0 => image,
            r => {
                let k = 2 * r as usize + 1;
                smoothed = box_blur(&box_blur(image, k, BlurAxis::Horizontal), k, BlurAxis::Vertical);
                &smoothed
            }
        };
        let scores: Vec<[f32; 3]> = image
            .as_raw()
            .par_chunks_exact(3)
            .map(|p| self.pixel_scores([p[0], p[1], p[2]]))
            .collect();
        let mut class_map = Vec::with_capacity(scores.len());
        let mut prob_map = Vec::with_capacity(scores.len());
        let mut counts = [0usize; NUM_CLASSES];
        for s in &scores {
            let (c, p) = argmax(s);
            class_map.push(c);
            prob_map.push(p);
            counts[c as usize] += 1;
        }
        Ok(SegmentationResult { width: w, height: h, scores, class_map, prob_map, counts })
    }
}

/// Wraps another segmenter and enforces the output contract, so a faulty
/// model aborts the mission instead of feeding the controller garbage.
pub struct ValidatingSegmenter<S> {
    pub inner: S,
}

impl<S: Segmenter> Segmenter for ValidatingSegmenter<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn segment(&self, image: &RgbImage) -> Result<SegmentationResult, PerceptionError> {
        let r = self.inner.segment(image)?;
        if (r.width, r.height) != image.dimensions() {
            return Err(PerceptionError::InvalidOutput(format!(
                "result is {}x{} for a {}x{} image",
                r.width,
                r.height,
                image.width(),
                image.height()
            )));
        }
        r.validate()?;
        Ok(r)
    }
}

/// Out-of-process model. The program is invoked as
/// `program args… <input.png> <output.seg>` and must write the binary
/// format of [`RawSegmentation::write_to`].
#[derive(Debug, Clone)]
pub struct CommandSegmenter {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Segmenter for CommandSegmenter {
    fn name(&self) -> &str {
        "command"
    }

    fn segment(&self, image: &RgbImage) -> Result<SegmentationResult, PerceptionError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(PerceptionError::EmptyImage);
        }
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.png");
        let output = dir.path().join("output.seg");
        image
            .save(&input)
            .map_err(|e| PerceptionError::External(format!("writing input: {e}")))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| PerceptionError::External(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(PerceptionError::External(format!("{} exited with {status}", self.program.display())));
        }
        let raw = RawSegmentation::read_from(std::fs::File::open(&output)?)?;
        if (raw.width, raw.height) != image.dimensions() {
            return Err(PerceptionError::InvalidOutput(format!(
                "result is {}x{} for a {}x{} image",
                raw.width,
                raw.height,
                image.width(),
                image.height()
            )));
        }
        raw.into_result()
    }
}

/// Segmenter selection as it appears in run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterSpec {
    Prototype {
        #[serde(default)]
        config: SegmenterConfig,
    },
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        SegmenterSpec::Prototype { config: SegmenterConfig::default() }
    }
}

impl SegmenterSpec {
    pub fn build(&self) -> Result<Box<dyn Segmenter>, PerceptionError> {
        Ok(match self {
            SegmenterSpec::Prototype { config } => Box::new(PrototypeSegmenter::new(config.clone())?),
            SegmenterSpec::Command { program, args } => Box::new(ValidatingSegmenter {
                inner: CommandSegmenter { program: program.clone(), args: args.clone() },
            }),
        })
    }
}

/// Class-colored visualization: background black, crop green, weed yellow.
pub fn class_palette(class: u8) -> [u8; 3] {
    match class {
        CROP => [0, 200, 0],
        WEED => [230, 220, 0],
        BACKGROUND => [0, 0, 0],
        _ => [255, 0, 255],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::ColorModel;
    use image::Rgb;
    use proptest::prelude::*;

    /// Closed-form oracle for one color, written out without the segmenter.
    fn oracle_prob(rgb: [u8; 3], class: usize) -> f64 {
        let cfg = SegmenterConfig::default();
        let (h, e) = features(rgb);
        let s: Vec<f64> = cfg
            .prototypes
            .iter()
            .map(|p| {
                let dh = {
                    let d = (h - p.hue_deg).abs();
                    d.min(360.0 - d) / cfg.hue_scale_deg
                };
                (-(dh * dh + (e - p.exg).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp() / cfg.temperature
            })
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        s[class].exp() / z
    }

    #[test]
    fn features_of_reference_colors() {
        let (h, e) = features([40, 140, 50]);
        assert!((h - (120.0 + 60.0 * 10.0 / 100.0)).abs() < 1e-9);
        assert!((e - (280.0 - 90.0) / 255.0).abs() < 1e-12);
        assert_eq!(features([90, 90, 90]), (0.0, 0.0));
        let (h_soil, _) = features([120, 90, 60]);
        assert!((h_soil - 30.0).abs() < 1e-9);
    }

    #[test]
    fn prototype_colors_classify_confidently() {
        let seg = PrototypeSegmenter::default();
        let colors = ColorModel::default();
        let crop = seg.segment(&RgbImage::from_pixel(8, 8, Rgb(colors.crop))).unwrap();
        assert!(crop.class_map.iter().all(|&c| c == CROP));
        let mean: f32 = crop.prob_map.iter().sum::<f32>() / 64.0;
        assert!(mean >= 0.9, "mean prob {mean}");
        assert!((mean as f64 - oracle_prob(colors.crop, 1)).abs() < 1e-6);
        let soil = seg.segment(&RgbImage::from_pixel(8, 8, Rgb(colors.soil))).unwrap();
        assert!(soil.class_map.iter().all(|&c| c == BACKGROUND));
        assert_eq!(soil.counts, [64, 0, 0]);
        let weed = seg.segment(&RgbImage::from_pixel(8, 8, Rgb(colors.weed))).unwrap();
        assert!(weed.class_map.iter().all(|&c| c == WEED));
    }

    #[test]
    fn empty_image_rejected() {
        let seg = PrototypeSegmenter::default();
        assert!(matches!(seg.segment(&RgbImage::new(0, 5)), Err(PerceptionError::EmptyImage)));
    }

    #[test]
    fn blur_lowers_boundary_confidence() {
        let colors = ColorModel::default();
        // crop/soil stripes four pixels wide
        let card = RgbImage::from_fn(64, 64, |x, _| if (x / 4) % 2 == 0 { Rgb(colors.crop) } else { Rgb(colors.soil) });
        let seg = PrototypeSegmenter::default();
        let mean = |r: &SegmentationResult| r.prob_map.iter().map(|&p| p as f64).sum::<f64>() / r.pixel_count() as f64;
        let sharp = seg.segment(&card).unwrap();
        let blurred_img = crate::sensor::apply_motion_blur(&card, 9, crate::geometry::Point::new(1.0, 0.0)).unwrap();
        let blurred = seg.segment(&blurred_img).unwrap();
        assert!(mean(&blurred) < mean(&sharp));
    }

    #[test]
    fn raw_contract_cases() {
        let good = RawSegmentation {
            width: 2,
            height: 1,
            channels: 3,
            scores: vec![0.2, 0.5, 0.3, 0.6, 0.2, 0.2],
            class_map: None,
            prob_map: None,
        };
        let r = good.clone().into_result().unwrap();
        assert_eq!(r.class_map, vec![1, 0]);
        assert_eq!(r.prob_map, vec![0.5, 0.6]);
        assert_eq!(r.scores, vec![[0.2, 0.5, 0.3], [0.6, 0.2, 0.2]]);

        let low = RawSegmentation { scores: vec![0.2, 0.5, 0.28, 0.6, 0.2, 0.2], ..good.clone() };
        assert!(matches!(low.into_result(), Err(PerceptionError::InvalidOutput(_))));

        let four = RawSegmentation { channels: 4, scores: vec![0.25; 8], ..good.clone() };
        match four.into_result() {
            Err(PerceptionError::InvalidOutput(m)) => assert!(m.contains("3 classes")),
            other => panic!("{other:?}"),
        }

        let wrong_class = RawSegmentation { class_map: Some(vec![2, 0]), ..good.clone() };
        assert!(wrong_class.into_result().is_err());

        let mut buf = Vec::new();
        good.write_to(&mut buf).unwrap();
        assert_eq!(RawSegmentation::read_from(buf.as_slice()).unwrap(), good);
    }

    #[test]
    fn validating_wrapper_rejects_bad_inner() {
        struct Bad;
        impl Segmenter for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn segment(&self, image: &RgbImage) -> Result<SegmentationResult, PerceptionError> {
                let n = (image.width() * image.height()) as usize;
                Ok(SegmentationResult {
                    width: image.width(),
                    height: image.height(),
                    scores: vec![[0.49, 0.49, 0.0]; n],
                    class_map: vec![0; n],
                    prob_map: vec![0.49; n],
                    counts: [n, 0, 0],
                })
            }
        }
        let v = ValidatingSegmenter { inner: Bad };
        assert!(v.segment(&RgbImage::new(3, 3)).is_err());
    }

    #[test]
    fn command_segmenter_round_trip() {
        let Ok(python) = which_python() else { return };
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("seg.py");
        std::fs::write(
            &script,
            "import sys, struct\n\
             src, dst = sys.argv[1], sys.argv[2]\n\
             w, h = 5, 4\n\
             with open(dst, 'wb') as f:\n\
             \x20   f.write(b'SEG1' + struct.pack('<III', w, h, 3))\n\
             \x20   for i in range(w * h):\n\
             \x20       f.write(struct.pack('<fff', 0.25, 0.5, 0.25))\n",
        )
        .unwrap();
        let seg = CommandSegmenter { program: python.into(), args: vec![script.display().to_string()] };
        let r = seg.segment(&RgbImage::new(5, 4)).unwrap();
        assert_eq!(r.counts, [0, 20, 0]);
        assert!(seg.segment(&RgbImage::new(6, 4)).is_err());
    }

    fn which_python() -> Result<String, ()> {
        for cand in ["python3", "python"] {
            if Command::new(cand).arg("--version").output().map(|o| o.status.success()).unwrap_or(false) {
                return Ok(cand.to_string());
            }
        }
        Err(())
    }

    proptest! {
        #[test]
        fn normalization_and_floor(pixels in proptest::collection::vec(any::<[u8; 3]>(), 1..64)) {
            let seg = PrototypeSegmenter::default();
            let n = pixels.len() as u32;
            let img = RgbImage::from_fn(n, 1, |x, _| Rgb(pixels[x as usize]));
            let r = seg.segment(&img).unwrap();
            r.validate().unwrap();
            for s in &r.scores {
                prop_assert!((s.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            }
            prop_assert!(r.prob_map.iter().all(|&p| p >= 1.0 / 3.0 - 1e-6));
            prop_assert_eq!(r.counts.iter().sum::<usize>(), n as usize);
        }

        #[test]
        fn rotation_permutes_maps(pixels in proptest::collection::vec(any::<[u8; 3]>(), 12)) {
            let seg = PrototypeSegmenter::default();
            let img = RgbImage::from_fn(4, 3, |x, y| Rgb(pixels[(y * 4 + x) as usize]));
            let rot = image::imageops::rotate180(&img);
            let a = seg.segment(&img).unwrap();
            let b = seg.segment(&rot).unwrap();
            let mut rev = a.class_map.clone();
            rev.reverse();
            prop_assert_eq!(rev, b.class_map);
            let mut revp = a.prob_map.clone();
            revp.reverse();
            prop_assert_eq!(revp, b.prob_map);
        }
    }
}
