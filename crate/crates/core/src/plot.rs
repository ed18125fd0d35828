//! Static raster figures: SSIM colormaps, class maps, speed traces and
//! IoU-versus-speed curves. Plots carry no text; axes ranges are fixed and
//! documented on each function.

use image::{Rgb, RgbImage};

use crate::evaluation::SsimMap;
use crate::perception::class_palette;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);

/// Diverging map: −1 → dark red, 0 → white, 1 → dark blue.
pub fn red_blue(v: f32) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let lerp = |a: f32, b: f32, t: f32| (a + (b - a) * t).round() as u8;
    if v < 0.0 {
        let t = -v;
        Rgb([lerp(255.0, 160.0, t), lerp(255.0, 20.0, t), lerp(255.0, 30.0, t)])
    } else {
        Rgb([lerp(255.0, 20.0, v), lerp(255.0, 60.0, v), lerp(255.0, 160.0, v)])
    }
}

/// SSIM raster downsampled by `step` (block mean) and colormapped.
pub fn ssim_image(map: &SsimMap, step: u32) -> RgbImage {
    let step = step.max(1);
    let (w, h) = (map.width.div_ceil(step), map.height.div_ceil(step));
    RgbImage::from_fn(w, h, |x, y| {
        let mut sum = 0.0f32;
        let mut n = 0.0f32;
        for yy in y * step..((y + 1) * step).min(map.height) {
            for xx in x * step..((x + 1) * step).min(map.width) {
                sum += map.values[(yy * map.width + xx) as usize];
                n += 1.0;
            }
        }
        red_blue(sum / n)
    })
}

/// Class map rendered with the class palette, nearest-neighbor downsampled.
pub fn class_image(class_map: &[u8], width: u32, height: u32, step: u32) -> RgbImage {
    let step = step.max(1);
    RgbImage::from_fn(width.div_ceil(step), height.div_ceil(step), |x, y| {
        Rgb(class_palette(class_map[((y * step) * width + x * step) as usize]))
    })
}

struct Canvas {
    img: RgbImage,
    margin: u32,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        let mut c = Canvas {
            img: RgbImage::from_pixel(w, h, WHITE),
            margin: 20,
        };
        c.frame();
        c
    }

    fn plot_w(&self) -> f64 {
        (self.img.width() - 2 * self.margin) as f64
    }

    fn plot_h(&self) -> f64 {
        (self.img.height() - 2 * self.margin) as f64
    }

    fn frame(&mut self) {
        let (w, h, m) = (self.img.width(), self.img.height(), self.margin);
        for i in 1..4 {
            let y = m + (h - 2 * m) * i / 4;
            for x in m..w - m {
                self.img.put_pixel(x, y, GRID);
            }
        }
        for x in m..=w - m {
            self.img.put_pixel(x, h - m, AXIS);
        }
        for y in m..=h - m {
            self.img.put_pixel(m, y, AXIS);
        }
    }

    /// Maps unit coordinates (0..1, 0..1 bottom-up) to pixels.
    fn to_px(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.margin as f64 + u.clamp(0.0, 1.0) * self.plot_w(),
            self.margin as f64 + (1.0 - v.clamp(0.0, 1.0)) * self.plot_h(),
        )
    }

    fn dot(&mut self, x: f64, y: f64, c: Rgb<u8>) {
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if xi >= 0 && yi >= 0 && (xi as u32) < self.img.width() && (yi as u32) < self.img.height() {
            self.img.put_pixel(xi as u32, yi as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (pa, pb) = (self.to_px(a.0, a.1), self.to_px(b.0, b.1));
        let n = ((pb.0 - pa.0).abs().max((pb.1 - pa.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let (x, y) = (pa.0 + (pb.0 - pa.0) * t, pa.1 + (pb.1 - pa.1) * t);
            self.dot(x, y, c);
            self.dot(x, y + 1.0, c);
        }
    }

    fn vspan(&mut self, u: f64, v0: f64, v1: f64, c: Rgb<u8>) {
        let (x, y0) = self.to_px(u, v0);
        let (_, y1) = self.to_px(u, v1);
        let (lo, hi) = (y0.min(y1).round() as i64, y0.max(y1).round() as i64);
        for y in lo..=hi {
            for dx in -2..=2 {
                self.dot(x + dx as f64, y as f64, c);
            }
        }
    }
}

/// Speed per step; the vertical axis spans `[lo, hi]`. Dashed lines mark
/// `nominal`.
pub fn speed_trace(speeds: &[f64], lo: f64, hi: f64, nominal: f64) -> RgbImage {
    let mut c = Canvas::new(800, 300);
    let n = speeds.len().max(2) as f64 - 1.0;
    let v = |s: f64| if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
    let mut u = 0.0;
    while u < 1.0 {
        c.line((u, v(nominal)), ((u + 0.01).min(1.0), v(nominal)), Rgb([150, 150, 150]));
        u += 0.02;
    }
    for (i, w) in speeds.windows(2).enumerate() {
        c.line((i as f64 / n, v(w[0])), ((i + 1) as f64 / n, v(w[1])), Rgb([30, 90, 200]));
    }
    c.img
}

/// One curve of an IoU-versus-speed plot.
pub struct Series {
    pub color: Rgb<u8>,
    /// `(speed, mean, variance)` points.
    pub points: Vec<(f64, f64, f64)>,
}

/// Mean curves with ±1 standard deviation bars; x spans `[x_lo, x_hi]`,
/// y spans [0, 1].
pub fn iou_curves(series: &[Series], x_lo: f64, x_hi: f64) -> RgbImage {
    let mut c = Canvas::new(600, 400);
    let u = |x: f64| if x_hi > x_lo { (x - x_lo) / (x_hi - x_lo) } else { 0.5 };
    for s in series {
        let faint = Rgb(s.color.0.map(|v| ((v as u16 + 2 * 255) / 3) as u8));
        for &(x, m, var) in &s.points {
            let sd = var.max(0.0).sqrt();
            c.vspan(u(x), m - sd, m + sd, faint);
        }
        for w in s.points.windows(2) {
            c.line((u(w[0].0), w[0].1), (u(w[1].0), w[1].1), s.color);
        }
        for &(x, m, _) in &s.points {
            c.vspan(u(x), m - 0.004, m + 0.004, s.color);
        }
    }
    c.img
}
