//! Golden fixtures and their drift guard.
//!
//! Three families are rendered from the default configuration:
//! controller values on a fixed set of `(cr, cl)` cases, STC waypoint
//! files on five reference polygons, and the confidence-versus-blur curve
//! of a fixed synthetic frame. [`check`] compares a rendering against the
//! committed files and names every case that moved; [`regenerate`] rewrites
//! them. Case lists only ever grow at the end, so adding a case extends the
//! fixtures without disturbing existing rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::artifacts::{write_atomic, ArtifactError};
use crate::controller::{coverage_ratio, confidence_level, ControllerConfig};
use crate::geometry::{Point, Polygon};
use crate::perception::{PrototypeSegmenter, Segmenter, SegmenterConfig};
use crate::planner::plan_coverage;
use crate::sensor::{apply_motion_blur, CameraModel};
use crate::worldgen::{generate_field, FieldSpec};

pub const CONTROLLER_FILE: &str = "controller_golden.csv";
pub const BLUR_FILE: &str = "blur_curve.csv";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture drift:\n{}", .0.join("\n"))]
    Drift(Vec<String>),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("cannot render fixtures: {0}")]
    Render(String),
}

/// Configuration the fixtures are rendered from.
#[derive(Debug, Clone, Default)]
pub struct FixtureInputs {
    pub controller: ControllerConfig,
    pub segmenter: SegmenterConfig,
}

/// `(case, cr, cl, source)`; `source` says where the expectation comes from.
pub fn controller_cases() -> Vec<(String, f64, f64, &'static str)> {
    let mut v: Vec<(String, f64, f64, &'static str)> = vec![
        ("bare_certain".into(), 0.0, 1.0, "hand"),
        ("dense_fairly_sure".into(), 0.35, 0.80, "hand"),
        ("sparse_unsure".into(), 0.05, 0.40, "hand"),
        ("sparse_confident".into(), 0.05, 0.95, "hand"),
        ("snapshot_few_clear".into(), 0.05, 0.90, "snapshot"),
        ("snapshot_few_insecure".into(), 0.05, 0.35, "snapshot"),
        ("snapshot_dense_certain".into(), 0.60, 1.00, "snapshot"),
        ("snapshot_dense_blurred".into(), 0.60, 0.55, "snapshot"),
    ];
    for cr in [0.0, 0.15, 0.25, 0.4, 0.7, 1.0] {
        for cl in [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.75, 0.9, 1.0] {
            v.push((format!("grid_cr{cr}_cl{cl:.4}"), cr, cl, "grid"));
        }
    }
    v
}

/// Reference polygons for STC fixtures (meters).
pub fn reference_polygons() -> Vec<(&'static str, Vec<Point>)> {
    let p = |v: &[(f64, f64)]| v.iter().map(|&(x, y)| Point::new(x, y)).collect::<Vec<_>>();
    vec![
        ("single", p(&[(0.0, 0.0), (8.0, 0.0), (8.0, 8.0), (0.0, 8.0)])),
        ("square2x2", p(&[(0.0, 0.0), (16.0, 0.0), (16.0, 16.0), (0.0, 16.0)])),
        ("strip", p(&[(0.0, 0.0), (40.0, 0.0), (40.0, 8.0), (0.0, 8.0)])),
        ("l_shape", p(&[(0.0, 0.0), (24.0, 0.0), (24.0, 8.0), (8.0, 8.0), (8.0, 24.0), (0.0, 24.0)])),
        ("u_shape", p(&[(0.0, 0.0), (24.0, 0.0), (24.0, 24.0), (16.0, 24.0), (16.0, 8.0), (8.0, 8.0), (8.0, 24.0), (0.0, 24.0)])),
    ]
}

/// Camera whose lane spacing is exactly 4 m at zero overlap (mega-cell 8 m).
fn fixture_camera() -> CameraModel {
    CameraModel::new(200, 150, 10.0, 1.0, 0.02).expect("valid fixture camera")
}

fn blur_frame() -> Result<image::RgbImage, FixtureError> {
    let spec = FieldSpec {
        width_m: 12.8,
        height_m: 9.6,
        weed_density: 0.5,
        seed: 7,
        ..FieldSpec::default()
    };
    Ok(generate_field(&spec).map_err(|e| FixtureError::Render(e.to_string()))?.orthophoto)
}

/// Renders every fixture file to a `name → content` map.
pub fn render(inputs: &FixtureInputs) -> Result<BTreeMap<String, String>, FixtureError> {
    let mut out = BTreeMap::new();

    let ctl = &inputs.controller;
    let mut s = String::from("case,cr,cl,g1,g2,w1,w2,G,source\n");
    for (case, cr, cl, src) in controller_cases() {
        let g = ctl.gain(cr, cl).map_err(|e| FixtureError::Render(e.to_string()))?;
        let _ = writeln!(s, "{case},{cr},{cl},{:.9},{:.9},{:.9},{:.9},{:.9},{src}", g.g1, g.g2, g.w1, g.w2, g.g);
    }
    out.insert(CONTROLLER_FILE.to_string(), s.replace("-0.000000000", "0.000000000"));

    let cam = fixture_camera();
    for (name, verts) in reference_polygons() {
        let poly = Polygon::new(verts).map_err(|e| FixtureError::Render(e.to_string()))?;
        let plan = plan_coverage(&poly, &cam, 0.0).map_err(|e| FixtureError::Render(e.to_string()))?;
        out.insert(format!("stc_{name}.txt"), plan.to_waypoint_text());
    }

    let seg = PrototypeSegmenter::new(inputs.segmenter.clone()).map_err(|e| FixtureError::Render(e.to_string()))?;
    let frame = blur_frame()?;
    let mut s = String::from("case,kernel,axis,cr,cl,G\n");
    for (axis, heading) in [("x", Point::new(1.0, 0.0)), ("y", Point::new(0.0, 1.0))] {
        for k in [1usize, 3, 5, 7, 9, 11] {
            let img = apply_motion_blur(&frame, k, heading).map_err(|e| FixtureError::Render(e.to_string()))?;
            let r = seg.segment(&img).map_err(|e| FixtureError::Render(e.to_string()))?;
            let (cr, cl) = (coverage_ratio(&r), confidence_level(&r));
            let g = ctl.gain(cr, cl).map_err(|e| FixtureError::Render(e.to_string()))?.g;
            let _ = writeln!(s, "k{k}_{axis},{k},{axis},{cr:.9},{cl:.9},{g:.9}");
        }
    }
    out.insert(BLUR_FILE.to_string(), s);
    Ok(out)
}

fn diff_file(name: &str, expected: &str, found: &str, drift: &mut Vec<String>) {
    if expected == found {
        return;
    }
    let before = drift.len();
    if name.ends_with(".csv") {
        let rows = |t: &str| -> BTreeMap<String, String> {
            t.lines()
                .skip(1)
                .map(|l| (l.split(',').next().unwrap_or("").to_string(), l.to_string()))
                .collect()
        };
        let (want, have) = (rows(expected), rows(found));
        for (case, line) in &want {
            match have.get(case) {
                None => drift.push(format!("{name}: case {case} missing")),
                Some(h) if h != line => drift.push(format!("{name}: case {case} changed: committed `{h}`, now `{line}`")),
                _ => {}
            }
        }
        for case in have.keys().filter(|c| !want.contains_key(*c)) {
            drift.push(format!("{name}: case {case} no longer produced"));
        }
        if drift.len() == before {
            drift.push(format!("{name}: header or row order changed"));
        }
    } else {
        let line = expected.lines().zip(found.lines()).position(|(a, b)| a != b);
        drift.push(format!(
            "{name}: differs{}",
            line.map_or(" in length".to_string(), |l| format!(" at line {}", l + 1))
        ));
    }
}

/// Compares a rendering against the fixture directory.
pub fn check_rendered(dir: &Path, rendered: &BTreeMap<String, String>) -> Result<(), FixtureError> {
    let mut drift = Vec::new();
    for (name, content) in rendered {
        match std::fs::read_to_string(dir.join(name)) {
            Ok(found) => diff_file(name, content, &found, &mut drift),
            Err(_) => drift.push(format!("{name}: missing (regenerate to add it)")),
        }
    }
    if drift.is_empty() {
        Ok(())
    } else {
        Err(FixtureError::Drift(drift))
    }
}

/// Renders from the defaults and compares.
pub fn check(dir: &Path) -> Result<(), FixtureError> {
    check_rendered(dir, &render(&FixtureInputs::default())?)
}

/// Rewrites every fixture file; returns the names written.
pub fn regenerate(dir: &Path) -> Result<Vec<String>, FixtureError> {
    let rendered = render(&FixtureInputs::default())?;
    for (name, content) in &rendered {
        write_atomic(&dir.join(name), content.as_bytes())?;
    }
    Ok(rendered.into_keys().collect())
}
