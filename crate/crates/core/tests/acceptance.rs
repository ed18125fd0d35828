//! Acceptance suite: each criterion prints one PASS/FAIL line with its
//! measured values and runtime, and the test fails if any criterion fails.
//!
//! Criteria run sequentially so the runtimes are comparable to their
//! limits. Mission runs are cached by `(speed, mode, seed)` and shared
//! between the criteria that need them; the speed-band check inspects
//! every cached run at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use agriscan::artifacts::{self, evaluate_dir, write_run};
use agriscan::controller::{coverage_ratio, confidence_level, ControllerConfig};
use agriscan::evaluation::{histogram_mass_above, mission_mosaic, planned_coverage, EvalReport, SSIM_BINS};
use agriscan::geometry::{Point, Polygon, Rect};
use agriscan::planner::{plan_coverage, SubCell};
use agriscan::sensor::apply_motion_blur;
use agriscan::worldgen::{generate_field, FieldSpec, FieldWorld};
use agriscan::{CameraModel, FlightMode, PrototypeSegmenter, RunConfig, Segmenter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// What the suite keeps from each flown and evaluated mission.
struct RunResult {
    nominal_speed: f64,
    max_discrepancy: f64,
    speeds: Vec<f64>,
    report: EvalReport,
}

#[derive(Default)]
struct Suite {
    worlds: BTreeMap<u64, FieldWorld>,
    runs: BTreeMap<(u64, String, u64), RunResult>,
}

fn base_config(speed: f64, mode: FlightMode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.controller.nominal_speed = speed;
    cfg.mission.mode = mode;
    cfg
}

impl Suite {
    fn world(&mut self, seed: u64) -> &FieldWorld {
        self.worlds
            .entry(seed)
            .or_insert_with(|| generate_field(&FieldSpec::half_vegetated(seed)).expect("default field generates"))
    }

    fn run(&mut self, speed: f64, mode: FlightMode, seed: u64) -> &RunResult {
        let key = ((speed * 1000.0).round() as u64, mode.to_string(), seed);
        if !self.runs.contains_key(&key) {
            let cfg = base_config(speed, mode, seed);
            let world = self.world(seed).clone();
            let flown = artifacts::fly(&cfg, &world).expect("mission flies");
            let ev = artifacts::evaluate(&flown, &world).expect("mission evaluates");
            self.runs.insert(
                key.clone(),
                RunResult {
                    nominal_speed: speed,
                    max_discrepancy: cfg.controller.max_discrepancy,
                    speeds: flown.log.speeds(),
                    report: ev.report,
                },
            );
        }
        &self.runs[&key]
    }
}

fn iou_sum(r: &RunResult) -> f64 {
    r.report.iou_crop + r.report.iou_weed
}

fn criterion_1() -> Verdict {
    let cfg = ControllerConfig::default();
    let cases = [
        ((0.0, 1.0), 1.0),
        ((0.35, 0.80), -0.64),
        ((0.05, 0.40), -0.2976),
        // hand derivation: 0.2775 · (2/3) + 0.7225 · 0.8
        ((0.05, 0.95), 0.2775 * (2.0 / 3.0) + 0.7225 * 0.8),
    ];
    let mut worst: f64 = 0.0;
    let mut values = Vec::new();
    for ((cr, cl), want) in cases {
        let g = cfg.gain(cr, cl).unwrap().g;
        worst = worst.max((g - want).abs());
        values.push(format!("G({cr},{cl})={g:+.9}"));
    }
    // Snapshots: few plants + clear (speed up), few + unsure (slow down),
    // many + certain (speed up), many + blurred (slow down).
    let signs = [
        ((0.05, 0.90), 1.0),
        ((0.05, 0.35), -1.0),
        ((0.60, 1.00), 1.0),
        ((0.60, 0.55), -1.0),
    ];
    let signs_ok = signs.iter().all(|&((cr, cl), s)| cfg.gain(cr, cl).unwrap().g * s > 0.0);
    Verdict::new(worst <= 1e-6 && signs_ok, format!("{}; max error {worst:.1e}; snapshot signs {}", values.join(", "), if signs_ok { "ok" } else { "wrong" }))
}

fn criterion_2() -> Verdict {
    let cfg = ControllerConfig::default();
    let n = 101;
    let grid = |i: usize| i as f64 / (n - 1) as f64;
    let (mut sum_err, mut max_abs, mut monotone, mut sign) = (0.0f64, 0.0f64, true, true);
    for j in 0..n {
        let cl = grid(j);
        let mut prev = f64::INFINITY;
        for i in 0..n {
            let cr = grid(i);
            let g = cfg.gain(cr, cl).unwrap();
            sum_err = sum_err.max((g.w1 + g.w2 - 1.0).abs());
            max_abs = max_abs.max(g.g.abs());
            if g.g > prev + 1e-12 {
                monotone = false;
            }
            prev = g.g;
        }
        let g = cfg.gain(0.15, cl).unwrap().g;
        if (cl <= 0.75 && g > 1e-12) || (cl >= 0.75 && g < -1e-12) {
            sign = false;
        }
    }
    Verdict::new(
        sum_err <= 1e-12 && max_abs <= 1.0 && monotone && sign,
        format!("max |w1+w2-1| {sum_err:.1e}, max |G| {max_abs:.6}, non-increasing in cr {monotone}, sign at cr=0.15 {sign}"),
    )
}

fn criterion_3(suite: &Suite) -> Verdict {
    let mut bad = Vec::new();
    for ((_, mode, seed), r) in &suite.runs {
        let (lo, hi) = (r.nominal_speed - r.max_discrepancy, r.nominal_speed + r.max_discrepancy);
        let mut prev = r.nominal_speed;
        for &s in &r.speeds {
            if s < lo - 1e-12 || s > hi + 1e-12 || (s - prev).abs() > r.max_discrepancy + 1e-12 {
                bad.push(format!("s={} {mode} seed {seed}: {prev} -> {s}", r.nominal_speed));
                break;
            }
            prev = s;
        }
    }
    let steps: usize = suite.runs.values().map(|r| r.speeds.len()).sum();
    Verdict::new(bad.is_empty(), format!("{} runs, {steps} speed updates checked; violations: {bad:?}", suite.runs.len()))
}

/// Rectilinear polygon whose columns span random vertical intervals on an
/// 8 m lattice, each overlapping its neighbor so the cells stay connected.
fn random_rectilinear(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let cell = 8.0;
    let cols = rng.random_range(2..7);
    let mut spans: Vec<(i32, i32)> = Vec::new();
    for c in 0..cols {
        let (lo, hi) = loop {
            let lo = rng.random_range(0..4);
            let hi = rng.random_range(lo + 1..6);
            match spans.last() {
                Some(&(plo, phi)) if c > 0 && (hi <= plo || lo >= phi) => continue,
                _ => break (lo, hi),
            }
        };
        spans.push((lo, hi));
    }
    let (ox, oy) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let mut v = Vec::new();
    for (c, &(_, hi)) in spans.iter().enumerate() {
        v.push((c as i32, hi));
        v.push((c as i32 + 1, hi));
    }
    for (c, &(lo, _)) in spans.iter().enumerate().rev() {
        v.push((c as i32 + 1, lo));
        v.push((c as i32, lo));
    }
    v.dedup();
    // drop collinear middle points
    let mut out: Vec<(i32, i32)> = Vec::new();
    for i in 0..v.len() {
        let (a, b, c) = (v[(i + v.len() - 1) % v.len()], v[i], v[(i + 1) % v.len()]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross != 0 {
            out.push(b);
        }
    }
    out.into_iter().map(|(x, y)| Point::new(ox + x as f64 * cell, oy + y as f64 * cell)).collect()
}

fn visited(plan: &agriscan::CoveragePlan) -> Vec<SubCell> {
    let g = &plan.grid;
    let pts = plan.path.points();
    pts[..pts.len() - 1]
        .iter()
        .map(|p| {
            SubCell::new(
                ((p.x - g.origin.x) / g.subcell_size).floor() as i64,
                ((p.y - g.origin.y) / g.subcell_size).floor() as i64,
            )
        })
        .collect()
}

fn criterion_4() -> Verdict {
    let cam = CameraModel::new(200, 150, 10.0, 1.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut subcells = 0;
    for i in 0..20 {
        let verts = random_rectilinear(&mut rng);
        let poly = match Polygon::new(verts) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("polygon {i}: {e}"));
                continue;
            }
        };
        match plan_coverage(&poly, &cam, 0.0) {
            Ok(plan) => {
                let want: BTreeSet<SubCell> = plan.grid.subcells().collect();
                let got: BTreeSet<SubCell> = visited(&plan).into_iter().collect();
                subcells += want.len();
                if !want.is_subset(&got) {
                    failures.push(format!("polygon {i}: {} of {} subcells visited", want.intersection(&got).count(), want.len()));
                }
            }
            Err(e) => failures.push(format!("polygon {i}: {e}")),
        }
    }
    let mut rects = 0;
    for (w, h, o) in [(1, 1, 0.0), (2, 3, 0.0), (5, 4, 0.3), (7, 2, 0.7), (10, 10, 0.5)] {
        let sub = cam.footprint_width * (1.0 - o);
        let rect = Rect::new(3.0, -7.0, 3.0 + 2.0 * sub * w as f64, -7.0 + 2.0 * sub * h as f64);
        let plan = plan_coverage(&Polygon::rectangle(rect).unwrap(), &cam, o).unwrap();
        let cells = visited(&plan);
        let unique: BTreeSet<SubCell> = cells.iter().copied().collect();
        let n = plan.grid.subcell_count();
        let len_ok = (plan.path.total_length() - n as f64 * plan.grid.subcell_size).abs() < 1e-6 * n as f64;
        if n != 4 * w * h || cells.len() != n || unique.len() != n || !len_ok {
            failures.push(format!("rectangle {w}x{h} o={o}: {} visits, {} unique of {n}, length ok {len_ok}", cells.len(), unique.len()));
        }
        rects += 1;
    }
    Verdict::new(failures.is_empty(), format!("20 random polygons ({subcells} subcells) and {rects} rectangles; failures: {failures:?}"))
}

fn criterion_5() -> Verdict {
    let spec = FieldSpec {
        width_m: 12.8,
        height_m: 9.6,
        weed_density: 0.5,
        seed: 7,
        ..FieldSpec::default()
    };
    let frame = generate_field(&spec).unwrap().orthophoto;
    let seg = PrototypeSegmenter::default();
    let ctl = ControllerConfig::default();
    let mut pass = true;
    let mut lines = Vec::new();
    for (axis, heading) in [("x", Point::new(1.0, 0.0)), ("y", Point::new(0.0, 1.0))] {
        let mut cls = Vec::new();
        let mut gs = Vec::new();
        for k in [1usize, 3, 5, 7, 9] {
            let r = seg.segment(&apply_motion_blur(&frame, k, heading).unwrap()).unwrap();
            let (cr, cl) = (coverage_ratio(&r), confidence_level(&r));
            cls.push(cl);
            gs.push(ctl.gain(cr, cl).unwrap().g);
        }
        let cl_ok = cls.windows(2).all(|w| w[1] <= w[0]) && cls[4] <= cls[0] - 0.05;
        let g_ok = gs.windows(2).all(|w| w[1] <= w[0]);
        pass &= cl_ok && g_ok;
        lines.push(format!(
            "{axis}: cl [{}] G [{}]",
            cls.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "),
            gs.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    Verdict::new(pass, lines.join("; "))
}

fn criterion_6(suite: &mut Suite) -> Verdict {
    let r = suite.run(4.0, FlightMode::Adaptive, 1);
    let veg = r.report.region_speeds["vegetated"].unwrap_or(f64::NAN);
    let bare = r.report.region_speeds["bare"].unwrap_or(f64::NAN);
    Verdict::new(bare - veg >= 0.5, format!("mean speed vegetated {veg:.3} m/s, bare {bare:.3} m/s, difference {:.3}", bare - veg))
}

fn criterion_7(suite: &mut Suite) -> (Verdict, Verdict) {
    let seeds = [1u64, 2, 3];
    let mut wins = 0;
    let mut cells = Vec::new();
    for speed in [5.0, 6.0] {
        for seed in seeds {
            let a = iou_sum(suite.run(speed, FlightMode::Adaptive, seed));
            let b = iou_sum(suite.run(speed, FlightMode::Baseline, seed));
            wins += usize::from(a >= b);
            cells.push(format!("s={speed} seed {seed}: {a:.4} vs {b:.4}"));
        }
    }
    let quality = Verdict::new(wins >= 5, format!("adaptive IoU sum >= baseline in {wins}/6 cells ({})", cells.join(", ")));
    let mut faster = 0;
    let mut times = Vec::new();
    for seed in seeds {
        let a = suite.run(6.0, FlightMode::Adaptive, seed).report.c_tau;
        let b = suite.run(6.0, FlightMode::Baseline, seed).report.c_tau;
        faster += usize::from(a <= b);
        times.push(format!("seed {seed}: {a:.0} s vs {b:.0} s"));
    }
    let time = Verdict::new(faster >= 2, format!("at s=6 adaptive C <= baseline C in {faster}/3 seeds ({})", times.join(", ")));
    (quality, time)
}

fn mass_above(h: &[f64]) -> f64 {
    let mut a = [0.0; SSIM_BINS];
    a.copy_from_slice(h);
    histogram_mass_above(&a, 0.8)
}

fn criterion_8(suite: &mut Suite) -> Verdict {
    let (a_veg, a_mass, a_veg_mass) = {
        let r = &suite.run(3.0, FlightMode::Adaptive, 1).report;
        (r.region_ssim["vegetated"], mass_above(&r.ssim_histogram), mass_above(&r.region_ssim_histograms["vegetated"]))
    };
    let (b_veg, b_mass, b_veg_mass) = {
        let r = &suite.run(3.0, FlightMode::Baseline, 1).report;
        (r.region_ssim["vegetated"], mass_above(&r.ssim_histogram), mass_above(&r.region_ssim_histograms["vegetated"]))
    };
    Verdict::new(
        a_veg >= b_veg && a_mass >= b_mass,
        format!(
            "vegetated mean SSIM {a_veg:.4} vs {b_veg:.4}; mass above 0.8 {a_mass:.4} vs {b_mass:.4} (vegetated only {a_veg_mass:.4} vs {b_veg_mass:.4})"
        ),
    )
}

fn criterion_9(suite: &mut Suite) -> Verdict {
    let cfg = base_config(2.0, FlightMode::Baseline, 1);
    let world = suite.world(1).clone();
    let flown = artifacts::fly(&cfg, &world).unwrap();
    let kernels: BTreeSet<usize> = flown.log.captures.iter().map(|c| c.kernel).collect();
    let mosaic = mission_mosaic(&world, &flown.camera, &flown.log).unwrap();
    let mut mismatched = 0usize;
    for (x, y, m) in mosaic.image.enumerate_pixels() {
        if mosaic.is_observed(x, y) && m != world.orthophoto.get_pixel(x, y) {
            mismatched += 1;
        }
    }
    let observed = mosaic.observed_count();
    let planned = planned_coverage(&mosaic, &world.frame, &flown.plan.grid);
    Verdict::new(
        mismatched == 0 && observed > 0 && planned >= 0.99,
        format!("kernels {kernels:?}; {mismatched} of {observed} observed pixels differ; planned-region coverage {planned:.4}"),
    )
}

fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json" | "toml" | "txt")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_10(suite: &mut Suite) -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = base_config(5.0, FlightMode::Adaptive, 2);
    let world = suite.world(2).clone();
    let first = tmp.path().join("first");
    write_run(&first, &artifacts::fly(&cfg, &world).unwrap()).unwrap();
    evaluate_dir(&first).unwrap();
    let snapshot = RunConfig::load(first.join(artifacts::CONFIG_FILE)).unwrap();
    let second = tmp.path().join("second");
    let rebuilt = snapshot.build_world().unwrap();
    write_run(&second, &artifacts::fly(&snapshot, &rebuilt).unwrap()).unwrap();
    evaluate_dir(&second).unwrap();
    let (a, b) = (artifact_bytes(&first), artifact_bytes(&second));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Verdict::new(
        differing.is_empty() && a.len() == b.len() && a.len() >= 7,
        format!("{} text artifacts compared ({}); differing: {differing:?}", a.len(), a.keys().cloned().collect::<Vec<_>>().join(", ")),
    )
}

fn report(label: &str, v: &Verdict, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = v.pass && in_time;
    let limit_txt = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    println!(
        "{} criterion {label}: {} [{:.2?}{limit_txt}{}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed,
        if in_time { "" } else { ", too slow" }
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let mut suite = Suite::default();
    let mut failed = Vec::new();
    let mut check = |label: &str, v: Verdict, d: Duration, limit: Option<Duration>| {
        if !report(label, &v, d, limit) {
            failed.push(label.to_string());
        }
    };

    let (v, d) = timed(criterion_1);
    check("1 controller golden table", v, d, Some(secs(1)));
    let (v, d) = timed(criterion_2);
    check("2 controller invariants", v, d, Some(secs(1)));
    let (v, d) = timed(criterion_4);
    check("4 STC completeness", v, d, Some(secs(10)));
    let (v, d) = timed(criterion_5);
    check("5 blur degradation", v, d, Some(secs(5)));
    let (v, d) = timed(|| criterion_6(&mut suite));
    check("6 differential speed", v, d, Some(secs(120)));
    let ((quality, time), d) = timed(|| criterion_7(&mut suite));
    let both = Verdict::new(quality.pass && time.pass, "quality and flight-time sub-claims");
    check("7a A/B quality", quality, d, None);
    check("7b A/B flight time", time, d, None);
    check("7 A/B claim", both, d, Some(secs(600)));
    let (v, d) = timed(|| criterion_8(&mut suite));
    check("8 SSIM", v, d, Some(secs(180)));
    let (v, d) = timed(|| criterion_3(&suite));
    check("3 speed-band safety", v, d, None);
    let (v, d) = timed(|| criterion_9(&mut suite));
    check("9 convergence to ideal", v, d, Some(secs(120)));
    let (v, d) = timed(|| criterion_10(&mut suite));
    check("10 determinism", v, d, None);

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
