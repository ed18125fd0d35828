//! Speed adaptation from segmentation feedback.
//!
//! Each frame yields a coverage ratio `cr` (vegetation share of the pixels)
//! and a confidence level `cl` (mean max-probability over vegetation
//! pixels). They are mapped to a relative speed change
//!
//! ```text
//! G(cr, cl) = w1(cl)·g1(cr) + w2(cl)·g2(cl),   w2 = 1 − w1
//! ```
//!
//! where `g1`, `g2` are piecewise-linear and `w1` is a clamped parabola.
//! The speed then moves by `G·q` from its previous value and is clipped to
//! the band `[s̄ − q, s̄ + q]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::SegmentationResult;
use crate::worldgen::{CROP, WEED};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("{what} = {value} outside [0, 1]")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

/// Piecewise-linear function over knots, constant beyond the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for PiecewiseLinear {
    type Error = ControllerError;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(knots)
    }
}

impl From<PiecewiseLinear> for Vec<(f64, f64)> {
    fn from(p: PiecewiseLinear) -> Self {
        p.knots
    }
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, ControllerError> {
        if knots.is_empty() {
            return Err(ControllerError::InvalidConfig("no knots".into()));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(ControllerError::InvalidConfig("knot abscissae must be strictly increasing".into()));
        }
        if knots.iter().any(|&(x, y)| !x.is_finite() || !(-1.0..=1.0).contains(&y)) {
            return Err(ControllerError::InvalidConfig("knot values must lie in [-1, 1]".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        if x >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|&(kx, _)| kx <= x);
        let (x0, y0) = k[i - 1];
        let (x1, y1) = k[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// `w1(cl) = clamp((cl − r1)(r2 − cl) / ((m − r1)(r2 − m)), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parabola {
    pub root_low: f64,
    pub root_high: f64,
    pub peak: f64,
}

impl Parabola {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.root_low < self.peak && self.peak < self.root_high) {
            return Err(ControllerError::InvalidConfig(format!(
                "parabola needs root_low < peak < root_high, got {} / {} / {}",
                self.root_low, self.peak, self.root_high
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let num = (x - self.root_low) * (self.root_high - x);
        let den = (self.peak - self.root_low) * (self.root_high - self.peak);
        (num / den).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub nominal_speed: f64,
    /// Half-width `q` of the speed band.
    pub max_discrepancy: f64,
    pub g1_knots: PiecewiseLinear,
    pub g2_knots: PiecewiseLinear,
    pub w1: Parabola,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            nominal_speed: 4.0,
            max_discrepancy: 1.0,
            g1_knots: PiecewiseLinear::new(vec![(0.0, 1.0), (0.15, 0.0), (0.40, -1.0), (1.0, -1.0)]).unwrap(),
            g2_knots: PiecewiseLinear::new(vec![(0.0, -1.0), (1.0 / 3.0, -1.0), (0.75, 0.0), (1.0, 1.0)]).unwrap(),
            w1: Parabola {
                root_low: 1.0 / 3.0,
                root_high: 1.0,
                peak: 2.0 / 3.0,
            },
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let q = self.max_discrepancy;
        if !(q > 0.0 && q.is_finite()) {
            return Err(ControllerError::InvalidConfig(format!("max_discrepancy must be positive, got {q}")));
        }
        if !(self.nominal_speed - q > 0.0 && self.nominal_speed.is_finite()) {
            return Err(ControllerError::InvalidConfig(format!(
                "nominal_speed - max_discrepancy must be positive, got {} - {q}",
                self.nominal_speed
            )));
        }
        self.w1.validate()
    }

    pub fn min_speed(&self) -> f64 {
        self.nominal_speed - self.max_discrepancy
    }

    pub fn max_speed(&self) -> f64 {
        self.nominal_speed + self.max_discrepancy
    }

    pub fn g1(&self, cr: f64) -> Result<f64, ControllerError> {
        unit_range("cr", cr)?;
        Ok(self.g1_knots.eval(cr))
    }

    pub fn g2(&self, cl: f64) -> Result<f64, ControllerError> {
        unit_range("cl", cl)?;
        Ok(self.g2_knots.eval(cl))
    }

    /// `(w1, w2)` with `w2 = 1 − w1`.
    pub fn weights(&self, cl: f64) -> Result<(f64, f64), ControllerError> {
        unit_range("cl", cl)?;
        let w1 = self.w1.eval(cl);
        Ok((w1, 1.0 - w1))
    }

    pub fn gain(&self, cr: f64, cl: f64) -> Result<Gain, ControllerError> {
        let g1 = self.g1(cr)?;
        let g2 = self.g2(cl)?;
        let (w1, w2) = self.weights(cl)?;
        Ok(Gain {
            g1,
            g2,
            w1,
            w2,
            g: w1 * g1 + w2 * g2,
        })
    }
}

fn unit_range(what: &'static str, v: f64) -> Result<(), ControllerError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ControllerError::OutOfRange { what, value: v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gain {
    pub g1: f64,
    pub g2: f64,
    pub w1: f64,
    pub w2: f64,
    pub g: f64,
}

/// Vegetation share of the class map: `(N_crop + N_weed) / N_total`.
pub fn coverage_ratio(result: &SegmentationResult) -> f64 {
    let veg = result.counts[CROP as usize] + result.counts[WEED as usize];
    veg as f64 / result.pixel_count() as f64
}

/// Mean max-probability over crop and weed pixels; 1.0 when there are none.
pub fn confidence_level(result: &SegmentationResult) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (&c, &p) in result.class_map.iter().zip(&result.prob_map) {
        if c == CROP || c == WEED {
            sum += p as f64;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        (sum / n as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub prev_speed: f64,
    pub step: usize,
}

impl ControllerState {
    pub fn new(config: &ControllerConfig) -> Self {
        Self {
            prev_speed: config.nominal_speed,
            step: 0,
        }
    }
}

/// One logged controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerDecision {
    pub cr: f64,
    pub cl: f64,
    pub gain: Gain,
    pub s_prev: f64,
    /// Unclipped speed.
    pub u: f64,
    pub speed: f64,
}

/// `u = s_prev + G·q`, clipped to the band; advances the state.
pub fn update_speed(state: &mut ControllerState, g: f64, config: &ControllerConfig) -> (f64, f64) {
    let u = state.prev_speed + g * config.max_discrepancy;
    let s = u.clamp(config.min_speed(), config.max_speed());
    state.prev_speed = s;
    state.step += 1;
    (u, s)
}

/// Stateful controller: config plus the previous speed.
#[derive(Debug, Clone)]
pub struct SpeedController {
    pub config: ControllerConfig,
    pub state: ControllerState,
}

impl SpeedController {
    pub fn new(config: ControllerConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        let state = ControllerState::new(&config);
        Ok(Self { config, state })
    }

    pub fn step_metrics(&mut self, cr: f64, cl: f64) -> Result<ControllerDecision, ControllerError> {
        let gain = self.config.gain(cr, cl)?;
        let s_prev = self.state.prev_speed;
        let (u, speed) = update_speed(&mut self.state, gain.g, &self.config);
        Ok(ControllerDecision { cr, cl, gain, s_prev, u, speed })
    }

    pub fn step(&mut self, result: &SegmentationResult) -> Result<ControllerDecision, ControllerError> {
        self.step_metrics(coverage_ratio(result), confidence_level(result))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn result_from(classes: &[u8], probs: &[f32]) -> SegmentationResult {
        let scores = classes
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let mut s = [(1.0 - p) / 2.0; 3];
                s[c as usize] = p;
                s
            })
            .collect();
        SegmentationResult::from_scores(classes.len() as u32, 1, scores).unwrap()
    }

    #[test]
    fn coverage_ratio_cases() {
        assert!(close(coverage_ratio(&result_from(&[1, 2, 0, 0], &[0.9; 4])), 0.5));
        assert!(close(coverage_ratio(&result_from(&[0; 4], &[0.9; 4])), 0.0));
        assert!(close(coverage_ratio(&result_from(&[1; 4], &[0.9; 4])), 1.0));
    }

    #[test]
    fn confidence_level_cases() {
        let r = result_from(&[1, 2, 0, 0], &[0.9, 0.7, 0.4, 0.99]);
        assert!((confidence_level(&r) - 0.8).abs() < 1e-7);
        assert_eq!(confidence_level(&result_from(&[0, 0], &[0.5, 0.5])), 1.0);
        assert!((confidence_level(&result_from(&[1; 3], &[0.5; 3])) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn translation_functions() {
        let c = cfg();
        assert!(close(c.g1(0.05).unwrap(), 2.0 / 3.0));
        assert!(close(c.g1(0.35).unwrap(), -0.8));
        assert!(close(c.g2(0.75).unwrap(), 0.0));
        assert!(close(c.g2(1.0).unwrap(), 1.0));
        assert!((c.g2(0.5).unwrap() - ((0.5 - 1.0 / 3.0) / (0.75 - 1.0 / 3.0) - 1.0)).abs() < 1e-12);
        assert!(close(c.g2(0.5).unwrap(), -0.6));
        assert!(matches!(c.g1(1.2), Err(ControllerError::OutOfRange { what: "cr", .. })));
        assert!(c.g2(-0.1).is_err());
    }

    #[test]
    fn weight_function() {
        let c = cfg();
        assert!(close(c.weights(1.0 / 3.0).unwrap().0, 0.0));
        assert!(close(c.weights(1.0).unwrap().0, 0.0));
        assert!(close(c.weights(2.0 / 3.0).unwrap().0, 1.0));
        assert!(close(c.weights(0.5).unwrap().0, 0.75));
        assert_eq!(c.weights(0.2).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn gain_examples() {
        let c = cfg();
        assert!(close(c.gain(0.0, 1.0).unwrap().g, 1.0));
        assert!((c.gain(0.35, 0.80).unwrap().g + 0.64).abs() < 1e-9);
        assert!((c.gain(0.05, 0.40).unwrap().g + 0.2976).abs() < 1e-9);
        assert!((c.gain(0.05, 0.95).unwrap().g - 0.763).abs() < 1e-9);
    }

    #[test]
    fn speed_update_examples() {
        let c = cfg();
        let mut st = ControllerState { prev_speed: 4.0, step: 0 };
        assert_eq!(update_speed(&mut st, 1.0, &c), (5.0, 5.0));
        assert_eq!(update_speed(&mut st, 1.0, &c), (6.0, 5.0));
        let (_, s) = update_speed(&mut st, -0.64, &c);
        assert!(close(s, 4.36));
        assert_eq!(st.step, 3);
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig { max_discrepancy: 0.0, ..cfg() }.validate().is_err());
        assert!(ControllerConfig { nominal_speed: 1.0, max_discrepancy: 1.0, ..cfg() }.validate().is_err());
        assert!(PiecewiseLinear::new(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(PiecewiseLinear::new(vec![(0.0, 1.5)]).is_err());
        let bad_parabola = Parabola { root_low: 0.5, root_high: 1.0, peak: 0.4 };
        assert!(ControllerConfig { w1: bad_parabola, ..cfg() }.validate().is_err());
    }

    #[test]
    fn initial_state_is_nominal() {
        let ctl = SpeedController::new(cfg()).unwrap();
        assert_eq!(ctl.state.prev_speed, 4.0);
    }

    proptest! {
        #[test]
        fn weights_partition_unity(cl in 0.0f64..=1.0) {
            let (w1, w2) = cfg().weights(cl).unwrap();
            prop_assert!((0.0..=1.0).contains(&w1) && (0.0..=1.0).contains(&w2));
            prop_assert!((w1 + w2 - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gain_bounded_and_monotone_in_cr(cr in 0.0f64..=1.0, dcr in 0.0f64..=1.0, cl in 0.0f64..=1.0) {
            let c = cfg();
            let g = c.gain(cr, cl).unwrap().g;
            prop_assert!(g.abs() <= 1.0 + 1e-12);
            let cr2 = (cr + dcr).min(1.0);
            prop_assert!(c.gain(cr2, cl).unwrap().g <= g + 1e-12);
        }

        #[test]
        fn speed_band_and_step_bound(
            start in 3.0f64..=5.0,
            gs in proptest::collection::vec(-1.0f64..=1.0, 1..50),
        ) {
            let c = cfg();
            let mut st = ControllerState { prev_speed: start, step: 0 };
            for g in gs {
                let prev = st.prev_speed;
                let (_, s) = update_speed(&mut st, g, &c);
                prop_assert!(s >= c.min_speed() && s <= c.max_speed());
                prop_assert!((s - prev).abs() <= c.max_discrepancy + 1e-12);
            }
        }

        #[test]
        fn constant_input_converges_monotonically(cr in 0.0f64..=1.0, cl in 0.0f64..=1.0, start in 3.0f64..=5.0) {
            let mut ctl = SpeedController::new(cfg()).unwrap();
            ctl.state.prev_speed = start;
            let mut speeds = vec![start];
            for _ in 0..20 {
                speeds.push(ctl.step_metrics(cr, cl).unwrap().speed);
            }
            let g = cfg().gain(cr, cl).unwrap().g;
            for w in speeds.windows(2) {
                if g >= 0.0 {
                    prop_assert!(w[1] >= w[0]);
                } else {
                    prop_assert!(w[1] <= w[0]);
                }
            }
            // a nonzero gain reaches a band edge; zero gain holds
            let last = *speeds.last().unwrap();
            if g.abs() * 20.0 >= 2.0 {
                prop_assert!(last == 5.0 || last == 3.0);
            }
        }
    }
}
