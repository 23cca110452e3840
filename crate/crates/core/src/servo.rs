//! Per-channel PI controller with a sliding-window integrator, and an
//! exhaustive-grid gain tuner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Segments whose start lies this far before the window edge still count,
/// so that timestamps built from integer nanoseconds land on the boundary.
const WINDOW_EPS_S: f64 = 1e-9;

/// Minimum closed-loop measurement cycles per tuning candidate.
pub const MIN_TUNING_CYCLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServoError {
    #[error("invalid servo parameter `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("timestamp {got} s does not follow previous update at {previous} s")]
    NonMonotonicTimestamp { previous: f64, got: f64 },
    #[error("non-finite measurement {0}")]
    NonFiniteMeasurement(f64),
    #[error("search space is empty")]
    EmptySearchSpace,
    #[error("candidate ran {got} measurement cycles, at least {MIN_TUNING_CYCLES} required")]
    TooFewCycles { got: usize },
    #[error("all {candidates} candidates unstable (best {best_stddev_hz} Hz vs unlocked {unlocked_hz} Hz)")]
    TuningFailure {
        candidates: usize,
        best_stddev_hz: f64,
        unlocked_hz: f64,
    },
    #[error("loop evaluation failed: {0}")]
    Evaluation(String),
}

/// Controller parameters.
///
/// Gains are physical (positive for a positive actuator gain); the servo
/// applies the sign for negative feedback itself, so the output is
/// `V = −(P·ε + I·∫ε)` with `ε = measured − setpoint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Proportional gain, V/Hz.
    pub p: f64,
    /// Integral gain, V/(Hz·s).
    pub i: f64,
    /// Integration window, s.
    pub t_int_s: f64,
    /// Target frequency as an offset from the laser's nominal, Hz.
    #[serde(default)]
    pub setpoint_hz: f64,
    /// Output clamp, ±V.
    #[serde(default = "default_clamp")]
    pub output_clamp_v: f64,
}

fn default_clamp() -> f64 {
    10.0
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        let bad = |field: &'static str, reason: &str| {
            Err(ServoError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !self.p.is_finite() {
            return bad("p", "must be finite");
        }
        if !self.i.is_finite() {
            return bad("i", "must be finite");
        }
        if !(self.t_int_s.is_finite() && self.t_int_s > 0.0) {
            return bad("t_int_s", "must be positive");
        }
        if !self.setpoint_hz.is_finite() {
            return bad("setpoint_hz", "must be finite");
        }
        if !(self.output_clamp_v.is_finite() && self.output_clamp_v > 0.0) {
            return bad("output_clamp_v", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    area: f64,
}

/// FIFO of trapezoid segments with an O(1) amortized window sum. Evicted
/// segments drop out of the sum entirely instead of being subtracted.
#[derive(Debug, Clone, Default)]
struct WindowSum {
    /// Oldest segment last; each entry carries the sum of itself and all newer
    /// entries in this stack.
    front: Vec<(Segment, f64)>,
    back: Vec<Segment>,
    back_sum: f64,
}

impl WindowSum {
    fn push(&mut self, s: Segment) {
        self.back_sum += s.area;
        self.back.push(s);
    }

    fn oldest_start(&mut self) -> Option<f64> {
        self.refill();
        self.front.last().map(|(s, _)| s.start)
    }

    fn pop_oldest(&mut self) {
        self.refill();
        self.front.pop();
    }

    fn refill(&mut self) {
        if self.front.is_empty() && !self.back.is_empty() {
            let mut acc = 0.0;
            for s in self.back.drain(..).rev() {
                acc += s.area;
                self.front.push((s, acc));
            }
            self.back_sum = 0.0;
        }
    }

    fn sum(&self) -> f64 {
        self.front.last().map_or(0.0, |(_, c)| *c) + self.back_sum
    }

    fn len(&self) -> usize {
        self.front.len() + self.back.len()
    }

    fn clear(&mut self) {
        self.front.clear();
        self.back.clear();
        self.back_sum = 0.0;
    }
}

/// Controller memory for one channel.
#[derive(Debug, Clone, Default)]
pub struct ServoState {
    last: Option<(f64, f64)>,
    window: WindowSum,
    output: f64,
}

impl ServoState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Most recent (clamped) output voltage.
    pub fn output(&self) -> f64 {
        self.output
    }

    /// Timestamp and error of the latest update.
    pub fn last_error(&self) -> Option<(f64, f64)> {
        self.last
    }

    /// Trapezoid integral of ε over the current window, Hz·s.
    pub fn integral(&self) -> f64 {
        self.window.sum()
    }

    /// Number of trapezoid segments inside the window.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.window.clear();
        self.output = 0.0;
    }

    /// Feeds one reading and returns the new output voltage.
    pub fn update(
        &mut self,
        config: &ServoConfig,
        measured_hz: f64,
        timestamp_s: f64,
    ) -> Result<f64, ServoError> {
        if !measured_hz.is_finite() {
            return Err(ServoError::NonFiniteMeasurement(measured_hz));
        }
        let eps = measured_hz - config.setpoint_hz;
        if let Some((t_prev, e_prev)) = self.last {
            if !(timestamp_s > t_prev) {
                return Err(ServoError::NonMonotonicTimestamp {
                    previous: t_prev,
                    got: timestamp_s,
                });
            }
            self.window.push(Segment {
                start: t_prev,
                area: 0.5 * (e_prev + eps) * (timestamp_s - t_prev),
            });
        }
        self.last = Some((timestamp_s, eps));
        let edge = timestamp_s - config.t_int_s - WINDOW_EPS_S;
        while let Some(start) = self.window.oldest_start() {
            if start >= edge {
                break;
            }
            self.window.pop_oldest();
        }
        let raw = -(config.p * eps + config.i * self.window.sum());
        self.output = raw.clamp(-config.output_clamp_v, config.output_clamp_v);
        Ok(self.output)
    }
}

/// One tuning axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    Values(Vec<f64>),
    /// `count` log-spaced points from `min` to `max` inclusive.
    LogRange {
        min: f64,
        max: f64,
        count: usize,
    },
}

impl GridAxis {
    pub fn points(&self) -> Result<Vec<f64>, ServoError> {
        match self {
            GridAxis::Values(v) => Ok(v.clone()),
            GridAxis::LogRange { min, max, count } => {
                if !(*min > 0.0 && *max >= *min && min.is_finite() && max.is_finite()) {
                    return Err(ServoError::InvalidConfig {
                        field: "log_range",
                        reason: "needs 0 < min <= max".into(),
                    });
                }
                Ok(match count {
                    0 => Vec::new(),
                    1 => vec![*min],
                    n => {
                        let (a, b) = (min.ln(), max.ln());
                        (0..*n)
                            .map(|k| (a + (b - a) * k as f64 / (*n - 1) as f64).exp())
                            .collect()
                    }
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub p: GridAxis,
    pub i: GridAxis,
    pub t_int: GridAxis,
}

impl SearchSpace {
    pub fn single(p: f64, i: f64, t_int_s: f64) -> Self {
        Self {
            p: GridAxis::Values(vec![p]),
            i: GridAxis::Values(vec![i]),
            t_int: GridAxis::Values(vec![t_int_s]),
        }
    }

    /// Candidates in P-major, then I, then T_int order.
    pub fn candidates(&self) -> Result<Vec<(f64, f64, f64)>, ServoError> {
        let (ps, is, ts) = (self.p.points()?, self.i.points()?, self.t_int.points()?);
        let mut out = Vec::with_capacity(ps.len() * is.len() * ts.len());
        for &p in &ps {
            for &i in &is {
                for &t in &ts {
                    out.push((p, i, t));
                }
            }
        }
        Ok(out)
    }
}

/// Result of one closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopOutcome {
    /// Spread of the in-loop readings about the setpoint, Hz.
    pub stddev_hz: f64,
    pub cycles: usize,
}

/// Closed-loop simulation handle used by the tuner.
pub trait LoopEvaluator {
    fn evaluate(&mut self, config: &ServoConfig) -> Result<LoopOutcome, ServoError>;
    /// Same statistic with the servo disabled.
    fn unlocked(&mut self) -> Result<LoopOutcome, ServoError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub p: f64,
    pub i: f64,
    pub t_int_s: f64,
    pub stddev_hz: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub best: ServoConfig,
    pub best_stddev_hz: f64,
    pub unlocked_stddev_hz: f64,
    pub rows: Vec<TuneRow>,
}

impl TuneReport {
    /// `p,i,t_int_s,stddev_hz` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,i,t_int_s,stddev_hz\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.p, r.i, r.t_int_s, r.stddev_hz));
        }
        s
    }
}

/// Evaluates every candidate and returns the one with the smallest in-loop
/// spread. Ties go to the earliest candidate.
pub fn tune_gains<E: LoopEvaluator + ?Sized>(
    evaluator: &mut E,
    template: &ServoConfig,
    space: &SearchSpace,
) -> Result<TuneReport, ServoError> {
    let candidates = space.candidates()?;
    if candidates.is_empty() {
        return Err(ServoError::EmptySearchSpace);
    }
    let baseline = evaluator.unlocked()?;
    if baseline.cycles < MIN_TUNING_CYCLES {
        return Err(ServoError::TooFewCycles {
            got: baseline.cycles,
        });
    }
    let mut rows = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, &(p, i, t_int_s)) in candidates.iter().enumerate() {
        let config = ServoConfig {
            p,
            i,
            t_int_s,
            ..template.clone()
        };
        config.validate()?;
        let outcome = evaluator.evaluate(&config)?;
        if outcome.cycles < MIN_TUNING_CYCLES {
            return Err(ServoError::TooFewCycles {
                got: outcome.cycles,
            });
        }
        let stable = outcome.stddev_hz.is_finite() && outcome.stddev_hz < baseline.stddev_hz;
        if stable && best.is_none_or(|(_, s)| outcome.stddev_hz < s) {
            best = Some((k, outcome.stddev_hz));
        }
        rows.push(TuneRow {
            p,
            i,
            t_int_s,
            stddev_hz: outcome.stddev_hz,
            stable,
        });
    }
    match best {
        Some((k, s)) => {
            let (p, i, t_int_s) = candidates[k];
            Ok(TuneReport {
                best: ServoConfig {
                    p,
                    i,
                    t_int_s,
                    ..template.clone()
                },
                best_stddev_hz: s,
                unlocked_stddev_hz: baseline.stddev_hz,
                rows,
            })
        }
        None => Err(ServoError::TuningFailure {
            candidates: rows.len(),
            best_stddev_hz: rows
                .iter()
                .map(|r| r.stddev_hz)
                .filter(|s| !s.is_nan())
                .fold(f64::INFINITY, f64::min),
            unlocked_hz: baseline.stddev_hz,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(p: f64, i: f64, t_int: f64) -> ServoConfig {
        ServoConfig {
            p,
            i,
            t_int_s: t_int,
            setpoint_hz: 0.0,
            output_clamp_v: 1e6,
        }
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let c = cfg(2.0, 3.0, 1.0);
        let mut s = ServoState::new();
        for k in 0..100 {
            assert_eq!(s.update(&c, 0.0, k as f64 * 0.01).unwrap(), 0.0);
        }
    }

    #[test]
    fn proportional_only() {
        let c = cfg(1e-3, 0.0, 1.0);
        let mut s = ServoState::new();
        assert_eq!(s.update(&c, 250.0, 0.0).unwrap(), -0.25);
        assert_eq!(s.update(&c, -500.0, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn error_is_relative_to_setpoint() {
        let mut c = cfg(1.0, 0.0, 1.0);
        c.setpoint_hz = 20e6;
        let mut s = ServoState::new();
        assert_eq!(s.update(&c, 20e6, 0.0).unwrap(), 0.0);
        assert_eq!(s.update(&c, 20e6 + 3.0, 1.0).unwrap(), -3.0);
    }

    #[test]
    fn constant_error_saturates_window_integral() {
        let (e, i, t_int) = (7.5, 0.2, 0.5);
        let c = cfg(0.0, i, t_int);
        let mut s = ServoState::new();
        let mut v = 0.0;
        for k in 0..2000u64 {
            v = s.update(&c, e, k as f64 * 0.0025).unwrap();
        }
        // 0.5 s is an exact multiple of the 2.5 ms cadence
        let expected = -i * e * t_int;
        assert!(
            ((v - expected) / expected).abs() < 1e-9,
            "{v} vs {expected}"
        );
    }

    #[test]
    fn old_errors_leave_the_window_completely() {
        let c = cfg(0.0, 1.0, 1.0);
        let mut s = ServoState::new();
        for k in 0..100 {
            s.update(&c, 1e9, k as f64 * 0.1).unwrap();
        }
        for k in 100..200 {
            s.update(&c, 0.0, k as f64 * 0.1).unwrap();
        }
        assert_eq!(s.integral(), 0.0);
        assert_eq!(s.output(), 0.0);
    }

    #[test]
    fn rejects_non_monotonic_timestamps() {
        let c = cfg(1.0, 1.0, 1.0);
        let mut s = ServoState::new();
        s.update(&c, 1.0, 1.0).unwrap();
        assert!(matches!(
            s.update(&c, 1.0, 1.0),
            Err(ServoError::NonMonotonicTimestamp { .. })
        ));
        assert!(s.update(&c, 1.0, 0.5).is_err());
    }

    #[test]
    fn output_is_clamped() {
        let mut c = cfg(1.0, 0.0, 1.0);
        c.output_clamp_v = 10.0;
        let mut s = ServoState::new();
        assert_eq!(s.update(&c, -1e6, 0.0).unwrap(), 10.0);
        assert_eq!(s.update(&c, 1e6, 1.0).unwrap(), -10.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 1.0, 0.0).validate().is_err());
        assert!(cfg(f64::NAN, 1.0, 1.0).validate().is_err());
        let mut c = cfg(1.0, 1.0, 1.0);
        c.output_clamp_v = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg(1.0, 1.0, 1.0).validate().is_ok());
    }

    #[test]
    fn log_range_points() {
        let pts = GridAxis::LogRange {
            min: 1e-3,
            max: 1e-1,
            count: 3,
        }
        .points()
        .unwrap();
        assert_eq!(pts.len(), 3);
        assert!((pts[1] - 1e-2).abs() < 1e-15);
        assert!((pts[2] - 1e-1).abs() < 1e-15);
    }

    /// First-order discrete plant: x ← a·x + (1−a)·(disturbance + G·V),
    /// read back through a 1 Hz quantizer.
    struct ToyLoop {
        gain: f64,
        cycles: usize,
        disturbance: Vec<f64>,
    }

    impl ToyLoop {
        fn new(cycles: usize) -> Self {
            let mut d = Vec::with_capacity(cycles);
            let mut x: f64 = 0.0;
            let mut state = 12345u64;
            for _ in 0..cycles {
                state = crate::seed::splitmix64(state);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                x += 10.0 * u;
                d.push(x);
            }
            Self {
                gain: 1.0,
                cycles,
                disturbance: d,
            }
        }

        fn run(&self, c: Option<&ServoConfig>) -> Result<LoopOutcome, ServoError> {
            let mut s = ServoState::new();
            let mut v = 0.0;
            let mut sq = 0.0;
            let skip = self.cycles / 5;
            for (k, d) in self.disturbance.iter().enumerate() {
                let reading = (d + self.gain * v).round();
                if let Some(c) = c {
                    v = s.update(c, reading, k as f64)?;
                }
                if k >= skip {
                    sq += reading * reading;
                }
            }
            let stddev_hz = (sq / (self.cycles - skip) as f64).sqrt();
            Ok(LoopOutcome {
                stddev_hz,
                cycles: self.cycles,
            })
        }
    }

    impl LoopEvaluator for ToyLoop {
        fn evaluate(&mut self, config: &ServoConfig) -> Result<LoopOutcome, ServoError> {
            self.run(Some(config))
        }

        fn unlocked(&mut self) -> Result<LoopOutcome, ServoError> {
            self.run(None)
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let mut toy = ToyLoop::new(MIN_TUNING_CYCLES);
        let template = cfg(0.0, 0.0, 1.0);
        let r = tune_gains(&mut toy, &template, &SearchSpace::single(0.5, 0.2, 1e4)).unwrap();
        assert_eq!((r.best.p, r.best.i, r.best.t_int_s), (0.5, 0.2, 1e4));
        assert_eq!(r.rows.len(), 1);
        assert!(r.best_stddev_hz < r.unlocked_stddev_hz);
    }

    #[test]
    fn correct_sign_beats_wrong_sign() {
        let mut toy = ToyLoop::new(MIN_TUNING_CYCLES);
        let space = SearchSpace {
            p: GridAxis::Values(vec![-0.5, 0.5]),
            i: GridAxis::Values(vec![0.0]),
            t_int: GridAxis::Values(vec![1.0]),
        };
        let r = tune_gains(&mut toy, &cfg(0.0, 0.0, 1.0), &space).unwrap();
        assert_eq!(r.best.p, 0.5);
        assert!(!r.rows[0].stable);
        assert!(r.to_csv().starts_with("p,i,t_int_s,stddev_hz\n-0.5,0,1,"));
    }

    #[test]
    fn tuner_error_paths() {
        let mut toy = ToyLoop::new(MIN_TUNING_CYCLES);
        let template = cfg(0.0, 0.0, 1.0);
        let empty = SearchSpace {
            p: GridAxis::Values(vec![]),
            i: GridAxis::Values(vec![0.0]),
            t_int: GridAxis::Values(vec![1.0]),
        };
        assert_eq!(
            tune_gains(&mut toy, &template, &empty),
            Err(ServoError::EmptySearchSpace)
        );
        let unstable = SearchSpace::single(-0.9, 0.0, 1.0);
        assert!(matches!(
            tune_gains(&mut toy, &template, &unstable),
            Err(ServoError::TuningFailure { .. })
        ));
        let mut short = ToyLoop::new(100);
        assert!(matches!(
            tune_gains(&mut short, &template, &SearchSpace::single(0.5, 0.0, 1.0)),
            Err(ServoError::TooFewCycles { got: 100 })
        ));
    }

    proptest! {
        #[test]
        fn output_is_linear_in_error(
            errs in proptest::collection::vec(-1e6f64..1e6, 2..60),
            k in -20.0f64..20.0,
        ) {
            let c = cfg(1.3e-6, 2.1e-5, 0.05);
            let mut a = ServoState::new();
            let mut b = ServoState::new();
            for (n, e) in errs.iter().enumerate() {
                let t = n as f64 * 0.0032;
                let va = a.update(&c, *e, t).unwrap();
                let vb = b.update(&c, k * e, t).unwrap();
                prop_assert!((vb - k * va).abs() <= 1e-9 * (1.0 + (k * va).abs()));
            }
        }

        #[test]
        fn window_never_exceeds_t_int(
            gaps in proptest::collection::vec(1e-4f64..0.3, 1..200),
            t_int in 0.01f64..2.0,
        ) {
            let c = cfg(0.0, 1.0, t_int);
            let mut s = ServoState::new();
            let mut t = 0.0;
            s.update(&c, 1.0, t).unwrap();
            for g in gaps {
                t += g;
                s.update(&c, 1.0, t).unwrap();
                prop_assert!(s.integral() <= t_int + 2e-9);
            }
        }
    }
}
