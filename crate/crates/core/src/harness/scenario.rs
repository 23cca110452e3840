//! Scenario files: lasers, wavemeter, channels and experiment settings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::laser::LaserConfig;
use crate::servo::{GridAxis, SearchSpace, ServoConfig, ServoError};
use crate::wavemeter::{
    schedule, TemperatureTrace, WavemeterError, WavemeterModel, MAX_CHANNELS, RB85_D1_CROSSOVER_HZ,
};

use super::HarnessError;

/// One wavemeter input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Index into `lasers`.
    pub laser: usize,
    #[serde(default)]
    pub locked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servo: Option<ServoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllanExperiment {
    /// Gains for the single-channel variant; the switch-mode variant uses the
    /// scenario's own channel servos.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_channel_servo: Option<ServoConfig>,
    /// Tau points per decade.
    pub per_decade: usize,
    /// Largest tau, s; defaults to a third of the run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tau_s: Option<f64>,
    pub overlapping: bool,
}

impl Default for AllanExperiment {
    fn default() -> Self {
        Self {
            single_channel_servo: None,
            per_decade: 5,
            max_tau_s: None,
            overlapping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeatExperiment {
    /// Setpoint of the second locked channel relative to the first, Hz.
    pub offsets_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    /// Recorded span, s.
    pub duration_s: f64,
    /// Lock acquisition before recording starts, s.
    pub settle_s: f64,
    pub segment_length: usize,
    /// Fit window around the expected beat, ± Hz.
    pub fit_half_span_hz: f64,
}

impl Default for BeatExperiment {
    fn default() -> Self {
        Self {
            offsets_hz: vec![20e6, 60e6, 100e6],
            sample_rate_hz: 250e6,
            duration_s: 1.0,
            settle_s: 0.5,
            segment_length: 1 << 16,
            fit_half_span_hz: 8e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftExperiment {
    pub duration_s: f64,
    pub interval_s: f64,
    pub reference_hz: f64,
    /// Laboratory temperature; defaults to a 0.86 °C rise over the run with a
    /// 0.1 °C daily ripple, starting at the wavemeter reference temperature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<TemperatureTrace>,
}

impl Default for DriftExperiment {
    fn default() -> Self {
        Self {
            duration_s: 36.0 * 3600.0,
            interval_s: 60.0,
            reference_hz: RB85_D1_CROSSOVER_HZ,
            temperature: None,
        }
    }
}

impl DriftExperiment {
    pub fn temperature_or_default(&self, model: &WavemeterModel) -> TemperatureTrace {
        self.temperature.clone().unwrap_or_else(|| {
            TemperatureTrace::ramp_with_ripple(
                model.reference_temperature_c,
                0.86,
                0.1,
                24.0 * 3600.0,
                self.duration_s,
                600.0_f64.min(self.duration_s),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneExperiment {
    /// Channel whose gains are tuned; it runs alone in single-channel mode.
    pub channel: usize,
    pub duration_s: f64,
    /// Leading fraction of readings excluded from the objective.
    pub discard_fraction: f64,
    pub space: SearchSpace,
}

impl Default for TuneExperiment {
    fn default() -> Self {
        Self {
            channel: 0,
            duration_s: 40.0,
            discard_fraction: 0.2,
            space: SearchSpace {
                p: GridAxis::LogRange {
                    min: 1e-10,
                    max: 1e-8,
                    count: 5,
                },
                i: GridAxis::LogRange {
                    min: 3e-7,
                    max: 3e-6,
                    count: 5,
                },
                t_int: GridAxis::Values(vec![3600.0]),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiments {
    pub allan: AllanExperiment,
    pub beat: BeatExperiment,
    pub drift: DriftExperiment,
    pub tune: TuneExperiment,
}

fn default_sample_rate() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lasers: Vec<LaserConfig>,
    #[serde(default)]
    pub wavemeter: WavemeterModel,
    pub channels: Vec<ChannelConfig>,
    /// Laboratory temperature during closed-loop runs; constant at the
    /// wavemeter reference temperature when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<TemperatureTrace>,
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub experiments: Experiments,
}

/// A validation failure at a JSON field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn integral_ticks(ns: u64, sample_rate: f64) -> bool {
    let ticks = ns as f64 * sample_rate / 1e9;
    (ticks - ticks.round()).abs() <= 1e-9 * ticks.max(1.0) && ticks.round() >= 1.0
}

/// Path suffix and message for a servo validation failure.
fn servo_issue(e: ServoError) -> (String, String) {
    match e {
        ServoError::InvalidConfig { field, reason } => (format!(".{field}"), reason),
        other => (String::new(), other.to_string()),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// All problems found, each tagged with its field path.
    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Issue { path, message });

        if self.lasers.is_empty() {
            push("lasers".into(), "at least one laser is required".into());
        }
        for (k, laser) in self.lasers.iter().enumerate() {
            if let Err(e) = laser.validate() {
                push(format!("lasers[{k}]"), e.to_string());
            } else if !WavemeterModel::in_band(laser.nominal_hz) {
                push(
                    format!("lasers[{k}].nominal_hz"),
                    "outside the 330-1180 nm wavemeter band".into(),
                );
            }
        }
        if let Err(e) = self.wavemeter.validate() {
            match e {
                WavemeterError::InvalidParameter { field, reason } => {
                    push(format!("wavemeter.{field}"), reason)
                }
                other => push("wavemeter".into(), other.to_string()),
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            push("duration_s".into(), "must be positive".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            push("sample_rate_hz".into(), "must be positive".into());
        }
        let n = self.channels.len();
        if n == 0 || n > MAX_CHANNELS {
            push(
                "channels".into(),
                format!("{n} channels, need 1 to {MAX_CHANNELS}"),
            );
        }
        for (c, ch) in self.channels.iter().enumerate() {
            let laser = self.lasers.get(ch.laser);
            if laser.is_none() {
                push(
                    format!("channels[{c}].laser"),
                    format!("no laser with index {}", ch.laser),
                );
            }
            match (&ch.servo, ch.locked) {
                (None, true) => push(
                    format!("channels[{c}].servo"),
                    "locked channel needs a servo".into(),
                ),
                (Some(servo), _) => {
                    if let Err(e) = servo.validate() {
                        let (field, message) = servo_issue(e);
                        push(format!("channels[{c}].servo{field}"), message);
                    }
                    if let Some(l) = laser {
                        if servo.setpoint_hz.abs() > l.tuning_range_hz() {
                            push(
                                format!("channels[{c}].servo.setpoint_hz"),
                                "outside the laser tuning range".into(),
                            );
                        }
                    }
                }
                (None, false) => {}
            }
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.locked
                && self.channels[..c]
                    .iter()
                    .any(|o| o.locked && o.laser == ch.laser)
            {
                push(
                    format!("channels[{c}].laser"),
                    "laser already driven by another locked channel".into(),
                );
            }
        }
        if (1..=MAX_CHANNELS).contains(&n) && self.wavemeter.validate().is_ok() {
            if let Ok(s) = schedule(n, &self.wavemeter) {
                if self.sample_rate_hz > 0.0 {
                    for (what, ns) in [
                        ("slot", s.slot_ns),
                        ("detection", s.detection_ns),
                        ("update delay", s.update_delay_ns),
                    ] {
                        if ns > 0 && !integral_ticks(ns, self.sample_rate_hz) {
                            push(
                                "sample_rate_hz".into(),
                                format!("{what} time of {ns} ns is not a whole number of samples"),
                            );
                        }
                    }
                }
                if s.detection_ns > s.slot_ns {
                    push(
                        "wavemeter.tau_det_s".into(),
                        "exceeds the measurement slot".into(),
                    );
                }
            }
        }
        if let Some(t) = &self.temperature {
            if !t.covers(0.0, self.duration_s) {
                push(
                    "temperature".into(),
                    format!("trace must cover [0, {}] s", self.duration_s),
                );
            }
        }

        let ex = &self.experiments;
        if let Some(servo) = &ex.allan.single_channel_servo {
            if let Err(e) = servo.validate() {
                let (field, message) = servo_issue(e);
                push(
                    format!("experiments.allan.single_channel_servo{field}"),
                    message,
                );
            }
        }
        if ex.allan.per_decade == 0 {
            push(
                "experiments.allan.per_decade".into(),
                "must be at least 1".into(),
            );
        }
        let b = &ex.beat;
        if !(b.sample_rate_hz > 0.0) {
            push(
                "experiments.beat.sample_rate_hz".into(),
                "must be positive".into(),
            );
        }
        if !(b.duration_s > 0.0) {
            push(
                "experiments.beat.duration_s".into(),
                "must be positive".into(),
            );
        }
        if !(b.settle_s >= 0.0) {
            push(
                "experiments.beat.settle_s".into(),
                "must be non-negative".into(),
            );
        }
        if !(b.segment_length >= 2 && b.segment_length.is_power_of_two()) {
            push(
                "experiments.beat.segment_length".into(),
                "must be a power of two".into(),
            );
        }
        if !(b.fit_half_span_hz > 0.0) {
            push(
                "experiments.beat.fit_half_span_hz".into(),
                "must be positive".into(),
            );
        }
        let d = &ex.drift;
        if !(d.duration_s > 0.0) {
            push(
                "experiments.drift.duration_s".into(),
                "must be positive".into(),
            );
        }
        if !(d.interval_s > 0.0) {
            push(
                "experiments.drift.interval_s".into(),
                "must be positive".into(),
            );
        }
        if !WavemeterModel::in_band(d.reference_hz) {
            push(
                "experiments.drift.reference_hz".into(),
                "outside the wavemeter band".into(),
            );
        }
        if let Some(t) = &d.temperature {
            if !t.covers(0.0, d.duration_s) {
                push(
                    "experiments.drift.temperature".into(),
                    format!("trace must cover [0, {}] s", d.duration_s),
                );
            }
        }
        let t = &ex.tune;
        if t.channel >= n {
            push("experiments.tune.channel".into(), "no such channel".into());
        }
        if !(t.duration_s > 0.0) {
            push(
                "experiments.tune.duration_s".into(),
                "must be positive".into(),
            );
        }
        if !(0.0..1.0).contains(&t.discard_fraction) {
            push(
                "experiments.tune.discard_fraction".into(),
                "must lie in [0, 1)".into(),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(issues))
        }
    }

    /// Two locked lasers in switch mode with the default synthetic plant.
    pub fn default_pair() -> Self {
        let laser = |name: &str| LaserConfig {
            name: name.into(),
            ..LaserConfig::default_ecdl(crate::laser::RB_D2_HZ)
        };
        let servo = ServoConfig {
            p: 3e-9,
            i: 1.9e-7,
            t_int_s: 3600.0,
            setpoint_hz: 0.0,
            output_clamp_v: 10.0,
        };
        Scenario {
            lasers: vec![laser("cooling"), laser("repump")],
            wavemeter: WavemeterModel::default(),
            channels: vec![
                ChannelConfig {
                    laser: 0,
                    locked: true,
                    servo: Some(servo.clone()),
                },
                ChannelConfig {
                    laser: 1,
                    locked: true,
                    servo: Some(servo),
                },
            ],
            temperature: None,
            duration_s: 60.0,
            sample_rate_hz: default_sample_rate(),
            seed: 1,
            experiments: Experiments {
                allan: AllanExperiment {
                    single_channel_servo: Some(ServoConfig {
                        p: 2e-9,
                        i: 2.5e-6,
                        t_int_s: 3600.0,
                        setpoint_hz: 0.0,
                        output_clamp_v: 10.0,
                    }),
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_pair_is_valid_and_round_trips() {
        let s = Scenario::default_pair();
        assert_eq!(s.issues(), vec![]);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn minimal_file_with_comments() {
        let text = r#"{
            "_comment": "one free-running laser",
            "lasers": [{"nominal_hz": 384.2281e12, "noise": {"h0": 1e5}}],
            "channels": [{"laser": 0, "_comment": "unlocked"}],
            "duration_s": 1.0
        }"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.sample_rate_hz, 1e6);
        assert_eq!(s.lasers[0].noise.h_rw, 0.0);
        assert_eq!(s.wavemeter, WavemeterModel::default());
        assert!(!s.channels[0].locked);
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut s = Scenario::default_pair();
        s.channels[1].laser = 7;
        s.channels[0].servo.as_mut().unwrap().t_int_s = -1.0;
        s.duration_s = 0.0;
        s.experiments.beat.segment_length = 1000;
        let paths: Vec<String> = s.issues().into_iter().map(|i| i.path).collect();
        assert!(paths.contains(&"channels[1].laser".to_string()));
        assert!(paths.contains(&"channels[0].servo.t_int_s".to_string()));
        assert!(paths.contains(&"duration_s".to_string()));
        assert!(paths.contains(&"experiments.beat.segment_length".to_string()));
    }

    #[test]
    fn too_many_channels() {
        let mut s = Scenario::default_pair();
        s.channels = (0..9)
            .map(|_| ChannelConfig {
                laser: 0,
                locked: false,
                servo: None,
            })
            .collect();
        assert!(s.issues().iter().any(|i| i.path == "channels"));
    }

    #[test]
    fn locked_channel_needs_servo_and_unique_laser() {
        let mut s = Scenario::default_pair();
        s.channels[1].laser = 0;
        assert!(s.issues().iter().any(|i| i.path == "channels[1].laser"));
        s.channels[1].servo = None;
        assert!(s.issues().iter().any(|i| i.path == "channels[1].servo"));
    }

    #[test]
    fn sample_rate_must_resolve_timing() {
        let mut s = Scenario::default_pair();
        s.sample_rate_hz = 300.0;
        assert!(s.issues().iter().any(|i| i.path == "sample_rate_hz"));
        s.sample_rate_hz = 10e3;
        assert_eq!(s.issues(), vec![]);
    }

    #[test]
    fn parse_errors_are_not_validation_errors() {
        assert!(matches!(
            Scenario::from_json("{"),
            Err(HarnessError::Parse(_))
        ));
        assert!(matches!(
            Scenario::from_json(r#"{"lasers": [], "channels": [], "duration_s": 1}"#),
            Err(HarnessError::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn json_round_trip(
            seed in any::<u64>(),
            duration in 0.1f64..1e4,
            h0 in 0.0f64..1e6,
            p in -1e-6f64..1e-6,
            setpoint in -1e8f64..1e8,
            locked in any::<bool>(),
        ) {
            let mut s = Scenario::default_pair();
            s.seed = seed;
            s.duration_s = duration;
            s.lasers[1].noise.h0 = h0;
            s.channels[0].locked = locked;
            let servo = s.channels[0].servo.as_mut().unwrap();
            servo.p = p;
            servo.setpoint_hz = setpoint;
            let once: Scenario = serde_json::from_str(&s.to_json()).unwrap();
            let twice: Scenario = serde_json::from_str(&once.to_json()).unwrap();
            prop_assert_eq!(&once, &s);
            prop_assert_eq!(once, twice);
        }
    }
}
