//! The four reproducible experiments: lock stability (Allan), beat-note
//! lineshapes, wavemeter drift and gain tuning.

use crate::analysis::allan::{allan_deviation, log_spaced_taus, AllanOptions, AllanResult};
use crate::analysis::beat::{required_sample_rate, BeatAccumulator, Spectrum};
use crate::analysis::drift::{drift_correlation, DriftReport};
use crate::analysis::fit::{voigt_fit, FitOptions, VoigtFit};
use crate::seed::{derive_seed, rng_from_seed};
use crate::servo::{tune_gains, LoopEvaluator, LoopOutcome, ServoConfig, ServoError, TuneReport};
use crate::wavemeter::{drift_trace, schedule, FrequencyLog, TemperatureTrace};

use super::engine::{run, run_with_observer};
use super::{ChannelConfig, HarnessError, Scenario};

/// Sub-seed labels.
const BEAT_STREAM: u64 = 0xBEA7_0000;
const DRIFT_STREAM: u64 = 0xD81F_7000;

pub const ALLAN_VARIANTS: [&str; 3] = ["unlocked", "locked_1ch", "locked_2ch"];

#[derive(Debug, Clone, PartialEq)]
pub struct AllanVariant {
    pub name: &'static str,
    pub period_s: f64,
    pub log: FrequencyLog,
    /// On taus that are multiples of this variant's own period.
    pub result: AllanResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllanReport {
    pub variants: Vec<AllanVariant>,
    /// Taus shared by all variants (multiples of every period).
    pub common_taus: Vec<f64>,
    /// σ_y per variant on `common_taus`, in `ALLAN_VARIANTS` order.
    pub overlay: Vec<[f64; 3]>,
    pub duration_s: f64,
}

impl AllanReport {
    pub fn variant(&self, name: &str) -> Option<&AllanVariant> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// `tau_s,unlocked,locked_1ch,locked_2ch` rows.
    pub fn overlay_csv(&self) -> String {
        let mut s = format!("tau_s,{}\n", ALLAN_VARIANTS.join(","));
        for (tau, row) in self.common_taus.iter().zip(&self.overlay) {
            s.push_str(&format!("{tau},{},{},{}\n", row[0], row[1], row[2]));
        }
        s
    }

    pub fn overlay_at(&self, tau: f64) -> Option<[f64; 3]> {
        self.common_taus
            .iter()
            .position(|t| (t - tau).abs() <= 1e-9 * tau)
            .map(|k| self.overlay[k])
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn allan_variants(s: &Scenario) -> Result<Vec<(&'static str, Scenario)>, HarnessError> {
    if s.channels.len() < 2 {
        return Err(HarnessError::invalid(
            "channels",
            "the switch-mode variant needs two channels",
        ));
    }
    let first = &s.channels[0];
    let single_servo = s
        .experiments
        .allan
        .single_channel_servo
        .clone()
        .or_else(|| first.servo.clone())
        .ok_or_else(|| HarnessError::invalid("channels[0].servo", "needed to lock channel 0"))?;
    let second = s.channels[1].clone();
    if second.servo.is_none() {
        return Err(HarnessError::invalid(
            "channels[1].servo",
            "needed to lock channel 1",
        ));
    }
    let with = |channels: Vec<ChannelConfig>| Scenario {
        channels,
        ..s.clone()
    };
    Ok(vec![
        (
            ALLAN_VARIANTS[0],
            with(vec![ChannelConfig {
                locked: false,
                ..first.clone()
            }]),
        ),
        (
            ALLAN_VARIANTS[1],
            with(vec![ChannelConfig {
                laser: first.laser,
                locked: true,
                servo: Some(single_servo),
            }]),
        ),
        (
            ALLAN_VARIANTS[2],
            with(vec![
                ChannelConfig {
                    locked: true,
                    ..first.clone()
                },
                ChannelConfig {
                    locked: true,
                    ..second
                },
            ]),
        ),
    ])
}

/// Free-running, single-channel and switch-mode runs of the first channel's
/// laser, all with the same laser noise.
pub fn experiment_allan(s: &Scenario) -> Result<AllanReport, HarnessError> {
    s.validate()?;
    let variants = allan_variants(s)?;
    for (_, v) in &variants {
        v.validate()?;
    }
    let cfg = &s.experiments.allan;
    let opts = AllanOptions {
        overlapping: cfg.overlapping,
    };
    let max_tau = cfg
        .max_tau_s
        .unwrap_or(s.duration_s / 3.0)
        .min(s.duration_s / 3.0);
    let periods_ns: Vec<u64> = variants
        .iter()
        .map(|(_, v)| schedule(v.channels.len(), &v.wavemeter).map(|x| x.period_ns()))
        .collect::<Result<_, _>>()?;
    let lcm_ns = periods_ns.iter().fold(1u64, |a, &b| a / gcd(a, b) * b);
    let common_taus = log_spaced_taus(lcm_ns as f64 / 1e9, max_tau, cfg.per_decade);

    let runs: Vec<Result<FrequencyLog, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|(_, v)| scope.spawn(move || run(v).map(|out| out.frequency[0].clone())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant worker panicked"))
            .collect()
    });

    let mut out = Vec::new();
    let mut common = Vec::new();
    for (((name, v), log), period_ns) in variants.iter().zip(runs).zip(&periods_ns) {
        let log = log?;
        let nominal = v.lasers[v.channels[0].laser].nominal_hz;
        let period_s = *period_ns as f64 / 1e9;
        let taus = log_spaced_taus(period_s, max_tau, cfg.per_decade);
        let result = allan_deviation(&log, &taus, nominal, opts)?;
        common.push(allan_deviation(&log, &common_taus, nominal, opts)?);
        out.push(AllanVariant {
            name,
            period_s,
            log,
            result,
        });
    }
    let overlay = (0..common_taus.len())
        .map(|k| {
            [
                common[0].points[k].sigma_y,
                common[1].points[k].sigma_y,
                common[2].points[k].sigma_y,
            ]
        })
        .collect();
    Ok(AllanReport {
        variants: out,
        common_taus,
        overlay,
        duration_s: s.duration_s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatRun {
    pub offset_hz: f64,
    pub spectrum: Spectrum,
    pub fit: VoigtFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatReport {
    pub runs: Vec<BeatRun>,
}

impl BeatReport {
    pub fn fits_text(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            s.push_str(&format!("[offset_hz = {}]\n{}\n\n", r.offset_hz, r.fit));
        }
        s
    }
}

/// Estimated Lorentzian FWHM of the beat between two lasers, Hz.
fn white_fm_beat_fwhm(s: &Scenario, a: usize, b: usize) -> f64 {
    std::f64::consts::PI * (s.lasers[a].noise.h0 + s.lasers[b].noise.h0)
}

/// Locks the first two channels, separates their setpoints by each offset
/// and fits the recorded beat spectrum.
pub fn experiment_beat(s: &Scenario) -> Result<BeatReport, HarnessError> {
    s.validate()?;
    if s.channels.len() < 2 {
        return Err(HarnessError::invalid("channels", "beat needs two channels"));
    }
    let cfg = &s.experiments.beat;
    let (ch_a, ch_b) = (&s.channels[0], &s.channels[1]);
    if ch_a.laser == ch_b.laser {
        return Err(HarnessError::invalid(
            "channels[1].laser",
            "beat needs two lasers",
        ));
    }
    let (servo_a, servo_b) = match (&ch_a.servo, &ch_b.servo) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => {
            return Err(HarnessError::invalid(
                "channels",
                "beat needs servos on the first two channels",
            ))
        }
    };
    let linewidth = white_fm_beat_fwhm(s, ch_a.laser, ch_b.laser);
    let mut issues = Vec::new();
    for (k, &offset) in cfg.offsets_hz.iter().enumerate() {
        let path = format!("experiments.beat.offsets_hz[{k}]");
        if !(offset.is_finite() && offset.abs() >= 5.0 * linewidth && offset != 0.0) {
            issues.push(super::Issue {
                path: path.clone(),
                message: format!("must be at least 5 linewidths ({} Hz)", 5.0 * linewidth),
            });
        }
        if cfg.sample_rate_hz <= required_sample_rate(offset) {
            issues.push(super::Issue {
                path,
                message: format!(
                    "sample rate {} Hz aliases this beat (need > {} Hz)",
                    cfg.sample_rate_hz,
                    required_sample_rate(offset)
                ),
            });
        }
    }
    if !issues.is_empty() {
        return Err(HarnessError::Validation(issues));
    }

    let one = |k: usize, offset: f64| -> Result<BeatRun, HarnessError> {
        let scenario = Scenario {
            channels: vec![
                ChannelConfig {
                    laser: ch_a.laser,
                    locked: true,
                    servo: Some(servo_a.clone()),
                },
                ChannelConfig {
                    laser: ch_b.laser,
                    locked: true,
                    servo: Some(ServoConfig {
                        setpoint_hz: servo_a.setpoint_hz + offset,
                        ..servo_b.clone()
                    }),
                },
            ],
            sample_rate_hz: cfg.sample_rate_hz,
            duration_s: cfg.settle_s + cfg.duration_s,
            seed: derive_seed(s.seed, BEAT_STREAM + k as u64),
            ..s.clone()
        };
        let nominal_difference = s.lasers[ch_b.laser].nominal_hz - s.lasers[ch_a.laser].nominal_hz;
        let mut acc =
            BeatAccumulator::new(cfg.sample_rate_hz, cfg.segment_length, nominal_difference)?;
        let settle_ticks = (cfg.settle_s * cfg.sample_rate_hz).round() as u64;
        let (la, lb) = (ch_a.laser, ch_b.laser);
        run_with_observer(&scenario, |tick, lasers| {
            if tick >= settle_ticks {
                acc.push(
                    lasers[lb].accumulated_phase(),
                    lasers[la].accumulated_phase(),
                );
            }
        })?;
        let spectrum = acc.finish();
        let centre = offset.abs();
        let lo = (centre - cfg.fit_half_span_hz).max(spectrum.resolution);
        let fit = voigt_fit(
            &spectrum.band(lo, centre + cfg.fit_half_span_hz),
            &FitOptions::default(),
        )?;
        Ok(BeatRun {
            offset_hz: offset,
            spectrum,
            fit,
        })
    };
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .offsets_hz
            .iter()
            .enumerate()
            .map(|(k, &offset)| scope.spawn(move || one(k, offset)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("beat worker panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(BeatReport { runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftOutcome {
    pub log: FrequencyLog,
    pub temperature: TemperatureTrace,
    pub report: DriftReport,
}

/// Readings of a stable reference under the laboratory temperature record.
pub fn experiment_drift(s: &Scenario) -> Result<DriftOutcome, HarnessError> {
    s.validate()?;
    let cfg = &s.experiments.drift;
    let temperature = cfg.temperature_or_default(&s.wavemeter);
    let mut rng = rng_from_seed(derive_seed(s.seed, DRIFT_STREAM));
    let log = drift_trace(
        &s.wavemeter,
        &temperature,
        cfg.reference_hz,
        cfg.duration_s,
        cfg.interval_s,
        &mut rng,
    )?;
    let report = drift_correlation(&log, &temperature)?;
    Ok(DriftOutcome {
        log,
        temperature,
        report,
    })
}

/// Closed-loop runs of one channel in single-channel mode.
struct ScenarioLoop {
    base: Scenario,
    discard_fraction: f64,
}

impl ScenarioLoop {
    fn spread(&self, locked: bool, servo: ServoConfig) -> Result<LoopOutcome, ServoError> {
        let setpoint = servo.setpoint_hz;
        let mut s = self.base.clone();
        s.channels[0].locked = locked;
        s.channels[0].servo = Some(servo);
        let out = run(&s).map_err(|e| ServoError::Evaluation(e.to_string()))?;
        let log = &out.frequency[0];
        let skip = (log.len() as f64 * self.discard_fraction).floor() as usize;
        let kept: Vec<f64> = log.offsets().skip(skip).collect();
        let ms =
            kept.iter().map(|f| (f - setpoint).powi(2)).sum::<f64>() / kept.len().max(1) as f64;
        Ok(LoopOutcome {
            stddev_hz: ms.sqrt(),
            cycles: log.len(),
        })
    }
}

impl LoopEvaluator for ScenarioLoop {
    fn evaluate(&mut self, config: &ServoConfig) -> Result<LoopOutcome, ServoError> {
        self.spread(true, config.clone())
    }

    fn unlocked(&mut self) -> Result<LoopOutcome, ServoError> {
        let servo = self.base.channels[0].servo.clone().expect("set by caller");
        self.spread(false, servo)
    }
}

/// Grid search over the tune experiment's space for the chosen channel.
pub fn experiment_tune(s: &Scenario) -> Result<TuneReport, HarnessError> {
    s.validate()?;
    let cfg = &s.experiments.tune;
    let ch = &s.channels[cfg.channel];
    let template = ch
        .servo
        .clone()
        .or_else(|| s.experiments.allan.single_channel_servo.clone())
        .ok_or_else(|| {
            HarnessError::invalid(
                format!("channels[{}].servo", cfg.channel),
                "tuning needs a servo template",
            )
        })?;
    let base = Scenario {
        channels: vec![ChannelConfig {
            laser: ch.laser,
            locked: true,
            servo: Some(template.clone()),
        }],
        duration_s: cfg.duration_s,
        temperature: None,
        ..s.clone()
    };
    base.validate()?;
    let mut evaluator = ScenarioLoop {
        base,
        discard_fraction: cfg.discard_fraction,
    };
    Ok(tune_gains(&mut evaluator, &template, &cfg.space)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laser::{LaserConfig, RB_D2_HZ};
    use crate::servo::{GridAxis, SearchSpace, MIN_TUNING_CYCLES};

    fn quick() -> Scenario {
        let mut s = Scenario::default_pair();
        s.sample_rate_hz = 10e3;
        s.duration_s = 30.0;
        s
    }

    #[test]
    fn allan_variants_share_laser_noise() {
        let mut s = quick();
        s.duration_s = 10.0;
        let r = experiment_allan(&s).unwrap();
        assert_eq!(r.variants.len(), 3);
        assert_eq!(r.common_taus[0], 0.208);
        assert_eq!(r.variants[1].period_s, 0.0032);
        assert_eq!(r.variants[2].period_s, 0.026);
        // Servo gains do not touch the free-running curve.
        let mut other = s.clone();
        other.channels[0].servo.as_mut().unwrap().p *= 3.0;
        other
            .experiments
            .allan
            .single_channel_servo
            .as_mut()
            .unwrap()
            .i *= 0.5;
        let r2 = experiment_allan(&other).unwrap();
        assert_eq!(r.variants[0].result, r2.variants[0].result);
        assert!(r
            .overlay_csv()
            .starts_with("tau_s,unlocked,locked_1ch,locked_2ch\n0.208,"));
    }

    #[test]
    fn beat_rejects_offsets_inside_the_line() {
        let mut s = quick();
        s.experiments.beat.offsets_hz = vec![0.0, 20e6, 2e6];
        match experiment_beat(&s) {
            Err(HarnessError::Validation(issues)) => {
                let paths: Vec<_> = issues.iter().map(|i| i.path.as_str()).collect();
                assert!(paths.contains(&"experiments.beat.offsets_hz[0]"));
                assert!(paths.contains(&"experiments.beat.offsets_hz[2]"));
                assert!(!paths.contains(&"experiments.beat.offsets_hz[1]"));
            }
            other => panic!("{other:?}"),
        }
        s.experiments.beat.offsets_hz = vec![100e6];
        s.experiments.beat.sample_rate_hz = 200e6;
        assert!(matches!(
            experiment_beat(&s),
            Err(HarnessError::Validation(_))
        ));
    }

    #[test]
    fn small_beat_run_recovers_the_offset() {
        let mut s = quick();
        for l in &mut s.lasers {
            l.noise.h_rw = 0.0;
            l.noise.h_flicker = 0.0;
        }
        let b = &mut s.experiments.beat;
        b.offsets_hz = vec![8e6];
        b.sample_rate_hz = 40e6;
        b.duration_s = 0.1;
        b.settle_s = 0.5;
        b.segment_length = 1 << 13;
        b.fit_half_span_hz = 5e6;
        let r = experiment_beat(&s).unwrap();
        let fit = &r.runs[0].fit;
        assert!((fit.nu0 - 8e6).abs() < 0.4e6, "nu0 {}", fit.nu0);
        assert!(
            ((fit.gamma - 730e3) / 730e3).abs() < 0.15,
            "gamma {}",
            fit.gamma
        );
    }

    #[test]
    fn drift_experiment_defaults() {
        let r = experiment_drift(&quick()).unwrap();
        assert_eq!(r.log.len(), 2161);
        assert!((r.report.net_drift_hz + 2.0e6).abs() <= 0.4e6);
        assert!(r.report.pearson_r < -0.8);
    }

    #[test]
    fn zero_noise_tuning_reaches_the_quantization_floor() {
        let mut s = quick();
        s.lasers = vec![LaserConfig::noiseless(RB_D2_HZ)];
        s.channels.truncate(1);
        s.channels[0].servo.as_mut().unwrap().setpoint_hz = 10e6;
        s.experiments.tune.duration_s = MIN_TUNING_CYCLES as f64 * 0.0032 + 1.0;
        s.experiments.tune.space = SearchSpace {
            p: GridAxis::Values(vec![1e-9]),
            i: GridAxis::Values(vec![-1.5e-6, 1.5e-6]),
            t_int: GridAxis::Values(vec![3600.0]),
        };
        let report = experiment_tune(&s).unwrap();
        let floor = s.wavemeter.resolution_hz / 12f64.sqrt();
        assert_eq!(report.best.i, 1.5e-6);
        assert!(
            report.best_stddev_hz <= floor + 1.0,
            "{}",
            report.best_stddev_hz
        );
        assert!(!report.rows[0].stable);
    }
}
