//! Integer-tick event loop coupling lasers, wavemeter and servos.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use crate::laser::LaserState;
use crate::seed::{derive_seed, rng_from_seed};
use crate::servo::ServoState;
use crate::wavemeter::{schedule, FrequencyLog, Schedule, TemperatureTrace};

use super::{HarnessError, Scenario};

/// Sub-seed label of the wavemeter readout noise.
const WAVEMETER_STREAM: u64 = u64::MAX;

/// Servo outputs of one channel, stamped when they reach the actuators.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageLog {
    pub channel: usize,
    pub entries: Vec<(f64, f64)>,
}

impl VoltageLog {
    /// `time_s,channel,voltage_v` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,channel,voltage_v\n");
        for (t, v) in &self.entries {
            s.push_str(&format!("{t},{},{v}\n", self.channel));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Wavemeter readings per channel, stamped at the start of each exposure.
    pub frequency: Vec<FrequencyLog>,
    pub voltage: Vec<VoltageLog>,
    pub schedule: Schedule,
}

impl RunOutput {
    pub fn frequency_csv(&self, channel: usize) -> String {
        let mut buf = Vec::new();
        self.frequency[channel]
            .write_csv(&mut buf)
            .expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Runs the closed loop for the scenario duration.
pub fn run(scenario: &Scenario) -> Result<RunOutput, HarnessError> {
    run_with_observer(scenario, |_, _| {})
}

/// Like [`run`], calling `observer(tick, lasers)` after every simulation
/// step; `tick / sample_rate` is the time reached.
///
/// Slot `j` starts at `j·slot` and measures channel `j mod n`. The reading is
/// the mean frequency over the exposure `[start, start + τ_det)`, and the
/// servo output it produces reaches the laser `τ_pro + τ_com` after the
/// exposure ends.
pub fn run_with_observer<F>(scenario: &Scenario, mut observer: F) -> Result<RunOutput, HarnessError>
where
    F: FnMut(u64, &[LaserState]),
{
    scenario.validate()?;
    let fs = scenario.sample_rate_hz;
    let dt = 1.0 / fs;
    let channels = &scenario.channels;
    let n = channels.len();
    let sched = schedule(n, &scenario.wavemeter)?;
    let ticks = |ns: u64| (ns as f64 * fs / 1e9).round() as u64;
    let slot = ticks(sched.slot_ns);
    let det = ticks(sched.detection_ns);
    let delay = ticks(sched.update_delay_ns);
    let total = (scenario.duration_s * fs).round() as u64;

    let mut lasers = scenario
        .lasers
        .iter()
        .enumerate()
        .map(|(k, cfg)| LaserState::new(cfg, fs, derive_seed(scenario.seed, k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut commands = vec![0.0; lasers.len()];
    let mut servos = vec![ServoState::new(); n];
    let mut exposure_start = vec![0.0; n];
    let mut rng = rng_from_seed(derive_seed(scenario.seed, WAVEMETER_STREAM));
    let temps = scenario.temperature.clone().unwrap_or_else(|| {
        TemperatureTrace::constant(
            scenario.wavemeter.reference_temperature_c,
            scenario.duration_s,
        )
    });
    let mut frequency: Vec<FrequencyLog> = channels
        .iter()
        .enumerate()
        .map(|(c, ch)| FrequencyLog::new(c, scenario.lasers[ch.laser].nominal_hz))
        .collect();
    let mut voltage: Vec<VoltageLog> = (0..n)
        .map(|c| VoltageLog {
            channel: c,
            entries: Vec::new(),
        })
        .collect();
    // (due tick, due ns, channel, volts)
    let mut pending: VecDeque<(u64, u64, usize, f64)> = VecDeque::new();

    let mut k = 0u64;
    loop {
        if k >= det && (k - det) % slot == 0 {
            let j = (k - det) / slot;
            let c = (j % n as u64) as usize;
            let ch = &channels[c];
            let laser = &lasers[ch.laser];
            let mean = (laser.accumulated_phase() - exposure_start[c]) / (TAU * det as f64 * dt);
            let start_ns = j * sched.slot_ns;
            let t = start_ns as f64 / 1e9;
            let temperature = temps
                .at(t)
                .ok_or_else(|| HarnessError::Numerical(format!("no temperature at t = {t} s")))?;
            let reading = scenario.wavemeter.measure_offset(
                laser.nominal_frequency(),
                mean,
                temperature,
                &mut rng,
            )?;
            frequency[c].push(t, reading);
            if ch.locked {
                let servo = ch.servo.as_ref().expect("validated");
                let v = servos[c].update(servo, reading, t)?;
                let due_ns = start_ns + sched.detection_ns + sched.update_delay_ns;
                pending.push_back((k + delay, due_ns, c, v));
            }
        }
        while let Some(&(due, due_ns, c, v)) = pending.front() {
            if due != k {
                break;
            }
            pending.pop_front();
            commands[channels[c].laser] = v;
            voltage[c].entries.push((due_ns as f64 / 1e9, v));
        }
        if k % slot == 0 {
            let c = ((k / slot) % n as u64) as usize;
            exposure_start[c] = lasers[channels[c].laser].accumulated_phase();
        }
        if k >= total {
            break;
        }
        let next_slot = (k / slot + 1) * slot;
        let next_det = if k < det {
            det
        } else {
            ((k - det) / slot + 1) * slot + det
        };
        let next_update = pending.front().map_or(u64::MAX, |p| p.0);
        let next = next_slot.min(next_det).min(next_update).min(total);
        for tick in k..next {
            for (laser, &v) in lasers.iter_mut().zip(&commands) {
                laser.step_unchecked(dt, v);
            }
            observer(tick + 1, &lasers);
        }
        k = next;
    }
    Ok(RunOutput {
        frequency,
        voltage,
        schedule: sched,
    })
}
