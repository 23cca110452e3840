//! Writes experiment results to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::servo::TuneReport;

use super::experiments::{AllanReport, BeatReport, DriftOutcome};
use super::{HarnessError, RunOutput};

fn write(
    dir: &Path,
    name: &str,
    contents: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

/// `frequency_ch{c}.csv` and `voltage_ch{c}.csv` per channel.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for c in 0..out.frequency.len() {
        write(
            dir,
            &format!("frequency_ch{c}.csv"),
            &out.frequency_csv(c),
            &mut written,
        )?;
        write(
            dir,
            &format!("voltage_ch{c}.csv"),
            &out.voltage[c].to_csv(),
            &mut written,
        )?;
    }
    Ok(written)
}

/// `allan_{variant}.csv`, `allan_overlay.csv` and `allan_report.txt`.
pub fn write_allan(dir: &Path, report: &AllanReport) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for v in &report.variants {
        write(
            dir,
            &format!("allan_{}.csv", v.name),
            &v.result.to_csv(),
            &mut written,
        )?;
    }
    write(
        dir,
        "allan_overlay.csv",
        &report.overlay_csv(),
        &mut written,
    )?;
    let mut text = format!(
        "simulated_duration_s = {}\nlargest_tau_s = {}\n",
        report.duration_s,
        report.common_taus.last().copied().unwrap_or(0.0)
    );
    text.push_str(
        "note = desk-scale run; taus beyond a third of the simulated duration are not estimated\n",
    );
    for v in &report.variants {
        text.push_str(&format!("{}.period_s = {}\n", v.name, v.period_s));
        text.push_str(&format!("{}.readings = {}\n", v.name, v.log.len()));
    }
    write(dir, "allan_report.txt", &text, &mut written)?;
    Ok(written)
}

/// `beat_{k}.csv` spectra (in offset order) and `beat_fits.txt`.
pub fn write_beat(dir: &Path, report: &BeatReport) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for (k, r) in report.runs.iter().enumerate() {
        write(
            dir,
            &format!("beat_{k}.csv"),
            &r.spectrum.to_csv(),
            &mut written,
        )?;
    }
    write(dir, "beat_fits.txt", &report.fits_text(), &mut written)?;
    Ok(written)
}

/// `drift_log.csv`, `drift_temperature.csv` and `drift_report.txt`.
pub fn write_drift(dir: &Path, outcome: &DriftOutcome) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    let mut buf = Vec::new();
    outcome.log.write_csv(&mut buf)?;
    write(
        dir,
        "drift_log.csv",
        &String::from_utf8_lossy(&buf),
        &mut written,
    )?;
    let mut temps = String::from("time_s,temperature_c\n");
    for (t, c) in outcome.temperature.points() {
        temps.push_str(&format!("{t},{c}\n"));
    }
    write(dir, "drift_temperature.csv", &temps, &mut written)?;
    write(
        dir,
        "drift_report.txt",
        &format!("{}\n", outcome.report),
        &mut written,
    )?;
    Ok(written)
}

/// `tune.csv` and the winning `tuned_servo.json` fragment.
pub fn write_tune(dir: &Path, report: &TuneReport) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    write(dir, "tune.csv", &report.to_csv(), &mut written)?;
    let json = serde_json::json!({
        "servo": report.best,
        "stddev_hz": report.best_stddev_hz,
        "unlocked_stddev_hz": report.unlocked_stddev_hz,
    });
    let text = serde_json::to_string_pretty(&json).expect("serializable") + "\n";
    write(dir, "tuned_servo.json", &text, &mut written)?;
    Ok(written)
}
