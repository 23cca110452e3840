//! `wlmlock` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wlmlock::harness::{
    experiment_allan, experiment_beat, experiment_drift, experiment_tune, output, run,
};
use wlmlock::{HarnessError, Scenario};

#[derive(Parser)]
#[command(
    name = "wlmlock",
    version,
    about = "Wavelength-meter laser lock simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write frequency and voltage logs.
    Simulate(Common),
    /// Compare free-running, single-channel and switch-mode stability.
    Allan(Common),
    /// Fit Voigt profiles to beat notes at the configured offsets.
    Beat(Common),
    /// Correlate wavemeter drift with lab temperature.
    Drift(Common),
    /// Grid-search servo gains for one channel.
    Tune(Common),
    /// Print the built-in two-laser scenario as JSON.
    Scenario,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file; the built-in two-laser scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "WLMLOCK_OUT", default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Scenario, HarnessError> {
        let mut scenario = match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                Scenario::from_json(&text)?
            }
            None => Scenario::default_pair(),
        };
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

fn execute(command: &Command) -> Result<(Vec<PathBuf>, String), HarnessError> {
    let common = match command {
        Command::Simulate(c)
        | Command::Allan(c)
        | Command::Beat(c)
        | Command::Drift(c)
        | Command::Tune(c) => c,
        Command::Scenario => return Ok((Vec::new(), Scenario::default_pair().to_json())),
    };
    let s = common.load()?;
    let dir: &Path = &common.out;
    match command {
        Command::Simulate(_) => {
            let out = run(&s)?;
            let summary = out
                .frequency
                .iter()
                .map(|log| format!("channel {}: {} readings", log.channel, log.len()))
                .collect::<Vec<_>>()
                .join("\n");
            Ok((output::write_run(dir, &out)?, summary))
        }
        Command::Allan(_) => {
            let report = experiment_allan(&s)?;
            Ok((output::write_allan(dir, &report)?, report.overlay_csv()))
        }
        Command::Beat(_) => {
            let report = experiment_beat(&s)?;
            Ok((output::write_beat(dir, &report)?, report.fits_text()))
        }
        Command::Drift(_) => {
            let outcome = experiment_drift(&s)?;
            let text = outcome.report.to_string();
            Ok((output::write_drift(dir, &outcome)?, text))
        }
        Command::Tune(_) => {
            let report = experiment_tune(&s)?;
            let text = format!(
                "best p = {}, i = {}, t_int_s = {}: {} Hz rms (unlocked {} Hz)",
                report.best.p,
                report.best.i,
                report.best.t_int_s,
                report.best_stddev_hz,
                report.unlocked_stddev_hz
            );
            Ok((output::write_tune(dir, &report)?, text))
        }
        Command::Scenario => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok((written, summary)) => {
            println!("{}", summary.trim_end());
            for path in written {
                eprintln!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
