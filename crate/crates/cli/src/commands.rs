use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use linmm_core::bus::{write_ber_csv, SweepSpec};
use linmm_core::waveform::fmt_sci;
use linmm_core::{run_transaction, sweep_noise, MacTag, SimRun};
use serde_json::json;

use crate::config::{self, LoadedConfig, RunConfig};
use crate::output::{Manifest, OutDir};

#[derive(Debug, Parser)]
#[command(
    name = "linmm",
    version,
    about = "LIN bus simulator with an OOK-multiplexed CMAC channel"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one transaction and check the verdicts against `expect.*`.
    Simulate(Common),
    /// Emit the datasets behind the response-frame and MAC-propagation plots.
    Figures {
        which: Figure,
        #[command(flatten)]
        common: Common,
    },
    /// MAC bit error rate versus Gaussian noise level.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise levels in volts; overrides `sweep.sigmas`.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        /// Trials per noise level; overrides `sweep.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write bus voltage CSVs.
    #[arg(long)]
    pub export_waveform: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Frame,
    Propagation,
}

/// Exit status of a completed command.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    ExpectationFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::ExpectationFailed => 1,
        }
    }
}

fn load(common: &Common) -> Result<LoadedConfig> {
    match &common.config {
        Some(p) => config::load(p),
        None => Ok(LoadedConfig {
            raw: Vec::new(),
            config: config::parse("")?,
        }),
    }
}

pub fn execute(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Simulate(common) => simulate(&common),
        Command::Figures { which, common } => figures(which, &common),
        Command::Sweep { common, sigmas, trials } => sweep(&common, sigmas, trials),
    }
}

fn run_once(cfg: &RunConfig, seed: u64) -> Result<SimRun> {
    Ok(run_transaction(
        &cfg.network()?,
        &cfg.transaction()?,
        &cfg.scenario,
        &cfg.noise_with_seed(seed),
        &cfg.phy,
    )?)
}

fn write_waveforms(out: &mut OutDir, run: &SimRun) -> Result<()> {
    for (name, w) in &run.segments {
        let file = if run.segments.len() == 1 {
            "waveform.csv".to_string()
        } else {
            format!("waveform_{name}.csv")
        };
        out.write(&file, |f| w.write_csv(f))?;
    }
    Ok(())
}

pub fn simulate(common: &Common) -> Result<Status> {
    let loaded = load(common)?;
    let cfg = &loaded.config;
    let seed = cfg.effective_seed(common.seed);
    let run = run_once(cfg, seed)?;
    let r = &run.report;

    let mut out = OutDir::create(&common.out)?;
    out.write_json("report.json", r)?;
    out.write("trace.csv", |f| r.response.trace.write_csv(f))?;
    if common.export_waveform {
        write_waveforms(&mut out, &run)?;
    }
    out.finish(Manifest::new(
        "simulate",
        &loaded.raw,
        seed,
        json!({ "export_waveform": common.export_waveform }),
    ))?;

    println!(
        "scenario={} checksum={:?} mac={:?} accepted={} collisions={} outcome={:?}",
        r.scenario,
        r.response.checksum,
        r.response.mac,
        r.accepted,
        r.collisions.len(),
        r.outcome
    );
    let misses = cfg.expect.mismatches(r);
    for m in &misses {
        eprintln!("expectation not met: {m}");
    }
    Ok(if misses.is_empty() {
        Status::Ok
    } else {
        Status::ExpectationFailed
    })
}

/// Transmitted MAC bit carried by absolute cell `cell`, if any.
fn mac_bit_at(run: &SimRun, cfg: &RunConfig, cell: usize) -> Option<bool> {
    let tag: MacTag = run.report.transmitted_mac?;
    let tb = run.report.timings.bit_period_s;
    let first = (run.report.timings.response_slot_s / tb).round() as usize + cfg.frame.mac_start_slot;
    cell.checked_sub(first).filter(|&i| i < 64).map(|i| tag.bit(i))
}

pub fn figures(which: Figure, common: &Common) -> Result<Status> {
    let loaded = load(common)?;
    let cfg = &loaded.config;
    let seed = cfg.effective_seed(common.seed);
    let run = run_once(cfg, seed)?;
    let mut out = OutDir::create(&common.out)?;
    match which {
        Figure::Frame => {
            let spb = cfg.phy.samples_per_bit()?;
            let bus = &run.master_bus;
            let carrier = &run.master_carrier;
            out.write("frame.csv", |f| {
                writeln!(f, "time_s,bus_voltage_v,carrier_v,mac_bit")?;
                for (n, v) in bus.samples.iter().enumerate() {
                    let bit = mac_bit_at(&run, cfg, n / spb).map_or(String::new(), |b| u8::from(b).to_string());
                    writeln!(
                        f,
                        "{},{},{},{}",
                        fmt_sci(bus.time_of(n)),
                        fmt_sci(*v),
                        fmt_sci(carrier.samples[n]),
                        bit
                    )?;
                }
                Ok(())
            })?;
        }
        Figure::Propagation => {
            let r = &run.report;
            if r.response.response_start_s.is_none() {
                bail!("no response was received; nothing to plot");
            }
            // Transmit side runs on the slave's own clock: its response slot.
            let start = r.timings.response_slot_s;
            let Some(tag) = r.transmitted_mac else {
                bail!("the responder sends no MAC; nothing to plot");
            };
            let tb = r.timings.bit_period_s;
            out.write("propagation.csv", |f| {
                writeln!(f, "bit_index,tx_bit,tx_time_s,rx_bit,rx_time_s,lag_s,pulse_count")?;
                for rec in &r.response.trace.records {
                    let i = rec.cell_index;
                    let tx_time = start + (cfg.frame.mac_start_slot + i) as f64 * tb;
                    writeln!(
                        f,
                        "{},{},{},{},{},{},{}",
                        i,
                        u8::from(tag.bit(i)),
                        fmt_sci(tx_time),
                        u8::from(rec.mac_bit),
                        fmt_sci(rec.decision_time_s),
                        fmt_sci(rec.decision_time_s - tx_time),
                        rec.pulse_count
                    )?;
                }
                Ok(())
            })?;
        }
    }
    if common.export_waveform {
        write_waveforms(&mut out, &run)?;
    }
    out.finish(Manifest::new(
        &format!(
            "figures {}",
            which.to_possible_value().expect("no skipped variants").get_name()
        ),
        &loaded.raw,
        seed,
        json!({ "export_waveform": common.export_waveform }),
    ))?;
    Ok(Status::Ok)
}

pub fn sweep(common: &Common, sigmas: Option<Vec<f64>>, trials: Option<usize>) -> Result<Status> {
    let loaded = load(common)?;
    let cfg = &loaded.config;
    let seed = cfg.effective_seed(common.seed);
    let sigmas = sigmas.unwrap_or_else(|| cfg.sweep.sigmas.clone());
    let trials = trials.unwrap_or(cfg.sweep.trials);
    if sigmas.is_empty() {
        bail!("no noise levels given");
    }
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let spec = SweepSpec {
        net: cfg.network()?,
        tx: cfg.transaction()?,
        scenario: cfg.scenario.clone(),
        noise: cfg.noise.clone(),
        sigmas: sigmas.clone(),
        trials,
        seed,
    };
    let rows = sweep_noise(&spec, &cfg.phy)?;

    let mut out = OutDir::create(&common.out)?;
    out.write("ber.csv", |f| write_ber_csv(&rows, f))?;
    out.finish(Manifest::new(
        "sweep",
        &loaded.raw,
        seed,
        json!({ "sigmas": sigmas, "trials": trials }),
    ))?;

    println!(
        "{:>10} {:>12} {:>12} {:>12} {:>7}",
        "sigma_v", "mac_ber", "frame_err", "mac_fail", "trials"
    );
    for r in &rows {
        println!(
            "{:>10.4} {:>12.4e} {:>12.4e} {:>12.4e} {:>7}",
            r.sigma_v, r.mac_ber, r.frame_err_rate, r.mac_fail_rate, r.trials
        );
    }
    Ok(Status::Ok)
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 1 unmet expectation, 2 usage or configuration error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// Exposed for tests that drive commands without argument parsing.
pub fn common(config: Option<&Path>, out: &Path, seed: Option<u64>, export_waveform: bool) -> Common {
    Common {
        config: config.map(Path::to_path_buf),
        out: out.to_path_buf(),
        seed,
        export_waveform,
    }
}
