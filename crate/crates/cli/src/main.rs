//! `qspan`: co-propagation link modeling, key-delivery simulation, and the
//! key-delivery HTTP service, from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use qspan_core::linkmodel::{
    calibrate, default_calibration, observations_from_csv, CalibratedModel, FixedParams,
};
use qspan_core::metrics::{ce_metric, PowerMw};
use qspan_core::simkit::{
    bundled_scenario, bundled_scenario_names, emit_report, load_scenario, reproduce_tables,
    run_simulation, Scenario,
};

/// Like `println!`, but a closed stdout (e.g. piping into `head`) ends the
/// process quietly instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

#[derive(Parser)]
#[command(name = "qspan", version, about = "QKD/DWDM co-propagation network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report files.
    Simulate {
        /// Scenario TOML path, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the report CSVs (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit channel parameters to measured operating points.
    Calibrate {
        /// CSV with header `length_km,total_power_dbm,skr_bps,qber`; power
        /// and QBER cells may be empty.
        #[arg(long)]
        observations: PathBuf,
        /// Write the fitted model as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Capacity efficiency of one operating point.
    Ce {
        /// Secret key rate in Mb/s.
        #[arg(long)]
        skr: f64,
        /// Aggregate co-propagating comb power in dBm.
        #[arg(long)]
        power_dbm: f64,
        /// Span length in km.
        #[arg(long)]
        length_km: f64,
    },
    /// Write the summary tables: the capacity-efficiency comparison and the
    /// key-rate-versus-length curve.
    Tables {
        /// Directory for the table CSVs (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Calibrated model JSON (from `calibrate --out`); defaults to the
        /// shipped calibration.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Serve the key-delivery HTTP API for a scenario's first hop.
    ServeKms {
        /// Listen address.
        #[arg(long, env = "QSPAN_KMS_LISTEN", default_value = "127.0.0.1:8600")]
        listen: String,
        /// Scenario TOML path, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
    },
}

/// A scenario argument is a file path if one exists there, otherwise the
/// name of a bundled scenario.
fn resolve_scenario(name_or_path: &str) -> anyhow::Result<Scenario> {
    if Path::new(name_or_path).exists() {
        return load_scenario(name_or_path)
            .with_context(|| format!("loading scenario {name_or_path}"));
    }
    bundled_scenario(name_or_path).with_context(|| {
        format!(
            "{name_or_path} is neither an existing file nor a bundled scenario (bundled: {})",
            bundled_scenario_names().join(", ")
        )
    })
}

fn load_calibration(path: &Path) -> anyhow::Result<CalibratedModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("calibration missing: cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("calibration file {} is not a fitted model", path.display()))
}

fn simulate(name_or_path: &str, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut scenario = resolve_scenario(name_or_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let report = run_simulation(&scenario);
    emit_report(&report, out)
        .with_context(|| format!("writing report to {}", out.display()))?;

    outln!("scenario: {} ({} s, seed {})", report.scenario_name, report.duration_s, report.seed);
    for hop in &report.hops {
        let comb = match hop.power_dbm {
            Some(dbm) => format!("{dbm} dBm comb"),
            None => "dark fiber".to_string(),
        };
        outln!(
            "hop {}: {} km, {}, {:.1} b/s, QBER {:.2}%",
            hop.hop_index,
            hop.length_km,
            comb,
            hop.mean_skr_bps,
            hop.mean_qber * 100.0
        );
    }
    outln!("end-to-end key rate: {:.1} b/s", report.end_to_end_skr_bps);
    let ok = report.deliveries.iter().filter(|d| d.outcome == "ok").count();
    let starved = report.deliveries.len() - ok;
    outln!("deliveries: {ok} ok, {starved} starved");
    let alarms: u64 = report.pairings.iter().map(|p| p.alarms).sum();
    outln!("alarms: {alarms}");
    outln!("report written to {}", out.display());
    Ok(())
}

fn run_calibrate(observations: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let file = std::fs::File::open(observations)
        .with_context(|| format!("cannot read observations {}", observations.display()))?;
    let obs = observations_from_csv(file)
        .with_context(|| format!("parsing observations {}", observations.display()))?;
    let fit = calibrate(&obs, &FixedParams::default())?;

    outln!("raman_coeff: {}", fit.raman_coeff);
    outln!("dark_count_prob: {}", fit.dark_count_prob);
    outln!("intrinsic_error_rate: {}", fit.intrinsic_error_rate);
    outln!("gate_rate_hz: {}", fit.gate_rate_hz);
    outln!("length_km,power_dbm,measured_skr_bps,predicted_skr_bps,measured_qber,predicted_qber");
    for o in &obs {
        let est = fit.estimate(o.length_km, o.total_wdm_power_dbm);
        outln!(
            "{},{},{},{},{},{}",
            o.length_km,
            o.total_wdm_power_dbm.map(|p| p.to_string()).unwrap_or_default(),
            o.measured_skr_bps,
            est.skr_bps,
            o.measured_qber.map(|q| q.to_string()).unwrap_or_default(),
            est.qber
        );
    }
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&fit)?)
            .with_context(|| format!("writing fitted model to {}", out.display()))?;
        outln!("fitted model written to {}", out.display());
    }
    Ok(())
}

fn run_ce(skr_mbps: f64, power_dbm: f64, length_km: f64) -> anyhow::Result<()> {
    let p_mw = PowerMw::from_dbm(power_dbm);
    let ce = ce_metric(skr_mbps, p_mw, length_km)?;
    outln!("capacity efficiency: {ce} Mb/s * mW * km");
    Ok(())
}

fn run_tables(out: &Path, calibration: Option<&Path>) -> anyhow::Result<()> {
    let cal = match calibration {
        Some(path) => load_calibration(path)?,
        None => default_calibration(),
    };
    let tables = reproduce_tables(&cal);
    tables.write_csv(out).with_context(|| format!("writing tables to {}", out.display()))?;
    outln!("label,ce");
    for entry in &tables.comparison {
        outln!("{},{}", entry.label, entry.ce);
    }
    outln!("tables written to {}", out.display());
    Ok(())
}

fn serve_kms(listen: &str, name_or_path: &str) -> anyhow::Result<()> {
    let scenario = resolve_scenario(name_or_path)?;
    if scenario.pairings.is_empty() {
        bail!("scenario {} defines no SAE pairing to serve", scenario.name);
    }
    qspan_kms::serve_blocking(listen, &scenario)
        .with_context(|| format!("serving key delivery on {listen}"))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out),
        Command::Calibrate { observations, out } => {
            run_calibrate(&observations, out.as_deref())
        }
        Command::Ce { skr, power_dbm, length_km } => run_ce(skr, power_dbm, length_km),
        Command::Tables { out, calibration } => run_tables(&out, calibration.as_deref()),
        Command::ServeKms { listen, scenario } => serve_kms(&listen, &scenario),
    }
}
