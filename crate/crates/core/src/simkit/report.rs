//! CSV emission for simulation reports, and the standalone summary tables
//! (capacity-efficiency comparison, rate-versus-length curve).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::encryptor::write_epoch_csv;
use crate::linkmodel::CalibratedModel;
use crate::metrics::{ce_metric, reference_comparison, ComparisonEntry, PowerMw};

use super::sim::SimReport;

/// Writes a run's report files into `out_dir` (created if missing):
///
/// - `hops.csv`: `hop,length_km,power_dbm,mean_skr_bps,mean_qber`
/// - `pools.csv`: `t_s,pool_id,level`
/// - `deliveries.csv`: `epoch,gk_id,outcome`
/// - `events.csv`: headerless relay transcript lines
/// - `epochs_<pairing>.csv`: `epoch,gk_id,alarm` per pairing
///
/// Output is byte-stable: the same report always serializes identically.
pub fn emit_report(report: &SimReport, out_dir: impl AsRef<Path>) -> std::io::Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let mut hops = BufWriter::new(File::create(out_dir.join("hops.csv"))?);
    writeln!(hops, "hop,length_km,power_dbm,mean_skr_bps,mean_qber")?;
    for h in &report.hops {
        let power = h.power_dbm.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            hops,
            "{},{},{},{},{}",
            h.hop_index, h.length_km, power, h.mean_skr_bps, h.mean_qber
        )?;
    }
    hops.flush()?;

    let mut pools = BufWriter::new(File::create(out_dir.join("pools.csv"))?);
    writeln!(pools, "t_s,pool_id,level")?;
    for s in &report.pool_series {
        writeln!(pools, "{},{},{}", s.t_s, s.pool_id, s.level)?;
    }
    pools.flush()?;

    let mut deliveries = BufWriter::new(File::create(out_dir.join("deliveries.csv"))?);
    writeln!(deliveries, "epoch,gk_id,outcome")?;
    for d in &report.deliveries {
        let id = d.gk_id.map(|u| u.to_string()).unwrap_or_default();
        writeln!(deliveries, "{},{},{}", d.epoch, id, d.outcome)?;
    }
    deliveries.flush()?;

    let mut events = BufWriter::new(File::create(out_dir.join("events.csv"))?);
    for line in &report.event_lines {
        writeln!(events, "{line}")?;
    }
    events.flush()?;

    for p in &report.pairings {
        let file = File::create(out_dir.join(format!("epochs_{}.csv", p.name)))?;
        write_epoch_csv(BufWriter::new(file), &p.epochs)?;
    }
    Ok(())
}

/// One length step of the rate-versus-length curve at fixed comb power.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub length_km: f64,
    pub skr_bps: f64,
    pub qber: f64,
    pub ce: f64,
}

/// The two summary tables: the capacity-efficiency comparison against
/// published systems, and the co-propagation rate curve over span length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub comparison: Vec<ComparisonEntry>,
    pub curve: Vec<CurvePoint>,
}

/// Comb power the rate curve is swept at, in dBm.
pub const CURVE_POWER_DBM: f64 = 15.3;

/// Builds both summary tables from a calibrated link model. The curve runs
/// 5 km to 70 km in 5 km steps at a fixed 15.3 dBm aggregate comb.
pub fn reproduce_tables(cal: &CalibratedModel) -> Tables {
    let comparison = reference_comparison();
    let p_mw = PowerMw::from_dbm(CURVE_POWER_DBM);
    let curve = (1..=14)
        .map(|step| {
            let length_km = (step * 5) as f64;
            let est = cal.estimate(length_km, Some(CURVE_POWER_DBM));
            let ce = ce_metric(est.skr_bps / 1e6, p_mw, length_km)
                .expect("model rates and lengths are finite and non-negative");
            CurvePoint { length_km, skr_bps: est.skr_bps, qber: est.qber, ce }
        })
        .collect();
    Tables { comparison, curve }
}

impl Tables {
    /// Writes `comparison.csv` (`label,ce`) and `skr_vs_length.csv`
    /// (`length_km,skr_bps,qber,ce`) into `out_dir`.
    pub fn write_csv(&self, out_dir: impl AsRef<Path>) -> std::io::Result<()> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir)?;
        let mut cmp = BufWriter::new(File::create(out_dir.join("comparison.csv"))?);
        writeln!(cmp, "label,ce")?;
        for e in &self.comparison {
            writeln!(cmp, "{},{}", e.label, e.ce)?;
        }
        cmp.flush()?;
        let mut curve = BufWriter::new(File::create(out_dir.join("skr_vs_length.csv"))?);
        writeln!(curve, "length_km,skr_bps,qber,ce")?;
        for p in &self.curve {
            writeln!(curve, "{},{},{},{}", p.length_km, p.skr_bps, p.qber, p.ce)?;
        }
        curve.flush()
    }
}
