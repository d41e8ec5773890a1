//! Fits the unpublished channel parameters to measured operating points.
//!
//! Vendors publish span lengths, launch powers, key rates and error rates,
//! but not the Raman coupling of their fiber plant, the dark-count floor of
//! their detectors, the intrinsic error ratio of the optics, or the
//! effective clock the post-processing pipeline sees. [`calibrate`] recovers
//! those four numbers from at least three measured points by deterministic
//! grid search plus coordinate descent on a least-squares cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    estimate_link, DetectorModel, FiberSpan, LinkEstimate, Observation, ProtocolParams, WdmComb,
    DEFAULT_ATTEN_CLASSICAL_DB_PER_KM, DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM,
};

/// Parameters held fixed during the fit. These are either published by the
/// equipment vendor or conventional for the protocol, so burning degrees of
/// freedom on them would only soak up noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub detection_efficiency: f64,
    /// Signal-state mean photon number.
    pub mu: f64,
    pub sift_factor: f64,
    pub ec_efficiency: f64,
    pub atten_quantum_db_per_km: f64,
    pub atten_classical_db_per_km: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        FixedParams {
            detection_efficiency: 0.2,
            mu: 0.5,
            sift_factor: 0.5,
            ec_efficiency: 1.16,
            atten_quantum_db_per_km: DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM,
            atten_classical_db_per_km: DEFAULT_ATTEN_CLASSICAL_DB_PER_KM,
        }
    }
}

/// A complete fitted channel model: the four free parameters plus the fixed
/// ones they were fitted under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    /// Raman coupling, counts per gate per mW per km.
    pub raman_coeff: f64,
    pub dark_count_prob: f64,
    pub intrinsic_error_rate: f64,
    pub gate_rate_hz: f64,
    pub fixed: FixedParams,
}

impl CalibratedModel {
    pub fn span(&self, length_km: f64) -> FiberSpan {
        FiberSpan {
            length_km,
            atten_quantum_db_per_km: self.fixed.atten_quantum_db_per_km,
            atten_classical_db_per_km: self.fixed.atten_classical_db_per_km,
            raman_coeff: self.raman_coeff,
        }
    }

    pub fn detector(&self) -> DetectorModel {
        DetectorModel {
            gate_rate_hz: self.gate_rate_hz,
            dark_count_prob: self.dark_count_prob,
            detection_efficiency: self.fixed.detection_efficiency,
            intrinsic_error_rate: self.intrinsic_error_rate,
        }
    }

    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams {
            mu: self.fixed.mu,
            sift_factor: self.fixed.sift_factor,
            ec_efficiency: self.fixed.ec_efficiency,
        }
    }

    /// Model prediction at a span length and aggregate comb power
    /// (`None` = dark fiber).
    pub fn estimate(&self, length_km: f64, total_wdm_power_dbm: Option<f64>) -> LinkEstimate {
        let comb =
            total_wdm_power_dbm.map(WdmComb::from_total_dbm).unwrap_or_else(WdmComb::dark);
        estimate_link(&self.span(length_km), &comb, &self.detector(), &self.protocol())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("need at least 3 distinct observations, got {0}")]
    TooFewObservations(usize),
    #[error("degenerate observation set: {0}")]
    DegenerateData(String),
    #[error("no parameter combination reproduces the observations")]
    NoFit,
}

/// The shipped fit of [`calibrate`] over [`bundled_observations`]
/// (frozen so downstream consumers do not depend on re-running the search).
///
/// [`bundled_observations`]: super::bundled_observations
pub fn default_calibration() -> CalibratedModel {
    CalibratedModel {
        raman_coeff: 7.662579616503273e-7,
        dark_count_prob: 3.698015694609813e-6,
        intrinsic_error_rate: 0.033291815436379026,
        gate_rate_hz: 1.0196411719719875e9,
        fixed: FixedParams::default(),
    }
}

/// N points spaced evenly on a log scale, endpoints included.
fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

struct CostModel<'a> {
    obs: &'a [Observation],
    fixed: &'a FixedParams,
}

impl CostModel<'_> {
    /// Cost of a candidate (raman_coeff, dark_count_prob,
    /// intrinsic_error_rate) triple with the rate scale eliminated in closed
    /// form, plus that optimal scale.
    ///
    /// The scale multiplies every predicted rate, so for squared residuals in
    /// log space its optimum is exp(mean of the per-point log ratios); the
    /// cost is then the variance of those ratios plus the squared QBER
    /// misfits in percentage points.
    fn cost_and_scale(&self, rho: f64, y0: f64, edet: f64) -> (f64, f64) {
        let det = DetectorModel {
            gate_rate_hz: 1.0,
            dark_count_prob: y0,
            detection_efficiency: self.fixed.detection_efficiency,
            intrinsic_error_rate: edet,
        };
        let proto = ProtocolParams {
            mu: self.fixed.mu,
            sift_factor: 1.0,
            ec_efficiency: self.fixed.ec_efficiency,
        };
        let mut log_ratios = Vec::with_capacity(self.obs.len());
        let mut qber_cost = 0.0;
        for o in self.obs {
            let span = FiberSpan {
                length_km: o.length_km,
                atten_quantum_db_per_km: self.fixed.atten_quantum_db_per_km,
                atten_classical_db_per_km: self.fixed.atten_classical_db_per_km,
                raman_coeff: rho,
            };
            let comb = o
                .total_wdm_power_dbm
                .map(WdmComb::from_total_dbm)
                .unwrap_or_else(WdmComb::dark);
            let est = estimate_link(&span, &comb, &det, &proto);
            // Per-gate rate before scaling; a candidate that predicts no key
            // where key was measured is not in the feasible region at all.
            if est.skr_bps <= 0.0 {
                return (f64::INFINITY, f64::NAN);
            }
            log_ratios.push(o.measured_skr_bps.ln() - est.skr_bps.ln());
            if let Some(q_obs) = o.measured_qber {
                let d_pts = (est.qber - q_obs) * 100.0;
                qber_cost += d_pts * d_pts;
            }
        }
        let mean = log_ratios.iter().sum::<f64>() / log_ratios.len() as f64;
        let rate_cost: f64 = log_ratios.iter().map(|r| (r - mean) * (r - mean)).sum();
        (rate_cost + qber_cost, mean.exp())
    }

    fn cost(&self, p: [f64; 3]) -> f64 {
        self.cost_and_scale(p[0], p[1], p[2]).0
    }
}

/// Fits (raman_coeff, dark_count_prob, intrinsic_error_rate, gate_rate_hz)
/// to measured operating points.
///
/// Duplicate observations are collapsed first. The search is a coarse
/// log-spaced grid over the three shape parameters followed by coordinate
/// descent with a geometrically shrinking step; the rate scale is optimal in
/// closed form at every candidate. Both stages accept only strict
/// improvements and scan the Raman axis in ascending order, so the result is
/// deterministic and ties resolve to the smallest Raman coupling.
pub fn calibrate(
    observations: &[Observation],
    fixed: &FixedParams,
) -> Result<CalibratedModel, CalibrateError> {
    let obs = dedup(observations);
    validate(&obs)?;

    let model = CostModel { obs: &obs, fixed };

    let rho_grid = geomspace(1e-8, 1e-5, 31);
    let y0_grid = geomspace(1e-8, 1e-3, 51);
    let edet_grid = geomspace(0.004, 0.064, 25);

    let mut best_cost = f64::INFINITY;
    let mut best = [rho_grid[0], y0_grid[0], edet_grid[0]];
    for &rho in &rho_grid {
        for &y0 in &y0_grid {
            for &edet in &edet_grid {
                let c = model.cost([rho, y0, edet]);
                if c < best_cost {
                    best_cost = c;
                    best = [rho, y0, edet];
                }
            }
        }
    }
    if !best_cost.is_finite() {
        return Err(CalibrateError::NoFit);
    }

    // Coordinate descent, halving the log-step each level: at level k the
    // multiplicative step is 10^(0.1/2^k), probed two steps out on each side.
    // The whole shrink schedule runs twice; the second pass restarts with
    // large steps from the refined point, which escapes the stalls coordinate
    // descent hits in curved valleys.
    for _round in 0..2 {
        for k in 1..=8 {
            let ratio = 10f64.powf(0.1 / f64::from(1u32 << k));
            for _cycle in 0..3 {
                for axis in 0..3 {
                    let base = best[axis];
                    let mut take = best[axis];
                    for j in [-2i32, -1, 1, 2] {
                        let mut cand = best;
                        cand[axis] = base * ratio.powi(j);
                        let c = model.cost(cand);
                        if c < best_cost {
                            best_cost = c;
                            take = cand[axis];
                        }
                    }
                    best[axis] = take;
                }
            }
        }
    }

    let (_, scale) = model.cost_and_scale(best[0], best[1], best[2]);
    Ok(CalibratedModel {
        raman_coeff: best[0],
        dark_count_prob: best[1],
        intrinsic_error_rate: best[2],
        gate_rate_hz: scale / fixed.sift_factor,
        fixed: *fixed,
    })
}

/// Collapses bit-identical observations, keeping first-seen order.
fn dedup(observations: &[Observation]) -> Vec<Observation> {
    fn key(o: &Observation) -> (u64, Option<u64>, u64, Option<u64>) {
        (
            o.length_km.to_bits(),
            o.total_wdm_power_dbm.map(f64::to_bits),
            o.measured_skr_bps.to_bits(),
            o.measured_qber.map(f64::to_bits),
        )
    }
    let mut seen = std::collections::HashSet::new();
    observations.iter().filter(|o| seen.insert(key(o))).copied().collect()
}

fn validate(obs: &[Observation]) -> Result<(), CalibrateError> {
    if obs.len() < 3 {
        return Err(CalibrateError::TooFewObservations(obs.len()));
    }
    for o in obs {
        if o.length_km <= 0.0 || !o.length_km.is_finite() {
            return Err(CalibrateError::DegenerateData(format!(
                "span length must be positive and finite, got {}",
                o.length_km
            )));
        }
        if o.measured_skr_bps <= 0.0 || !o.measured_skr_bps.is_finite() {
            return Err(CalibrateError::DegenerateData(format!(
                "measured key rate must be positive and finite, got {}",
                o.measured_skr_bps
            )));
        }
        if let Some(p) = o.total_wdm_power_dbm {
            if !p.is_finite() {
                return Err(CalibrateError::DegenerateData(format!(
                    "comb power must be finite, got {p}"
                )));
            }
        }
        if let Some(q) = o.measured_qber {
            if !(0.0..=0.5).contains(&q) {
                return Err(CalibrateError::DegenerateData(format!(
                    "measured QBER must be in [0, 0.5], got {q}"
                )));
            }
        }
    }
    let lengths: std::collections::HashSet<u64> =
        obs.iter().map(|o| o.length_km.to_bits()).collect();
    if lengths.len() < 2 {
        return Err(CalibrateError::DegenerateData(
            "need at least 2 distinct span lengths".into(),
        ));
    }
    let powers: std::collections::HashSet<Option<u64>> =
        obs.iter().map(|o| o.total_wdm_power_dbm.map(f64::to_bits)).collect();
    if powers.len() < 2 {
        return Err(CalibrateError::DegenerateData(
            "need at least 2 distinct comb power levels".into(),
        ));
    }
    Ok(())
}
