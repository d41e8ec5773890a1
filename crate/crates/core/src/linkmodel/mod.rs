//! Physical-layer model of a quantum channel co-propagating with a DWDM comb.
//!
//! The estimation chain is: fiber loss at the quantum wavelength fixes the
//! channel transmittance; the comb's aggregate launch power drives spontaneous
//! Raman scattering into the quantum band, which together with detector dark
//! counts sets the background click probability; background plus intrinsic
//! detector errors give the QBER; and the asymptotic infinite-decoy bound
//! turns gains and error ratios into a secure key rate.
//!
//! Everything downstream consumes the comb through one number, its total
//! power, so two combs with equal aggregate power are interchangeable
//! bit-for-bit.
//!
//! The free parameters nobody publishes (Raman coefficient, dark-count
//! probability, intrinsic error rate, effective gate-rate scale) are fitted
//! from measured operating points by [`calibrate`].

mod calibrate;

pub use calibrate::{
    calibrate, default_calibration, CalibratedModel, CalibrateError, FixedParams,
};

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

/// Fiber attenuation at 1550 nm, dB/km. Chosen so a 70 km span comes out at
/// 17.5 dB total loss.
pub const DEFAULT_ATTEN_CLASSICAL_DB_PER_KM: f64 = 0.25;

/// Fiber attenuation at the 1310 nm quantum wavelength, dB/km. Chosen so a
/// 70 km span comes out at 25.7 dB total loss.
pub const DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM: f64 = 0.3671;

/// Error ratio contributed by background clicks: a noise click lands on the
/// wrong detector half the time.
pub const NOISE_ERROR_RATIO: f64 = 0.5;

/// One fiber span as seen by a quantum channel sharing it with classical
/// light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpan {
    pub length_km: f64,
    /// Attenuation at the quantum wavelength, dB/km.
    pub atten_quantum_db_per_km: f64,
    /// Attenuation at 1550 nm where the comb lives, dB/km.
    pub atten_classical_db_per_km: f64,
    /// Effective spontaneous-Raman coupling, noise counts per gate per mW of
    /// launch power per km of effective interaction length. Absorbs filter
    /// bandwidth, gate width and the scattering cross-section; fitted, not
    /// measured.
    pub raman_coeff: f64,
}

impl FiberSpan {
    /// Span with the default 1310/1550 nm attenuations and no Raman coupling.
    pub fn new_1310(length_km: f64) -> Self {
        FiberSpan {
            length_km,
            atten_quantum_db_per_km: DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM,
            atten_classical_db_per_km: DEFAULT_ATTEN_CLASSICAL_DB_PER_KM,
            raman_coeff: 0.0,
        }
    }

    /// Field-range problems, one message per offending field.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.length_km < 0.0 || self.length_km.is_nan() {
            errs.push(format!("length_km must be >= 0, got {}", self.length_km));
        }
        if self.atten_quantum_db_per_km <= 0.0 || self.atten_quantum_db_per_km.is_nan() {
            errs.push(format!(
                "atten_quantum_db_per_km must be > 0, got {}",
                self.atten_quantum_db_per_km
            ));
        }
        if self.atten_classical_db_per_km <= 0.0 || self.atten_classical_db_per_km.is_nan() {
            errs.push(format!(
                "atten_classical_db_per_km must be > 0, got {}",
                self.atten_classical_db_per_km
            ));
        }
        if self.raman_coeff < 0.0 || self.raman_coeff.is_nan() {
            errs.push(format!("raman_coeff must be >= 0, got {}", self.raman_coeff));
        }
        errs
    }
}

/// A DWDM comb described by channel count and per-channel power. The model
/// only ever looks at the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdmComb {
    pub num_channels: u32,
    pub per_channel_power_dbm: f64,
}

impl WdmComb {
    /// Dark fiber: no classical channels at all.
    pub fn dark() -> Self {
        WdmComb { num_channels: 0, per_channel_power_dbm: 0.0 }
    }

    /// A single channel carrying the given total power.
    pub fn from_total_dbm(total_dbm: f64) -> Self {
        WdmComb { num_channels: 1, per_channel_power_dbm: total_dbm }
    }

    /// Aggregate comb power in dBm; negative infinity for dark fiber.
    pub fn total_power_dbm(&self) -> f64 {
        if self.num_channels == 0 {
            return f64::NEG_INFINITY;
        }
        mw_to_dbm(self.num_channels as f64 * dbm_to_mw(self.per_channel_power_dbm))
    }

    /// Aggregate launch power in mW. This is the single funnel through which
    /// the QBER/SKR estimates see the comb, so combs whose
    /// [`total_power_dbm`](Self::total_power_dbm) values are bitwise equal
    /// produce bitwise-equal estimates.
    pub fn launch_power_mw(&self) -> f64 {
        dbm_to_mw(self.total_power_dbm())
    }
}

/// Single-photon detection chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub gate_rate_hz: f64,
    /// Dark-count probability per gate.
    pub dark_count_prob: f64,
    pub detection_efficiency: f64,
    /// Detector/optics error ratio e_det for true signal clicks.
    pub intrinsic_error_rate: f64,
}

impl DetectorModel {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.gate_rate_hz <= 0.0 || self.gate_rate_hz.is_nan() {
            errs.push(format!("gate_rate_hz must be > 0, got {}", self.gate_rate_hz));
        }
        if !(0.0..=1.0).contains(&self.dark_count_prob) {
            errs.push(format!(
                "dark_count_prob must be in [0,1], got {}",
                self.dark_count_prob
            ));
        }
        if !(0.0..=1.0).contains(&self.detection_efficiency) {
            errs.push(format!(
                "detection_efficiency must be in [0,1], got {}",
                self.detection_efficiency
            ));
        }
        if !(0.0..=0.5).contains(&self.intrinsic_error_rate) {
            errs.push(format!(
                "intrinsic_error_rate must be in [0,0.5], got {}",
                self.intrinsic_error_rate
            ));
        }
        errs
    }
}

/// Decoy-state protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Mean photon number of signal states.
    pub mu: f64,
    /// Sifting factor q.
    pub sift_factor: f64,
    /// Error-correction inefficiency f >= 1.
    pub ec_efficiency: f64,
}

impl ProtocolParams {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.mu <= 0.0 || self.mu.is_nan() {
            errs.push(format!("mu must be > 0, got {}", self.mu));
        }
        if !(self.sift_factor > 0.0 && self.sift_factor <= 1.0) {
            errs.push(format!("sift_factor must be in (0,1], got {}", self.sift_factor));
        }
        if self.ec_efficiency < 1.0 || self.ec_efficiency.is_nan() {
            errs.push(format!("ec_efficiency must be >= 1, got {}", self.ec_efficiency));
        }
        errs
    }
}

/// One estimated operating point of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEstimate {
    pub loss_quantum_db: f64,
    /// Background click probability per gate from Raman scattering alone.
    pub noise_prob_per_gate: f64,
    pub qber: f64,
    /// Secure key rate, clamped at zero when the bound goes negative.
    pub skr_bps: f64,
}

/// A measured operating point used for calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub length_km: f64,
    /// Aggregate comb power; `None` means dark fiber.
    pub total_wdm_power_dbm: Option<f64>,
    pub measured_skr_bps: f64,
    pub measured_qber: Option<f64>,
}

/// Which wavelength's attenuation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Quantum,
    Classical,
}

/// dBm to linear milliwatts: 10^(p/10).
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

/// Linear milliwatts to dBm: 10·log10(p).
pub fn mw_to_dbm(p_mw: f64) -> f64 {
    10.0 * p_mw.log10()
}

/// Total span loss in dB for the given band; linear in length.
pub fn link_loss(span: &FiberSpan, band: Band) -> f64 {
    let per_km = match band {
        Band::Quantum => span.atten_quantum_db_per_km,
        Band::Classical => span.atten_classical_db_per_km,
    };
    span.length_km * per_km
}

/// Effective interaction length (km) for forward-scattered Raman noise:
/// classical light attenuating at `a_c` seeds noise that then attenuates at
/// `a_q` over the remaining fiber. Attenuations are in natural units (1/km).
///
/// g(L) = (e^(−a_q·L) − e^(−a_c·L)) / (a_c − a_q), with the removable
/// singularity at a_q = a_c filled by the limit L·e^(−a·L) evaluated at the
/// midpoint attenuation (which keeps the two branches within 1e−9 relative of
/// each other at the 1e−9/km switch-over).
pub fn raman_effective_length(length_km: f64, a_q: f64, a_c: f64) -> f64 {
    if (a_c - a_q).abs() < 1e-9 {
        let a = 0.5 * (a_q + a_c);
        return length_km * (-a * length_km).exp();
    }
    ((-a_q * length_km).exp() - (-a_c * length_km).exp()) / (a_c - a_q)
}

/// Probability per gate of a Raman noise click reaching the detector:
/// launch power x fitted coupling x effective interaction length.
/// Zero for dark fiber or a zero-length span.
pub fn raman_noise_prob(span: &FiberSpan, launch_power_mw: f64) -> f64 {
    debug_assert!(launch_power_mw >= 0.0);
    if launch_power_mw == 0.0 || span.length_km == 0.0 {
        return 0.0;
    }
    let a_q = LN_10 / 10.0 * span.atten_quantum_db_per_km;
    let a_c = LN_10 / 10.0 * span.atten_classical_db_per_km;
    launch_power_mw * span.raman_coeff * raman_effective_length(span.length_km, a_q, a_c)
}

/// Shannon binary entropy in bits, with H2(0) = H2(1) = 0 by continuity.
///
/// # Panics
/// On p outside [0, 1].
pub fn binary_entropy(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "binary_entropy: p = {p} outside [0,1]");
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Full chain of estimates for one operating point. `qber_estimate` and
/// `skr_estimate` are views of this.
pub fn estimate_link(
    span: &FiberSpan,
    comb: &WdmComb,
    det: &DetectorModel,
    proto: &ProtocolParams,
) -> LinkEstimate {
    let loss_quantum_db = link_loss(span, Band::Quantum);
    let eta = det.detection_efficiency * 10f64.powf(-loss_quantum_db / 10.0);
    let noise = raman_noise_prob(span, comb.launch_power_mw());
    let y0_tot = det.dark_count_prob + noise;

    // Signal-state click and error statistics.
    let p_sig = 1.0 - (-eta * proto.mu).exp();
    let q_mu = y0_tot + p_sig;
    let e_mu = if q_mu > 0.0 {
        (NOISE_ERROR_RATIO * y0_tot + det.intrinsic_error_rate * p_sig) / q_mu
    } else {
        0.5
    };

    // Single-photon yield and error under the infinite-decoy assumption.
    let y1 = y0_tot + eta;
    let q1 = y1 * proto.mu * (-proto.mu).exp();
    let e1 = if y1 > 0.0 {
        (NOISE_ERROR_RATIO * y0_tot + det.intrinsic_error_rate * eta) / y1
    } else {
        0.5
    };

    let rate_per_gate =
        q1 * (1.0 - binary_entropy(e1)) - proto.ec_efficiency * q_mu * binary_entropy(e_mu);
    let skr_bps = proto.sift_factor * det.gate_rate_hz * rate_per_gate.max(0.0);

    LinkEstimate { loss_quantum_db, noise_prob_per_gate: noise, qber: e_mu, skr_bps }
}

/// Estimated QBER of the signal states: noise clicks count as half errors,
/// true clicks err at the intrinsic rate. Non-decreasing in launch power.
pub fn qber_estimate(
    span: &FiberSpan,
    comb: &WdmComb,
    det: &DetectorModel,
    proto: &ProtocolParams,
) -> f64 {
    estimate_link(span, comb, det, proto).qber
}

/// Asymptotic infinite-decoy secure key rate lower bound in bit/s:
/// R = q · gate_rate · max(0, Q1·(1 − H2(e1)) − f·Qμ·H2(Eμ)).
pub fn skr_estimate(
    span: &FiberSpan,
    comb: &WdmComb,
    det: &DetectorModel,
    proto: &ProtocolParams,
) -> f64 {
    estimate_link(span, comb, det, proto).skr_bps
}

/// Parses observations from CSV with header
/// `length_km,total_power_dbm,skr_bps,qber`; empty power means dark fiber,
/// empty qber means not measured.
pub fn observations_from_csv<R: std::io::Read>(reader: R) -> Result<Vec<Observation>, csv::Error> {
    #[derive(Deserialize)]
    struct Row {
        length_km: f64,
        total_power_dbm: Option<f64>,
        skr_bps: f64,
        qber: Option<f64>,
    }
    let mut out = Vec::new();
    let mut rdr = csv::Reader::from_reader(reader);
    for row in rdr.deserialize() {
        let row: Row = row?;
        out.push(Observation {
            length_km: row.length_km,
            total_wdm_power_dbm: row.total_power_dbm,
            measured_skr_bps: row.skr_bps,
            measured_qber: row.qber,
        });
    }
    Ok(out)
}

/// The measured single-span 1310 nm operating points shipped with the crate:
/// 50 km dark and fully loaded, 20 km loaded, 70 km loaded.
pub fn bundled_observations() -> Vec<Observation> {
    observations_from_csv(include_str!("../../data/observations_1310.csv").as_bytes())
        .expect("bundled observations CSV is well-formed")
}
