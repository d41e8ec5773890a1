//! Desk-scale model of a QKD network riding a DWDM transport system.
//!
//! The library covers the full key path of a multi-span trusted-node link:
//!
//! * [`linkmodel`]: link budgets, spontaneous-Raman noise from the
//!   co-propagating comb, decoy-state QBER/SKR estimates, and calibration of
//!   the free model parameters against measured operating points.
//! * [`metrics`]: the co-propagation efficiency figure of merit
//!   (SKR x P_WDM x L) and comparison tables.
//! * [`keystore`]: FIFO pools of 256-bit keys with ETSI GS QKD 014-style
//!   delivery semantics (Get Status / enc_keys / dec_keys).
//! * [`relay`]: XOR trusted-node relay carrying a Global Key across hops as
//!   public Network Keys.
//! * [`encryptor`]: paired transponders deriving AES-256 session keys from
//!   Global Key + Diffie-Hellman key through HKDF, rekeying every 60 s.
//! * [`simkit`]: declarative scenarios and the deterministic 1 s-resolution
//!   simulation loop tying all of the above together, with CSV reports.
//!
//! Simulations are reproducible: every random draw flows from the scenario
//! seed, and re-running a scenario with the same seed emits byte-identical
//! report files.

pub mod encryptor;
pub mod keystore;
pub mod linkmodel;
pub mod metrics;
pub mod relay;
pub mod simkit;
