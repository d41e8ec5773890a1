//! Declarative scenarios and the deterministic simulation that ties the
//! link model, key pools, relay, and encryptors together.
//!
//! A scenario file describes a chain of key-management nodes joined by QKD
//! links, the classical comb (if any) sharing each fiber, and the encryptor
//! pairings riding the delivered keys. [`run_simulation`] walks it forward
//! at one-second resolution: links produce keys into per-hop pools at the
//! model-estimated rate, the trusted-node relay carries one global key per
//! pairing across the chain every sixty seconds, and everything lands in a
//! byte-stable report.

mod report;
mod scenario;
mod sim;

pub use report::{emit_report, reproduce_tables, CurvePoint, Tables};
pub use scenario::{
    bundled_scenario, bundled_scenario_names, load_scenario, scenario_from_str, Node, NodeRole,
    PairingSpec, QkdLink, QuantumBand, Scenario, ScenarioError,
};
pub use sim::{
    run_simulation, DeliveryRecord, HopReport, PairingReport, PoolSample, SimReport,
};
