//! Scenario files: a TOML schema describing the node chain, the QKD links
//! between them, and the encryptor pairings.
//!
//! Top level:
//!
//! ```toml
//! name = "example"
//! duration_s = 3600        # simulated seconds, >= 1
//! seed = 7                 # optional, default 0
//! initial_pool_fill = 1000 # optional keys preloaded per hop pool, default 0
//! produce_keys = true      # optional, default true
//! ```
//!
//! Each `[[nodes]]` entry has `kme_id`, `role` (`"endpoint"` or
//! `"trusted-node"`), and `sae_ids`. Each `[[links]]` entry has `hop_index`
//! (1-based), `from`/`to` node ids, `length_km`, `quantum_band` (`"1310nm"`
//! or `"1550nm"`), and `co_propagating`. A co-propagating link carries its
//! comb as either `wdm_total_power_dbm` or a `[links.wdm]` table with
//! `channels` and `per_channel_dbm`; dark links must carry neither.
//! Attenuations default per band (0.3671 dB/km at 1310 nm, 0.25 dB/km at
//! 1550 nm for the quantum path; 0.25 dB/km classical), and the optional
//! `[links.detector]` / `[links.protocol]` tables override the shipped
//! calibration field by field. `[[pairings]]` rows bind a master SAE on the
//! chain's first node to a slave SAE on its last.
//!
//! Loading resolves every default and validates the whole file, reporting
//! every problem found rather than the first.

use serde::Deserialize;
use thiserror::Error;

use crate::linkmodel::{
    default_calibration, estimate_link, DetectorModel, FiberSpan, LinkEstimate, ProtocolParams,
    WdmComb, DEFAULT_ATTEN_CLASSICAL_DB_PER_KM, DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM,
};
use crate::keystore::DEFAULT_MAX_KEY_COUNT;

/// Wavelength band the quantum channel occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
pub enum QuantumBand {
    #[serde(rename = "1310nm")]
    OBand1310,
    #[serde(rename = "1550nm")]
    CBand1550,
}

impl QuantumBand {
    fn default_quantum_atten(self) -> f64 {
        match self {
            QuantumBand::OBand1310 => DEFAULT_ATTEN_QUANTUM_1310_DB_PER_KM,
            QuantumBand::CBand1550 => DEFAULT_ATTEN_CLASSICAL_DB_PER_KM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
pub enum NodeRole {
    #[serde(rename = "endpoint")]
    Endpoint,
    #[serde(rename = "trusted-node")]
    TrustedNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kme_id: String,
    pub role: NodeRole,
    pub sae_ids: Vec<String>,
}

/// One QKD link of the chain with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdLink {
    pub hop_index: usize,
    pub from: String,
    pub to: String,
    pub span: FiberSpan,
    pub band: QuantumBand,
    pub co_propagating: bool,
    /// The classical comb sharing this fiber; `None` on dark fiber.
    pub comb: Option<WdmComb>,
    pub detector: DetectorModel,
    pub protocol: ProtocolParams,
}

impl QkdLink {
    pub fn comb_or_dark(&self) -> WdmComb {
        self.comb.unwrap_or_else(WdmComb::dark)
    }

    /// Aggregate comb power in dBm; `None` on dark fiber.
    pub fn total_power_dbm(&self) -> Option<f64> {
        self.comb.map(|c| c.total_power_dbm())
    }

    /// Model estimate of this link's operating point.
    pub fn estimate(&self) -> LinkEstimate {
        estimate_link(&self.span, &self.comb_or_dark(), &self.detector, &self.protocol)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingSpec {
    pub name: String,
    pub master_sae_id: String,
    pub slave_sae_id: String,
}

/// A fully resolved, validated scenario. Links are ordered by hop index and
/// form a simple path from the first node to the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration_s: u64,
    pub seed: u64,
    pub initial_pool_fill: usize,
    pub produce_keys: bool,
    pub nodes: Vec<Node>,
    pub links: Vec<QkdLink>,
    pub pairings: Vec<PairingSpec>,
}

impl Scenario {
    /// Copy of this scenario with one hop's comb replaced by a single
    /// aggregate at `total_dbm`; used for power sweeps.
    ///
    /// # Panics
    /// If the hop does not exist or is not co-propagating.
    pub fn with_wdm_power(&self, hop_index: usize, total_dbm: f64) -> Scenario {
        let mut out = self.clone();
        let link = out
            .links
            .iter_mut()
            .find(|l| l.hop_index == hop_index)
            .unwrap_or_else(|| panic!("no hop {hop_index} in scenario {}", self.name));
        assert!(link.co_propagating, "hop {hop_index} carries no comb to re-power");
        link.comb = Some(WdmComb::from_total_dbm(total_dbm));
        out
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n  - {}", problems.join("\n  - "))]
    Invalid { problems: Vec<String> },
    #[error("no bundled scenario named {name:?}; available: {available:?}")]
    UnknownBundled { name: String, available: Vec<&'static str> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[allow(dead_code)]
    description: Option<String>,
    duration_s: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    initial_pool_fill: usize,
    #[serde(default = "default_true")]
    produce_keys: bool,
    #[serde(default)]
    nodes: Vec<NodeFile>,
    #[serde(default)]
    links: Vec<LinkFile>,
    #[serde(default)]
    pairings: Vec<PairingFile>,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    kme_id: String,
    role: NodeRole,
    #[serde(default)]
    sae_ids: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    hop_index: usize,
    from: String,
    to: String,
    length_km: f64,
    quantum_band: QuantumBand,
    #[serde(default)]
    co_propagating: bool,
    wdm_total_power_dbm: Option<f64>,
    wdm: Option<WdmFile>,
    atten_quantum_db_per_km: Option<f64>,
    atten_classical_db_per_km: Option<f64>,
    raman_coeff: Option<f64>,
    #[serde(default)]
    detector: DetectorFile,
    #[serde(default)]
    protocol: ProtocolFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WdmFile {
    channels: u32,
    per_channel_dbm: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DetectorFile {
    gate_rate_hz: Option<f64>,
    dark_count_prob: Option<f64>,
    detection_efficiency: Option<f64>,
    intrinsic_error_rate: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProtocolFile {
    mu: Option<f64>,
    sift_factor: Option<f64>,
    ec_efficiency: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairingFile {
    name: String,
    master_sae_id: String,
    slave_sae_id: String,
}

/// Parses and validates a scenario from TOML text.
pub fn scenario_from_str(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    resolve(file)
}

/// Loads a scenario from a file path.
pub fn load_scenario(path: impl AsRef<std::path::Path>) -> Result<Scenario, ScenarioError> {
    scenario_from_str(&std::fs::read_to_string(path)?)
}

const BUNDLED: [(&str, &str); 4] = [
    ("paper_1span_20km", include_str!("../../scenarios/paper_1span_20km.toml")),
    ("paper_1span_50km", include_str!("../../scenarios/paper_1span_50km.toml")),
    ("paper_1span_70km", include_str!("../../scenarios/paper_1span_70km.toml")),
    ("paper_3span", include_str!("../../scenarios/paper_3span.toml")),
];

/// Names of the scenarios shipped inside the crate.
pub fn bundled_scenario_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Loads one of the shipped scenarios by name.
pub fn bundled_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    match BUNDLED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => scenario_from_str(text),
        None => Err(ScenarioError::UnknownBundled {
            name: name.to_string(),
            available: bundled_scenario_names(),
        }),
    }
}

fn resolve(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let mut problems = Vec::new();
    let shipped = default_calibration();

    if file.duration_s == 0 {
        problems.push("duration_s must be >= 1".into());
    }
    if file.initial_pool_fill > DEFAULT_MAX_KEY_COUNT {
        problems.push(format!(
            "initial_pool_fill {} exceeds pool capacity {DEFAULT_MAX_KEY_COUNT}",
            file.initial_pool_fill
        ));
    }
    if file.nodes.len() < 2 {
        problems.push(format!("need at least 2 nodes, got {}", file.nodes.len()));
    }

    let nodes: Vec<Node> = file
        .nodes
        .into_iter()
        .map(|n| Node { kme_id: n.kme_id, role: n.role, sae_ids: n.sae_ids })
        .collect();
    for (i, n) in nodes.iter().enumerate() {
        if nodes[..i].iter().any(|m| m.kme_id == n.kme_id) {
            problems.push(format!("duplicate node id {:?}", n.kme_id));
        }
    }

    let mut links: Vec<QkdLink> = Vec::with_capacity(file.links.len());
    for l in file.links {
        let prefix = format!("hop {}", l.hop_index);
        let comb = match (l.co_propagating, l.wdm_total_power_dbm, &l.wdm) {
            (true, Some(_), Some(_)) => {
                problems.push(format!(
                    "{prefix}: give either wdm_total_power_dbm or [links.wdm], not both"
                ));
                None
            }
            (true, Some(total), None) => {
                if !total.is_finite() {
                    problems.push(format!("{prefix}: wdm_total_power_dbm must be finite"));
                }
                Some(WdmComb::from_total_dbm(total))
            }
            (true, None, Some(w)) => {
                if w.channels == 0 {
                    problems.push(format!("{prefix}: a co-propagating comb needs channels >= 1"));
                }
                Some(WdmComb { num_channels: w.channels, per_channel_power_dbm: w.per_channel_dbm })
            }
            (true, None, None) => {
                problems.push(format!(
                    "{prefix}: co-propagating link needs wdm_total_power_dbm or [links.wdm]"
                ));
                None
            }
            (false, None, None) => None,
            (false, _, _) => {
                problems.push(format!(
                    "{prefix}: comb power given but co_propagating is false"
                ));
                None
            }
        };

        let span = FiberSpan {
            length_km: l.length_km,
            atten_quantum_db_per_km: l
                .atten_quantum_db_per_km
                .unwrap_or_else(|| l.quantum_band.default_quantum_atten()),
            atten_classical_db_per_km: l
                .atten_classical_db_per_km
                .unwrap_or(DEFAULT_ATTEN_CLASSICAL_DB_PER_KM),
            raman_coeff: l.raman_coeff.unwrap_or(shipped.raman_coeff),
        };
        let detector = DetectorModel {
            gate_rate_hz: l.detector.gate_rate_hz.unwrap_or(shipped.gate_rate_hz),
            dark_count_prob: l.detector.dark_count_prob.unwrap_or(shipped.dark_count_prob),
            detection_efficiency: l
                .detector
                .detection_efficiency
                .unwrap_or(shipped.fixed.detection_efficiency),
            intrinsic_error_rate: l
                .detector
                .intrinsic_error_rate
                .unwrap_or(shipped.intrinsic_error_rate),
        };
        let protocol = ProtocolParams {
            mu: l.protocol.mu.unwrap_or(shipped.fixed.mu),
            sift_factor: l.protocol.sift_factor.unwrap_or(shipped.fixed.sift_factor),
            ec_efficiency: l.protocol.ec_efficiency.unwrap_or(shipped.fixed.ec_efficiency),
        };
        if l.length_km <= 0.0 || !l.length_km.is_finite() {
            problems.push(format!("{prefix}: length_km must be positive and finite"));
        }
        for e in span.validation_errors() {
            problems.push(format!("{prefix}: {e}"));
        }
        for e in detector.validation_errors() {
            problems.push(format!("{prefix}: {e}"));
        }
        for e in protocol.validation_errors() {
            problems.push(format!("{prefix}: {e}"));
        }
        links.push(QkdLink {
            hop_index: l.hop_index,
            from: l.from,
            to: l.to,
            span,
            band: l.quantum_band,
            co_propagating: l.co_propagating,
            comb,
            detector,
            protocol,
        });
    }
    links.sort_by_key(|l| l.hop_index);
    validate_path(&nodes, &links, &mut problems);

    let pairings: Vec<PairingSpec> = file
        .pairings
        .into_iter()
        .map(|p| PairingSpec {
            name: p.name,
            master_sae_id: p.master_sae_id,
            slave_sae_id: p.slave_sae_id,
        })
        .collect();
    for (i, p) in pairings.iter().enumerate() {
        if pairings[..i].iter().any(|q| q.name == p.name) {
            problems.push(format!("duplicate pairing name {:?}", p.name));
        }
    }
    if !nodes.is_empty() && !links.is_empty() && problems.is_empty() {
        let first = &nodes[0];
        let last = &nodes[nodes.len() - 1];
        for p in &pairings {
            if !first.sae_ids.contains(&p.master_sae_id) {
                problems.push(format!(
                    "pairing {:?}: master SAE {:?} is not registered on chain-start node {:?}",
                    p.name, p.master_sae_id, first.kme_id
                ));
            }
            if !last.sae_ids.contains(&p.slave_sae_id) {
                problems.push(format!(
                    "pairing {:?}: slave SAE {:?} is not registered on chain-end node {:?}",
                    p.name, p.slave_sae_id, last.kme_id
                ));
            }
        }
    }

    if !problems.is_empty() {
        return Err(ScenarioError::Invalid { problems });
    }
    Ok(Scenario {
        name: file.name,
        duration_s: file.duration_s,
        seed: file.seed,
        initial_pool_fill: file.initial_pool_fill,
        produce_keys: file.produce_keys,
        nodes,
        links,
        pairings,
    })
}

/// Checks that the hops, in index order, chain the nodes into a simple path
/// from the first listed node to the last, with endpoint roles at the ends
/// and trusted nodes between.
fn validate_path(nodes: &[Node], links: &[QkdLink], problems: &mut Vec<String>) {
    if nodes.len() < 2 {
        return;
    }
    if links.len() != nodes.len() - 1 {
        problems.push(format!(
            "{} nodes need {} hops, got {}",
            nodes.len(),
            nodes.len() - 1,
            links.len()
        ));
    }
    for (i, l) in links.iter().enumerate() {
        if l.hop_index != i + 1 {
            problems.push(format!(
                "hop indices must be 1..={} without gaps or repeats; found {}",
                links.len(),
                l.hop_index
            ));
            return;
        }
    }
    let known = |id: &str| nodes.iter().any(|n| n.kme_id == id);
    for l in links {
        for id in [&l.from, &l.to] {
            if !known(id) {
                problems.push(format!("hop {} references unknown node {:?}", l.hop_index, id));
            }
        }
    }
    // Walk the chain, checking contiguity and that no node repeats.
    let mut visited: Vec<&str> = Vec::new();
    for (i, l) in links.iter().enumerate() {
        if i == 0 {
            visited.push(&l.from);
        } else if links[i - 1].to != l.from {
            problems.push(format!(
                "hop {} starts at {:?} but hop {} ends at {:?}",
                l.hop_index,
                l.from,
                i,
                links[i - 1].to
            ));
        }
        if visited.contains(&l.to.as_str()) {
            problems.push(format!(
                "hop path revisits node {:?}; the topology must be a simple path",
                l.to
            ));
        }
        visited.push(&l.to);
    }
    if visited.first() != Some(&nodes[0].kme_id.as_str()) {
        problems.push(format!(
            "the chain must start at the first listed node {:?}",
            nodes[0].kme_id
        ));
    }
    if visited.last() != Some(&nodes[nodes.len() - 1].kme_id.as_str()) {
        problems.push(format!(
            "the chain must end at the last listed node {:?}",
            nodes[nodes.len() - 1].kme_id
        ));
    }
    for (i, n) in nodes.iter().enumerate() {
        let endpoint = i == 0 || i == nodes.len() - 1;
        match (endpoint, n.role) {
            (true, NodeRole::TrustedNode) => {
                problems.push(format!("chain-end node {:?} must have role \"endpoint\"", n.kme_id))
            }
            (false, NodeRole::Endpoint) => problems.push(format!(
                "interior node {:?} must have role \"trusted-node\"",
                n.kme_id
            )),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_toml(extra_link_keys: &str) -> String {
        format!(
            r#"
name = "t"
duration_s = 60

[[nodes]]
kme_id = "a"
role = "endpoint"
sae_ids = ["sae-a"]

[[nodes]]
kme_id = "b"
role = "endpoint"
sae_ids = ["sae-b"]

[[links]]
hop_index = 1
from = "a"
to = "b"
length_km = 50.0
quantum_band = "1310nm"
{extra_link_keys}

[[pairings]]
name = "ab"
master_sae_id = "sae-a"
slave_sae_id = "sae-b"
"#
        )
    }

    #[test]
    fn minimal_dark_link_scenario_loads_with_defaults() {
        let s = scenario_from_str(&two_node_toml("")).unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.initial_pool_fill, 0);
        assert!(s.produce_keys);
        assert_eq!(s.links.len(), 1);
        let link = &s.links[0];
        assert_eq!(link.comb, None);
        assert_eq!(link.span.atten_quantum_db_per_km, 0.3671);
        assert_eq!(link.span.atten_classical_db_per_km, 0.25);
        assert_eq!(link.protocol.mu, 0.5);
        assert_eq!(link.detector.detection_efficiency, 0.2);
    }

    #[test]
    fn comb_resolves_from_total_or_channel_form() {
        let total = scenario_from_str(&two_node_toml(
            "co_propagating = true\nwdm_total_power_dbm = 16.8",
        ))
        .unwrap();
        let by_channels = scenario_from_str(&two_node_toml(
            "co_propagating = true\n[links.wdm]\nchannels = 60\nper_channel_dbm = -1.0",
        ))
        .unwrap();
        let p_total = total.links[0].total_power_dbm().unwrap();
        let p_channels = by_channels.links[0].total_power_dbm().unwrap();
        assert_eq!(p_total, 16.8);
        assert!((p_channels - 16.78).abs() < 0.01);
        assert_eq!(by_channels.links[0].comb.unwrap().num_channels, 60);
    }

    #[test]
    fn power_on_dark_link_is_rejected() {
        let err = scenario_from_str(&two_node_toml("wdm_total_power_dbm = 16.8")).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("co_propagating is false"), "{text}");
    }

    #[test]
    fn co_propagating_link_without_comb_is_rejected() {
        let err = scenario_from_str(&two_node_toml("co_propagating = true")).unwrap_err();
        assert!(err.to_string().contains("needs wdm_total_power_dbm"), "{err}");
    }

    #[test]
    fn validation_reports_every_problem_at_once() {
        let toml = r#"
name = "bad"
duration_s = 0
initial_pool_fill = 2000

[[nodes]]
kme_id = "a"
role = "endpoint"

[[nodes]]
kme_id = "a"
role = "endpoint"

[[links]]
hop_index = 1
from = "a"
to = "zzz"
length_km = -5.0
quantum_band = "1310nm"
"#;
        let err = scenario_from_str(toml).unwrap_err();
        let text = err.to_string();
        for needle in [
            "duration_s must be >= 1",
            "exceeds pool capacity",
            "duplicate node id",
            "unknown node \"zzz\"",
            "length_km must be positive",
        ] {
            assert!(text.contains(needle), "missing {needle:?} in:\n{text}");
        }
    }

    #[test]
    fn cyclic_hop_list_is_rejected() {
        let toml = r#"
name = "cycle"
duration_s = 10

[[nodes]]
kme_id = "a"
role = "endpoint"

[[nodes]]
kme_id = "b"
role = "trusted-node"

[[nodes]]
kme_id = "c"
role = "endpoint"

[[links]]
hop_index = 1
from = "a"
to = "b"
length_km = 10.0
quantum_band = "1550nm"

[[links]]
hop_index = 2
from = "b"
to = "a"
length_km = 10.0
quantum_band = "1550nm"
"#;
        let err = scenario_from_str(toml).unwrap_err();
        assert!(err.to_string().contains("revisits node \"a\""), "{err}");
    }

    #[test]
    fn pairing_must_join_the_chain_ends() {
        let toml = two_node_toml("").replace("master_sae_id = \"sae-a\"", "master_sae_id = \"nope\"");
        let err = scenario_from_str(&toml).unwrap_err();
        assert!(err.to_string().contains("not registered on chain-start"), "{err}");
    }

    #[test]
    fn bundled_three_span_matches_published_layout() {
        let s = bundled_scenario("paper_3span").unwrap();
        assert_eq!(s.nodes.len(), 4);
        assert_eq!(s.links.len(), 3);
        let total_km: f64 = s.links.iter().map(|l| l.span.length_km).sum();
        assert_eq!(total_km, 184.0);
        let roles: Vec<NodeRole> = s.nodes.iter().map(|n| n.role).collect();
        assert_eq!(
            roles,
            [NodeRole::Endpoint, NodeRole::TrustedNode, NodeRole::TrustedNode, NodeRole::Endpoint]
        );
        // Only the middle hop co-propagates with the comb, at 17.5 dBm.
        let co: Vec<bool> = s.links.iter().map(|l| l.co_propagating).collect();
        assert_eq!(co, [false, true, false]);
        assert_eq!(s.links[1].total_power_dbm(), Some(17.5));
        assert_eq!(s.duration_s, 86_400);
        assert_eq!(s.initial_pool_fill, 1000);
        assert_eq!(s.pairings.len(), 1);
    }

    #[test]
    fn bundled_single_span_scenarios_match_their_operating_points() {
        let cases = [
            ("paper_1span_20km", 20.0, 15.3),
            ("paper_1span_50km", 50.0, 16.8),
            ("paper_1span_70km", 70.0, 15.8),
        ];
        for (name, km, dbm) in cases {
            let s = bundled_scenario(name).unwrap();
            assert_eq!(s.links.len(), 1, "{name}");
            assert_eq!(s.links[0].span.length_km, km, "{name}");
            assert_eq!(s.links[0].total_power_dbm(), Some(dbm), "{name}");
            assert!(s.links[0].co_propagating);
            assert_eq!(s.links[0].band, QuantumBand::OBand1310);
        }
    }

    #[test]
    fn unknown_bundled_name_lists_the_catalog() {
        let err = bundled_scenario("nope").unwrap_err();
        assert!(err.to_string().contains("paper_3span"), "{err}");
    }

    #[test]
    fn with_wdm_power_rewrites_one_hop() {
        let s = bundled_scenario("paper_3span").unwrap();
        let swept = s.with_wdm_power(2, 13.5);
        assert_eq!(swept.links[1].total_power_dbm(), Some(13.5));
        // Other hops untouched.
        assert_eq!(swept.links[0].comb, None);
        assert_eq!(swept.links[2].comb, None);
    }

    #[test]
    #[should_panic(expected = "carries no comb")]
    fn with_wdm_power_refuses_dark_hops() {
        let s = bundled_scenario("paper_3span").unwrap();
        let _ = s.with_wdm_power(1, 13.5);
    }
}
