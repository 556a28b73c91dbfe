//! TOML scenario files.
//!
//! A scenario carries the supply circuit in physical units, the auxiliary
//! load tables, device parameter blocks, trigger thresholds and simulation
//! options. A raw per-unit `[network]` section may be given instead of, or
//! in addition to, the circuit for plain power-flow studies.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{ElzParams, LscParams, MscParams, PemfcParams};
use crate::netmodel::{Branch, BranchKind, BusRole, BusSpec, NetError, Network};
use crate::sequencer::TriggerThresholds;
use crate::sim::{BlackstartScenario, SimOptions, WindProfile};
use crate::sizing::{
    build_blackstart_network, AuxLoadEntry, AuxLoadTable, CircuitTemplate, SizingError, SizingScenario,
};

/// The shipped six-bus case, resolvable by name.
pub const REFERENCE_CASE: &str = include_str!("../scenarios/paper-case.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("scenario has no [{0}] section")]
    Missing(&'static str),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Network(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub target_p_mw: f64,
    pub target_q_mvar: f64,
    /// Relative tolerance on both targets.
    pub tolerance: f64,
    #[serde(default)]
    pub fitted: Vec<String>,
    #[serde(default)]
    pub verbatim: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

fn default_ratio() -> f64 {
    0.05
}
fn default_margin() -> f64 {
    0.30
}
fn default_granularity() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingSection {
    pub dfig_rating_mw: f64,
    #[serde(default = "default_ratio")]
    pub wind_aux_ratio: f64,
    #[serde(default)]
    pub hydrogen_aux_q_mvar: f64,
    #[serde(default)]
    pub unitemized_load_mw: f64,
    #[serde(default)]
    pub lsc_standby_mw: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_granularity")]
    pub rating_granularity_mw: f64,
    #[serde(default)]
    pub hydrogen_aux_source: String,
    #[serde(default)]
    pub hydrogen_aux: Vec<AuxLoadEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub pemfc: PemfcParams,
    pub lsc: LscParams,
    pub msc: MscParams,
    pub elz: ElzParams,
}

fn default_times() -> [f64; 5] {
    [0.2, 0.3, 0.5, 0.7, 1.7]
}
fn yes() -> bool {
    true
}
fn default_pickup() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    #[serde(default = "default_times")]
    pub scripted_times: [f64; 5],
    #[serde(default = "yes")]
    pub whcc_disconnect_pemfc: bool,
    #[serde(default = "default_pickup")]
    pub aux_pickup_tau: f64,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self {
            scripted_times: default_times(),
            whcc_disconnect_pemfc: true,
            aux_pickup_tau: default_pickup(),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBus {
    pub id: usize,
    pub role: BusRole,
    #[serde(default = "one")]
    pub v_set: f64,
    #[serde(default)]
    pub angle_deg: f64,
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default = "one")]
    pub kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBranch {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub shift_deg: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
    #[serde(default)]
    pub kind: BranchKind,
}

/// Per-unit network with dense 0-based bus ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetwork {
    pub s_base_mva: f64,
    #[serde(rename = "bus")]
    pub buses: Vec<RawBus>,
    #[serde(rename = "branch", default)]
    pub branches: Vec<RawBranch>,
}

impl RawNetwork {
    pub fn to_network(&self) -> Result<Network, NetError> {
        let mut buses: Vec<&RawBus> = self.buses.iter().collect();
        buses.sort_by_key(|b| b.id);
        let specs = buses
            .iter()
            .map(|b| BusSpec {
                id: b.id,
                role: b.role,
                v_set: b.v_set,
                angle_set: b.angle_deg.to_radians(),
                p_inject: b.p,
                q_inject: b.q,
            })
            .collect();
        let kv = buses.iter().map(|b| b.kv).collect();
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                from_bus: b.from,
                to_bus: b.to,
                r_s: b.r,
                x_s: b.x,
                b_c: b.b,
                tau: b.tau,
                theta_shift: b.shift_deg.to_radians(),
                in_service: b.in_service,
                kind: b.kind,
            })
            .collect();
        Network::new(specs, branches, self.s_base_mva, kv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub calibration: Option<Calibration>,
    pub sizing: Option<SizingSection>,
    pub circuit: Option<CircuitTemplate>,
    #[serde(default)]
    pub devices: DeviceSection,
    #[serde(default)]
    pub wind: WindProfile,
    #[serde(default)]
    pub thresholds: TriggerThresholds,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub sequence: SequenceSection,
    pub network: Option<RawNetwork>,
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Loads a scenario by path, or the shipped case by its name.
    pub fn load(spec: &str) -> Result<Self, ScenarioError> {
        if spec == "paper-case" && !Path::new(spec).exists() {
            return Self::parse(REFERENCE_CASE, "paper-case");
        }
        let text = std::fs::read_to_string(spec).map_err(|source| ScenarioError::Io {
            path: spec.to_string(),
            source,
        })?;
        Self::parse(&text, spec)
    }

    pub fn sizing_scenario(&self) -> Result<SizingScenario, ScenarioError> {
        let s = self.sizing.as_ref().ok_or(ScenarioError::Missing("sizing"))?;
        let circuit = self.circuit.clone().ok_or(ScenarioError::Missing("circuit"))?;
        let scenario = SizingScenario {
            dfig_rating_mw: s.dfig_rating_mw,
            wind_aux_ratio: s.wind_aux_ratio,
            hydrogen_aux: AuxLoadTable {
                entries: s.hydrogen_aux.clone(),
                source: s.hydrogen_aux_source.clone(),
            },
            hydrogen_aux_q_mvar: s.hydrogen_aux_q_mvar,
            unitemized_load_mw: s.unitemized_load_mw,
            lsc_standby_mw: s.lsc_standby_mw,
            circuit,
            margin: s.margin,
            rating_granularity_mw: s.rating_granularity_mw,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn blackstart_scenario(&self) -> Result<BlackstartScenario, ScenarioError> {
        let sizing = self.sizing_scenario()?;
        let lsc = LscParams {
            standby_mw: sizing.lsc_standby_mw,
            ..self.devices.lsc
        };
        Ok(BlackstartScenario {
            sizing,
            pemfc: self.devices.pemfc,
            lsc,
            msc: self.devices.msc,
            elz: self.devices.elz,
            wind: self.wind,
            thresholds: self.thresholds,
            aux_pickup_tau: self.sequence.aux_pickup_tau,
            scripted_times: self.sequence.scripted_times,
            whcc_disconnect_pemfc: self.sequence.whcc_disconnect_pemfc,
        })
    }

    /// Network for a plain flow study: the raw section when present,
    /// otherwise the loaded supply circuit.
    pub fn flow_network(&self) -> Result<(Network, Vec<String>, Vec<u32>), ScenarioError> {
        if let Some(raw) = &self.network {
            let net = raw.to_network()?;
            let labels = net
                .branches
                .iter()
                .map(|b| format!("{}-{}", b.from_bus, b.to_bus))
                .collect();
            let numbers = (0..net.bus_count() as u32).collect();
            return Ok((net, labels, numbers));
        }
        let circuit = build_blackstart_network(&self.sizing_scenario()?)?;
        Ok((circuit.network, circuit.branch_labels, circuit.bus_numbers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_case_parses() {
        let s = ScenarioFile::parse(REFERENCE_CASE, "paper-case").unwrap();
        assert!(s.calibration.is_some());
        let b = s.blackstart_scenario().unwrap();
        assert_eq!(b.sizing.hydrogen_aux.entries.len(), 11);
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let text = "name = \"x\"\n[thresholds]\nv_bnad = 0.1\n";
        let err = ScenarioFile::parse(text, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("bad.toml"), "{err}");
        assert!(err.contains("v_bnad"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn raw_network_section() {
        let text = r#"
[network]
s_base_mva = 100
[[network.bus]]
id = 0
role = "reference"
[[network.bus]]
id = 1
role = "pq"
p = -0.5
[[network.branch]]
from = 0
to = 1
x = 0.1
"#;
        let s = ScenarioFile::parse(text, "raw").unwrap();
        let (net, labels, _) = s.flow_network().unwrap();
        assert_eq!(net.bus_count(), 2);
        assert_eq!(labels, vec!["0-1"]);
        assert!(s.sizing_scenario().is_err());
    }
}
