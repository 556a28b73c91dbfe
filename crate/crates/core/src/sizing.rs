//! Black-start source sizing: auxiliary load tables, the minimum supply
//! circuit, and the PEMFC rating that follows from its power flow.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{impedance_base, to_per_unit, Branch, BranchKind, BusId, BusSpec, NetError, Network};
use crate::powerflow::{solve, FlowError, FlowOptions, NetworkSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizingError {
    #[error("invalid sizing scenario: {0}")]
    Invalid(String),
    #[error("malformed circuit template: {0}")]
    Template(String),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxLoadEntry {
    pub name: String,
    pub count: u32,
    pub rated_kw: f64,
    #[serde(default)]
    pub reactive_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AuxLoadTable {
    pub entries: Vec<AuxLoadEntry>,
    #[serde(default)]
    pub source: String,
}

impl AuxLoadTable {
    pub fn validate(&self) -> Result<(), SizingError> {
        for e in &self.entries {
            if e.count < 1 {
                return Err(SizingError::Invalid(format!("{}: count must be >= 1", e.name)));
            }
            if !(e.rated_kw.is_finite() && e.rated_kw >= 0.0) {
                return Err(SizingError::Invalid(format!("{}: rated power must be >= 0", e.name)));
            }
            if !e.reactive_kvar.is_finite() {
                return Err(SizingError::Invalid(format!("{}: non-finite kvar", e.name)));
            }
        }
        Ok(())
    }

    /// Minimum auxiliary load of the hydrogen production side of a 5 MW
    /// alkaline electrolyzer, every device at rated power.
    pub fn hydrogen_side() -> Self {
        let rows: [(&str, f64); 11] = [
            ("Alkali Circulation Pump", 65.0),
            ("Deaeration Electric Heater", 100.0),
            ("Hydrogen Dryer Electric Heater", 120.0),
            ("Alkali Preparation Pump", 5.5),
            ("Make-up Water Pump", 15.0),
            ("Hydrogen Generation Control Cabinet", 2.0),
            ("SIS Control Cabinet", 2.0),
            ("Lighting Box", 5.0),
            ("Comprehensive Building", 500.0),
            ("Central Control Room", 500.0),
            ("Field Cabinet Room", 200.0),
        ];
        Self {
            entries: rows
                .iter()
                .map(|&(name, kw)| AuxLoadEntry {
                    name: name.to_string(),
                    count: 1,
                    rated_kw: kw,
                    reactive_kvar: 0.0,
                })
                .collect(),
            source: "240 MW alkaline hydrogen project, per-electrolyzer minimum auxiliary load".into(),
        }
    }
}

/// Printed total of the hydrogen-side table (kW). It exceeds the itemized
/// sum by 120 kW, the dryer-heater row.
pub const HYDROGEN_SIDE_PRINTED_TOTAL_KW: f64 = 1634.5;

/// Measured auxiliary loads (kW) of 1.5 MW turbines from three suppliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbineAuxSurvey {
    pub supplier: &'static str,
    pub yaw_kw: f64,
    pub pitch_kw: f64,
    pub gearbox_thermal_kw: f64,
    pub gearbox_lube_kw: f64,
    pub generator_thermal_kw: f64,
    pub inverter_thermal_kw: f64,
    pub nacelle_tower_thermal_kw: f64,
}

impl TurbineAuxSurvey {
    pub const TURBINE_RATING_MW: f64 = 1.5;

    pub fn total_kw(&self) -> f64 {
        self.yaw_kw
            + self.pitch_kw
            + self.gearbox_thermal_kw
            + self.gearbox_lube_kw
            + self.generator_thermal_kw
            + self.inverter_thermal_kw
            + self.nacelle_tower_thermal_kw
    }

    pub fn ratio(&self) -> f64 {
        self.total_kw() / 1000.0 / Self::TURBINE_RATING_MW
    }
}

pub const TURBINE_AUX_SURVEY: [TurbineAuxSurvey; 3] = [
    TurbineAuxSurvey {
        supplier: "1#",
        yaw_kw: 12.0,
        pitch_kw: 12.0,
        gearbox_thermal_kw: 6.2,
        gearbox_lube_kw: 10.3,
        generator_thermal_kw: 15.4,
        inverter_thermal_kw: 0.0,
        nacelle_tower_thermal_kw: 22.7,
    },
    TurbineAuxSurvey {
        supplier: "2#",
        yaw_kw: 8.8,
        pitch_kw: 8.4,
        gearbox_thermal_kw: 5.5,
        gearbox_lube_kw: 10.4,
        generator_thermal_kw: 1.1,
        inverter_thermal_kw: 0.8,
        nacelle_tower_thermal_kw: 26.5,
    },
    TurbineAuxSurvey {
        supplier: "3#",
        yaw_kw: 12.0,
        pitch_kw: 12.0,
        gearbox_thermal_kw: 5.6,
        gearbox_lube_kw: 10.6,
        generator_thermal_kw: 11.0,
        inverter_thermal_kw: 0.8,
        nacelle_tower_thermal_kw: 23.0,
    },
];

/// Wind-farm startup auxiliary load (MW) as a fraction of one turbine.
pub fn wind_aux_load(dfig_rating_mw: f64, ratio: f64) -> f64 {
    dfig_rating_mw * ratio
}

/// Total hydrogen-side auxiliary load (MW), every device at rated power.
pub fn hydrogen_aux_load(table: &AuxLoadTable) -> f64 {
    table.entries.iter().map(|e| e.count as f64 * e.rated_kw).sum::<f64>() / 1000.0
}

/// Reactive part of the itemized table (MVar).
pub fn hydrogen_aux_reactive(table: &AuxLoadTable) -> f64 {
    table
        .entries
        .iter()
        .map(|e| e.count as f64 * e.reactive_kvar)
        .sum::<f64>()
        / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBus {
    /// External bus number as drawn on the one-line diagram.
    pub number: u32,
    pub kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TemplateBranch {
    /// Line or cable in physical units at its (common) voltage level.
    Line {
        from: u32,
        to: u32,
        r_ohm: f64,
        x_ohm: f64,
        /// Total charging susceptance (microsiemens).
        #[serde(default)]
        b_us: f64,
    },
    /// Two-winding transformer, impedance on its own rating.
    Transformer {
        from: u32,
        to: u32,
        rated_mva: f64,
        r_pu: f64,
        x_pu: f64,
        /// No-load reactive consumption at rated voltage.
        #[serde(default)]
        magnetizing_mvar: f64,
        rated_kv_from: f64,
        rated_kv_to: f64,
        #[serde(default)]
        shift_deg: f64,
    },
}

impl TemplateBranch {
    fn ends(&self) -> (u32, u32) {
        match *self {
            TemplateBranch::Line { from, to, .. } | TemplateBranch::Transformer { from, to, .. } => (from, to),
        }
    }
}

/// Physical description of the minimum supply circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitTemplate {
    pub s_base_mva: f64,
    pub buses: Vec<TemplateBus>,
    pub branches: Vec<TemplateBranch>,
    /// Bus of the black-start source inverter (reference).
    pub pemfc_bus: u32,
    pub dfig_bus: u32,
    pub wind_aux_bus: u32,
    pub hydrogen_bus: u32,
    #[serde(default = "one")]
    pub pemfc_v_set: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingScenario {
    pub dfig_rating_mw: f64,
    pub wind_aux_ratio: f64,
    pub hydrogen_aux: AuxLoadTable,
    pub hydrogen_aux_q_mvar: f64,
    /// Unitemized hydrogen-side load (MW) not covered by the table.
    pub unitemized_load_mw: f64,
    pub lsc_standby_mw: f64,
    pub circuit: CircuitTemplate,
    pub margin: f64,
    pub rating_granularity_mw: f64,
}

impl SizingScenario {
    pub fn validate(&self) -> Result<(), SizingError> {
        let bad = |m: &str| Err(SizingError::Invalid(m.to_string()));
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad("margin must be >= 0");
        }
        if !(self.wind_aux_ratio > 0.0 && self.wind_aux_ratio < 1.0) {
            return bad("wind_aux_ratio must lie in (0, 1)");
        }
        if !(self.rating_granularity_mw.is_finite() && self.rating_granularity_mw > 0.0) {
            return bad("rating_granularity_mw must be positive");
        }
        for (name, v) in [
            ("dfig_rating_mw", self.dfig_rating_mw),
            ("unitemized_load_mw", self.unitemized_load_mw),
            ("lsc_standby_mw", self.lsc_standby_mw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SizingError::Invalid(format!("{name} must be >= 0")));
            }
        }
        if !self.hydrogen_aux_q_mvar.is_finite() {
            return bad("hydrogen_aux_q_mvar must be finite");
        }
        self.hydrogen_aux.validate()
    }

    pub fn wind_aux_mw(&self) -> f64 {
        wind_aux_load(self.dfig_rating_mw, self.wind_aux_ratio)
    }

    pub fn hydrogen_aux_mw(&self) -> f64 {
        hydrogen_aux_load(&self.hydrogen_aux)
    }

    /// Hydrogen-side reactive load (MVar): the declared aggregate plus any
    /// per-device kvar in the table.
    pub fn hydrogen_q_mvar(&self) -> f64 {
        self.hydrogen_aux_q_mvar + hydrogen_aux_reactive(&self.hydrogen_aux)
    }

    /// Sum of active loads the source must carry, excluding losses.
    pub fn active_load_mw(&self) -> f64 {
        self.wind_aux_mw() + self.hydrogen_aux_mw() + self.unitemized_load_mw + self.lsc_standby_mw
    }
}

/// Internal indices of the buses that host devices and loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitBuses {
    pub pemfc: BusId,
    pub dfig: BusId,
    pub wind_aux: BusId,
    pub hydrogen: BusId,
}

/// Per-unit network of the supply circuit plus its labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyCircuit {
    pub network: Network,
    pub buses: CircuitBuses,
    /// External bus numbers by internal index.
    pub bus_numbers: Vec<u32>,
    /// `"a-b"` label per branch, using external numbers.
    pub branch_labels: Vec<String>,
}

impl SupplyCircuit {
    /// Per-unit network with every load and injection set to zero; the
    /// simulator fills injections per time step.
    pub fn unloaded_network(&self) -> Network {
        let mut net = self.network.clone();
        for b in &mut net.buses {
            b.p_inject = 0.0;
            b.q_inject = 0.0;
        }
        net
    }
}

/// Converts the template into a per-unit network without loads.
pub fn build_circuit(template: &CircuitTemplate) -> Result<SupplyCircuit, SizingError> {
    let terr = |m: String| SizingError::Template(m);
    if template.buses.is_empty() {
        return Err(terr("no buses".into()));
    }
    let mut index: HashMap<u32, BusId> = HashMap::new();
    for (i, b) in template.buses.iter().enumerate() {
        if index.insert(b.number, i).is_some() {
            return Err(terr(format!("duplicate bus number {}", b.number)));
        }
        if !(b.kv.is_finite() && b.kv > 0.0) {
            return Err(terr(format!("bus {}: kv must be positive", b.number)));
        }
    }
    let lookup = |n: u32| {
        index
            .get(&n)
            .copied()
            .ok_or_else(|| terr(format!("unknown bus number {n}")))
    };
    let s_base = template.s_base_mva;
    to_per_unit(1.0, s_base)?;
    let kv: Vec<f64> = template.buses.iter().map(|b| b.kv).collect();

    let mut branches = Vec::with_capacity(template.branches.len());
    let mut labels = Vec::with_capacity(template.branches.len());
    for tb in &template.branches {
        let (fnum, tnum) = tb.ends();
        let (f, t) = (lookup(fnum)?, lookup(tnum)?);
        labels.push(format!("{fnum}-{tnum}"));
        let br = match *tb {
            TemplateBranch::Line { r_ohm, x_ohm, b_us, .. } => {
                if (kv[f] - kv[t]).abs() > 1e-9 * kv[f] {
                    return Err(terr(format!("line {fnum}-{tnum} joins different voltage levels")));
                }
                let zb = impedance_base(kv[f], s_base)?;
                Branch::line(f, t, r_ohm / zb, x_ohm / zb, b_us * 1e-6 * zb)
            }
            TemplateBranch::Transformer {
                rated_mva,
                r_pu,
                x_pu,
                magnetizing_mvar,
                rated_kv_from,
                rated_kv_to,
                shift_deg,
                ..
            } => {
                if !(rated_mva > 0.0 && rated_kv_from > 0.0 && rated_kv_to > 0.0) {
                    return Err(terr(format!("transformer {fnum}-{tnum}: ratings must be positive")));
                }
                // Series impedance referred to the `to` winding; ideal tap on
                // the `from` side.
                let n_to = rated_kv_to / kv[t];
                let n_from = rated_kv_from / kv[f];
                let z_scale = (s_base / rated_mva) * n_to * n_to;
                let b_c = -(magnetizing_mvar / s_base) / (n_to * n_to);
                Branch::transformer(
                    f,
                    t,
                    r_pu * z_scale,
                    x_pu * z_scale,
                    b_c,
                    n_from / n_to,
                    shift_deg.to_radians(),
                )
            }
        };
        br.validate()?;
        branches.push(br);
    }

    let buses = CircuitBuses {
        pemfc: lookup(template.pemfc_bus)?,
        dfig: lookup(template.dfig_bus)?,
        wind_aux: lookup(template.wind_aux_bus)?,
        hydrogen: lookup(template.hydrogen_bus)?,
    };
    let specs = (0..template.buses.len())
        .map(|i| {
            if i == buses.pemfc {
                BusSpec::reference(i, template.pemfc_v_set, 0.0)
            } else {
                BusSpec::pq(i, 0.0, 0.0)
            }
        })
        .collect();
    let network = Network::new(specs, branches, s_base, kv)?;
    network.validate_solvable()?;
    Ok(SupplyCircuit {
        network,
        buses,
        bus_numbers: template.buses.iter().map(|b| b.number).collect(),
        branch_labels: labels,
    })
}

/// Supply circuit with the startup loads applied.
pub fn build_blackstart_network(scenario: &SizingScenario) -> Result<SupplyCircuit, SizingError> {
    scenario.validate()?;
    let mut circuit = build_circuit(&scenario.circuit)?;
    let b = circuit.buses;
    if b.pemfc == b.dfig || b.pemfc == b.wind_aux || b.pemfc == b.hydrogen {
        return Err(SizingError::Template(
            "load buses must differ from the reference bus".into(),
        ));
    }
    let s = circuit.network.s_base;
    let mut add = |bus: BusId, p_mw: f64, q_mvar: f64| -> Result<(), SizingError> {
        circuit.network.buses[bus].p_inject -= to_per_unit(p_mw, s)?;
        circuit.network.buses[bus].q_inject -= to_per_unit(q_mvar, s)?;
        Ok(())
    };
    add(b.wind_aux, scenario.wind_aux_mw(), 0.0)?;
    // LSC regulates the DC link at zero reactive power.
    add(b.dfig, scenario.lsc_standby_mw, 0.0)?;
    add(
        b.hydrogen,
        scenario.hydrogen_aux_mw() + scenario.unitemized_load_mw,
        scenario.hydrogen_q_mvar(),
    )?;
    Ok(circuit)
}

/// Reactive/active loss split of a solved supply circuit (MW / MVar).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total_p_mw: f64,
    pub total_q_mvar: f64,
    /// No-load reactive consumption of transformer magnetizing branches.
    pub transformer_excitation_mvar: f64,
    /// Reactive power of line shunt capacitance; negative means injected.
    pub line_charging_mvar: f64,
    pub series_q_mvar: f64,
}

pub fn loss_breakdown(network: &Network, solution: &NetworkSolution) -> LossBreakdown {
    let s = network.s_base;
    let mut excitation = 0.0;
    let mut charging = 0.0;
    for (br, fl) in network.branches.iter().zip(&solution.branch_flows) {
        match br.kind {
            BranchKind::Transformer => excitation += fl.shunt_q,
            BranchKind::Line => charging += fl.shunt_q,
        }
    }
    let total_q = solution.loss_total.im;
    LossBreakdown {
        total_p_mw: solution.loss_total.re * s,
        total_q_mvar: total_q * s,
        transformer_excitation_mvar: excitation * s,
        line_charging_mvar: charging * s,
        series_q_mvar: (total_q - excitation - charging) * s,
    }
}

/// Active and reactive power (MW, MVar) the source must supply.
pub fn required_blackstart_power(scenario: &SizingScenario) -> Result<(f64, f64), SizingError> {
    let circuit = build_blackstart_network(scenario)?;
    let sol = solve(&circuit.network, &FlowOptions::default())?;
    let s = circuit.network.s_base;
    Ok((sol.reference_injection.re * s, sol.reference_injection.im * s))
}

/// Rating (MW): `p_min * (1 + margin)` rounded to the nearest multiple of
/// `granularity_mw`.
pub fn pemfc_rating(p_min_mw: f64, _q_min_mvar: f64, margin: f64, granularity_mw: f64) -> f64 {
    let raw = p_min_mw * (1.0 + margin);
    (raw / granularity_mw).round() * granularity_mw
}

pub fn apparent_power(p_mw: f64, q_mvar: f64) -> f64 {
    p_mw.hypot(q_mvar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub wind_aux_mw: f64,
    pub hydrogen_aux_mw: f64,
    pub hydrogen_aux_mvar: f64,
    pub unitemized_mw: f64,
    pub lsc_standby_mw: f64,
    pub active_total_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingReport {
    pub p_min_mw: f64,
    pub q_min_mvar: f64,
    pub s_min_mva: f64,
    pub margin: f64,
    pub granularity_mw: f64,
    pub rating_mw: f64,
    pub loads: LoadSummary,
    pub losses: LossBreakdown,
    /// LSC DC-link maintenance draw seen at the DFIG bus in the solved flow.
    pub lsc_standby_flow_mw: f64,
    pub iterations: usize,
}

/// Full sizing pass: circuit, power flow, loss split and rating.
pub fn size(scenario: &SizingScenario) -> Result<(SizingReport, SupplyCircuit, NetworkSolution), SizingError> {
    let circuit = build_blackstart_network(scenario)?;
    let sol = solve(&circuit.network, &FlowOptions::default())?;
    let s = circuit.network.s_base;
    let (p_min, q_min) = (sol.reference_injection.re * s, sol.reference_injection.im * s);
    let report = SizingReport {
        p_min_mw: p_min,
        q_min_mvar: q_min,
        s_min_mva: apparent_power(p_min, q_min),
        margin: scenario.margin,
        granularity_mw: scenario.rating_granularity_mw,
        rating_mw: pemfc_rating(p_min, q_min, scenario.margin, scenario.rating_granularity_mw),
        loads: LoadSummary {
            wind_aux_mw: scenario.wind_aux_mw(),
            hydrogen_aux_mw: scenario.hydrogen_aux_mw(),
            hydrogen_aux_mvar: scenario.hydrogen_q_mvar(),
            unitemized_mw: scenario.unitemized_load_mw,
            lsc_standby_mw: scenario.lsc_standby_mw,
            active_total_mw: scenario.active_load_mw(),
        },
        losses: loss_breakdown(&circuit.network, &sol),
        lsc_standby_flow_mw: -sol.bus_injections[circuit.buses.dfig].re * s,
        iterations: sol.iterations,
    };
    Ok((report, circuit, sol))
}
