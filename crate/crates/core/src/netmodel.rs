//! Network model: buses, unified line/transformer pi branches, per-unit bases
//! and nodal admittance assembly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 0-based bus index within a [`Network`].
pub type BusId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("branch {from}-{to}: zero series impedance")]
    ZeroImpedance { from: BusId, to: BusId },
    #[error("branch {from}-{to}: {reason}")]
    InvalidBranch { from: BusId, to: BusId, reason: String },
    #[error("bus {0}: {1}")]
    InvalidBus(BusId, String),
    #[error("network has {0} reference buses, expected exactly one")]
    ReferenceCount(usize),
    #[error("network is not connected: bus {0} is unreachable from the reference bus")]
    Disconnected(BusId),
    #[error("base must be positive, got {0}")]
    NonPositiveBase(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    #[default]
    Line,
    Transformer,
}

/// Two-port pi element with an ideal phase-shifting transformer on the
/// `from` side. A plain line has `tau = 1`, `theta_shift = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Series resistance (pu).
    pub r_s: f64,
    /// Series reactance (pu).
    pub x_s: f64,
    /// Total shunt susceptance (pu), split half per end. Negative values
    /// model transformer magnetizing reactance.
    pub b_c: f64,
    /// Tap-ratio magnitude.
    pub tau: f64,
    /// Phase shift (rad).
    pub theta_shift: f64,
    pub in_service: bool,
    #[serde(default)]
    pub kind: BranchKind,
}

impl Branch {
    pub fn line(from_bus: BusId, to_bus: BusId, r_s: f64, x_s: f64, b_c: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r_s,
            x_s,
            b_c,
            tau: 1.0,
            theta_shift: 0.0,
            in_service: true,
            kind: BranchKind::Line,
        }
    }

    pub fn transformer(
        from_bus: BusId,
        to_bus: BusId,
        r_s: f64,
        x_s: f64,
        b_c: f64,
        tau: f64,
        theta_shift: f64,
    ) -> Self {
        Self {
            from_bus,
            to_bus,
            r_s,
            x_s,
            b_c,
            tau,
            theta_shift,
            in_service: true,
            kind: BranchKind::Transformer,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |reason: &str| NetError::InvalidBranch {
            from: self.from_bus,
            to: self.to_bus,
            reason: reason.to_string(),
        };
        if !(self.r_s.is_finite() && self.x_s.is_finite() && self.b_c.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(bad("tap ratio must be positive"));
        }
        if !self.theta_shift.is_finite() {
            return Err(bad("non-finite phase shift"));
        }
        if self.r_s < 0.0 {
            return Err(bad("negative series resistance"));
        }
        if self.r_s == 0.0 && self.x_s == 0.0 {
            return Err(NetError::ZeroImpedance {
                from: self.from_bus,
                to: self.to_bus,
            });
        }
        if self.from_bus == self.to_bus {
            return Err(bad("branch endpoints coincide"));
        }
        Ok(())
    }

    /// Series admittance `1 / (r_s + j x_s)`.
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r_s, self.x_s)
    }

    /// Complex tap `tau * e^{j theta}`.
    pub fn tap(&self) -> Complex64 {
        Complex64::from_polar(self.tau, self.theta_shift)
    }
}

/// 2x2 branch admittance block `[[y_ff, y_ft], [y_tf, y_tt]]`.
pub type BranchBlock = [[Complex64; 2]; 2];

/// Branch admittance matrix of the tapped pi model.
pub fn branch_admittance(branch: &Branch) -> Result<BranchBlock, NetError> {
    branch.validate()?;
    let y_s = branch.series_admittance();
    let y_tt = y_s + Complex64::new(0.0, branch.b_c / 2.0);
    let tap = branch.tap();
    let tau2 = branch.tau * branch.tau;
    Ok([[y_tt / tau2, -y_s / tap.conj()], [-y_s / tap, y_tt]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusRole {
    Reference,
    #[serde(rename = "pq")]
    PQ,
    #[serde(rename = "pv")]
    PV,
}

/// Bus role plus its injections and targets, all per-unit. Loads are
/// negative injections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: BusId,
    pub role: BusRole,
    /// Voltage magnitude target (Reference/PV).
    pub v_set: f64,
    /// Voltage angle (Reference).
    pub angle_set: f64,
    pub p_inject: f64,
    pub q_inject: f64,
}

impl BusSpec {
    pub fn reference(id: BusId, v_set: f64, angle_set: f64) -> Self {
        Self {
            id,
            role: BusRole::Reference,
            v_set,
            angle_set,
            p_inject: 0.0,
            q_inject: 0.0,
        }
    }

    pub fn pq(id: BusId, p_inject: f64, q_inject: f64) -> Self {
        Self {
            id,
            role: BusRole::PQ,
            v_set: 1.0,
            angle_set: 0.0,
            p_inject,
            q_inject,
        }
    }

    pub fn pv(id: BusId, p_inject: f64, v_set: f64) -> Self {
        Self {
            id,
            role: BusRole::PV,
            v_set,
            angle_set: 0.0,
            p_inject,
            q_inject: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<Branch>,
    /// System apparent-power base (MVA).
    pub s_base: f64,
    /// Per-bus voltage base (kV).
    pub v_bases: Vec<f64>,
}

impl Network {
    /// Builds a network and checks structural invariants (ids, branch
    /// endpoints, bases). Connectivity and the single-reference rule are
    /// checked by [`Network::validate_solvable`] since intermediate networks
    /// are allowed to violate them.
    pub fn new(buses: Vec<BusSpec>, branches: Vec<Branch>, s_base: f64, v_bases: Vec<f64>) -> Result<Self, NetError> {
        let net = Self {
            buses,
            branches,
            s_base,
            v_bases,
        };
        net.validate_structure()?;
        Ok(net)
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn validate_structure(&self) -> Result<(), NetError> {
        if !(self.s_base.is_finite() && self.s_base > 0.0) {
            return Err(NetError::NonPositiveBase(self.s_base));
        }
        let n = self.buses.len();
        if self.v_bases.len() != n {
            return Err(NetError::InvalidBus(
                n,
                format!("{} voltage bases for {} buses", self.v_bases.len(), n),
            ));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return Err(NetError::InvalidBus(
                    i,
                    format!("id {} does not match its position", bus.id),
                ));
            }
            if !(self.v_bases[i].is_finite() && self.v_bases[i] > 0.0) {
                return Err(NetError::InvalidBus(i, "voltage base must be positive".into()));
            }
            if matches!(bus.role, BusRole::Reference | BusRole::PV) && !(bus.v_set.is_finite() && bus.v_set > 0.0) {
                return Err(NetError::InvalidBus(i, "v_set must be positive".into()));
            }
            if !(bus.p_inject.is_finite() && bus.q_inject.is_finite() && bus.angle_set.is_finite()) {
                return Err(NetError::InvalidBus(i, "non-finite injection".into()));
            }
        }
        for br in &self.branches {
            if br.from_bus >= n || br.to_bus >= n {
                return Err(NetError::InvalidBranch {
                    from: br.from_bus,
                    to: br.to_bus,
                    reason: "endpoint references a missing bus".into(),
                });
            }
            br.validate()?;
        }
        Ok(())
    }

    /// Index of the single reference bus.
    pub fn reference_bus(&self) -> Result<BusId, NetError> {
        let refs: Vec<_> = self
            .buses
            .iter()
            .filter(|b| b.role == BusRole::Reference)
            .map(|b| b.id)
            .collect();
        match refs.as_slice() {
            [r] => Ok(*r),
            _ => Err(NetError::ReferenceCount(refs.len())),
        }
    }

    /// Structure, exactly one reference bus, and connectivity over the
    /// in-service branches.
    pub fn validate_solvable(&self) -> Result<BusId, NetError> {
        self.validate_structure()?;
        let root = self.reference_bus()?;
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            adj[br.from_bus].push(br.to_bus);
            adj[br.to_bus].push(br.from_bus);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(bus) => Err(NetError::Disconnected(bus)),
            None => Ok(root),
        }
    }

    /// Re-expresses every per-unit quantity on a new system power base.
    /// Voltage bases are unchanged.
    pub fn rebase(&self, new_s_base: f64) -> Result<Self, NetError> {
        if !(new_s_base.is_finite() && new_s_base > 0.0) {
            return Err(NetError::NonPositiveBase(new_s_base));
        }
        // z_pu scales with S_base, y_pu and s_pu inversely.
        let k = new_s_base / self.s_base;
        let buses = self
            .buses
            .iter()
            .map(|b| BusSpec {
                p_inject: b.p_inject / k,
                q_inject: b.q_inject / k,
                ..*b
            })
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|br| Branch {
                r_s: br.r_s * k,
                x_s: br.x_s * k,
                b_c: br.b_c / k,
                ..*br
            })
            .collect();
        Ok(Self {
            buses,
            branches,
            s_base: new_s_base,
            v_bases: self.v_bases.clone(),
        })
    }
}

/// Nodal admittance matrix by superposition of in-service branch blocks.
pub fn assemble_ybus(network: &Network) -> Result<DMatrix<Complex64>, NetError> {
    let n = network.bus_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in network.branches.iter().filter(|b| b.in_service) {
        if br.from_bus >= n || br.to_bus >= n {
            return Err(NetError::InvalidBranch {
                from: br.from_bus,
                to: br.to_bus,
                reason: "endpoint references a missing bus".into(),
            });
        }
        let blk = branch_admittance(br)?;
        let (f, t) = (br.from_bus, br.to_bus);
        y[(f, f)] += blk[0][0];
        y[(f, t)] += blk[0][1];
        y[(t, f)] += blk[1][0];
        y[(t, t)] += blk[1][1];
    }
    Ok(y)
}

pub fn to_per_unit(value: f64, base: f64) -> Result<f64, NetError> {
    if !(base.is_finite() && base > 0.0) {
        return Err(NetError::NonPositiveBase(base));
    }
    Ok(value / base)
}

pub fn from_per_unit(value: f64, base: f64) -> Result<f64, NetError> {
    if !(base.is_finite() && base > 0.0) {
        return Err(NetError::NonPositiveBase(base));
    }
    Ok(value * base)
}

/// Impedance base in ohms for a voltage base (kV) and power base (MVA).
pub fn impedance_base(kv: f64, mva: f64) -> Result<f64, NetError> {
    if !(mva.is_finite() && mva > 0.0) {
        return Err(NetError::NonPositiveBase(mva));
    }
    if !(kv.is_finite() && kv > 0.0) {
        return Err(NetError::NonPositiveBase(kv));
    }
    Ok(kv * kv / mva)
}
