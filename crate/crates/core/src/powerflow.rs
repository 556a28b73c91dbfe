//! Newton-Raphson AC power flow in polar coordinates.
//!
//! Unknowns are the voltage angles at every non-reference bus followed by the
//! voltage magnitudes at every PQ bus, both in ascending bus order. The
//! mismatch vector uses the same layout: active-power mismatch at non-reference
//! buses, then reactive-power mismatch at PQ buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{assemble_ybus, branch_admittance, BusId, BusRole, NetError, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("rejected network: {0}")]
    Network(#[from] NetError),
    #[error("power flow did not converge in {iterations} iterations (mismatch trace {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("initial state has {got} entries, expected {expected}")]
    StateSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Max-norm of the power mismatch (pu).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start PQ/PV buses at 1.0∠0 instead of their `v_set`.
    pub flat_start: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 30,
            flat_start: true,
        }
    }
}

impl FlowOptions {
    fn validate(&self) -> Result<(), FlowError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(FlowError::InvalidOptions("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(FlowError::InvalidOptions("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Complex power entering the branch at each end (pu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub s_from: Complex64,
    pub s_to: Complex64,
    /// `s_from + s_to`.
    pub loss: Complex64,
    /// Reactive power consumed by the branch's shunt elements (pu). Negative
    /// when the shunt injects (line charging).
    pub shunt_q: f64,
}

impl BranchFlow {
    fn open(from_bus: BusId, to_bus: BusId) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Self {
            from_bus,
            to_bus,
            s_from: zero,
            s_to: zero,
            loss: zero,
            shunt_q: 0.0,
        }
    }

    /// Flow in the reporting direction, from the lower- to the higher-numbered bus.
    pub fn directed(&self) -> Complex64 {
        if self.from_bus < self.to_bus {
            self.s_from
        } else {
            self.s_to
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSolution {
    pub voltages: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
    /// Mismatch max-norm before each Newton update and after the last one.
    pub trace: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub loss_total: Complex64,
    pub reference_injection: Complex64,
    /// Net complex injection at every bus, computed from the solved voltages.
    pub bus_injections: Vec<Complex64>,
}

/// Layout of the Newton state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    pub angle_buses: Vec<BusId>,
    pub magnitude_buses: Vec<BusId>,
}

impl StateLayout {
    pub fn of(network: &Network) -> Self {
        let angle_buses = network
            .buses
            .iter()
            .filter(|b| b.role != BusRole::Reference)
            .map(|b| b.id)
            .collect();
        let magnitude_buses = network
            .buses
            .iter()
            .filter(|b| b.role == BusRole::PQ)
            .map(|b| b.id)
            .collect();
        Self {
            angle_buses,
            magnitude_buses,
        }
    }

    pub fn len(&self) -> usize {
        self.angle_buses.len() + self.magnitude_buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Voltage magnitudes and angles for every bus.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarState {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl PolarState {
    pub fn from_complex(v: &[Complex64]) -> Self {
        Self {
            vm: v.iter().map(|z| z.norm()).collect(),
            va: v.iter().map(|z| z.arg()).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.vm
            .iter()
            .zip(&self.va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    /// Packs the unknowns into a vector following `layout`.
    pub fn pack(&self, layout: &StateLayout) -> Vec<f64> {
        layout
            .angle_buses
            .iter()
            .map(|&i| self.va[i])
            .chain(layout.magnitude_buses.iter().map(|&i| self.vm[i]))
            .collect()
    }

    pub fn unpack(&mut self, layout: &StateLayout, x: &[f64]) {
        let na = layout.angle_buses.len();
        for (k, &i) in layout.angle_buses.iter().enumerate() {
            self.va[i] = x[k];
        }
        for (k, &i) in layout.magnitude_buses.iter().enumerate() {
            self.vm[i] = x[na + k];
        }
    }
}

fn injections(ybus: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| ybus[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

/// Power mismatch (calculated minus specified) in the state layout order.
pub fn mismatch(network: &Network, state: &PolarState) -> Result<Vec<f64>, FlowError> {
    let ybus = assemble_ybus(network)?;
    Ok(mismatch_with(network, &ybus, &StateLayout::of(network), state))
}

fn mismatch_with(network: &Network, ybus: &DMatrix<Complex64>, layout: &StateLayout, state: &PolarState) -> Vec<f64> {
    let s = injections(ybus, &state.to_complex());
    layout
        .angle_buses
        .iter()
        .map(|&i| s[i].re - network.buses[i].p_inject)
        .chain(
            layout
                .magnitude_buses
                .iter()
                .map(|&i| s[i].im - network.buses[i].q_inject),
        )
        .collect()
}

/// Analytic Jacobian of [`mismatch`] with respect to the packed state.
pub fn jacobian(network: &Network, state: &PolarState) -> Result<DMatrix<f64>, FlowError> {
    let ybus = assemble_ybus(network)?;
    let layout = StateLayout::of(network);
    if state.vm.len() != network.bus_count() || state.va.len() != network.bus_count() {
        return Err(FlowError::StateSize {
            expected: network.bus_count(),
            got: state.vm.len().min(state.va.len()),
        });
    }
    Ok(jacobian_with(&ybus, &layout, state))
}

fn jacobian_with(ybus: &DMatrix<Complex64>, layout: &StateLayout, state: &PolarState) -> DMatrix<f64> {
    let v = state.to_complex();
    let n = v.len();
    let current: Vec<Complex64> = (0..n).map(|i| (0..n).map(|k| ybus[(i, k)] * v[k]).sum()).collect();

    // dS_i/dva_k and dS_i/dvm_k, for S = diag(V) conj(Ybus V).
    let j = Complex64::new(0.0, 1.0);
    let ds_dva = |i: usize, k: usize| -> Complex64 {
        let off = -j * v[i] * (ybus[(i, k)] * v[k]).conj();
        if i == k {
            j * v[i] * current[i].conj() + off
        } else {
            off
        }
    };
    let ds_dvm = |i: usize, k: usize| -> Complex64 {
        let unit_k = v[k] / state.vm[k];
        let off = v[i] * (ybus[(i, k)] * unit_k).conj();
        if i == k {
            off + (v[i] / state.vm[i]) * current[i].conj()
        } else {
            off
        }
    };

    let na = layout.angle_buses.len();
    let m = layout.len();
    let mut jac = DMatrix::zeros(m, m);
    let rows = layout
        .angle_buses
        .iter()
        .map(|&i| (i, true))
        .chain(layout.magnitude_buses.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        for (c, &k) in layout.angle_buses.iter().enumerate() {
            let d = ds_dva(i, k);
            jac[(r, c)] = if is_p { d.re } else { d.im };
        }
        for (c, &k) in layout.magnitude_buses.iter().enumerate() {
            let d = ds_dvm(i, k);
            jac[(r, na + c)] = if is_p { d.re } else { d.im };
        }
    }
    jac
}

fn max_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Solves from a flat start (or from `v_set` when `flat_start` is false).
pub fn solve(network: &Network, options: &FlowOptions) -> Result<NetworkSolution, FlowError> {
    let initial: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| match b.role {
            BusRole::Reference => Complex64::from_polar(b.v_set, b.angle_set),
            BusRole::PV => Complex64::new(b.v_set, 0.0),
            BusRole::PQ if options.flat_start => Complex64::new(1.0, 0.0),
            BusRole::PQ => Complex64::new(b.v_set, 0.0),
        })
        .collect();
    solve_from(network, options, &initial)
}

/// Warm-started solve. Reference magnitudes/angles and PV magnitudes are
/// taken from the network, everything else from `initial`.
pub fn solve_from(
    network: &Network,
    options: &FlowOptions,
    initial: &[Complex64],
) -> Result<NetworkSolution, FlowError> {
    options.validate()?;
    network.validate_solvable()?;
    let n = network.bus_count();
    if initial.len() != n {
        return Err(FlowError::StateSize {
            expected: n,
            got: initial.len(),
        });
    }
    let ybus = assemble_ybus(network)?;
    let layout = StateLayout::of(network);

    let mut state = PolarState::from_complex(initial);
    for b in &network.buses {
        match b.role {
            BusRole::Reference => {
                state.vm[b.id] = b.v_set;
                state.va[b.id] = b.angle_set;
            }
            BusRole::PV => state.vm[b.id] = b.v_set,
            BusRole::PQ => {}
        }
    }

    let mut trace = Vec::with_capacity(options.max_iterations + 1);
    let mut f = mismatch_with(network, &ybus, &layout, &state);
    let mut norm = max_norm(&f);
    trace.push(norm);
    let mut iterations = 0;
    while norm > options.tolerance {
        if iterations == options.max_iterations || !norm.is_finite() {
            return Err(FlowError::NonConvergence { iterations, trace });
        }
        let jac = jacobian_with(&ybus, &layout, &state);
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|v| -v));
        let dx = jac.lu().solve(&rhs).ok_or(FlowError::SingularJacobian(iterations))?;
        let mut x = state.pack(&layout);
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi += di;
        }
        state.unpack(&layout, &x);
        iterations += 1;
        f = mismatch_with(network, &ybus, &layout, &state);
        norm = max_norm(&f);
        trace.push(norm);
    }

    let voltages = state.to_complex();
    let bus_injections = injections(&ybus, &voltages);
    let branch_flows = branch_flows(network, &voltages)?;
    let loss_total = branch_flows.iter().map(|b| b.loss).sum();
    let reference_injection = bus_injections[network.reference_bus()?];
    Ok(NetworkSolution {
        voltages,
        iterations,
        mismatch: norm,
        trace,
        branch_flows,
        loss_total,
        reference_injection,
        bus_injections,
    })
}

/// Per-branch end flows from the branch admittance blocks.
pub fn branch_flows(network: &Network, voltages: &[Complex64]) -> Result<Vec<BranchFlow>, FlowError> {
    if voltages.len() != network.bus_count() {
        return Err(FlowError::StateSize {
            expected: network.bus_count(),
            got: voltages.len(),
        });
    }
    network
        .branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return Ok(BranchFlow::open(br.from_bus, br.to_bus));
            }
            let y = branch_admittance(br)?;
            let (vf, vt) = (voltages[br.from_bus], voltages[br.to_bus]);
            let i_f = y[0][0] * vf + y[0][1] * vt;
            let i_t = y[1][0] * vf + y[1][1] * vt;
            let s_from = vf * i_f.conj();
            let s_to = vt * i_t.conj();
            let vf_int = vf.norm() / br.tau;
            let shunt_q = -(br.b_c / 2.0) * (vf_int * vf_int + vt.norm_sqr());
            Ok(BranchFlow {
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                s_from,
                s_to,
                loss: s_from + s_to,
                shunt_q,
            })
        })
        .collect()
}
