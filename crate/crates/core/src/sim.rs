//! Quasi-static phasor simulation of the black-start sequence: controller
//! dynamics stepped against an algebraic network solved every time step.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    apply_switch, elz_step, lsc_step, msc_step, pemfc_step, Clamp, DeviceError, DeviceKind, DeviceState, ElzParams,
    LscParams, Measurements, MscParams, PemfcParams, References, Switch,
};
use crate::netmodel::{BusId, BusRole, Network};
use crate::powerflow::{solve_from, FlowError, FlowOptions};
use crate::sequencer::{
    Action, Breaker, Pending, SequenceError, SequencerState, StepEvent, Strategy, SystemMeasurements, TriggerMode,
    TriggerThresholds,
};
use crate::sizing::{build_circuit, SizingError, SizingScenario, SupplyCircuit};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error("power flow failed at t = {t:.4} s: {error}")]
    Flow {
        t: f64,
        error: FlowError,
        partial: Box<RunOutput>,
    },
    #[error("no frequency source at t = {t:.4} s")]
    Blackout { t: f64, partial: Box<RunOutput> },
    #[error("configuration fault at t = {t:.4} s: {reason}")]
    Config {
        t: f64,
        reason: String,
        partial: Box<RunOutput>,
    },
    #[error("device fault at t = {t:.4} s: {error}")]
    Device {
        t: f64,
        error: DeviceError,
        partial: Box<RunOutput>,
    },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("sequence stalled at {pending:?} by t_end = {t_end} s")]
    Timeout {
        t_end: f64,
        pending: Pending,
        partial: Box<RunOutput>,
    },
}

impl SimError {
    /// Output recorded up to the fault, when the run got that far.
    pub fn partial(&self) -> Option<&RunOutput> {
        match self {
            SimError::Flow { partial, .. }
            | SimError::Blackout { partial, .. }
            | SimError::Config { partial, .. }
            | SimError::Device { partial, .. }
            | SimError::Timeout { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Condition,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub triggers: TriggerKind,
    pub flow_tolerance: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 2.5,
            record_every: 1,
            triggers: TriggerKind::Condition,
            flow_tolerance: 1e-8,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Scenario("dt must be positive".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > self.dt) {
            return Err(SimError::Scenario("t_end must exceed dt".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::Scenario("record_every must be >= 1".into()));
        }
        if !(self.flow_tolerance > 0.0) {
            return Err(SimError::Scenario("flow_tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }
}

/// Available wind power: constant plus ramp plus a sinusoidal fluctuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindProfile {
    pub base_mw: f64,
    pub ramp_mw_per_s: f64,
    pub fluctuation_mw: f64,
    pub period_s: f64,
    pub max_mw: f64,
}

impl Default for WindProfile {
    fn default() -> Self {
        Self {
            base_mw: 3.0,
            ramp_mw_per_s: 1.0,
            fluctuation_mw: 0.15,
            period_s: 0.4,
            max_mw: 6.25,
        }
    }
}

impl WindProfile {
    pub fn available(&self, t: f64) -> f64 {
        let wave = if self.period_s > 0.0 {
            self.fluctuation_mw * (2.0 * PI * t / self.period_s).sin()
        } else {
            0.0
        };
        (self.base_mw + self.ramp_mw_per_s * t + wave).clamp(0.0, self.max_mw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackstartScenario {
    pub sizing: SizingScenario,
    pub pemfc: PemfcParams,
    pub lsc: LscParams,
    pub msc: MscParams,
    pub elz: ElzParams,
    pub wind: WindProfile,
    pub thresholds: TriggerThresholds,
    /// Time constant of auxiliary load pickup after the supply breaker closes.
    pub aux_pickup_tau: f64,
    /// Fire times of steps 2 to 6 in scripted mode.
    pub scripted_times: [f64; 5],
    pub whcc_disconnect_pemfc: bool,
}

impl BlackstartScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let dev = |e: DeviceError| SimError::Scenario(e.to_string());
        self.sizing.validate()?;
        self.pemfc.validate().map_err(dev)?;
        self.lsc.validate().map_err(dev)?;
        self.msc.validate().map_err(dev)?;
        self.elz.validate().map_err(dev)?;
        self.thresholds.validate()?;
        if !(self.aux_pickup_tau.is_finite() && self.aux_pickup_tau > 0.0) {
            return Err(SimError::Scenario("aux_pickup_tau must be positive".into()));
        }
        if self.scripted_times.windows(2).any(|w| w[1] <= w[0]) || self.scripted_times[0] <= 0.0 {
            return Err(SimError::Scenario(
                "scripted times must be positive and increasing".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded time step. Device columns use generation-positive signs:
/// loads and consumption are negative, losses positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Last executed sequence step.
    pub step: u8,
    pub v_bus: Vec<f64>,
    pub f_hz: f64,
    pub v_dc: f64,
    pub pemfc_p: f64,
    pub pemfc_q: f64,
    pub pemfc_stack: f64,
    pub dfig_p: f64,
    pub dfig_q: f64,
    pub lsc_p: f64,
    pub elz_p: f64,
    pub aux_p: f64,
    pub aux_q: f64,
    pub loss_p: f64,
    pub loss_q: f64,
    pub sync_error: f64,
}

impl Sample {
    /// Sum of device and load active power minus losses; zero for a
    /// converged step.
    pub fn active_residual(&self) -> f64 {
        self.pemfc_p + self.dfig_p + self.lsc_p + self.elz_p + self.aux_p - self.loss_p
    }

    pub fn reactive_residual(&self) -> f64 {
        self.pemfc_q + self.dfig_q + self.aux_q - self.loss_q
    }

    fn powers(&self) -> [f64; 6] {
        [
            self.pemfc_p,
            self.pemfc_q,
            self.dfig_p,
            self.dfig_q,
            self.lsc_p,
            self.elz_p,
        ]
    }
}

/// CSV columns after `t`, `step` and the per-bus voltages.
pub const SERIES_COLUMNS: [&str; 14] = [
    "f_hz",
    "v_dc",
    "pemfc_p",
    "pemfc_q",
    "pemfc_stack",
    "dfig_p",
    "dfig_q",
    "lsc_p",
    "elz_p",
    "aux_p",
    "aux_q",
    "loss_p",
    "loss_q",
    "sync_error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// External bus numbers in column order.
    pub bus_numbers: Vec<u32>,
    pub samples: Vec<Sample>,
}

/// Formats a value with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let s = format!("{:.5e}", x);
    let v: f64 = s.parse().unwrap_or(x);
    format!("{v}")
}

impl TimeSeries {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "step".to_string()];
        h.extend(self.bus_numbers.iter().map(|n| format!("v_bus{n}")));
        h.extend(SERIES_COLUMNS.iter().map(|s| s.to_string()));
        h
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        for s in &self.samples {
            let mut row = vec![sig6(s.t), s.step.to_string()];
            row.extend(s.v_bus.iter().map(|v| sig6(*v)));
            for v in [
                s.f_hz,
                s.v_dc,
                s.pemfc_p,
                s.pemfc_q,
                s.pemfc_stack,
                s.dfig_p,
                s.dfig_q,
                s.lsc_p,
                s.elz_p,
                s.aux_p,
                s.aux_q,
                s.loss_p,
                s.loss_q,
                s.sync_error,
            ] {
                row.push(sig6(v));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunEvent {
    Step(StepEvent),
    ElzClamp { t: f64, limit: Clamp },
}

impl RunEvent {
    pub fn write_jsonl<W: Write>(events: &[RunEvent], mut w: W) -> std::io::Result<()> {
        for e in events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Averages of the PEMFC terminal output over the pre-generation plateau:
/// from the DC link first entering its band until the stator closes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub t_start: f64,
    pub t_end: f64,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub triggers: TriggerKind,
    pub complete: bool,
    pub completion_time: Option<f64>,
    pub step_times: Vec<f64>,
    pub final_step: u8,
    pub peak_pemfc_p: f64,
    pub peak_pemfc_q: f64,
    pub max_freq_dev_hz: f64,
    pub max_freq_dev_pct: f64,
    /// Terminal energy delivered by the PEMFC over the run (kWh).
    pub pemfc_energy_kwh: f64,
    pub plateau: Option<Plateau>,
    /// Mean PEMFC stack output over the last steady window (MW).
    pub tail_pemfc_stack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub series: TimeSeries,
    pub events: Vec<RunEvent>,
    pub summary: RunSummary,
}

/// Frequency-source role held by one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySource {
    pub device: DeviceKind,
    pub f_ref: f64,
    pub regulation_s: f64,
    pub disturbance_hz_per_mw: f64,
}

/// One step of the system frequency. `imbalance_mw` is the change in the
/// source's active output since the previous step.
pub fn frequency_dynamics(f: f64, source: Option<&FrequencySource>, imbalance_mw: f64, dt: f64) -> Option<f64> {
    let s = source?;
    Some(s.f_ref + (f - s.f_ref) * (-dt / s.regulation_s).exp() - s.disturbance_hz_per_mw * imbalance_mw)
}

/// Quantities the steady-state detector monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyMonitor {
    pub buses: Vec<BusId>,
    pub f_ref: f64,
}

/// True iff, across a window spanning at least `steady_window`, monitored
/// bus voltages stay within `v_band` of 1 pu, frequency within `f_band` of
/// its reference, and device outputs within `power_band` of their final
/// value.
pub fn steady_state_detector(window: &[Sample], th: &TriggerThresholds, monitor: &SteadyMonitor) -> bool {
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return false;
    };
    if last.t - first.t < th.steady_window - 1e-9 {
        return false;
    }
    let end = last.powers();
    window.iter().all(|s| {
        monitor
            .buses
            .iter()
            .all(|&b| s.v_bus.get(b).is_some_and(|v| (v - 1.0).abs() <= th.v_band))
            && (s.f_hz - monitor.f_ref).abs() <= th.f_band * monitor.f_ref
            && s.powers()
                .iter()
                .zip(end.iter())
                .all(|(a, b)| (a - b).abs() <= th.power_band)
    })
}

struct Devices {
    pemfc: DeviceState,
    lsc: DeviceState,
    msc: DeviceState,
    elz: DeviceState,
    aux_supply: bool,
    mppt: bool,
}

impl Devices {
    fn apply(&mut self, action: &Action, sc: &BlackstartScenario) -> Result<(), DeviceError> {
        match *action {
            Action::SetSwitch { switch, position } => {
                let dev = match switch {
                    Switch::S1 => &mut self.pemfc,
                    Switch::S2 => &mut self.elz,
                    Switch::S3 | Switch::S4 => &mut self.msc,
                };
                *dev = apply_switch(dev, switch, position)?;
            }
            Action::SetBreaker { breaker, closed } => match breaker {
                Breaker::B1 => self.pemfc.connected = closed,
                Breaker::B2 => self.aux_supply = closed,
                Breaker::B3 => self.lsc.connected = closed,
                Breaker::B4 => self.msc.stator_closed = closed,
            },
            Action::StartPemfc => {
                self.pemfc.connected = true;
                self.pemfc.tracking.v = sc.pemfc.v_ref;
            }
            Action::StartLsc => self.lsc.connected = true,
            Action::StartMsc => self.msc.connected = true,
            Action::StartHpu => self.elz.connected = true,
            Action::DisconnectPemfc => self.pemfc.connected = false,
            Action::TrackMppt => self.mppt = true,
        }
        Ok(())
    }
}

fn frequency_source(dev: &Devices, sc: &BlackstartScenario) -> Result<Option<FrequencySource>, String> {
    let pemfc = dev.pemfc.is_grid_forming().then_some(FrequencySource {
        device: DeviceKind::Pemfc,
        f_ref: sc.pemfc.f_ref,
        regulation_s: sc.pemfc.regulation_s,
        disturbance_hz_per_mw: sc.pemfc.disturbance_hz_per_mw,
    });
    let msc = dev.msc.is_grid_forming().then_some(FrequencySource {
        device: DeviceKind::Msc,
        f_ref: sc.msc.f_ref,
        regulation_s: sc.msc.regulation_s,
        disturbance_hz_per_mw: sc.msc.disturbance_hz_per_mw,
    });
    match (pemfc, msc) {
        (Some(_), Some(_)) => Err("PEMFC and DFIG both hold the frequency-source role".into()),
        (a, b) => Ok(a.or(b)),
    }
}

struct Recorder {
    f_ref: f64,
    bus_numbers: Vec<u32>,
    samples: Vec<Sample>,
    events: Vec<RunEvent>,
    summary: RunSummary,
    plateau: Option<(f64, f64, f64, f64, usize)>,
    plateau_closed: bool,
}

impl Recorder {
    fn output(&self, seq: &SequencerState) -> RunOutput {
        let mut summary = self.summary.clone();
        summary.complete = seq.is_complete();
        summary.final_step = seq.last_step();
        summary.step_times = seq.event_log.iter().map(|e| e.t).collect();
        summary.completion_time = seq.is_complete().then(|| seq.event_log.last().map(|e| e.t)).flatten();
        summary.max_freq_dev_pct = 100.0 * summary.max_freq_dev_hz / self.f_ref;
        summary.plateau = self.plateau.map(|(t0, t1, p, q, n)| Plateau {
            t_start: t0,
            t_end: t1,
            p_mw: p / n as f64,
            q_mvar: q / n as f64,
        });
        RunOutput {
            series: TimeSeries {
                bus_numbers: self.bus_numbers.clone(),
                samples: self.samples.clone(),
            },
            events: self.events.clone(),
            summary,
        }
    }
}

/// Runs the full black-start sequence for one strategy.
pub fn run_blackstart(
    scenario: &BlackstartScenario,
    strategy: Strategy,
    options: &SimOptions,
) -> Result<RunOutput, SimError> {
    options.validate()?;
    scenario.validate()?;
    let circuit: SupplyCircuit = build_circuit(&scenario.sizing.circuit)?;
    let base = circuit.unloaded_network();
    let buses = circuit.buses;
    let s_base = base.s_base;
    let n_bus = base.bus_count();
    let dt = options.dt;
    let flow_opts = FlowOptions {
        tolerance: options.flow_tolerance,
        ..FlowOptions::default()
    };

    let sz = &scenario.sizing;
    let wind_aux = sz.wind_aux_mw();
    let h2_p = sz.hydrogen_aux_mw() + sz.unitemized_load_mw;
    let h2_q = sz.hydrogen_q_mvar();
    let lsc_params = LscParams {
        standby_mw: sz.lsc_standby_mw,
        ..scenario.lsc
    };

    let mut dev = Devices {
        pemfc: DeviceState::new(DeviceKind::Pemfc, scenario.pemfc.references()),
        lsc: DeviceState::new(
            DeviceKind::Lsc,
            References {
                v_dc_ref: lsc_params.v_dc_ref,
                ..References::default()
            },
        ),
        msc: DeviceState::new(
            DeviceKind::Msc,
            References {
                v_dc_ref: lsc_params.v_dc_ref,
                ..scenario.msc.references()
            },
        ),
        elz: DeviceState::new(DeviceKind::Elz, References::default()),
        aux_supply: false,
        mppt: false,
    };
    let mode = match options.triggers {
        TriggerKind::Condition => TriggerMode::Condition,
        TriggerKind::Scripted => TriggerMode::Scripted(scenario.scripted_times),
    };
    let mut seq = SequencerState::new(strategy, mode);
    seq.whcc_disconnect_pemfc = scenario.whcc_disconnect_pemfc;
    let th = scenario.thresholds;
    let mut monitored = vec![buses.wind_aux, buses.dfig, buses.pemfc, buses.hydrogen];
    monitored.sort_unstable();
    monitored.dedup();
    let monitor = SteadyMonitor {
        buses: monitored,
        f_ref: scenario.pemfc.f_ref,
    };

    let mut rec = Recorder {
        f_ref: scenario.pemfc.f_ref,
        bus_numbers: circuit.bus_numbers.clone(),
        samples: Vec::with_capacity(options.step_count() / options.record_every + 1),
        events: Vec::new(),
        summary: RunSummary {
            strategy,
            triggers: options.triggers,
            complete: false,
            completion_time: None,
            step_times: Vec::new(),
            final_step: 0,
            peak_pemfc_p: 0.0,
            peak_pemfc_q: 0.0,
            max_freq_dev_hz: 0.0,
            max_freq_dev_pct: 0.0,
            pemfc_energy_kwh: 0.0,
            plateau: None,
            tail_pemfc_stack: 0.0,
        },
        plateau: None,
        plateau_closed: false,
    };

    macro_rules! fault {
        ($variant:ident { $($field:ident : $value:expr),* }) => {
            return Err(SimError::$variant { $($field: $value,)* partial: Box::new(rec.output(&seq)) })
        };
    }

    let mut f = scenario.pemfc.f_ref;
    let mut pickup = 0.0;
    let mut voltages = vec![Complex64::new(1.0, 0.0); n_bus];
    let mut prev_source_p = [0.0f64; 2];
    let mut window: VecDeque<Sample> = VecDeque::new();
    let mut clamped: Option<Clamp> = None;
    let mut dfig_meas = (0.0, 0.0);
    let mut pemfc_meas = (0.0, 0.0);
    let mut slack_error = 0.0;

    // The start command executes before the first solve.
    let start = SystemMeasurements {
        t: 0.0,
        v_pu: 0.0,
        f_hz: f,
        f_ref: f,
        v_dc: 0.0,
        v_dc_ref: lsc_params.v_dc_ref,
        sync_error: 0.0,
        steady: false,
    };
    seq.check_trigger(&start, &th, dt);
    for a in seq.advance()? {
        if let Err(error) = dev.apply(&a, scenario) {
            fault!(Device { t: 0.0, error: error });
        }
    }
    if let Some(e) = seq.event_log.last() {
        rec.events.push(RunEvent::Step(e.clone()));
    }

    let steps = options.step_count();
    for n in 0..=steps {
        let t = (n as f64 * dt * 1e9).round() / 1e9;
        let v_at = |b: BusId| voltages[b];
        let base_meas = Measurements {
            f_grid: f,
            v_dc: dev.lsc.tracking.v_dc,
            ..Measurements::default()
        };

        // (1) Controllers.
        let pemfc_in = Measurements {
            v_bus: v_at(buses.pemfc).norm(),
            grid_v: v_at(buses.pemfc),
            p_meas: pemfc_meas.0,
            q_meas: pemfc_meas.1,
            ..base_meas
        };
        let (pemfc_next, pemfc_sp) = match pemfc_step(&scenario.pemfc, &dev.pemfc, &pemfc_in, dt) {
            Ok(x) => x,
            Err(error) => fault!(Device { t: t, error: error }),
        };
        let (lsc_next, lsc_draw) = match lsc_step(&lsc_params, &dev.lsc, &base_meas, dt) {
            Ok(x) => x,
            Err(error) => fault!(Device { t: t, error: error }),
        };
        if dev.mppt {
            dev.msc.refs.p_ref = scenario.wind.available(t);
        } else {
            dev.msc.refs.p_ref = scenario.msc.p_setpoint_mw.min(scenario.wind.available(t));
        }
        let msc_in = Measurements {
            v_bus: v_at(buses.dfig).norm(),
            grid_v: v_at(buses.dfig),
            p_meas: dfig_meas.0,
            q_meas: dfig_meas.1,
            ..base_meas
        };
        let (msc_next, msc_cmd) = match msc_step(&scenario.msc, &dev.msc, &msc_in, dt) {
            Ok(x) => x,
            Err(error) => fault!(Device { t: t, error: error }),
        };
        let elz_in = Measurements {
            v_bus: v_at(buses.hydrogen).norm(),
            grid_v: v_at(buses.hydrogen),
            slack_error_mw: slack_error,
            ..base_meas
        };
        let (elz_next, elz_sp) = match elz_step(&scenario.elz, &dev.elz, &elz_in, dt) {
            Ok(x) => x,
            Err(error) => fault!(Device { t: t, error: error }),
        };
        if elz_sp.clamped != clamped {
            if let Some(limit) = elz_sp.clamped {
                rec.events.push(RunEvent::ElzClamp { t, limit });
            }
            clamped = elz_sp.clamped;
        }
        let lsc_v_dc = dev.lsc.tracking.v_dc;
        let before = (dev.pemfc, dev.lsc, dev.msc, dev.elz);

        // (2) Network.
        let mut net: Network = base.clone();
        let pu = |mw: f64| mw / s_base;
        let load_p = pickup * wind_aux;
        net.buses[buses.wind_aux].p_inject -= pu(load_p);
        let h2_load_p = pickup * h2_p;
        let h2_load_q = pickup * h2_q;
        net.buses[buses.hydrogen].p_inject -= pu(h2_load_p + elz_sp.consumption_mw);
        net.buses[buses.hydrogen].q_inject -= pu(h2_load_q);
        net.buses[buses.dfig].p_inject -= pu(lsc_draw);
        if !msc_cmd.forming {
            net.buses[buses.dfig].p_inject += pu(msc_cmd.p_mw);
            net.buses[buses.dfig].q_inject += pu(msc_cmd.q_mvar);
        }
        let pb = &mut net.buses[buses.pemfc];
        if pemfc_sp.forming {
            pb.role = BusRole::Reference;
            pb.v_set = pemfc_sp.v_set;
            pb.angle_set = 0.0;
        } else {
            pb.role = BusRole::PQ;
            pb.p_inject = pu(pemfc_sp.p_mw);
            pb.q_inject = pu(pemfc_sp.q_mvar);
        }
        if msc_cmd.forming {
            let db = &mut net.buses[buses.dfig];
            db.role = BusRole::Reference;
            db.v_set = msc_cmd.v_set;
            db.angle_set = voltages[buses.dfig].arg();
        }
        let source = match frequency_source(&dev, scenario) {
            Ok(Some(s)) => s,
            Ok(None) => fault!(Blackout { t: t }),
            Err(reason) => fault!(Config { t: t, reason: reason }),
        };
        let sol = match solve_from(&net, &flow_opts, &voltages) {
            Ok(s) => s,
            Err(error) => fault!(Flow { t: t, error: error }),
        };
        voltages.clone_from(&sol.voltages);

        let inj = |b: BusId| sol.bus_injections[b] * s_base;
        let (pemfc_p, pemfc_q) = if pemfc_sp.forming {
            (inj(buses.pemfc).re, inj(buses.pemfc).im)
        } else {
            (pemfc_sp.p_mw, pemfc_sp.q_mvar)
        };
        let (dfig_p, dfig_q) = if msc_cmd.forming {
            (inj(buses.dfig).re + lsc_draw, inj(buses.dfig).im)
        } else {
            (msc_cmd.p_mw, msc_cmd.q_mvar)
        };
        pemfc_meas = (pemfc_p, pemfc_q);
        dfig_meas = (dfig_p, dfig_q);
        slack_error = match (pemfc_sp.p_target_mw, msc_cmd.forming, msc_cmd.p_target_mw) {
            (Some(target), _, _) => pemfc_p - target,
            (None, true, Some(target)) => dfig_p - target,
            _ => 0.0,
        };

        // Frequency.
        let (src_idx, src_p) = match source.device {
            DeviceKind::Pemfc => (0, pemfc_p),
            _ => (1, dfig_p),
        };
        let imbalance = src_p - prev_source_p[src_idx];
        prev_source_p = [pemfc_p, dfig_p];
        f = frequency_dynamics(f, Some(&source), imbalance, dt).unwrap_or(f);

        let sample = Sample {
            t,
            step: seq.last_step(),
            v_bus: voltages.iter().map(|v| v.norm()).collect(),
            f_hz: f,
            v_dc: lsc_v_dc,
            pemfc_p,
            pemfc_q,
            pemfc_stack: if pemfc_sp.forming || pemfc_p != 0.0 {
                pemfc_p + scenario.pemfc.standby_loss_mw
            } else {
                0.0
            },
            dfig_p,
            dfig_q,
            lsc_p: -lsc_draw,
            elz_p: -elz_sp.consumption_mw,
            aux_p: -(load_p + h2_load_p),
            aux_q: -h2_load_q,
            loss_p: sol.loss_total.re * s_base,
            loss_q: sol.loss_total.im * s_base,
            sync_error: msc_cmd.sync_error,
        };

        // Running summary.
        let sm = &mut rec.summary;
        sm.peak_pemfc_p = sm.peak_pemfc_p.max(pemfc_p);
        sm.peak_pemfc_q = sm.peak_pemfc_q.max(pemfc_q);
        sm.max_freq_dev_hz = sm.max_freq_dev_hz.max((f - scenario.pemfc.f_ref).abs());
        if n > 0 {
            sm.pemfc_energy_kwh += pemfc_p * dt * 1000.0 / 3600.0;
        }
        let dc_in_band = (lsc_v_dc - lsc_params.v_dc_ref).abs() <= th.dc_band * lsc_params.v_dc_ref;
        if !rec.plateau_closed && matches!(seq.last_step(), 2 | 3) && (dc_in_band || rec.plateau.is_some()) {
            let e = rec.plateau.get_or_insert((t, t, 0.0, 0.0, 0));
            e.1 = t;
            e.2 += pemfc_p;
            e.3 += pemfc_q;
            e.4 += 1;
        }
        if seq.last_step() >= 4 && rec.plateau.is_some() {
            rec.plateau_closed = true;
        }

        window.push_back(sample.clone());
        while window.front().is_some_and(|s| t - s.t > th.steady_window + 1e-9) {
            window.pop_front();
        }
        if n % options.record_every == 0 {
            rec.samples.push(sample);
        }

        // (3) Triggers.
        let steady = steady_state_detector(window.make_contiguous(), &th, &monitor);
        let worst_v = monitor
            .buses
            .iter()
            .map(|&b| voltages[b].norm())
            .fold(
                1.0,
                |acc: f64, v| if (v - 1.0).abs() > (acc - 1.0).abs() { v } else { acc },
            );
        let sys = SystemMeasurements {
            t,
            v_pu: worst_v,
            f_hz: f,
            f_ref: scenario.pemfc.f_ref,
            v_dc: lsc_v_dc,
            v_dc_ref: lsc_params.v_dc_ref,
            sync_error: if dev.msc.connected {
                msc_cmd.sync_error
            } else {
                f64::INFINITY
            },
            steady,
        };
        let fired = seq.check_trigger(&sys, &th, dt);
        if fired {
            let actions = seq.advance()?;
            for a in &actions {
                if let Err(error) = dev.apply(a, scenario) {
                    fault!(Device { t: t, error: error });
                }
            }
            if let Some(e) = seq.event_log.last() {
                rec.events.push(RunEvent::Step(e.clone()));
            }
            window.clear();
        }

        // (4) Integrate over [t, t + dt] from the post-switching state.
        if (dev.pemfc, dev.lsc, dev.msc, dev.elz) == before {
            dev.pemfc = pemfc_next;
            dev.lsc = lsc_next;
            dev.msc = msc_next;
            dev.elz = elz_next;
        } else {
            let stepped = pemfc_step(&scenario.pemfc, &dev.pemfc, &pemfc_in, dt).and_then(|(p, _)| {
                let (l, _) = lsc_step(&lsc_params, &dev.lsc, &base_meas, dt)?;
                let (m, _) = msc_step(&scenario.msc, &dev.msc, &msc_in, dt)?;
                let (e, _) = elz_step(&scenario.elz, &dev.elz, &elz_in, dt)?;
                Ok((p, l, m, e))
            });
            match stepped {
                Ok((p, l, m, e)) => (dev.pemfc, dev.lsc, dev.msc, dev.elz) = (p, l, m, e),
                Err(error) => fault!(Device { t: t, error: error }),
            }
        }

        if dev.aux_supply {
            pickup = 1.0 + (pickup - 1.0) * (-dt / scenario.aux_pickup_tau).exp();
        }
    }

    let tail: Vec<f64> = rec
        .samples
        .iter()
        .rev()
        .take_while(|s| s.t >= options.t_end - th.steady_window - 1e-9)
        .map(|s| s.pemfc_stack)
        .collect();
    if !tail.is_empty() {
        rec.summary.tail_pemfc_stack = tail.iter().sum::<f64>() / tail.len() as f64;
    }
    if !seq.is_complete() {
        let pending = seq.pending;
        fault!(Timeout {
            t_end: options.t_end,
            pending: pending
        });
    }
    Ok(rec.output(&seq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(t: f64, v: f64) -> Sample {
        Sample {
            t,
            step: 4,
            v_bus: vec![v, 1.0],
            f_hz: 50.0,
            v_dc: 1150.0,
            pemfc_p: 1.0,
            pemfc_q: 0.5,
            pemfc_stack: 1.05,
            dfig_p: 0.0,
            dfig_q: 0.0,
            lsc_p: -0.04,
            elz_p: 0.0,
            aux_p: -0.96,
            aux_q: -0.5,
            loss_p: 0.0,
            loss_q: 0.0,
            sync_error: 0.0,
        }
    }

    fn monitor() -> SteadyMonitor {
        SteadyMonitor {
            buses: vec![0, 1],
            f_ref: 50.0,
        }
    }

    #[test]
    fn constant_window_is_steady() {
        let w: Vec<Sample> = (0..=100).map(|n| flat(n as f64 * 1e-3, 1.0)).collect();
        assert!(steady_state_detector(&w, &TriggerThresholds::default(), &monitor()));
        assert!(!steady_state_detector(
            &w[..50],
            &TriggerThresholds::default(),
            &monitor()
        ));
    }

    #[test]
    fn voltage_spike_breaks_steadiness() {
        let mut w: Vec<Sample> = (0..=100).map(|n| flat(n as f64 * 1e-3, 1.0)).collect();
        w[40].v_bus[0] = 1.05;
        assert!(!steady_state_detector(&w, &TriggerThresholds::default(), &monitor()));
    }

    #[test]
    fn frequency_relaxes_and_needs_a_source() {
        let src = FrequencySource {
            device: DeviceKind::Pemfc,
            f_ref: 50.0,
            regulation_s: 0.05,
            disturbance_hz_per_mw: 0.1,
        };
        assert_eq!(frequency_dynamics(50.0, Some(&src), 0.0, 1e-3), Some(50.0));
        let f = frequency_dynamics(49.0, Some(&src), 0.0, 0.05).unwrap();
        assert!((f - (50.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(frequency_dynamics(50.0, None, 0.0, 1e-3), None);
    }

    #[test]
    fn sig6_rounds() {
        assert_eq!(sig6(1.23456789), "1.23457");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1150.0), "1150");
        assert_eq!(sig6(-2.5e-7), "-0.00000025");
    }
}
