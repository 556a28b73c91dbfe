//! Discrete-time controllers for the PEMFC inverter, the DFIG line- and
//! machine-side converters, and the electrolyzer.
//!
//! Every step function is pure: it takes the previous state and the latest
//! measurements and returns the next state plus the command issued during
//! the step. The command reflects the state *before* the update, so a mode
//! switch that re-initializes tracking from the last output is bumpless.
//! Power is in MW/MVar with generation positive.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("{device:?} cannot run in mode {mode:?}")]
    IllegalMode { device: DeviceKind, mode: ControlMode },
    #[error("switch {switch:?} has no position {position}")]
    IllegalPosition { switch: Switch, position: u8 },
    #[error("switch {switch:?} does not act on {device:?}")]
    WrongDevice { switch: Switch, device: DeviceKind },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("MSC stepped with DC link at {v_dc:.1} V, below {threshold:.1} V")]
    SequencingViolation { v_dc: f64, threshold: f64 },
    #[error("invalid device parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Pemfc,
    Lsc,
    Msc,
    Elz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    #[serde(rename = "VCL")]
    Vcl,
    #[serde(rename = "PCL")]
    Pcl,
    #[serde(rename = "PVCL")]
    Pvcl,
    #[serde(rename = "APCL")]
    Apcl,
    #[serde(rename = "DC_REGULATION")]
    DcRegulation,
    #[serde(rename = "EMERGENCY")]
    Emergency,
}

impl DeviceKind {
    pub fn legal_modes(self) -> &'static [ControlMode] {
        use ControlMode::*;
        match self {
            DeviceKind::Pemfc => &[Vcl, Pvcl, Pcl],
            DeviceKind::Lsc => &[DcRegulation],
            DeviceKind::Msc => &[Vcl, Pcl, Apcl],
            DeviceKind::Elz => &[Pcl, Vcl, Emergency],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Switch {
    S1,
    S2,
    S3,
    S4,
}

impl Switch {
    pub fn positions(self) -> u8 {
        match self {
            Switch::S1 | Switch::S4 => 2,
            Switch::S2 | Switch::S3 => 3,
        }
    }

    pub fn device(self) -> DeviceKind {
        match self {
            Switch::S1 => DeviceKind::Pemfc,
            Switch::S2 => DeviceKind::Elz,
            Switch::S3 | Switch::S4 => DeviceKind::Msc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub v_ref: f64,
    pub f_ref: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_dc_ref: f64,
}

impl Default for References {
    fn default() -> Self {
        Self {
            v_ref: 1.0,
            f_ref: 50.0,
            p_ref: 0.0,
            q_ref: 0.0,
            v_dc_ref: 1150.0,
        }
    }
}

/// First-order filter states. Unused entries stay at their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracking {
    pub p: f64,
    pub q: f64,
    /// Voltage magnitude held by a grid-forming device (pu).
    pub v: f64,
    pub v_dc: f64,
    pub stator: Complex64,
    /// Rate-limited power references (MSC).
    pub p_cmd: f64,
    pub q_cmd: f64,
}

impl Default for Tracking {
    fn default() -> Self {
        Self {
            p: 0.0,
            q: 0.0,
            v: 1.0,
            v_dc: 0.0,
            stator: Complex64::new(0.0, 0.0),
            p_cmd: 0.0,
            q_cmd: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub kind: DeviceKind,
    pub mode: ControlMode,
    pub connected: bool,
    pub p_out: f64,
    pub q_out: f64,
    pub tracking: Tracking,
    pub refs: References,
    /// S4: the MSC sources the system frequency.
    pub frequency_source: bool,
    /// B4: stator breaker.
    pub stator_closed: bool,
}

impl DeviceState {
    pub fn new(kind: DeviceKind, refs: References) -> Self {
        let mode = match kind {
            DeviceKind::Pemfc | DeviceKind::Msc => ControlMode::Vcl,
            DeviceKind::Lsc => ControlMode::DcRegulation,
            DeviceKind::Elz => ControlMode::Pcl,
        };
        Self {
            kind,
            mode,
            connected: false,
            p_out: 0.0,
            q_out: 0.0,
            tracking: Tracking {
                v: refs.v_ref,
                ..Tracking::default()
            },
            refs,
            frequency_source: false,
            stator_closed: false,
        }
    }

    fn check_mode(&self) -> Result<(), DeviceError> {
        if self.kind.legal_modes().contains(&self.mode) {
            Ok(())
        } else {
            Err(DeviceError::IllegalMode {
                device: self.kind,
                mode: self.mode,
            })
        }
    }

    fn disconnected(&self) -> Self {
        Self {
            p_out: 0.0,
            q_out: 0.0,
            ..*self
        }
    }

    /// True when this device holds the network's reference role.
    pub fn is_grid_forming(&self) -> bool {
        if !self.connected {
            return false;
        }
        match self.kind {
            DeviceKind::Pemfc => matches!(self.mode, ControlMode::Vcl | ControlMode::Pvcl),
            DeviceKind::Msc => self.mode == ControlMode::Apcl && self.frequency_source && self.stator_closed,
            _ => false,
        }
    }
}

/// Device-side measurements at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub v_bus: f64,
    pub f_grid: f64,
    pub v_dc: f64,
    pub grid_v: Complex64,
    pub p_meas: f64,
    pub q_meas: f64,
    /// Active output of the slack source minus its target (ELZ input).
    pub slack_error_mw: f64,
}

fn check_dt(dt: f64) -> Result<(), DeviceError> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(DeviceError::InvalidStep(dt))
    }
}

fn relax(x: f64, target: f64, tau: f64, dt: f64) -> f64 {
    target + (x - target) * (-dt / tau).exp()
}

fn relax_c(x: Complex64, target: Complex64, tau: f64, dt: f64) -> Complex64 {
    target + (x - target) * (-dt / tau).exp()
}

fn ramp(x: f64, target: f64, rate: f64, dt: f64) -> f64 {
    let step = rate * dt;
    x + (target - x).clamp(-step, step)
}

fn positive(name: &str, v: f64) -> Result<(), DeviceError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DeviceError::InvalidParameter(format!("{name} must be positive")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PemfcParams {
    pub v_ref: f64,
    pub f_ref: f64,
    pub tau_v: f64,
    pub tau_p: f64,
    /// Stack-side consumption at zero terminal output (MW).
    pub standby_loss_mw: f64,
    /// Frequency regulation time constant as the system frequency source.
    pub regulation_s: f64,
    /// Frequency excursion per MW of sudden source loading (Hz/MW).
    pub disturbance_hz_per_mw: f64,
}

impl Default for PemfcParams {
    fn default() -> Self {
        Self {
            v_ref: 1.0,
            f_ref: 50.0,
            tau_v: 0.01,
            tau_p: 0.1,
            standby_loss_mw: 0.05,
            regulation_s: 0.05,
            disturbance_hz_per_mw: 0.1,
        }
    }
}

impl PemfcParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        for (n, v) in [
            ("v_ref", self.v_ref),
            ("f_ref", self.f_ref),
            ("tau_v", self.tau_v),
            ("tau_p", self.tau_p),
            ("regulation_s", self.regulation_s),
        ] {
            positive(n, v)?;
        }
        if !(self.standby_loss_mw >= 0.0 && self.disturbance_hz_per_mw >= 0.0) {
            return Err(DeviceError::InvalidParameter(
                "PEMFC loss and disturbance gain must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn references(&self) -> References {
        References {
            v_ref: self.v_ref,
            f_ref: self.f_ref,
            ..References::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PemfcSetpoint {
    /// Acts as the reference bus this step.
    pub forming: bool,
    pub v_set: f64,
    /// Terminal output (MW/MVar); for a forming device this is the measured value.
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Active-power target handed to the slack load (PVCL).
    pub p_target_mw: Option<f64>,
    /// Stack output including standby consumption.
    pub stack_mw: f64,
}

pub fn pemfc_step(
    params: &PemfcParams,
    state: &DeviceState,
    meas: &Measurements,
    dt: f64,
) -> Result<(DeviceState, PemfcSetpoint), DeviceError> {
    check_dt(dt)?;
    state.check_mode()?;
    if state.kind != DeviceKind::Pemfc {
        return Err(DeviceError::IllegalMode {
            device: state.kind,
            mode: state.mode,
        });
    }
    if !state.connected {
        let next = state.disconnected();
        return Ok((
            next,
            PemfcSetpoint {
                forming: false,
                v_set: state.tracking.v,
                p_mw: 0.0,
                q_mvar: 0.0,
                p_target_mw: None,
                stack_mw: 0.0,
            },
        ));
    }
    let mut next = *state;
    let t = &mut next.tracking;
    let set = match state.mode {
        ControlMode::Vcl | ControlMode::Pvcl => {
            let pvcl = state.mode == ControlMode::Pvcl;
            let sp = PemfcSetpoint {
                forming: true,
                v_set: t.v,
                p_mw: meas.p_meas,
                q_mvar: meas.q_meas,
                p_target_mw: pvcl.then_some(t.p),
                stack_mw: meas.p_meas + params.standby_loss_mw,
            };
            t.v = relax(t.v, state.refs.v_ref, params.tau_v, dt);
            if pvcl {
                t.p = relax(t.p, state.refs.p_ref, params.tau_p, dt);
            } else {
                t.p = meas.p_meas;
            }
            t.q = meas.q_meas;
            next.p_out = meas.p_meas;
            next.q_out = meas.q_meas;
            sp
        }
        _ => {
            let sp = PemfcSetpoint {
                forming: false,
                v_set: t.v,
                p_mw: t.p,
                q_mvar: t.q,
                p_target_mw: None,
                stack_mw: t.p + params.standby_loss_mw,
            };
            next.p_out = t.p;
            next.q_out = t.q;
            t.p = relax(t.p, state.refs.p_ref, params.tau_p, dt);
            t.q = relax(t.q, state.refs.q_ref, params.tau_p, dt);
            t.v = meas.v_bus;
            sp
        }
    };
    Ok((next, set))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LscParams {
    pub v_dc_ref: f64,
    pub tau_dc: f64,
    /// DC-link capacitance (F).
    pub capacitance_f: f64,
    /// DC-link maintenance draw at regulated voltage (MW). Scenario files
    /// set it once, in the sizing section.
    #[serde(skip)]
    pub standby_mw: f64,
}

impl Default for LscParams {
    fn default() -> Self {
        Self {
            v_dc_ref: 1150.0,
            tau_dc: 0.015,
            capacitance_f: 0.01,
            standby_mw: 0.04,
        }
    }
}

impl LscParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        positive("v_dc_ref", self.v_dc_ref)?;
        positive("tau_dc", self.tau_dc)?;
        if !(self.capacitance_f >= 0.0 && self.standby_mw >= 0.0) {
            return Err(DeviceError::InvalidParameter(
                "LSC capacitance and standby must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Returns the next state and the active power drawn from the grid (MW).
pub fn lsc_step(
    params: &LscParams,
    state: &DeviceState,
    _meas: &Measurements,
    dt: f64,
) -> Result<(DeviceState, f64), DeviceError> {
    check_dt(dt)?;
    state.check_mode()?;
    if !state.connected {
        return Ok((state.disconnected(), 0.0));
    }
    let v = state.tracking.v_dc;
    let v_ref = state.refs.v_dc_ref;
    let charging_w = params.capacitance_f * v * (v_ref - v) / params.tau_dc;
    let draw = params.standby_mw + charging_w * 1e-6;
    let mut next = *state;
    next.tracking.v_dc = relax(v, v_ref, params.tau_dc, dt);
    next.p_out = -draw;
    next.q_out = 0.0;
    Ok((next, draw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MscParams {
    pub v_ref: f64,
    pub f_ref: f64,
    pub tau_sync: f64,
    pub tau_inner: f64,
    pub tau_outer: f64,
    /// Rotor excitation draw while synchronizing (MVar).
    pub excitation_mvar: f64,
    /// Slew limit on power references (MW/s, MVar/s).
    pub ramp_rate: f64,
    /// Stator output targets between stator closure and step 6.
    pub p_setpoint_mw: f64,
    pub q_setpoint_mvar: f64,
    /// Fraction below the DC reference at which the MSC refuses to run.
    pub dc_ready_band: f64,
    pub regulation_s: f64,
    pub disturbance_hz_per_mw: f64,
}

impl Default for MscParams {
    fn default() -> Self {
        Self {
            v_ref: 1.0,
            f_ref: 50.0,
            tau_sync: 0.03,
            tau_inner: 0.01,
            tau_outer: 0.1,
            excitation_mvar: 0.08,
            ramp_rate: 2.5,
            p_setpoint_mw: 2.0,
            q_setpoint_mvar: 0.3,
            dc_ready_band: 0.01,
            regulation_s: 0.05,
            disturbance_hz_per_mw: 0.55,
        }
    }
}

impl MscParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        for (n, v) in [
            ("v_ref", self.v_ref),
            ("f_ref", self.f_ref),
            ("tau_sync", self.tau_sync),
            ("tau_inner", self.tau_inner),
            ("tau_outer", self.tau_outer),
            ("ramp_rate", self.ramp_rate),
            ("dc_ready_band", self.dc_ready_band),
            ("regulation_s", self.regulation_s),
        ] {
            positive(n, v)?;
        }
        if !(self.excitation_mvar >= 0.0 && self.disturbance_hz_per_mw >= 0.0) {
            return Err(DeviceError::InvalidParameter(
                "MSC excitation and disturbance gain must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn references(&self) -> References {
        References {
            v_ref: self.v_ref,
            f_ref: self.f_ref,
            p_ref: self.p_setpoint_mw,
            q_ref: self.q_setpoint_mvar,
            ..References::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MscCommand {
    pub forming: bool,
    pub stator: Complex64,
    pub v_set: f64,
    /// Net output at the DFIG terminal (MW/MVar), excitation included.
    pub p_mw: f64,
    pub q_mvar: f64,
    pub p_target_mw: Option<f64>,
    /// |stator - grid| before this step's correction (pu).
    pub sync_error: f64,
}

pub fn msc_step(
    params: &MscParams,
    state: &DeviceState,
    meas: &Measurements,
    dt: f64,
) -> Result<(DeviceState, MscCommand), DeviceError> {
    check_dt(dt)?;
    state.check_mode()?;
    if !state.connected {
        let next = state.disconnected();
        return Ok((
            next,
            MscCommand {
                forming: false,
                stator: state.tracking.stator,
                v_set: state.tracking.v,
                p_mw: 0.0,
                q_mvar: 0.0,
                p_target_mw: None,
                sync_error: (state.tracking.stator - meas.grid_v).norm(),
            },
        ));
    }
    let threshold = (1.0 - params.dc_ready_band) * state.refs.v_dc_ref;
    if meas.v_dc < threshold {
        return Err(DeviceError::SequencingViolation {
            v_dc: meas.v_dc,
            threshold,
        });
    }
    let mut next = *state;
    let t = &mut next.tracking;
    let sync_error = (t.stator - meas.grid_v).norm();
    let cmd = match state.mode {
        ControlMode::Vcl => {
            let cmd = MscCommand {
                forming: false,
                stator: t.stator,
                v_set: t.v,
                p_mw: 0.0,
                q_mvar: -params.excitation_mvar,
                p_target_mw: None,
                sync_error,
            };
            t.stator = relax_c(t.stator, meas.grid_v, params.tau_sync, dt);
            t.v = t.stator.norm();
            cmd
        }
        _ if state.is_grid_forming() => {
            let cmd = MscCommand {
                forming: true,
                stator: meas.grid_v,
                v_set: t.v,
                p_mw: meas.p_meas,
                q_mvar: meas.q_meas,
                p_target_mw: Some(t.p_cmd),
                sync_error: 0.0,
            };
            t.p_cmd = ramp(t.p_cmd, state.refs.p_ref, params.ramp_rate, dt);
            t.p = meas.p_meas;
            t.q = meas.q_meas;
            t.q_cmd = meas.q_meas;
            t.v = relax(t.v, state.refs.v_ref, params.tau_outer, dt);
            t.stator = meas.grid_v;
            cmd
        }
        _ => {
            let cmd = MscCommand {
                forming: false,
                stator: meas.grid_v,
                v_set: t.v,
                p_mw: t.p,
                q_mvar: t.q,
                p_target_mw: Some(t.p_cmd),
                sync_error: if state.stator_closed { 0.0 } else { sync_error },
            };
            t.p_cmd = ramp(t.p_cmd, state.refs.p_ref, params.ramp_rate, dt);
            t.q_cmd = ramp(t.q_cmd, state.refs.q_ref, params.ramp_rate, dt);
            t.p = relax(t.p, t.p_cmd, params.tau_inner, dt);
            t.q = relax(t.q, t.q_cmd, params.tau_inner, dt);
            t.v = meas.v_bus;
            t.stator = meas.grid_v;
            cmd
        }
    };
    next.p_out = cmd.p_mw;
    next.q_out = cmd.q_mvar;
    Ok((next, cmd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElzParams {
    pub rating_mw: f64,
    /// Minimum operating power; also the clamp floor and the emergency level.
    pub min_power_mw: f64,
    /// Approach to the minimum in PCL.
    pub tau_pcl: f64,
    /// Slack-tracking constant in VCL.
    pub tau_vcl: f64,
}

impl Default for ElzParams {
    fn default() -> Self {
        Self {
            rating_mw: 5.0,
            min_power_mw: 0.5,
            tau_pcl: 0.1,
            tau_vcl: 0.01,
        }
    }
}

impl ElzParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        positive("rating_mw", self.rating_mw)?;
        positive("tau_pcl", self.tau_pcl)?;
        positive("tau_vcl", self.tau_vcl)?;
        if !(self.min_power_mw >= 0.0 && self.min_power_mw <= self.rating_mw) {
            return Err(DeviceError::InvalidParameter(
                "ELZ minimum power must lie in [0, rating]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clamp {
    Floor,
    Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElzSetpoint {
    pub consumption_mw: f64,
    /// Set when the slack loop hit a limit during this step.
    pub clamped: Option<Clamp>,
}

/// ELZ tracking state `p` holds consumption (positive).
pub fn elz_step(
    params: &ElzParams,
    state: &DeviceState,
    meas: &Measurements,
    dt: f64,
) -> Result<(DeviceState, ElzSetpoint), DeviceError> {
    check_dt(dt)?;
    state.check_mode()?;
    if !state.connected {
        return Ok((
            state.disconnected(),
            ElzSetpoint {
                consumption_mw: 0.0,
                clamped: None,
            },
        ));
    }
    let mut next = *state;
    let c = state.tracking.p;
    let mut clamped = None;
    let consumption = match state.mode {
        ControlMode::Pcl => {
            next.tracking.p = relax(c, params.min_power_mw, params.tau_pcl, dt);
            c
        }
        ControlMode::Vcl => {
            let raw = c - (1.0 - (-dt / params.tau_vcl).exp()) * meas.slack_error_mw;
            next.tracking.p = if raw < params.min_power_mw {
                clamped = Some(Clamp::Floor);
                params.min_power_mw
            } else if raw > params.rating_mw {
                clamped = Some(Clamp::Rating);
                params.rating_mw
            } else {
                raw
            };
            c
        }
        _ => {
            next.tracking.p = params.min_power_mw;
            params.min_power_mw
        }
    };
    next.p_out = -consumption;
    next.q_out = 0.0;
    Ok((
        next,
        ElzSetpoint {
            consumption_mw: consumption,
            clamped,
        },
    ))
}

fn mode_for(switch: Switch, position: u8) -> Option<ControlMode> {
    use ControlMode::*;
    match (switch, position) {
        (Switch::S1, 0) => Some(Vcl),
        (Switch::S1, 1) => Some(Pvcl),
        (Switch::S2, 0) => Some(Pcl),
        (Switch::S2, 1) => Some(Vcl),
        (Switch::S2, 2) => Some(Emergency),
        (Switch::S3, 0) => Some(Vcl),
        (Switch::S3, 1) => Some(Pcl),
        (Switch::S3, 2) => Some(Apcl),
        _ => None,
    }
}

/// Applies a switch position to the device it controls.
pub fn apply_switch(state: &DeviceState, switch: Switch, position: u8) -> Result<DeviceState, DeviceError> {
    if position >= switch.positions() {
        return Err(DeviceError::IllegalPosition { switch, position });
    }
    if switch.device() != state.kind {
        return Err(DeviceError::WrongDevice {
            switch,
            device: state.kind,
        });
    }
    let mut next = *state;
    if switch == Switch::S4 {
        next.frequency_source = position == 1;
        return Ok(next);
    }
    let mode = mode_for(switch, position).ok_or(DeviceError::IllegalPosition { switch, position })?;
    if mode == state.mode {
        return Ok(next);
    }
    next.mode = mode;
    let t = &mut next.tracking;
    match state.kind {
        DeviceKind::Elz => t.p = -state.p_out,
        _ => {
            t.p = state.p_out;
            t.q = state.q_out;
            t.p_cmd = state.p_out;
            t.q_cmd = state.q_out;
        }
    }
    Ok(next)
}
