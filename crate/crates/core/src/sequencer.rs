//! Six-step black-start automaton with trigger predicates and the
//! per-strategy action vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::Switch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("advance without a satisfied trigger (pending {0:?})")]
    NotArmed(Pending),
    #[error("sequence already complete")]
    Complete,
    #[error("invalid trigger thresholds: {0}")]
    Thresholds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Whcc,
    Hscc,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Whcc => "whcc",
            Strategy::Hscc => "hscc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Breaker {
    /// PEMFC
    B1,
    /// Auxiliary supply
    B2,
    /// LSC
    B3,
    /// Stator
    B4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SetSwitch { switch: Switch, position: u8 },
    SetBreaker { breaker: Breaker, closed: bool },
    StartPemfc,
    StartLsc,
    StartMsc,
    StartHpu,
    DisconnectPemfc,
    TrackMppt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pending {
    Step(u8),
    Complete,
}

/// Switch positions S1..S4 and breaker states B1..B4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SwitchBoard {
    pub switches: [u8; 4],
    pub breakers: [bool; 4],
}

impl SwitchBoard {
    pub fn switch(&self, s: Switch) -> u8 {
        self.switches[s as usize]
    }

    pub fn breaker(&self, b: Breaker) -> bool {
        self.breakers[b as usize]
    }

    pub fn apply(&mut self, action: &Action) {
        match *action {
            Action::SetSwitch { switch, position } => self.switches[switch as usize] = position,
            Action::SetBreaker { breaker, closed } => self.breakers[breaker as usize] = closed,
            Action::DisconnectPemfc => self.breakers[Breaker::B1 as usize] = false,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerThresholds {
    /// Fraction of rated voltage.
    pub v_band: f64,
    /// Fraction of the reference frequency.
    pub f_band: f64,
    /// Fraction of the DC-link reference.
    pub dc_band: f64,
    /// Stator-grid phasor error (pu).
    pub sync_phasor_error: f64,
    pub hold_time: f64,
    pub steady_window: f64,
    /// Allowed swing of device active/reactive output within the steady
    /// window (MW, MVar).
    pub power_band: f64,
}

impl Default for TriggerThresholds {
    fn default() -> Self {
        Self {
            v_band: 0.02,
            f_band: 0.005,
            dc_band: 0.01,
            sync_phasor_error: 0.01,
            hold_time: 0.05,
            steady_window: 0.1,
            power_band: 0.02,
        }
    }
}

impl TriggerThresholds {
    pub fn validate(&self) -> Result<(), SequenceError> {
        let all = [
            self.v_band,
            self.f_band,
            self.dc_band,
            self.sync_phasor_error,
            self.steady_window,
            self.power_band,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SequenceError::Thresholds("bands must be positive".into()));
        }
        if !(self.hold_time.is_finite() && self.hold_time >= 0.0) {
            return Err(SequenceError::Thresholds("hold_time must be >= 0".into()));
        }
        Ok(())
    }
}

/// System-level quantities the trigger predicates look at.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemMeasurements {
    pub t: f64,
    /// Voltage magnitude with the largest deviation from 1 pu among
    /// monitored buses.
    pub v_pu: f64,
    pub f_hz: f64,
    pub f_ref: f64,
    pub v_dc: f64,
    pub v_dc_ref: f64,
    pub sync_error: f64,
    /// Output of the steady-state detector.
    pub steady: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TriggerMode {
    Condition,
    /// Fire times for steps 2 to 6; step 1 fires on the start command.
    Scripted([f64; 5]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: f64,
    pub step: u8,
    pub actions: Vec<Action>,
    pub snapshot: SystemMeasurements,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencerState {
    pub pending: Pending,
    pub strategy: Strategy,
    pub board: SwitchBoard,
    /// Seconds the pending condition has held.
    pub trigger_timer: f64,
    pub event_log: Vec<StepEvent>,
    pub mode: TriggerMode,
    /// Open the PEMFC breaker at WHCC step 6.
    pub whcc_disconnect_pemfc: bool,
    holding: bool,
    armed: Option<SystemMeasurements>,
}

impl SequencerState {
    pub fn new(strategy: Strategy, mode: TriggerMode) -> Self {
        Self {
            pending: Pending::Step(1),
            strategy,
            board: SwitchBoard::default(),
            trigger_timer: 0.0,
            event_log: Vec::new(),
            mode,
            whcc_disconnect_pemfc: true,
            holding: false,
            armed: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.pending == Pending::Complete
    }

    /// Last executed step, 0 before the start command.
    pub fn last_step(&self) -> u8 {
        match self.pending {
            Pending::Step(s) => s - 1,
            Pending::Complete => 6,
        }
    }

    fn condition(step: u8, meas: &SystemMeasurements, th: &TriggerThresholds) -> bool {
        match step {
            1 => true,
            2 => (meas.v_pu - 1.0).abs() <= th.v_band && (meas.f_hz - meas.f_ref).abs() <= th.f_band * meas.f_ref,
            3 => (meas.v_dc - meas.v_dc_ref).abs() <= th.dc_band * meas.v_dc_ref,
            4 => meas.sync_error <= th.sync_phasor_error,
            _ => meas.steady,
        }
    }

    /// Evaluates the pending step's trigger and arms [`advance`](Self::advance)
    /// when it fires.
    pub fn check_trigger(&mut self, meas: &SystemMeasurements, th: &TriggerThresholds, dt: f64) -> bool {
        let Pending::Step(step) = self.pending else {
            return false;
        };
        let fired = match &self.mode {
            TriggerMode::Scripted(times) => {
                let due = step == 1 || meas.t >= times[step as usize - 2] - 1e-9;
                let physical = !matches!(step, 3 | 4) || Self::condition(step, meas, th);
                due && physical
            }
            TriggerMode::Condition if step == 1 => true,
            TriggerMode::Condition => {
                if Self::condition(step, meas, th) {
                    if self.holding {
                        self.trigger_timer += dt;
                    } else {
                        self.holding = true;
                        self.trigger_timer = 0.0;
                    }
                    self.trigger_timer >= th.hold_time - 1e-9
                } else {
                    self.holding = false;
                    self.trigger_timer = 0.0;
                    false
                }
            }
        };
        if fired {
            self.armed = Some(*meas);
        }
        fired
    }

    pub fn actions(&self, step: u8) -> Vec<Action> {
        use Action::*;
        let sw = |switch, position| SetSwitch { switch, position };
        let br = |breaker, closed| SetBreaker { breaker, closed };
        match step {
            1 => vec![
                sw(Switch::S1, 0),
                sw(Switch::S2, 0),
                sw(Switch::S3, 0),
                sw(Switch::S4, 0),
                br(Breaker::B1, true),
                br(Breaker::B2, true),
                br(Breaker::B3, false),
                br(Breaker::B4, false),
                StartPemfc,
            ],
            2 => vec![br(Breaker::B3, true), StartLsc],
            3 => vec![StartMsc],
            4 => vec![br(Breaker::B4, true), sw(Switch::S3, 1)],
            5 => vec![StartHpu],
            6 => match self.strategy {
                Strategy::Whcc => {
                    let mut a = vec![sw(Switch::S2, 1), sw(Switch::S3, 2), sw(Switch::S4, 1)];
                    if self.whcc_disconnect_pemfc {
                        a.push(DisconnectPemfc);
                    }
                    a.push(TrackMppt);
                    a
                }
                Strategy::Hscc => vec![sw(Switch::S2, 1), sw(Switch::S1, 1), TrackMppt],
            },
            _ => Vec::new(),
        }
    }

    /// Executes the pending step. Requires a fired trigger since the last
    /// advance.
    pub fn advance(&mut self) -> Result<Vec<Action>, SequenceError> {
        let Pending::Step(step) = self.pending else {
            return Err(SequenceError::Complete);
        };
        let snapshot = self.armed.take().ok_or(SequenceError::NotArmed(self.pending))?;
        let actions = self.actions(step);
        for a in &actions {
            self.board.apply(a);
        }
        self.event_log.push(StepEvent {
            t: snapshot.t,
            step,
            actions: actions.clone(),
            snapshot,
        });
        self.pending = if step == 6 {
            Pending::Complete
        } else {
            Pending::Step(step + 1)
        };
        self.holding = false;
        self.trigger_timer = 0.0;
        Ok(actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steady_meas(t: f64) -> SystemMeasurements {
        SystemMeasurements {
            t,
            v_pu: 1.0,
            f_hz: 50.0,
            f_ref: 50.0,
            v_dc: 1150.0,
            v_dc_ref: 1150.0,
            sync_error: 0.0,
            steady: true,
        }
    }

    #[test]
    fn step_one_actions() {
        let mut s = SequencerState::new(Strategy::Whcc, TriggerMode::Condition);
        assert!(s.check_trigger(&steady_meas(0.0), &TriggerThresholds::default(), 1e-3));
        let a = s.advance().unwrap();
        assert!(a.contains(&Action::StartPemfc));
        assert_eq!(s.board.switches, [0; 4]);
        assert_eq!(s.board.breakers, [true, true, false, false]);
        assert_eq!(s.pending, Pending::Step(2));
    }

    #[test]
    fn double_advance_rejected() {
        let mut s = SequencerState::new(Strategy::Hscc, TriggerMode::Condition);
        s.check_trigger(&steady_meas(0.0), &TriggerThresholds::default(), 1e-3);
        s.advance().unwrap();
        let before = s.clone();
        assert_eq!(s.advance(), Err(SequenceError::NotArmed(Pending::Step(2))));
        assert_eq!(s, before);
    }

    #[test]
    fn step_two_fires_after_hold() {
        let th = TriggerThresholds::default();
        let mut s = SequencerState::new(Strategy::Whcc, TriggerMode::Condition);
        s.check_trigger(&steady_meas(0.0), &th, 1e-3);
        s.advance().unwrap();
        let dt = 1e-3;
        let mut fired_at = None;
        for n in 0..=60 {
            let m = SystemMeasurements {
                v_pu: 1.01,
                f_hz: 50.1,
                ..steady_meas(n as f64 * dt)
            };
            if s.check_trigger(&m, &th, dt) {
                fired_at = Some(m.t);
                break;
            }
        }
        assert!((fired_at.unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn whcc_step_six_disconnects_pemfc() {
        let th = TriggerThresholds::default();
        let mut s = SequencerState::new(Strategy::Whcc, TriggerMode::Condition);
        let mut t = 0.0;
        while !s.is_complete() {
            if s.check_trigger(&steady_meas(t), &th, 1e-3) {
                s.advance().unwrap();
            }
            t += 1e-3;
        }
        let last = s.event_log.last().unwrap();
        assert_eq!(last.step, 6);
        assert!(last.actions.contains(&Action::DisconnectPemfc));
        assert_eq!(s.board.switches, [0, 1, 2, 1]);
        assert!(!s.board.breaker(Breaker::B1));
        assert!(!s.check_trigger(&steady_meas(t), &th, 1e-3));
        assert_eq!(s.advance(), Err(SequenceError::Complete));
    }
}
