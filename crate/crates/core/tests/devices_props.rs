use blackstart::devices::*;
use blackstart::powerflow::{solve, FlowOptions};
use blackstart::scenario::{ScenarioFile, REFERENCE_CASE};
use blackstart::sizing::build_blackstart_network;
use num_complex::Complex64;
use proptest::prelude::*;

fn meas() -> Measurements {
    Measurements {
        v_bus: 1.0,
        f_grid: 50.0,
        v_dc: 1150.0,
        grid_v: Complex64::new(1.0, 0.0),
        ..Measurements::default()
    }
}

fn on(kind: DeviceKind) -> DeviceState {
    DeviceState {
        connected: true,
        ..DeviceState::new(kind, References::default())
    }
}

/// One controller step; returns the next state and the (P, Q) command.
fn step(state: &DeviceState, m: &Measurements, dt: f64) -> (DeviceState, f64, f64) {
    match state.kind {
        DeviceKind::Pemfc => {
            let (n, sp) = pemfc_step(&PemfcParams::default(), state, m, dt).unwrap();
            (n, sp.p_mw, sp.q_mvar)
        }
        DeviceKind::Lsc => {
            let (n, draw) = lsc_step(&LscParams::default(), state, m, dt).unwrap();
            (n, -draw, n.q_out)
        }
        DeviceKind::Msc => {
            let (n, c) = msc_step(&MscParams::default(), state, m, dt).unwrap();
            (n, c.p_mw, c.q_mvar)
        }
        DeviceKind::Elz => {
            let (n, sp) = elz_step(&ElzParams::default(), state, m, dt).unwrap();
            (n, -sp.consumption_mw, 0.0)
        }
    }
}

/// Mode each switch position selects, read off the switch table.
fn table_mode(switch: Switch, position: u8) -> ControlMode {
    use ControlMode::*;
    match (switch, position) {
        (Switch::S1, 0) => Vcl,
        (Switch::S1, 1) => Pvcl,
        (Switch::S2, 0) => Pcl,
        (Switch::S2, 1) => Vcl,
        (Switch::S2, 2) => Emergency,
        (Switch::S3, 0) => Vcl,
        (Switch::S3, 1) => Pcl,
        (Switch::S3, 2) => Apcl,
        _ => unreachable!(),
    }
}

fn switch_for(kind: DeviceKind) -> Switch {
    match kind {
        DeviceKind::Pemfc => Switch::S1,
        DeviceKind::Elz => Switch::S2,
        _ => Switch::S3,
    }
}

#[test]
fn mode_transitions_are_bumpless() {
    // Emergency drops consumption to the floor by design, and the MSC only
    // returns to VCL with the stator open to resynchronize.
    for kind in [DeviceKind::Pemfc, DeviceKind::Msc, DeviceKind::Elz] {
        let sw = switch_for(kind);
        for from in 0..sw.positions() {
            for to in 0..sw.positions() {
                let target = table_mode(sw, to);
                if from == to
                    || target == ControlMode::Emergency
                    || (kind == DeviceKind::Msc && target == ControlMode::Vcl)
                {
                    continue;
                }
                let mut s = on(kind);
                s.refs.p_ref = 1.3;
                s.refs.q_ref = 0.4;
                s.stator_closed = true;
                s.frequency_source = true;
                s = apply_switch(&s, sw, from).unwrap();
                let mut m = Measurements {
                    p_meas: 0.7,
                    q_meas: 0.2,
                    slack_error_mw: -0.3,
                    ..meas()
                };
                for _ in 0..37 {
                    s = step(&s, &m, 1e-3).0;
                }
                // Frozen measurements: a forming device keeps seeing the
                // flow it last produced.
                m.p_meas = s.p_out;
                m.q_meas = s.q_out;
                let switched = apply_switch(&s, sw, to).unwrap();
                let (_, p, q) = step(&switched, &m, 1e-3);
                assert!(
                    (p - s.p_out).abs() < 1e-9 && (q - s.q_out).abs() < 1e-9,
                    "{kind:?} {sw:?} {from}->{to}: ({p}, {q}) vs ({}, {})",
                    s.p_out,
                    s.q_out
                );
            }
        }
    }
}

#[test]
fn lsc_startup_and_standby() {
    let p = LscParams::default();
    let mut s = on(DeviceKind::Lsc);
    let dt = 1e-3;
    let mut t = 0.0;
    while (s.tracking.v_dc - 1150.0).abs() > 0.01 * 1150.0 {
        s = lsc_step(&p, &s, &meas(), dt).unwrap().0;
        t += dt;
    }
    // First-order rise from zero enters the 1% band after tau*ln(100).
    let oracle = p.tau_dc * 100f64.ln();
    assert!((t - oracle).abs() <= dt, "{t} vs {oracle}");
    for _ in 0..500 {
        s = lsc_step(&p, &s, &meas(), dt).unwrap().0;
    }
    let (_, draw) = lsc_step(&p, &s, &meas(), dt).unwrap();
    assert!((draw - 0.04).abs() < 1e-6, "{draw}");
}

#[test]
fn msc_sync_error_strictly_decreases() {
    let p = MscParams::default();
    let mut s = on(DeviceKind::Msc);
    let m = Measurements {
        grid_v: Complex64::from_polar(0.99, -0.02),
        ..meas()
    };
    let mut last = f64::INFINITY;
    let mut steps = 0;
    loop {
        let (n, c) = msc_step(&p, &s, &m, 1e-3).unwrap();
        assert!(
            c.sync_error < last,
            "error rose at step {steps}: {} >= {last}",
            c.sync_error
        );
        assert!((c.q_mvar + 0.08).abs() < 1e-15);
        last = c.sync_error;
        s = n;
        steps += 1;
        if c.sync_error < 0.01 {
            break;
        }
    }
    assert!(steps < 1000);
}

#[test]
fn msc_pcl_ramp_tracks_first_order_lag() {
    let p = MscParams::default();
    let mut s = apply_switch(&on(DeviceKind::Msc), Switch::S3, 1).unwrap();
    s.stator_closed = true;
    let (dt, slope, t_ramp, t_end): (f64, f64, f64, f64) = (1e-4, 2.0, 1.0, 1.1);
    let tau = p.tau_inner;
    let lag = |t: f64| {
        if t <= t_ramp {
            slope * (t - tau * (1.0 - (-t / tau).exp()))
        } else {
            let y1 = slope * (t_ramp - tau * (1.0 - (-t_ramp / tau).exp()));
            2.0 - (2.0 - y1) * (-(t - t_ramp) / tau).exp()
        }
    };
    let n = (t_end / dt).round() as usize;
    let mut worst: f64 = 0.0;
    let mut last = 0.0;
    for k in 0..=n {
        let t = k as f64 * dt;
        s.refs.p_ref = (slope * t).min(2.0);
        let (next, c) = msc_step(&p, &s, &meas(), dt).unwrap();
        worst = worst.max((c.p_mw - lag(t)).abs());
        last = c.p_mw;
        s = next;
    }
    assert!(worst < 0.01 * 2.0, "max deviation from the lag oracle {worst}");
    assert!((last - 2.0).abs() < 0.01 * 2.0, "terminal {last}");
}

#[test]
fn elz_emergency_holds_floor() {
    let p = ElzParams::default();
    let mut s = apply_switch(&on(DeviceKind::Elz), Switch::S2, 2).unwrap();
    s.tracking.p = 3.0;
    for _ in 0..5 {
        let (n, sp) = elz_step(&p, &s, &meas(), 1e-3).unwrap();
        assert_eq!(sp.consumption_mw, p.min_power_mw);
        s = n;
    }
}

/// Closes the ELZ slack loop around the supply-circuit flow with the
/// PEMFC as reference and returns the settled consumption and losses.
fn settle_elz(dfig_mw: f64, target_mw: f64) -> (f64, f64) {
    let file = ScenarioFile::parse(REFERENCE_CASE, "paper-case").unwrap();
    let sc = file.sizing_scenario().unwrap();
    let circuit = build_blackstart_network(&sc).unwrap();
    let s_base = circuit.network.s_base;
    let (h, d) = (circuit.buses.hydrogen, circuit.buses.dfig);
    let params = ElzParams::default();
    let mut elz = apply_switch(&on(DeviceKind::Elz), Switch::S2, 1).unwrap();
    elz.tracking.p = 1.0;
    let mut net = circuit.network.clone();
    let base_h = net.buses[h].p_inject;
    let base_d = net.buses[d].p_inject;
    let mut m = meas();
    for _ in 0..3000 {
        let (next, sp) = elz_step(&params, &elz, &m, 1e-3).unwrap();
        assert!(sp.clamped.is_none());
        net.buses[h].p_inject = base_h - sp.consumption_mw / s_base;
        net.buses[d].p_inject = base_d + dfig_mw / s_base;
        let sol = solve(&net, &FlowOptions::default()).unwrap();
        m.slack_error_mw = sol.reference_injection.re * s_base - target_mw;
        elz = next;
    }
    net.buses[h].p_inject = base_h - elz.tracking.p / s_base;
    let sol = solve(&net, &FlowOptions::default()).unwrap();
    assert!((sol.reference_injection.re * s_base - target_mw).abs() < 1e-9);
    (elz.tracking.p, sol.loss_total.re * s_base)
}

#[test]
fn elz_absorbs_generation_step_net_of_losses() {
    let (c1, loss1) = settle_elz(3.5, 0.05);
    let (c2, loss2) = settle_elz(4.5, 0.05);
    let oracle = 1.0 - (loss2 - loss1);
    // Each flow is converged to 1e-8 pu on a 10 MVA base.
    assert!((c2 - c1 - oracle).abs() < 1e-6, "{} vs {oracle}", c2 - c1);
    assert!(c2 - c1 < 1.0);
}

fn any_kind() -> impl Strategy<Value = DeviceKind> {
    prop_oneof![
        Just(DeviceKind::Pemfc),
        Just(DeviceKind::Lsc),
        Just(DeviceKind::Msc),
        Just(DeviceKind::Elz)
    ]
}

proptest! {
    #[test]
    fn disconnected_devices_output_nothing(
        kind in any_kind(),
        mode_pick in 0usize..3,
        p in -5.0f64..5.0,
        q in -2.0f64..2.0,
        tp in -5.0f64..5.0,
        vdc in 0.0f64..1300.0,
        pm in -5.0f64..5.0,
        err in -5.0f64..5.0,
    ) {
        let modes = kind.legal_modes();
        let mut s = DeviceState::new(kind, References::default());
        s.mode = modes[mode_pick % modes.len()];
        s.p_out = p;
        s.q_out = q;
        s.tracking.p = tp;
        s.tracking.v_dc = vdc;
        let m = Measurements { p_meas: pm, q_meas: q, slack_error_mw: err, v_dc: vdc, ..meas() };
        for _ in 0..3 {
            let (n, cp, cq) = step(&s, &m, 1e-3);
            prop_assert_eq!((cp, cq), (0.0, 0.0));
            prop_assert_eq!((n.p_out, n.q_out), (0.0, 0.0));
            s = n;
        }
    }

    #[test]
    fn lsc_never_exchanges_reactive_power(vdc in 0.0f64..1300.0, connected in any::<bool>()) {
        let mut s = DeviceState::new(DeviceKind::Lsc, References::default());
        s.connected = connected;
        s.tracking.v_dc = vdc;
        s.q_out = 0.3;
        let (n, _, q) = step(&s, &meas(), 1e-3);
        prop_assert_eq!(q, 0.0);
        prop_assert_eq!(n.q_out, 0.0);
    }

    #[test]
    fn final_mode_follows_last_position(
        seq in prop::collection::vec((0usize..4, 0u8..3), 20),
    ) {
        let mut pemfc = on(DeviceKind::Pemfc);
        let mut elz = on(DeviceKind::Elz);
        let mut msc = on(DeviceKind::Msc);
        let mut last: [Option<u8>; 4] = [None; 4];
        let switches = [Switch::S1, Switch::S2, Switch::S3, Switch::S4];
        for (i, raw) in seq {
            let sw = switches[i];
            let pos = raw % sw.positions();
            let dev = match sw.device() {
                DeviceKind::Pemfc => &mut pemfc,
                DeviceKind::Elz => &mut elz,
                _ => &mut msc,
            };
            *dev = apply_switch(dev, sw, pos).unwrap();
            last[i] = Some(pos);
        }
        let expect = |i: usize, sw: Switch, default: ControlMode| {
            last[i].map_or(default, |p| table_mode(sw, p))
        };
        prop_assert_eq!(pemfc.mode, expect(0, Switch::S1, ControlMode::Vcl));
        prop_assert_eq!(elz.mode, expect(1, Switch::S2, ControlMode::Pcl));
        prop_assert_eq!(msc.mode, expect(2, Switch::S3, ControlMode::Vcl));
        prop_assert_eq!(msc.frequency_source, last[3] == Some(1));
    }

    #[test]
    fn illegal_positions_are_rejected(pos in 3u8..10) {
        for sw in [Switch::S1, Switch::S2, Switch::S3, Switch::S4] {
            let s = on(sw.device());
            prop_assert!(apply_switch(&s, sw, pos).is_err());
        }
    }
}
