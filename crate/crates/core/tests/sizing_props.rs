use blackstart::powerflow::{solve, FlowOptions};
use blackstart::scenario::{ScenarioFile, REFERENCE_CASE};
use blackstart::sizing::*;
use proptest::prelude::*;

fn reference() -> (ScenarioFile, SizingScenario) {
    let file = ScenarioFile::parse(REFERENCE_CASE, "paper-case").unwrap();
    let s = file.sizing_scenario().unwrap();
    (file, s)
}

fn p_min(s: &SizingScenario) -> f64 {
    required_blackstart_power(s).unwrap().0
}

#[test]
fn reference_case_within_declared_calibration() {
    let (file, s) = reference();
    let cal = file.calibration.unwrap();
    let (report, circuit, _) = size(&s).unwrap();
    assert!((report.p_min_mw / cal.target_p_mw - 1.0).abs() <= cal.tolerance);
    assert!((report.q_min_mvar / cal.target_q_mvar - 1.0).abs() <= cal.tolerance);
    assert_eq!(report.rating_mw, 3.0);
    assert!(report.rating_mw > report.p_min_mw);
    assert_eq!(circuit.network.bus_count(), 6);
    assert!(circuit.network.validate_solvable().is_ok());
}

#[test]
fn loss_signs() {
    let (report, _, _) = size(&reference().1).unwrap();
    assert!(report.losses.transformer_excitation_mvar > 0.0);
    assert!(report.losses.line_charging_mvar < 0.0);
    assert!(report.losses.total_p_mw > 0.0);
}

#[test]
fn p_min_is_loads_plus_losses() {
    let s = reference().1;
    let (report, _, sol) = size(&s).unwrap();
    let injected_loads: f64 = s.active_load_mw();
    let two_paths = injected_loads + report.losses.total_p_mw;
    // Load buses are converged to 1e-8 pu on a 10 MVA base.
    assert!(
        (report.p_min_mw - two_paths).abs() < 1e-6,
        "{} vs {two_paths}",
        report.p_min_mw
    );
    assert!(sol.mismatch <= 1e-8);
}

#[test]
fn doubling_hydrogen_load_adds_at_least_the_load() {
    let s = reference().1;
    let mut doubled = s.clone();
    for e in &mut doubled.hydrogen_aux.entries {
        e.count *= 2;
    }
    let added = doubled.hydrogen_aux_mw() - s.hydrogen_aux_mw();
    assert!(p_min(&doubled) - p_min(&s) >= added);
}

fn lossless_unloaded() -> SizingScenario {
    let mut s = reference().1;
    s.dfig_rating_mw = 0.0;
    s.hydrogen_aux.entries.clear();
    s.hydrogen_aux_q_mvar = 0.0;
    s.unitemized_load_mw = 0.0;
    s.lsc_standby_mw = 0.0;
    for b in &mut s.circuit.branches {
        match b {
            TemplateBranch::Line { r_ohm, b_us, .. } => {
                *r_ohm = 0.0;
                *b_us = 0.0;
            }
            TemplateBranch::Transformer {
                r_pu, magnetizing_mvar, ..
            } => {
                *r_pu = 0.0;
                *magnetizing_mvar = 0.0;
            }
        }
    }
    s
}

#[test]
fn nothing_to_supply_means_zero() {
    let (report, _, _) = size(&lossless_unloaded()).unwrap();
    assert!(report.p_min_mw.abs() < 1e-9);
    assert!(report.q_min_mvar.abs() < 1e-9);
    assert_eq!(report.rating_mw, 0.0);
}

#[test]
fn unloaded_circuit_supplies_only_its_losses() {
    let mut s = reference().1;
    s.dfig_rating_mw = 0.0;
    s.hydrogen_aux.entries.clear();
    s.hydrogen_aux_q_mvar = 0.0;
    s.unitemized_load_mw = 0.0;
    s.lsc_standby_mw = 0.0;
    let (report, _, _) = size(&s).unwrap();
    let l = report.losses;
    assert!((report.q_min_mvar - l.total_q_mvar).abs() < 1e-6);
    assert!((report.p_min_mw - l.total_p_mw).abs() < 1e-6);
    // Only shunt current flows, so series terms are second order.
    let shunt = l.transformer_excitation_mvar + l.line_charging_mvar;
    assert!(l.series_q_mvar.abs() < 0.01 * shunt.abs(), "{l:?}");
    assert!(l.total_p_mw < 0.01 * shunt.abs(), "{l:?}");
}

#[test]
fn doubling_the_base_leaves_the_physics_alone() {
    let s = reference().1;
    let mut s2 = s.clone();
    s2.circuit.s_base_mva *= 2.0;
    let a = build_blackstart_network(&s).unwrap().network;
    let b = build_blackstart_network(&s2)
        .unwrap()
        .network
        .rebase(s.circuit.s_base_mva)
        .unwrap();
    for (x, y) in a.branches.iter().zip(&b.branches) {
        for (u, v) in [(x.r_s, y.r_s), (x.x_s, y.x_s), (x.b_c, y.b_c), (x.tau, y.tau)] {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{u} vs {v}");
        }
    }
    for (x, y) in a.buses.iter().zip(&b.buses) {
        assert!((x.p_inject - y.p_inject).abs() < 1e-12);
        assert!((x.q_inject - y.q_inject).abs() < 1e-12);
    }
    let (pa, qa) = required_blackstart_power(&s).unwrap();
    let (pb, qb) = required_blackstart_power(&s2).unwrap();
    assert!((pa - pb).abs() < 1e-6 && (qa - qb).abs() < 1e-6);
}

#[test]
fn newton_tail_is_quadratic_on_reference_case() {
    let net = build_blackstart_network(&reference().1).unwrap().network;
    let opts = FlowOptions {
        tolerance: 1e-13,
        ..FlowOptions::default()
    };
    let sol = solve(&net, &opts).unwrap();
    let t = &sol.trace;
    assert!(t.len() >= 3, "{t:?}");
    for w in t.windows(2) {
        assert!(w[1] < w[0], "{t:?}");
    }
    let n = t.len();
    // e_{k+1} <= C e_k^2 on the last contracting pair above round-off.
    let (a, b) = (t[n - 3], t[n - 2]);
    assert!(b <= 10.0 * a * a, "{t:?}");
}

#[test]
fn margin_override_rounds_to_granularity() {
    let mut s = reference().1;
    s.margin = 0.5;
    let (report, _, _) = size(&s).unwrap();
    assert_eq!(report.rating_mw, 3.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn p_min_is_monotone_in_every_load(
        ratio in 0.01f64..0.1,
        dr in 0.001f64..0.05,
        scale in 0.5f64..1.5,
        ds in 0.01f64..0.5,
        lsc in 0.0f64..0.1,
        dl in 0.001f64..0.1,
    ) {
        let mut base = reference().1;
        base.wind_aux_ratio = ratio;
        base.lsc_standby_mw = lsc;
        for e in &mut base.hydrogen_aux.entries {
            e.rated_kw *= scale;
        }
        let p0 = p_min(&base);

        let mut more = base.clone();
        more.wind_aux_ratio = ratio + dr;
        prop_assert!(p_min(&more) >= p0);

        let mut more = base.clone();
        for e in &mut more.hydrogen_aux.entries {
            e.rated_kw *= 1.0 + ds;
        }
        prop_assert!(p_min(&more) >= p0);

        let mut more = base.clone();
        more.lsc_standby_mw = lsc + dl;
        prop_assert!(p_min(&more) >= p0);
    }
}
