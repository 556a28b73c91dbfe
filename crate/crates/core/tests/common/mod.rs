//! Shared oracles and fixtures for the integration suites.
#![allow(dead_code)]

use blackstart::netmodel::{assemble_ybus, Branch, BusRole, BusSpec, Network};
use blackstart::powerflow::{jacobian, mismatch, NetworkSolution, PolarState, StateLayout};
use num_complex::Complex64;
use proptest::test_runner::{RngAlgorithm, TestRng};
use rand::RngExt;

pub fn net(buses: Vec<BusSpec>, branches: Vec<Branch>) -> Network {
    let n = buses.len();
    Network::new(buses, branches, 100.0, vec![1.0; n]).unwrap()
}

/// Gauss-Seidel with PV reactive update, iterated until the largest
/// voltage change falls below 1e-14.
pub fn gauss_seidel(network: &Network) -> Vec<Complex64> {
    let y = assemble_ybus(network).unwrap();
    let n = network.bus_count();
    let mut v: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| match b.role {
            BusRole::Reference => Complex64::from_polar(b.v_set, b.angle_set),
            BusRole::PV => Complex64::new(b.v_set, 0.0),
            BusRole::PQ => Complex64::new(1.0, 0.0),
        })
        .collect();
    for _ in 0..50_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let b = &network.buses[i];
            if b.role == BusRole::Reference {
                continue;
            }
            let sum_others: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[(i, k)] * v[k]).sum();
            let q = if b.role == BusRole::PV {
                (v[i] * (sum_others + y[(i, i)] * v[i]).conj()).im
            } else {
                b.q_inject
            };
            let s = Complex64::new(b.p_inject, q);
            let mut new = (s.conj() / v[i].conj() - sum_others) / y[(i, i)];
            if b.role == BusRole::PV {
                new = new * (b.v_set / new.norm());
            }
            change = change.max((new - v[i]).norm());
            v[i] = new;
        }
        if change < 1e-14 {
            break;
        }
    }
    v
}

/// Largest relative gap between the analytic Jacobian and central
/// differences of the mismatch, scaled by max(|J|, 1).
pub fn jacobian_fd_error(network: &Network, state: &PolarState) -> f64 {
    let layout = StateLayout::of(network);
    let analytic = jacobian(network, state).unwrap();
    let x0 = state.pack(&layout);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..x0.len() {
        let eval = |dx: f64| {
            let mut s = state.clone();
            let mut x = x0.clone();
            x[c] += dx;
            s.unpack(&layout, &x);
            mismatch(network, &s).unwrap()
        };
        let (plus, minus) = (eval(h), eval(-h));
        for r in 0..x0.len() {
            let fd = (plus[r] - minus[r]) / (2.0 * h);
            let a = analytic[(r, c)];
            worst = worst.max((fd - a).abs() / a.abs().max(1.0));
        }
    }
    worst
}

/// Worst of the global balance (injections vs losses) and the per-bus
/// balance (injection vs flows leaving the bus).
pub fn balance_error(sol: &NetworkSolution) -> f64 {
    let injected: Complex64 = sol.bus_injections.iter().sum();
    let mut worst = (injected - sol.loss_total).norm();
    for (i, s_bus) in sol.bus_injections.iter().enumerate() {
        let leaving: Complex64 = sol
            .branch_flows
            .iter()
            .map(|f| {
                let mut s = Complex64::new(0.0, 0.0);
                if f.from_bus == i {
                    s += f.s_from;
                }
                if f.to_bus == i {
                    s += f.s_to;
                }
                s
            })
            .sum();
        worst = worst.max((s_bus - leaving).norm());
    }
    worst
}

fn hand_cases() -> Vec<(String, Network)> {
    vec![
        (
            "two-bus line".into(),
            net(
                vec![BusSpec::reference(0, 1.0, 0.0), BusSpec::pq(1, -0.5, -0.2)],
                vec![Branch::line(0, 1, 0.01, 0.1, 0.02)],
            ),
        ),
        (
            "two-bus phase shifter".into(),
            net(
                vec![BusSpec::reference(0, 1.02, 0.1), BusSpec::pq(1, -0.4, 0.1)],
                vec![Branch::transformer(0, 1, 0.005, 0.08, -0.01, 1.04, 0.2)],
            ),
        ),
        (
            "two-bus pv".into(),
            net(
                vec![BusSpec::reference(0, 1.0, 0.0), BusSpec::pv(1, 0.3, 1.02)],
                vec![Branch::line(0, 1, 0.0, 0.15, 0.0)],
            ),
        ),
        (
            "three-bus ring".into(),
            net(
                vec![
                    BusSpec::reference(0, 1.0, 0.0),
                    BusSpec::pq(1, -0.3, -0.1),
                    BusSpec::pq(2, -0.2, 0.05),
                ],
                vec![
                    Branch::line(0, 1, 0.02, 0.1, 0.03),
                    Branch::line(1, 2, 0.03, 0.15, 0.0),
                    Branch::line(0, 2, 0.01, 0.2, 0.02),
                ],
            ),
        ),
        (
            "three-bus radial with pv transformer".into(),
            net(
                vec![
                    BusSpec::reference(0, 1.03, 0.0),
                    BusSpec::pv(1, 0.2, 1.0),
                    BusSpec::pq(2, -0.5, -0.2),
                ],
                vec![
                    Branch::line(0, 2, 0.02, 0.1, 0.0),
                    Branch::transformer(1, 2, 0.0, 0.12, 0.0, 1.02, 0.05),
                ],
            ),
        ),
        (
            "unloaded".into(),
            net(
                vec![
                    BusSpec::reference(0, 1.0, 0.0),
                    BusSpec::pq(1, 0.0, 0.0),
                    BusSpec::pq(2, 0.0, 0.0),
                ],
                vec![Branch::line(0, 1, 0.01, 0.1, 0.0), Branch::line(1, 2, 0.01, 0.1, 0.0)],
            ),
        ),
    ]
}

fn random_case(rng: &mut TestRng, k: usize) -> (String, Network) {
    let n = rng.random_range(2..=3usize);
    let mut buses = vec![BusSpec::reference(
        0,
        rng.random_range(0.98..1.04),
        rng.random_range(-0.1..0.1),
    )];
    for i in 1..n {
        if rng.random_bool(0.3) {
            buses.push(BusSpec::pv(
                i,
                rng.random_range(-0.2..0.3),
                rng.random_range(0.98..1.03),
            ));
        } else {
            buses.push(BusSpec::pq(
                i,
                -rng.random_range(0.0..0.4),
                rng.random_range(-0.15..0.1),
            ));
        }
    }
    let branch = |f: usize, t: usize, rng: &mut TestRng| {
        let (r, x, b) = (
            rng.random_range(0.0..0.03),
            rng.random_range(0.05..0.2),
            rng.random_range(0.0..0.05),
        );
        if rng.random_bool(0.4) {
            Branch::transformer(
                f,
                t,
                r,
                x,
                -b / 5.0,
                rng.random_range(0.95..1.05),
                rng.random_range(-0.1..0.1),
            )
        } else {
            Branch::line(f, t, r, x, b)
        }
    };
    let mut branches = vec![];
    for i in 1..n {
        let from = rng.random_range(0..i);
        branches.push(branch(from, i, rng));
    }
    if n == 3 && rng.random_bool(0.5) {
        branches.push(branch(1, 2, rng));
    }
    (format!("seeded case {k}"), net(buses, branches))
}

/// Deterministic corpus of networks with at most three buses.
pub fn small_corpus() -> Vec<(String, Network)> {
    let mut rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7u8; 32]);
    let mut cases = hand_cases();
    cases.extend((0..40).map(|k| random_case(&mut rng, k)));
    cases
}
