use gridsynth_core::fixture::NetworkBuilder;
use gridsynth_core::model::GridModel;
use gridsynth_core::powerflow::{ac_powerflow, dc_opf, dc_powerflow, slack_bus, AcSetpoint, OperatingPoint, PowerflowConfig};
use proptest::prelude::*;

fn ring() -> GridModel {
    NetworkBuilder::new(3).branch(0, 1, 0.0, 0.1, 0.0, 500.0).branch(1, 2, 0.0, 0.1, 0.0, 500.0).branch(0, 2, 0.0, 0.1, 0.0, 500.0).build()
}

#[test]
fn ring_splits_two_thirds_one_third() {
    let pf = dc_powerflow(&ring(), &[100.0, -100.0, 0.0], 0).unwrap();
    assert!((pf.p_from_mw[0] - 200.0 / 3.0).abs() < 1e-8);
    assert!((pf.p_from_mw[1] + 100.0 / 3.0).abs() < 1e-8);
    assert!((pf.p_from_mw[2] - 100.0 / 3.0).abs() < 1e-8);
}

#[test]
fn ring_negated_injection_negates_flows() {
    let m = ring();
    let a = dc_powerflow(&m, &[100.0, -100.0, 0.0], 0).unwrap();
    let b = dc_powerflow(&m, &[-100.0, 100.0, 0.0], 0).unwrap();
    for (x, y) in a.p_from_mw.iter().zip(&b.p_from_mw) {
        assert!((x + y).abs() < 1e-8);
    }
}

fn setpoint(m: &GridModel, pg: Vec<f64>) -> AcSetpoint {
    let committed = vec![true; m.generators.len()];
    AcSetpoint { slack: slack_bus(m, &committed), committed, bus_load_mw: m.bus_peak_demand(), pg_mw: pg }
}

#[test]
fn two_bus_closed_form() {
    // |V1| = 1, lossless line x: P = V2 sin(-th)/x, Q balance gives V2 = cos(th).
    let x = 0.1;
    let m = NetworkBuilder::new(2).branch(0, 1, 0.0, x, 0.0, 1000.0).linear_gen(0, 0.0, 500.0, 1.0).load(1, 100.0).build();
    let ac = ac_powerflow(&m, &setpoint(&m, vec![100.0]), &PowerflowConfig::default()).unwrap();
    let th = -(2.0 * 1.0 * x).asin() / 2.0;
    assert!((ac.pf.theta_rad[1] - th).abs() < 1e-8);
    assert!((ac.pf.v_pu[1] - th.cos()).abs() < 1e-8);
    assert!((ac.pf.v_pu[1] * (-th).sin() / x - 1.0).abs() < 1e-8);
}

#[test]
fn zero_load_flat_start() {
    let m = NetworkBuilder::new(4)
        .branch(0, 1, 0.01, 0.1, 0.0, 100.0)
        .branch(1, 2, 0.01, 0.1, 0.0, 100.0)
        .branch(1, 3, 0.02, 0.2, 0.0, 100.0)
        .linear_gen(0, 0.0, 50.0, 1.0)
        .build();
    let ac = ac_powerflow(&m, &setpoint(&m, vec![0.0]), &PowerflowConfig::default()).unwrap();
    assert!(ac.pf.converged);
    assert!(ac.pf.iterations <= 2);
}

/// Tree: bus k > 0 hangs from a random earlier bus.
fn arb_radial() -> impl Strategy<Value = GridModel> {
    (2usize..10).prop_flat_map(|n| {
        let edges = prop::collection::vec((0.0f64..1.0, 0.002f64..0.02, 0.02f64..0.1, 0.0f64..0.05), n - 1);
        let loads = prop::collection::vec(0.0f64..40.0, n - 1);
        (Just(n), edges, loads)
    })
    .prop_map(|(n, edges, loads)| {
        let mut b = NetworkBuilder::new(n).linear_gen(0, 0.0, 2000.0, 10.0);
        for (k, (u, r, x, sh)) in edges.into_iter().enumerate() {
            let parent = ((k + 1) as f64 * u).floor() as usize;
            b = b.branch(parent, k + 1, r, x, sh, 500.0);
        }
        for (k, mw) in loads.into_iter().enumerate() {
            b = b.load(k + 1, mw);
        }
        b.build()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn radial_losses_balance(m in arb_radial()) {
        let load: f64 = m.bus_peak_demand().iter().sum();
        let ac = ac_powerflow(&m, &setpoint(&m, vec![load]), &PowerflowConfig::default()).unwrap();
        prop_assert!(ac.pf.converged);
        let losses = ac.pf.losses_mw();
        prop_assert!(losses >= -1e-9, "losses {}", losses);
        let pg: f64 = ac.pg_mw.iter().sum();
        prop_assert!((pg - load - losses).abs() < 1e-6 * 100.0, "{} vs {}", pg, load + losses);
    }

    #[test]
    fn dc_flows_are_linear(inj in prop::collection::vec(-200.0f64..200.0, 2), k in -3.0f64..3.0) {
        let m = ring();
        let p = [inj[0], inj[1], -inj[0] - inj[1]];
        let base = dc_powerflow(&m, &p, 0).unwrap();
        let scaled = dc_powerflow(&m, &p.map(|v| k * v), 0).unwrap();
        for (x, y) in base.p_from_mw.iter().zip(&scaled.p_from_mw) {
            prop_assert!((k * x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn dc_opf_balances_and_respects_limits(load in 10.0f64..300.0, rate in 30.0f64..200.0) {
        prop_assume!(load <= 1.9 * rate);
        let m = NetworkBuilder::new(3)
            .branch(0, 1, 0.0, 0.1, 0.0, rate)
            .branch(1, 2, 0.0, 0.1, 0.0, rate)
            .branch(0, 2, 0.0, 0.1, 0.0, rate)
            .quadratic_gen(0, 0.0, 400.0, 0.01, 10.0, 0.0)
            .quadratic_gen(2, 0.0, 400.0, 0.02, 20.0, 0.0)
            .load(1, load)
            .build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![400.0; 2], committed: vec![true; 2] };
        let s = dc_opf(&m, &op, &PowerflowConfig::default()).unwrap();
        prop_assert!((s.total_pg() - load).abs() < 1e-6);
        prop_assert!(s.flow_mw.iter().all(|f| f.abs() <= rate * (1.0 + 1e-7)));
        prop_assert!(s.dual_gap < 1e-6 * (1.0 + s.objective.abs()));
    }
}
