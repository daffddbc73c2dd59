use gridsynth_core::geodata::{geo_distance, interpolate, FuelType, GeneratorRecord, GeoDataset, GeoPoint, LinePath, SubstationRecord, EARTH_RADIUS_M};
use gridsynth_core::model::{BranchKind, BusKind};
use gridsynth_core::par::ExecMode;
use gridsynth_core::topology::{
    build_topology, bus_group, connect_endpoints, is_connected, substation_buses, Connection, TopologyConfig, TopologyResult,
};
use proptest::prelude::*;

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn north(p: GeoPoint, m: f64) -> GeoPoint {
    pt(p.lat + (m / EARTH_RADIUS_M).to_degrees(), p.lon)
}

fn line(id: &str, pts: Vec<GeoPoint>, kv: f64) -> LinePath {
    LinePath::new(id, pts, kv, None, None).unwrap()
}

fn sub(id: &str, p: GeoPoint) -> SubstationRecord {
    SubstationRecord { id: id.into(), location: p, name: None }
}

fn build(ds: &GeoDataset) -> TopologyResult {
    build_topology(ds, &TopologyConfig::default(), ExecMode::Sequential).unwrap()
}

fn endpoint_offset(m: f64) -> Connection {
    let s = pt(35.0, -119.0);
    let l = line("A", vec![north(s, m), pt(35.2, -119.0)], 230.0);
    connect_endpoints(&[l], substation_buses(&[sub("S", s)]), TopologyConfig::default().radius_m)
}

#[test]
fn endpoint_five_meters_away_joins_substation() {
    assert!((geo_distance(pt(35.0, -119.0), north(pt(35.0, -119.0), 5.0)) - 5.0).abs() < 1e-6);
    let c = endpoint_offset(5.0);
    assert_eq!(c.buses.len(), 2);
    assert_eq!(c.buses[c.ends[0][0]].kind, BusKind::Substation);
}

#[test]
fn endpoint_thirteen_meters_away_gets_its_own_node() {
    let c = endpoint_offset(13.0);
    assert_eq!(c.buses.len(), 3);
    assert_eq!(c.buses[c.ends[0][0]].kind, BusKind::Added);
}

#[test]
fn tap_into_line_interior_makes_three_lines_four_buses() {
    let a = pt(35.0, -119.0);
    let b = pt(35.0, -118.8);
    let mid = interpolate(a, b, 0.5);
    let ds = GeoDataset {
        lines: vec![line("M", vec![a, mid, b], 115.0), line("T", vec![pt(35.1, -118.9), mid], 115.0)],
        ..Default::default()
    };
    let r = build(&ds);
    assert_eq!(r.model.n_lines(), 3);
    assert_eq!(r.model.n_buses(), 4);
    assert!(is_connected(&r.model));
}

#[test]
fn four_voltage_substation_gets_three_transformers() {
    let s = pt(35.0, -119.0);
    let kvs = [500.0, 230.0, 115.0, 66.0];
    let lines = kvs.iter().enumerate().map(|(i, &kv)| {
        let ang = i as f64 * std::f64::consts::FRAC_PI_2;
        line(&format!("L{i}"), vec![s, pt(35.0 + 0.2 * ang.cos(), -119.0 + 0.2 * ang.sin())], kv)
    });
    let ds = GeoDataset {
        lines: lines.collect(),
        substations: vec![sub("S", s)],
        generators: vec![GeneratorRecord {
            id: "G".into(),
            location: north(s, 200.0),
            fuel_type: FuelType::Hydro,
            pmax_mw: 50.0,
            pmin_mw: 0.0,
            power_factor: 0.9,
            plant_code: None,
            unit_id: None,
        }],
        ..Default::default()
    };
    let r = build(&ds);
    let m = &r.model;
    let tx: Vec<_> = m.branches.iter().filter(|b| !b.is_line()).collect();
    assert_eq!(tx.len(), kvs.len() - 1);
    for t in &tx {
        let BranchKind::Transformer { kv_hi, kv_lo } = t.kind else { unreachable!() };
        assert!(kv_hi > kv_lo);
        assert_eq!(bus_group(m, t.from), bus_group(m, t.to));
    }
    assert_eq!(m.buses[m.generators[0].bus].voltage_kv, 500.0);
    assert!(is_connected(m));
}

fn arb_dataset() -> impl Strategy<Value = GeoDataset> {
    let kv = prop::sample::select(vec![66.0, 115.0, 230.0, 500.0]);
    let seg = (0usize..12, 0usize..12, kv);
    prop::collection::vec(seg, 1..25).prop_map(|segs| {
        let grid = |k: usize| pt(35.0 + 0.05 * (k / 4) as f64, -119.0 + 0.05 * (k % 4) as f64);
        let lines = segs
            .into_iter()
            .enumerate()
            .filter(|(_, (a, b, _))| a != b)
            .map(|(i, (a, b, kv))| line(&format!("L{i}"), vec![grid(a), grid(b)], kv))
            .collect::<Vec<_>>();
        let substations = (0..12).step_by(3).map(|k| sub(&format!("S{k}"), grid(k))).collect();
        GeoDataset { lines, substations, ..Default::default() }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_is_one_component_with_matching_voltages(ds in arb_dataset()) {
        prop_assume!(!ds.lines.is_empty());
        let r = build_topology(&ds, &TopologyConfig::default(), ExecMode::Sequential).unwrap();
        let m = &r.model;
        prop_assert!(is_connected(m));
        prop_assert!(r.retention.buses.kept <= r.retention.buses.total);
        for br in m.branches.iter().filter(|b| b.is_line()) {
            prop_assert_eq!(m.buses[br.from].voltage_kv, br.voltage_kv());
            prop_assert_eq!(m.buses[br.to].voltage_kv, br.voltage_kv());
        }
        let tx = m.branches.iter().filter(|b| !b.is_line()).count();
        let mut groups = std::collections::BTreeMap::<u32, usize>::new();
        for i in 0..m.n_buses() {
            *groups.entry(bus_group(m, i)).or_default() += 1;
        }
        let expected: usize = groups.values().map(|n| n - 1).sum();
        prop_assert_eq!(tx, expected);
    }

    #[test]
    fn sequential_and_parallel_agree(ds in arb_dataset()) {
        prop_assume!(!ds.lines.is_empty());
        let cfg = TopologyConfig::default();
        let a = build_topology(&ds, &cfg, ExecMode::Sequential).unwrap();
        let b = build_topology(&ds, &cfg, ExecMode::Parallel).unwrap();
        prop_assert_eq!(a.model, b.model);
        prop_assert_eq!(a.diagnostics, b.diagnostics);
    }
}
