//! Small hand-built networks and a synthetic California-like input set.

use std::path::PathBuf;

use crate::assignment::{cost_catalog_to_csv, renewables_to_csv, CostCurve, CostReference, RenewableSeries};
use crate::geodata::{
    write_dataset, DatasetPaths, FuelType, GeneratorRecord, GeoDataset, GeoPoint, LinePath, LoadRecord, SubstationRecord,
};
use crate::lineparams::{form1_to_csv, Form1Record};
use crate::model::{Branch, Bus, BusKind, Generator, GridModel, Load};

/// Builds electrical test networks bus by bus. Buses sit 0.1° apart along
/// the equator at 230 kV.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    model: GridModel,
}

impl NetworkBuilder {
    pub fn new(n_buses: usize) -> Self {
        let mut model = GridModel::new("test");
        model.buses = (0..n_buses)
            .map(|k| Bus {
                id: k as u32 + 1,
                voltage_kv: 230.0,
                kind: BusKind::Substation,
                location: GeoPoint { lat: 0.0, lon: 0.1 * k as f64 },
                origin: Some(format!("S{}", k + 1)),
                group: None,
            })
            .collect();
        Self { model }
    }

    pub fn voltage(mut self, bus: usize, kv: f64) -> Self {
        self.model.buses[bus].voltage_kv = kv;
        self
    }

    /// A line with explicit per-unit parameters.
    pub fn branch(mut self, from: usize, to: usize, r: f64, x: f64, b: f64, rate_mva: f64) -> Self {
        let id = format!("L{}", self.model.branches.len() + 1);
        let (a, z) = (self.model.buses[from].location, self.model.buses[to].location);
        let path = LinePath::new(id.clone(), vec![a, z], self.model.buses[from].voltage_kv, None, None)
            .expect("distinct bus locations");
        let mut br = Branch::line(id, from, to, path);
        br.r_pu = r;
        br.x_pu = x;
        br.b_pu = b;
        br.rate_mva = rate_mva;
        self.model.branches.push(br);
        self
    }

    pub fn transformer(mut self, from: usize, to: usize, r: f64, x: f64, rate_mva: f64) -> Self {
        let id = format!("T{}", self.model.branches.len() + 1);
        let (hi, lo) = (self.model.buses[from].voltage_kv, self.model.buses[to].voltage_kv);
        let mut br = Branch::transformer(id, from, to, hi.max(lo), hi.min(lo));
        br.r_pu = r;
        br.x_pu = x;
        br.rate_mva = rate_mva;
        self.model.branches.push(br);
        self
    }

    pub fn generator(mut self, bus: usize, fuel: FuelType, pmin: f64, pmax: f64, cost: CostCurve) -> Self {
        let id = format!("G{}", self.model.generators.len() + 1);
        let qmax = pmax * 0.9f64.acos().tan();
        self.model.generators.push(Generator {
            id,
            bus,
            fuel,
            location: self.model.buses[bus].location,
            pmax_mw: pmax,
            pmin_mw: pmin,
            qmax_mvar: qmax,
            qmin_mvar: -qmax,
            power_factor: 0.9,
            cost,
            plant_code: None,
            unit_id: None,
        });
        self
    }

    pub fn linear_gen(self, bus: usize, pmin: f64, pmax: f64, c1: f64) -> Self {
        self.generator(bus, FuelType::NgCombinedCycle, pmin, pmax, CostCurve::linear(c1))
    }

    pub fn quadratic_gen(self, bus: usize, pmin: f64, pmax: f64, c2: f64, c1: f64, c0: f64) -> Self {
        self.generator(bus, FuelType::NgCombinedCycle, pmin, pmax, CostCurve::from_coefficients(c2, c1, c0))
    }

    /// Sets the reactive limits of the most recently added generator.
    pub fn q_limits(mut self, qmin: f64, qmax: f64) -> Self {
        let g = self.model.generators.last_mut().expect("a generator was added");
        g.qmin_mvar = qmin;
        g.qmax_mvar = qmax;
        self
    }

    pub fn load(mut self, bus: usize, mw: f64) -> Self {
        let tract = format!("D{}", self.model.loads.len() + 1);
        self.model.loads.push(Load { tract_id: tract, bus, location: self.model.buses[bus].location, peak_mw: mw });
        self
    }

    pub fn q_ratio(mut self, r: f64) -> Self {
        self.model.load_q_ratio = r;
        self
    }

    pub fn build(self) -> GridModel {
        self.model
    }
}

/// Inputs for a small California-like system: 30 substations on four
/// voltage levels, a T-tap, a two-substation island, mixed fuels and an
/// 8760-hour year peaking in mid August.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureData {
    pub dataset: GeoDataset,
    pub renewables: RenewableSeries,
    pub costs: Vec<CostReference>,
    pub form1: Vec<Form1Record>,
}

pub const FIXTURE_HOURS: usize = 8760;
/// First hour of August and its length.
pub const AUGUST: std::ops::Range<usize> = 5088..5832;

// id, name, lat, lon, peak MW of the tracts around it
const SUBSTATIONS: [(&str, &str, f64, f64, f64); 30] = [
    ("S01", "Round Mountain", 40.79, -121.91, 50.0),
    ("S02", "Table Mountain", 39.60, -121.55, 100.0),
    ("S03", "Vaca", 38.38, -121.95, 120.0),
    ("S04", "Tesla", 37.70, -121.56, 150.0),
    ("S05", "Metcalf", 37.23, -121.74, 300.0),
    ("S06", "Los Banos", 37.06, -120.85, 50.0),
    ("S07", "Gates", 36.16, -120.08, 50.0),
    ("S08", "Midway", 35.40, -119.38, 50.0),
    ("S09", "Diablo", 35.21, -120.86, 20.0),
    ("S10", "Vincent", 34.49, -118.12, 150.0),
    ("S11", "Lugo", 34.37, -117.37, 120.0),
    ("S12", "Serrano", 33.82, -117.79, 350.0),
    ("S13", "Miguel", 32.69, -116.94, 200.0),
    ("S14", "Pittsburg", 38.03, -121.88, 300.0),
    ("S15", "Newark", 37.52, -122.03, 350.0),
    ("S16", "San Mateo", 37.56, -122.30, 300.0),
    ("S17", "Sacramento", 38.58, -121.45, 300.0),
    ("S18", "Folsom", 38.68, -121.17, 80.0),
    ("S19", "Fresno", 36.75, -119.77, 300.0),
    ("S20", "Bakersfield", 35.37, -119.02, 250.0),
    ("S21", "Tehachapi", 35.13, -118.45, 30.0),
    ("S22", "Sylmar", 34.31, -118.49, 250.0),
    ("S23", "Los Angeles", 34.05, -118.24, 450.0),
    ("S24", "Long Beach", 33.77, -118.19, 350.0),
    ("S25", "Victorville", 34.54, -117.29, 100.0),
    ("S26", "Blythe", 33.61, -114.60, 40.0),
    ("S27", "Devers", 33.94, -116.58, 120.0),
    ("S28", "San Diego", 32.72, -117.16, 400.0),
    ("S29", "Avalon", 33.34, -118.33, 0.0),
    ("S30", "Two Harbors", 33.44, -118.50, 0.0),
];

/// Interior vertex shared by the Fresno-Bakersfield line and the Gates tap.
const TAP: (f64, f64) = (36.05, -119.40);

// from, to, kV, owner
const LINES: [(usize, usize, f64, &str); 41] = [
    (1, 2, 500.0, "PGE"),
    (2, 3, 500.0, "PGE"),
    (3, 4, 500.0, "PGE"),
    (4, 6, 500.0, "PGE"),
    (4, 5, 500.0, "PGE"),
    (5, 6, 500.0, "PGE"),
    (6, 7, 500.0, "PGE"),
    (6, 8, 500.0, "PGE"),
    (7, 8, 500.0, "PGE"),
    (9, 8, 500.0, "PGE"),
    (9, 7, 500.0, "PGE"),
    (8, 10, 500.0, "SCE"),
    (10, 11, 500.0, "SCE"),
    (10, 12, 500.0, "SCE"),
    (11, 12, 500.0, "SCE"),
    (11, 27, 500.0, "SCE"),
    (27, 13, 500.0, "SDGE"),
    (12, 13, 500.0, "SDGE"),
    (27, 26, 500.0, "SCE"),
    (3, 17, 230.0, "PGE"),
    (3, 14, 230.0, "PGE"),
    (14, 4, 230.0, "PGE"),
    (4, 15, 230.0, "PGE"),
    (15, 16, 230.0, "PGE"),
    (14, 16, 230.0, "PGE"),
    (15, 5, 230.0, "PGE"),
    (19, 20, 230.0, "PGE"),
    (7, 0, 230.0, "PGE"),
    (8, 20, 230.0, "PGE"),
    (20, 21, 230.0, "SCE"),
    (21, 10, 230.0, "SCE"),
    (10, 22, 230.0, "SCE"),
    (22, 23, 230.0, "SCE"),
    (23, 24, 230.0, "SCE"),
    (24, 12, 230.0, "SCE"),
    (11, 25, 230.0, "SCE"),
    (25, 10, 230.0, "SCE"),
    (13, 28, 230.0, "SDGE"),
    (6, 19, 230.0, "PGE"),
    (17, 18, 115.0, "SMUD"),
    (23, 24, 66.0, "LADWP"),
];

// substation, fuel, pmax, pmin, pf, plant code
const UNITS: [(usize, FuelType, f64, f64, f64, &str); 31] = [
    (1, FuelType::Import, 1000.0, 0.0, 0.95, ""),
    (1, FuelType::Hydro, 400.0, 0.0, 0.9, ""),
    (2, FuelType::Hydro, 600.0, 0.0, 0.9, ""),
    (18, FuelType::Hydro, 300.0, 0.0, 0.9, ""),
    (3, FuelType::Geothermal, 400.0, 0.0, 0.9, ""),
    (17, FuelType::NgCombinedCycle, 400.0, 120.0, 0.9, "P17"),
    (14, FuelType::NgCombinedCycle, 800.0, 240.0, 0.9, "P14"),
    (15, FuelType::NgCombustionTurbine, 200.0, 20.0, 0.9, "P15"),
    (4, FuelType::Wind, 300.0, 0.0, 0.95, ""),
    (9, FuelType::Nuclear, 1100.0, 550.0, 0.9, ""),
    (20, FuelType::NgCombinedCycle, 500.0, 150.0, 0.9, "P20"),
    (19, FuelType::NgCombustionTurbine, 200.0, 20.0, 0.9, "P19"),
    (19, FuelType::Solar, 300.0, 0.0, 0.95, ""),
    (19, FuelType::Biomass, 50.0, 10.0, 0.9, "P19B"),
    (21, FuelType::Wind, 800.0, 0.0, 0.95, ""),
    (24, FuelType::NgCombinedCycle, 900.0, 270.0, 0.9, "P24"),
    (23, FuelType::NgSteamTurbine, 600.0, 180.0, 0.9, "P23"),
    (22, FuelType::NgCombustionTurbine, 300.0, 30.0, 0.9, "P22"),
    (23, FuelType::LandfillGas, 30.0, 5.0, 0.9, "P23L"),
    (24, FuelType::MunicipalSolidWaste, 20.0, 5.0, 0.9, "P24M"),
    (25, FuelType::Solar, 600.0, 0.0, 0.95, ""),
    (27, FuelType::Solar, 400.0, 0.0, 0.95, ""),
    (26, FuelType::Solar, 700.0, 0.0, 0.95, ""),
    (26, FuelType::Import, 800.0, 0.0, 0.95, ""),
    (28, FuelType::NgCombinedCycle, 500.0, 150.0, 0.9, "P28"),
    (28, FuelType::NgCombustionTurbine, 200.0, 20.0, 0.9, "P28C"),
    (28, FuelType::Solar, 400.0, 0.0, 0.9, ""),
    (23, FuelType::Solar, 200.0, 0.0, 0.95, ""),
    (22, FuelType::Hydro, 300.0, 0.0, 0.9, ""),
    (27, FuelType::Geothermal, 400.0, 0.0, 0.9, ""),
    (9, FuelType::Solar, 500.0, 0.0, 0.9, ""),
];

fn sub_point(k: usize) -> GeoPoint {
    let s = SUBSTATIONS[k - 1];
    GeoPoint { lat: s.2, lon: s.3 }
}

/// A gently bowed polyline with interior vertices every ~0.25°.
fn corridor(a: GeoPoint, b: GeoPoint, bow: f64) -> Vec<GeoPoint> {
    let span = ((a.lat - b.lat).powi(2) + (a.lon - b.lon).powi(2)).sqrt();
    let n = ((span / 0.25).ceil() as usize).max(2);
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let off = bow * (std::f64::consts::PI * t).sin();
            GeoPoint { lat: a.lat + t * (b.lat - a.lat) + off * (b.lon - a.lon), lon: a.lon + t * (b.lon - a.lon) - off * (b.lat - a.lat) }
        })
        .collect()
}

fn fixture_lines() -> Vec<LinePath> {
    let tap = GeoPoint { lat: TAP.0, lon: TAP.1 };
    let mut seen = std::collections::BTreeMap::new();
    LINES
        .iter()
        .enumerate()
        .map(|(i, &(from, to, kv, owner))| {
            let a = sub_point(from);
            let points = if (from, to) == (19, 20) {
                let mut p = corridor(a, tap, 0.0);
                p.extend(corridor(tap, sub_point(to), 0.0).into_iter().skip(1));
                p
            } else if to == 0 {
                corridor(a, tap, 0.02)
            } else {
                let n = seen.entry((from.min(to), to.max(from))).or_insert(0);
                *n += 1;
                corridor(a, sub_point(to), 0.01 * (i % 3) as f64 + 0.015 * (*n - 1) as f64)
            };
            let name = if to == 0 { "Gates tap".to_string() } else { format!("{}-{}", SUBSTATIONS[from - 1].1, SUBSTATIONS[to - 1].1) };
            LinePath::new(format!("N{:02}", i + 1), points, kv, Some(owner.to_string()), Some(name)).expect("fixture path is valid")
        })
        .collect()
}

fn season(day: f64, peak_day: f64) -> f64 {
    0.5 + 0.5 * (2.0 * std::f64::consts::PI * (day - peak_day) / 365.0).cos()
}

/// Deterministic fixture inputs.
pub fn california_fixture() -> FixtureData {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2023);
    let substations = SUBSTATIONS
        .iter()
        .map(|s| SubstationRecord { id: s.0.to_string(), location: GeoPoint { lat: s.2, lon: s.3 }, name: Some(s.1.to_string()) })
        .collect();

    let mut loads = Vec::new();
    for s in SUBSTATIONS.iter().filter(|s| s.4 > 0.0) {
        for t in 0..3 {
            let ang = 2.0 * std::f64::consts::PI * t as f64 / 3.0 + 0.5;
            let location = GeoPoint { lat: s.2 + 0.03 * ang.sin(), lon: s.3 + 0.03 * ang.cos() };
            let share = [0.5, 0.3, 0.2][t];
            let phase: f64 = rng.gen_range(-1.0..1.0);
            let profile = (0..FIXTURE_HOURS)
                .map(|h| {
                    let (day, hod) = ((h / 24) as f64, (h % 24) as f64);
                    let se = season(day, 227.0);
                    let di = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * (hod - 17.0 - 0.5 * phase) / 24.0).cos();
                    let noise: f64 = rng.gen_range(-1.0..1.0);
                    s.4 * share * (0.45 + 0.25 * se + 0.25 * di * (0.6 + 0.4 * se)) * (1.0 + 0.02 * noise)
                })
                .collect();
            loads.push(LoadRecord { tract_id: format!("{}-{}", s.0, t + 1), location, profile });
        }
    }

    let mut generators = Vec::new();
    let mut costs = Vec::new();
    for (i, &(sub, fuel, pmax, pmin, pf, plant)) in UNITS.iter().enumerate() {
        let p = sub_point(sub);
        let code = (!plant.is_empty()).then(|| plant.to_string());
        generators.push(GeneratorRecord {
            id: format!("U{:02}", i + 1),
            location: GeoPoint { lat: p.lat + 0.01, lon: p.lon - 0.01 },
            fuel_type: fuel,
            pmax_mw: pmax,
            pmin_mw: pmin,
            power_factor: pf,
            plant_code: code.clone(),
            unit_id: code.as_ref().map(|_| "1".to_string()),
        });
        let curve = match fuel {
            FuelType::NgCombinedCycle => Some(CostCurve::from_coefficients(0.002, 26.0 + 0.5 * (i % 4) as f64, 300.0)),
            FuelType::NgCombustionTurbine => Some(CostCurve::from_coefficients(0.01, 45.0 + (i % 3) as f64, 100.0)),
            FuelType::NgSteamTurbine => Some(CostCurve::from_coefficients(0.004, 35.0, 200.0)),
            FuelType::Biomass => Some(CostCurve::linear(30.0)),
            FuelType::LandfillGas => Some(CostCurve::linear(25.0)),
            _ => None,
        };
        if let (Some(curve), Some(code)) = (curve, code) {
            costs.push(CostReference { plant_code: code, unit_id: "1".into(), fuel, pmax_mw: pmax, curve });
        }
    }

    let solar_installed: f64 = UNITS.iter().filter(|u| u.1 == FuelType::Solar).map(|u| u.2).sum();
    let wind_installed: f64 = UNITS.iter().filter(|u| u.1 == FuelType::Wind).map(|u| u.2).sum();
    let mut renewables = RenewableSeries::default();
    for h in 0..FIXTURE_HOURS {
        let (day, hod) = ((h / 24) as f64, (h % 24) as f64);
        let sun = (std::f64::consts::PI * (hod - 6.0) / 13.0).sin().max(0.0);
        let cloud: f64 = rng.gen_range(0.85..1.0);
        renewables.solar_mw.push(solar_installed * 0.85 * sun * (0.6 + 0.4 * season(day, 172.0)) * cloud);
        let gust: f64 = rng.gen_range(-1.0..1.0);
        let w = 0.35 + 0.2 * (2.0 * std::f64::consts::PI * h as f64 / 88.8).sin() + 0.1 * (2.0 * std::f64::consts::PI * hod / 24.0).cos() + 0.1 * gust;
        renewables.wind_mw.push(wind_installed * w.clamp(0.02, 0.95));
    }

    let form1 = vec![
        Form1Record { utility: "PGE".into(), voltage_kv: 500.0, length_miles: 90.0, conductors_per_phase: 2, size_kcmil: 1272.0, material: "ACSR".into() },
        Form1Record { utility: "SCE".into(), voltage_kv: 500.0, length_miles: 60.0, conductors_per_phase: 2, size_kcmil: 954.0, material: "ACSR".into() },
        Form1Record { utility: "PGE".into(), voltage_kv: 230.0, length_miles: 30.0, conductors_per_phase: 1, size_kcmil: 795.0, material: "ACSR".into() },
        Form1Record { utility: "SCE".into(), voltage_kv: 230.0, length_miles: 40.0, conductors_per_phase: 1, size_kcmil: 954.0, material: "ACSR".into() },
        Form1Record { utility: "SMUD".into(), voltage_kv: 115.0, length_miles: 20.0, conductors_per_phase: 1, size_kcmil: 556.5, material: "ACSR".into() },
    ];

    FixtureData { dataset: GeoDataset { lines: fixture_lines(), substations, generators, loads }, renewables, costs, form1 }
}

/// Writes the fixture inputs and a matching `config.toml` into `dir`.
pub fn write_fixture(dir: &std::path::Path) -> crate::Result<crate::config::RunConfig> {
    use crate::error::GridError;
    let data = california_fixture();
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| GridError::io(&data_dir, e))?;
    write_dataset(&data.dataset, &DatasetPaths::in_dir(&data_dir))?;
    let put = |name: &str, body: String| -> crate::Result<()> {
        let p = data_dir.join(name);
        std::fs::write(&p, body).map_err(|e| GridError::io(&p, e))
    };
    put("costs.csv", cost_catalog_to_csv(&data.costs))?;
    put("renewables.csv", renewables_to_csv(&data.renewables))?;
    put("form1.csv", form1_to_csv(&data.form1))?;
    let cfg = fixture_config(PathBuf::from("data"));
    let p = dir.join("config.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(|e| GridError::io(&p, e))?;
    Ok(cfg)
}

/// Run settings for the fixture with inputs under `data_dir`; evaluation
/// covers August, with one stack window per half of the month.
pub fn fixture_config(data_dir: PathBuf) -> crate::config::RunConfig {
    use crate::config::{EvaluationConfig, HourWindow, InputPaths, RunConfig};
    RunConfig {
        name: "california_fixture".into(),
        inputs: InputPaths {
            costs: data_dir.join("costs.csv"),
            renewables: data_dir.join("renewables.csv"),
            form1: Some(data_dir.join("form1.csv")),
            data_dir,
            ..InputPaths::default()
        },
        evaluation: EvaluationConfig {
            start_hour: AUGUST.start,
            hours: Some(AUGUST.len()),
            stack_windows: vec![
                HourWindow { name: "early_august".into(), start: AUGUST.start, hours: 168 },
                HourWindow { name: "mid_august".into(), start: AUGUST.start + 336, hours: 168 },
            ],
        },
        ..RunConfig::default()
    }
}

/// The fixture as pipeline inputs, without touching the filesystem.
pub fn fixture_inputs() -> crate::pipeline::Inputs {
    let d = california_fixture();
    let cfg = crate::config::RunConfig::default();
    crate::pipeline::Inputs {
        dataset: d.dataset,
        renewables: d.renewables,
        costs: d.costs,
        form1: d.form1,
        catalog: crate::lineparams::default_catalog(),
        tables: crate::lineparams::TransformerTables::default_for(&cfg.lineparams.transformer_ladder_mva),
    }
}
