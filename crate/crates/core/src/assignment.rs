//! Load placement, generator cost curves, renewable capacity scaling and
//! reactive capability.

use std::collections::BTreeSet;

use gridsynth_solver::{solve_lp, LinearProgram, Sense, SolverError};
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::geodata::{geo_distance, meters_to_miles, FuelType, GeoDataset, GeoPoint};
use crate::model::{BusKind, Generator, GridModel, Load};
use crate::par::{self, ExecMode};
use crate::topology::{bus_group, lowest_voltage_bus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Quadratic,
    Linear,
    Zero,
}

/// Hourly production cost `c2·p² + c1·p + c0` with p in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub kind: CostKind,
}

impl CostCurve {
    pub fn zero() -> Self {
        Self { c2: 0.0, c1: 0.0, c0: 0.0, kind: CostKind::Zero }
    }

    pub fn linear(c1: f64) -> Self {
        Self { c2: 0.0, c1, c0: 0.0, kind: CostKind::Linear }
    }

    /// Classifies the coefficients; all zero gives `Zero`, `c2 = 0` gives `Linear`.
    pub fn from_coefficients(c2: f64, c1: f64, c0: f64) -> Self {
        let kind = if c2 == 0.0 && c1 == 0.0 && c0 == 0.0 {
            CostKind::Zero
        } else if c2 == 0.0 {
            CostKind::Linear
        } else {
            CostKind::Quadratic
        };
        Self { c2, c1, c0, kind }
    }

    pub fn eval(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }

    pub fn marginal(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }

    /// Average cost at output `p` ($/MWh); `c1` when `p` is zero.
    pub fn average(&self, p: f64) -> f64 {
        if p > 0.0 {
            self.eval(p) / p
        } else {
            self.c1
        }
    }
}

/// One row of the reference cost catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReference {
    pub plant_code: String,
    pub unit_id: String,
    pub fuel: FuelType,
    pub pmax_mw: f64,
    pub curve: CostCurve,
}

/// CSV `plant_code,unit_id,fuel,pmax_mw,c2,c1,c0`.
pub fn parse_cost_catalog(text: &str, file: &str) -> Result<Vec<CostReference>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GridError::schema(file, format!("line {}", e.position().map_or(0, |p| p.line())), "record", e))?;
        let label = format!("line {}", rec.position().map_or(0, |p| p.line()));
        let get = |i: usize, f: &str| rec.get(i).ok_or_else(|| GridError::schema(file, &label, f, "missing value"));
        let num = |i: usize, f: &str| -> Result<f64> {
            let s = get(i, f)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GridError::schema(file, &label, f, format!("`{s}` is not a number")))
        };
        let fuel = get(2, "fuel")?.parse().map_err(|e| GridError::schema(file, &label, "fuel", e))?;
        out.push(CostReference {
            plant_code: get(0, "plant_code")?.to_string(),
            unit_id: get(1, "unit_id")?.to_string(),
            fuel,
            pmax_mw: num(3, "pmax_mw")?,
            curve: CostCurve::from_coefficients(num(4, "c2")?, num(5, "c1")?, num(6, "c0")?),
        });
    }
    Ok(out)
}

pub fn cost_catalog_to_csv(refs: &[CostReference]) -> String {
    let mut out = String::from("plant_code,unit_id,fuel,pmax_mw,c2,c1,c0\n");
    for r in refs {
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.plant_code, r.unit_id, r.fuel, r.pmax_mw, r.curve.c2, r.curve.c1, r.curve.c0
        );
    }
    out
}

/// Statewide hourly solar and wind production.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenewableSeries {
    pub solar_mw: Vec<f64>,
    pub wind_mw: Vec<f64>,
}

impl RenewableSeries {
    pub fn hours(&self) -> usize {
        self.solar_mw.len()
    }
}

/// CSV `hour,solar_mw,wind_mw`, hours 0..H in order.
pub fn parse_renewables(text: &str, file: &str) -> Result<RenewableSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = RenewableSeries::default();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| GridError::schema(file, format!("line {}", e.position().map_or(0, |p| p.line())), "record", e))?;
        let label = format!("line {}", rec.position().map_or(0, |p| p.line()));
        let num = |i: usize, f: &str| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| GridError::schema(file, &label, f, "expected a nonnegative number"))
        };
        if num(0, "hour")? as usize != k {
            return Err(GridError::schema(file, &label, "hour", format!("expected hour {k}")));
        }
        out.solar_mw.push(num(1, "solar_mw")?);
        out.wind_mw.push(num(2, "wind_mw")?);
    }
    Ok(out)
}

pub fn renewables_to_csv(r: &RenewableSeries) -> String {
    let mut out = String::from("hour,solar_mw,wind_mw\n");
    for (h, (s, w)) in r.solar_mw.iter().zip(&r.wind_mw).enumerate() {
        out += &format!("{h},{s},{w}\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignmentConfig {
    /// Candidate buses kept per load (and loads per bus) in the assignment LP.
    pub k_nearest: usize,
    pub nuclear_cost_per_mwh: f64,
    pub import_cost_per_mwh: f64,
    /// Power factor applied to every load for reactive demand.
    pub load_power_factor: f64,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self { k_nearest: 50, nuclear_cost_per_mwh: 20.0, import_cost_per_mwh: 45.0, load_power_factor: 0.98 }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_nearest >= 1
            && self.nuclear_cost_per_mwh >= 0.0
            && self.import_cost_per_mwh >= 0.0
            && self.load_power_factor > 0.0
            && self.load_power_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::Validation(format!("invalid assignment settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadAssignment {
    /// Chosen candidate index per load.
    pub bus_of_load: Vec<usize>,
    /// Total distance of the assignment (miles).
    pub cost_miles: f64,
}

/// Solves the load-to-bus transportation LP over sparse candidate pairs
/// `(load, bus, cost)`: every load to exactly one bus, every bus at least one load.
pub fn solve_assignment(n_loads: usize, n_buses: usize, candidates: &[(usize, usize, f64)]) -> Result<LoadAssignment> {
    if n_loads < n_buses {
        return Err(GridError::Infeasible(format!("{n_loads} loads cannot cover {n_buses} buses")));
    }
    let mut lp = LinearProgram::new();
    let vars: Vec<usize> = candidates.iter().map(|&(_, _, c)| lp.add_var(c, 0.0, 1.0)).collect();
    let mut by_load = vec![Vec::new(); n_loads];
    let mut by_bus = vec![Vec::new(); n_buses];
    for (&(l, b, _), &v) in candidates.iter().zip(&vars) {
        by_load[l].push((v, 1.0));
        by_bus[b].push((v, 1.0));
    }
    for row in by_load {
        lp.add_constraint(row, Sense::Eq, 1.0);
    }
    for row in by_bus {
        lp.add_constraint(row, Sense::Ge, 1.0);
    }
    let sol = solve_lp(&lp).map_err(|e| match e {
        SolverError::Infeasible => GridError::Infeasible("load assignment has no feasible solution".into()),
        e => GridError::Solver(e),
    })?;
    let mut bus_of_load = vec![usize::MAX; n_loads];
    for (&(l, b, _), &v) in candidates.iter().zip(&vars) {
        let x = sol.x[v];
        if (x - x.round()).abs() > 1e-7 {
            return Err(GridError::Numerical(format!("fractional assignment value {x}")));
        }
        if x > 0.5 {
            bus_of_load[l] = b;
        }
    }
    Ok(LoadAssignment { bus_of_load, cost_miles: sol.objective })
}

/// Candidate pairs from each load's `k` nearest buses and each bus's `k`
/// nearest loads, with distances in miles.
pub fn nearest_candidates(loads: &[GeoPoint], buses: &[GeoPoint], k: usize, mode: ExecMode) -> Vec<(usize, usize, f64)> {
    let dist = par::map(mode, loads, |&l| buses.iter().map(|&b| meters_to_miles(geo_distance(l, b))).collect::<Vec<f64>>());
    let mut pairs = BTreeSet::new();
    for (i, row) in dist.iter().enumerate() {
        let mut order: Vec<usize> = (0..buses.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        pairs.extend(order.into_iter().take(k).map(|j| (i, j)));
    }
    for j in 0..buses.len() {
        let mut order: Vec<usize> = (0..loads.len()).collect();
        order.sort_by(|&a, &b| dist[a][j].total_cmp(&dist[b][j]).then(a.cmp(&b)));
        pairs.extend(order.into_iter().take(k).map(|i| (i, j)));
    }
    pairs.into_iter().map(|(i, j)| (i, j, dist[i][j])).collect()
}

/// Assigns loads to buses by distance, retrying with the full matrix when the
/// pruned candidate set is infeasible.
pub fn assign_loads(loads: &[GeoPoint], buses: &[GeoPoint], k: usize, mode: ExecMode) -> Result<LoadAssignment> {
    if loads.len() < buses.len() {
        return Err(GridError::Infeasible(format!("{} loads cannot cover {} buses", loads.len(), buses.len())));
    }
    let pruned = nearest_candidates(loads, buses, k, mode);
    match solve_assignment(loads.len(), buses.len(), &pruned) {
        Err(GridError::Infeasible(_)) if k < buses.len() => {
            log::warn!("pruned load assignment infeasible; retrying with all {} buses", buses.len());
            let full = nearest_candidates(loads, buses, buses.len().max(loads.len()), mode);
            solve_assignment(loads.len(), buses.len(), &full)
        }
        r => r,
    }
}

/// Buses that must receive load: original substations plus radial-end added
/// buses without generators. Returns one bus per split group.
pub fn eligible_buses(model: &GridModel) -> Vec<usize> {
    let n = model.buses.len();
    let mut group_degree = std::collections::BTreeMap::<u32, usize>::new();
    for br in model.lines().map(|(_, b)| b) {
        *group_degree.entry(bus_group(model, br.from)).or_default() += 1;
        *group_degree.entry(bus_group(model, br.to)).or_default() += 1;
    }
    let with_gen: BTreeSet<u32> = model.generators.iter().map(|g| bus_group(model, g.bus)).collect();
    (0..n)
        .filter(|&i| model.buses[i].kind != BusKind::VoltageSplit)
        .filter(|&i| match model.buses[i].kind {
            BusKind::Substation => true,
            _ => {
                let g = bus_group(model, i);
                group_degree.get(&g).copied().unwrap_or(0) == 1 && !with_gen.contains(&g)
            }
        })
        .collect()
}

/// Copies or derives a cost curve for every generator.
pub fn assign_costs(generators: &mut [Generator], refs: &[CostReference], cfg: &AssignmentConfig) -> Result<()> {
    let mut missing = BTreeSet::new();
    for g in generators.iter_mut() {
        if g.fuel.is_renewable() {
            g.cost = CostCurve::zero();
            continue;
        }
        let exact = refs.iter().find(|r| {
            Some(&r.plant_code) == g.plant_code.as_ref() && Some(&r.unit_id) == g.unit_id.as_ref()
        });
        if let Some(r) = exact {
            g.cost = r.curve;
            continue;
        }
        match g.fuel {
            FuelType::Nuclear => {
                g.cost = CostCurve::linear(cfg.nuclear_cost_per_mwh);
                continue;
            }
            FuelType::Import => {
                g.cost = CostCurve::linear(cfg.import_cost_per_mwh);
                continue;
            }
            _ => {}
        }
        let fuel = g.fuel.cost_alias();
        let closest = refs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fuel.cost_alias() == fuel)
            .min_by(|(i, a), (j, b)| {
                (a.pmax_mw - g.pmax_mw).abs().total_cmp(&(b.pmax_mw - g.pmax_mw).abs()).then(i.cmp(j))
            });
        match closest {
            Some((_, r)) => g.cost = r.curve,
            None => {
                missing.insert(g.fuel.as_str());
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(GridError::Validation(format!(
            "no reference cost curves for fuel(s): {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

/// Splits a statewide total across units in proportion to nameplate.
pub fn scale_caps(pmax: &[f64], total_mw: f64) -> Result<Vec<f64>> {
    if !(total_mw >= 0.0) {
        return Err(GridError::Validation(format!("renewable total {total_mw} MW is negative")));
    }
    let installed: f64 = pmax.iter().sum();
    if pmax.is_empty() || total_mw == 0.0 {
        return Ok(vec![0.0; pmax.len()]);
    }
    if !(installed > 0.0) {
        return Err(GridError::Validation("no installed capacity to scale".into()));
    }
    if total_mw > installed {
        log::warn!("renewable total {total_mw} MW exceeds installed {installed} MW; capping at nameplate");
        return Ok(pmax.to_vec());
    }
    let ratio = total_mw / installed;
    Ok(pmax.iter().map(|p| p * ratio).collect())
}

/// Available capacity per generator for one hour: solar and wind scaled to the
/// statewide totals, everything else at nameplate.
pub fn scale_renewables(generators: &[Generator], solar_mw: f64, wind_mw: f64) -> Result<Vec<f64>> {
    let mut caps: Vec<f64> = generators.iter().map(|g| g.pmax_mw).collect();
    for (fuel, total) in [(FuelType::Solar, solar_mw), (FuelType::Wind, wind_mw)] {
        let idx: Vec<usize> = (0..generators.len()).filter(|&i| generators[i].fuel == fuel).collect();
        let pmax: Vec<f64> = idx.iter().map(|&i| generators[i].pmax_mw).collect();
        if idx.is_empty() {
            if total < 0.0 {
                return Err(GridError::Validation(format!("renewable total {total} MW is negative")));
            }
            continue;
        }
        for (&i, c) in idx.iter().zip(scale_caps(&pmax, total)?) {
            caps[i] = c;
        }
    }
    Ok(caps)
}

/// Symmetric reactive limits from the nameplate power factor.
pub fn derive_q_limits(generators: &mut [Generator]) {
    for g in generators {
        let qmax = g.pmax_mw * g.power_factor.acos().tan();
        g.qmax_mvar = qmax;
        g.qmin_mvar = -qmax;
    }
}

/// Places loads, costs and reactive limits onto a topology model.
pub fn assign(
    model: &GridModel,
    ds: &GeoDataset,
    refs: &[CostReference],
    cfg: &AssignmentConfig,
    mode: ExecMode,
) -> Result<(GridModel, LoadAssignment)> {
    cfg.validate()?;
    let mut model = model.clone();
    let eligible = eligible_buses(&model);
    let bus_locs: Vec<GeoPoint> = eligible.iter().map(|&b| model.buses[b].location).collect();
    let load_locs: Vec<GeoPoint> = ds.loads.iter().map(|l| l.location).collect();
    let la = assign_loads(&load_locs, &bus_locs, cfg.k_nearest, mode)?;

    let totals = ds.hourly_total_load();
    let peak = (0..totals.len()).max_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(b.cmp(&a)));
    model.loads = ds
        .loads
        .iter()
        .zip(&la.bus_of_load)
        .map(|(l, &k)| Load {
            tract_id: l.tract_id.clone(),
            bus: lowest_voltage_bus(&model, eligible[k]),
            location: l.location,
            peak_mw: peak.map_or(0.0, |h| l.profile[h]),
        })
        .collect();
    model.load_q_ratio = cfg.load_power_factor.acos().tan();
    assign_costs(&mut model.generators, refs, cfg)?;
    derive_q_limits(&mut model.generators);
    Ok((model, la))
}
