//! Scenario hours, unit commitment and single-bus dispatch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{scale_renewables, CostKind, RenewableSeries};
use crate::error::{GridError, Result};
use crate::geodata::GeoDataset;
use crate::model::{Generator, GridModel};
use crate::par::{self, ExecMode};

/// Hours on each side of the extreme-load hours.
pub const WINDOW_HALF_WIDTH: usize = 60;
pub const WINDOW_LEN: usize = 2 * WINDOW_HALF_WIDTH + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    MaxLoadWindow,
    MinLoadWindow,
    MaxSolar,
    MaxWind,
    MinRenewable,
    YearlyEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchKind {
    Economic,
    Uneconomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioHour {
    pub hour: usize,
    pub tag: ScenarioTag,
}

/// Hourly inputs aligned with the model's loads and generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Per-load hourly demand (MW), aligned with `GridModel::loads`.
    pub load_mw: Vec<Vec<f64>>,
    pub solar_mw: Vec<f64>,
    pub wind_mw: Vec<f64>,
}

impl TimeSeries {
    pub fn new(ds: &GeoDataset, renewables: &RenewableSeries) -> Result<Self> {
        let ts = Self {
            load_mw: ds.loads.iter().map(|l| l.profile.clone()).collect(),
            solar_mw: renewables.solar_mw.clone(),
            wind_mw: renewables.wind_mw.clone(),
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn hours(&self) -> usize {
        self.solar_mw.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hours();
        if self.wind_mw.len() != h || self.load_mw.iter().any(|p| p.len() != h) {
            return Err(GridError::Validation(format!("hourly series lengths differ from {h} hours")));
        }
        let bad = |v: &f64| !v.is_finite() || *v < 0.0;
        if self.solar_mw.iter().chain(&self.wind_mw).any(bad) || self.load_mw.iter().flatten().any(bad) {
            return Err(GridError::Validation("hourly series contain negative or non-finite values".into()));
        }
        Ok(())
    }

    pub fn total_load(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.hours()];
        for p in &self.load_mw {
            for (a, v) in t.iter_mut().zip(p) {
                *a += v;
            }
        }
        t
    }

    pub fn bus_load(&self, model: &GridModel, hour: usize) -> Vec<f64> {
        let per_load: Vec<f64> = self.load_mw.iter().map(|p| p[hour]).collect();
        model.bus_demand(&per_load)
    }

    /// Available capacity per generator for one hour.
    pub fn caps(&self, model: &GridModel, hour: usize) -> Result<Vec<f64>> {
        scale_renewables(&model.generators, self.solar_mw[hour], self.wind_mw[hour])
    }
}

fn argmax_first(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

fn argmin_first(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best })
}

/// A window of `WINDOW_LEN` hours centred on `center`, shifted inside `[0, hours)`.
pub fn window(center: usize, hours: usize) -> std::ops::Range<usize> {
    let start = center.saturating_sub(WINDOW_HALF_WIDTH).min(hours - WINDOW_LEN);
    start..start + WINDOW_LEN
}

/// The 121-hour windows around the maximum and minimum load hours plus the
/// maximum-solar, maximum-wind and minimum-renewable hours.
pub fn select_scenarios(hourly_load: &[f64], solar_mw: &[f64], wind_mw: &[f64]) -> Result<Vec<ScenarioHour>> {
    let h = hourly_load.len();
    if h < WINDOW_LEN {
        return Err(GridError::Validation(format!("{h} hours of data; at least {WINDOW_LEN} are required")));
    }
    if solar_mw.len() != h || wind_mw.len() != h {
        return Err(GridError::Validation("renewable series length differs from load series".into()));
    }
    let mut out = Vec::with_capacity(2 * WINDOW_LEN + 3);
    out.extend(window(argmax_first(hourly_load), h).map(|hour| ScenarioHour { hour, tag: ScenarioTag::MaxLoadWindow }));
    out.extend(window(argmin_first(hourly_load), h).map(|hour| ScenarioHour { hour, tag: ScenarioTag::MinLoadWindow }));
    let renewable: Vec<f64> = solar_mw.iter().zip(wind_mw).map(|(s, w)| s + w).collect();
    out.push(ScenarioHour { hour: argmax_first(solar_mw), tag: ScenarioTag::MaxSolar });
    out.push(ScenarioHour { hour: argmax_first(wind_mw), tag: ScenarioTag::MaxWind });
    out.push(ScenarioHour { hour: argmin_first(&renewable), tag: ScenarioTag::MinRenewable });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub reserve_frac: f64,
    pub renewables_exempt: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { reserve_frac: 0.10, renewables_exempt: true }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reserve_frac) {
            return Err(GridError::Validation(format!("reserve fraction {} outside [0, 1]", self.reserve_frac)));
        }
        Ok(())
    }
}

/// One hour's demand and availability, with the dispatch scheme applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub hour: usize,
    pub tag: ScenarioTag,
    pub kind: DispatchKind,
    pub bus_load_mw: Vec<f64>,
    /// Available capacity per generator.
    pub renewable_caps: Vec<f64>,
}

impl Scenario {
    pub fn total_load(&self) -> f64 {
        self.bus_load_mw.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub committed: Vec<bool>,
    pub pg_mw: Vec<f64>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionScenario {
    pub scenario: Scenario,
    pub dispatch: DispatchResult,
}

fn exempt(g: &Generator, cfg: &ScenarioConfig) -> bool {
    cfg.renewables_exempt && g.is_renewable()
}

fn commit(load: f64, gens: &[Generator], caps: &[f64], cfg: &ScenarioConfig, most_expensive_first: bool) -> Result<Vec<bool>> {
    cfg.validate()?;
    let target = (1.0 + cfg.reserve_frac) * load;
    let mut capacity: f64 = caps.iter().sum();
    if capacity < target * (1.0 - 1e-12) {
        return Err(GridError::Infeasible(format!(
            "available capacity {capacity:.3} MW is below load plus reserve {target:.3} MW"
        )));
    }
    let mut order: Vec<usize> = (0..gens.len()).filter(|&i| !exempt(&gens[i], cfg)).collect();
    let avg = |i: usize| gens[i].cost.average(gens[i].pmax_mw);
    order.sort_by(|&a, &b| {
        let o = avg(a).total_cmp(&avg(b));
        (if most_expensive_first { o.reverse() } else { o }).then(a.cmp(&b))
    });
    let mut committed = vec![true; gens.len()];
    for i in order {
        if capacity - caps[i] < target {
            break;
        }
        capacity -= caps[i];
        committed[i] = false;
    }
    Ok(committed)
}

/// Decommits the most expensive units while committed capacity covers
/// `(1 + reserve_frac)·load`.
pub fn unit_commitment(load: f64, gens: &[Generator], caps: &[f64], cfg: &ScenarioConfig) -> Result<Vec<bool>> {
    commit(load, gens, caps, cfg, true)
}

/// Equal-marginal-cost dispatch of committed units against a single balance.
pub fn economic_dispatch(load: f64, gens: &[Generator], caps: &[f64], committed: &[bool]) -> Result<DispatchResult> {
    let units: Vec<usize> = (0..gens.len()).filter(|&i| committed[i]).collect();
    let lo: Vec<f64> = units.iter().map(|&i| gens[i].pmin_mw.min(caps[i]).max(0.0)).collect();
    let hi: Vec<f64> = units.iter().map(|&i| caps[i].max(0.0)).collect();
    let (sum_lo, sum_hi): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
    let tol = 1e-9 * (1.0 + load.abs());
    if load < sum_lo - tol || load > sum_hi + tol {
        return Err(GridError::Infeasible(format!(
            "load {load:.3} MW outside committed range [{sum_lo:.3}, {sum_hi:.3}] MW"
        )));
    }
    let quad = |k: usize| gens[units[k]].cost.kind == CostKind::Quadratic && gens[units[k]].cost.c2 > 0.0;
    let c1 = |k: usize| gens[units[k]].cost.c1;
    let c2 = |k: usize| gens[units[k]].cost.c2;

    let mut bps: Vec<f64> = Vec::new();
    for k in 0..units.len() {
        if quad(k) {
            bps.push(c1(k) + 2.0 * c2(k) * lo[k]);
            bps.push(c1(k) + 2.0 * c2(k) * hi[k]);
        } else {
            bps.push(c1(k));
        }
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup();

    // Output of unit k at price lam; linear units exactly at lam take `at_tie`.
    let output = |k: usize, lam: f64, at_tie_hi: bool| -> f64 {
        if quad(k) {
            ((lam - c1(k)) / (2.0 * c2(k))).clamp(lo[k], hi[k])
        } else if c1(k) < lam || (c1(k) == lam && at_tie_hi) {
            hi[k]
        } else {
            lo[k]
        }
    };
    let total = |lam: f64, hi_tie: bool| (0..units.len()).map(|k| output(k, lam, hi_tie)).sum::<f64>();

    let mut pg_u: Vec<f64> = lo.clone();
    let mut prev: Option<f64> = None;
    for &b in &bps {
        let (p_lo, p_hi) = (total(b, false), total(b, true));
        if load <= p_hi + tol {
            if load >= p_lo - tol {
                let mut extra = load - p_lo;
                for k in 0..units.len() {
                    pg_u[k] = output(k, b, false);
                    if !quad(k) && c1(k) == b {
                        let add = extra.min(hi[k] - lo[k]).max(0.0);
                        pg_u[k] += add;
                        extra -= add;
                    }
                }
            } else {
                let a = prev.expect("load below the first breakpoint is excluded by the range check");
                let mid = 0.5 * (a + b);
                let (mut fixed, mut slope, mut offset) = (0.0, 0.0, 0.0);
                let mut interior = Vec::new();
                for k in 0..units.len() {
                    if quad(k) && c1(k) + 2.0 * c2(k) * lo[k] < mid && mid < c1(k) + 2.0 * c2(k) * hi[k] {
                        slope += 1.0 / (2.0 * c2(k));
                        offset += c1(k) / (2.0 * c2(k));
                        interior.push(k);
                    } else {
                        fixed += output(k, mid, false);
                    }
                }
                let lam = (load - fixed + offset) / slope;
                for k in 0..units.len() {
                    pg_u[k] = output(k, lam.clamp(a, b), false);
                }
                for &k in &interior {
                    pg_u[k] = ((lam - c1(k)) / (2.0 * c2(k))).clamp(lo[k], hi[k]);
                }
            }
            break;
        }
        prev = Some(b);
    }
    if bps.is_empty() && load > tol {
        return Err(GridError::Infeasible(format!("load {load:.3} MW with no committed units")));
    }

    let mut pg = vec![0.0; gens.len()];
    for (k, &i) in units.iter().enumerate() {
        pg[i] = pg_u[k];
    }
    let total_cost = units.iter().map(|&i| gens[i].cost.eval(pg[i])).sum();
    Ok(DispatchResult { committed: committed.to_vec(), pg_mw: pg, total_cost })
}

/// Decommits the cheapest units down to the reserve floor, then dispatches
/// the survivors economically.
pub fn uneconomic_dispatch(load: f64, gens: &[Generator], caps: &[f64], cfg: &ScenarioConfig) -> Result<DispatchResult> {
    let committed = commit(load, gens, caps, cfg, false)?;
    economic_dispatch(load, gens, caps, &committed)
}

/// Economic or uneconomic commitment and dispatch for one scenario.
pub fn dispatch(sc: &Scenario, gens: &[Generator], cfg: &ScenarioConfig) -> Result<DispatchResult> {
    let load = sc.total_load();
    match sc.kind {
        DispatchKind::Economic => {
            let committed = unit_commitment(load, gens, &sc.renewable_caps, cfg)?;
            economic_dispatch(load, gens, &sc.renewable_caps, &committed)
        }
        DispatchKind::Uneconomic => uneconomic_dispatch(load, gens, &sc.renewable_caps, cfg),
    }
}

pub fn make_scenario(model: &GridModel, ts: &TimeSeries, h: ScenarioHour, kind: DispatchKind) -> Result<Scenario> {
    Ok(Scenario {
        hour: h.hour,
        tag: h.tag,
        kind,
        bus_load_mw: ts.bus_load(model, h.hour),
        renewable_caps: ts.caps(model, h.hour)?,
    })
}

/// Economic and uneconomic injections for every selected hour, in hour order
/// with the economic case first.
pub fn build_injections(
    model: &GridModel,
    ts: &TimeSeries,
    hours: &[ScenarioHour],
    cfg: &ScenarioConfig,
    mode: ExecMode,
) -> Result<Vec<InjectionScenario>> {
    cfg.validate()?;
    let jobs: Vec<(ScenarioHour, DispatchKind)> = hours
        .iter()
        .flat_map(|&h| [(h, DispatchKind::Economic), (h, DispatchKind::Uneconomic)])
        .collect();
    par::try_map(mode, &jobs, |&(h, kind)| {
        let scenario = make_scenario(model, ts, h, kind)?;
        let dispatch = dispatch(&scenario, &model.generators, cfg)
            .map_err(|e| GridError::Infeasible(format!("hour {} ({kind:?}): {e}", h.hour)))?;
        Ok(InjectionScenario { scenario, dispatch })
    })
}

#[derive(Serialize, Deserialize)]
struct ScenarioLine {
    hour: usize,
    kind: DispatchKind,
    tag: ScenarioTag,
    pg: BTreeMap<String, f64>,
    caps: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    committed: Option<Vec<String>>,
}

/// JSON lines `{hour, kind, tag, pg, caps, committed}` keyed by generator id.
pub fn injections_to_jsonl(model: &GridModel, inj: &[InjectionScenario]) -> String {
    let mut out = String::new();
    for s in inj {
        let ids = model.generators.iter().map(|g| g.id.clone());
        let line = ScenarioLine {
            hour: s.scenario.hour,
            kind: s.scenario.kind,
            tag: s.scenario.tag,
            pg: ids.clone().zip(s.dispatch.pg_mw.iter().copied()).collect(),
            caps: ids.zip(s.scenario.renewable_caps.iter().copied()).collect(),
            committed: Some(
                model.generators.iter().zip(&s.dispatch.committed).filter(|(_, c)| **c).map(|(g, _)| g.id.clone()).collect(),
            ),
        };
        out += &serde_json::to_string(&line).expect("serializable");
        out.push('\n');
    }
    out
}

/// Restores the per-generator vectors of each line. Without a `committed`
/// list, units with nonzero output count as committed.
pub fn injections_from_jsonl(model: &GridModel, ts: &TimeSeries, text: &str) -> Result<Vec<InjectionScenario>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let rec: ScenarioLine = serde_json::from_str(l)
                .map_err(|e| GridError::schema("scenarios.jsonl", format!("line {}", n + 1), "record", e))?;
            let take = |m: &BTreeMap<String, f64>, field: &str| -> Result<Vec<f64>> {
                model
                    .generators
                    .iter()
                    .map(|g| {
                        m.get(&g.id).copied().ok_or_else(|| {
                            GridError::schema("scenarios.jsonl", format!("line {}", n + 1), field, format!("missing generator {}", g.id))
                        })
                    })
                    .collect()
            };
            let pg = take(&rec.pg, "pg")?;
            let caps = take(&rec.caps, "caps")?;
            if rec.hour >= ts.hours() {
                return Err(GridError::schema("scenarios.jsonl", format!("line {}", n + 1), "hour", "beyond the series"));
            }
            let committed: Vec<bool> = match &rec.committed {
                Some(ids) => model.generators.iter().map(|g| ids.contains(&g.id)).collect(),
                None => pg.iter().map(|p| *p > 0.0).collect(),
            };
            let total_cost = model.generators.iter().zip(&pg).zip(&committed).filter(|(_, c)| **c).map(|((g, p), _)| g.cost.eval(*p)).sum();
            Ok(InjectionScenario {
                scenario: Scenario {
                    hour: rec.hour,
                    tag: rec.tag,
                    kind: rec.kind,
                    bus_load_mw: ts.bus_load(model, rec.hour),
                    renewable_caps: caps,
                },
                dispatch: DispatchResult { committed, pg_mw: pg, total_cost },
            })
        })
        .collect()
}
