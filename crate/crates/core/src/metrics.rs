//! Network statistics and hourly DC/AC evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::GridModel;
use crate::par::{self, ExecMode};
use crate::powerflow::{ac_opf_surrogate, dc_opf, OperatingPoint, OpfSolution, PowerflowConfig};
use crate::scenarios::{make_scenario, unit_commitment, DispatchKind, ScenarioConfig, ScenarioHour, ScenarioTag, TimeSeries};

/// Number of buses per line degree. Transformers do not count.
pub fn degree_distribution(model: &GridModel) -> BTreeMap<usize, usize> {
    let mut deg = vec![0usize; model.n_buses()];
    for (_, br) in model.lines() {
        deg[br.from] += 1;
        deg[br.to] += 1;
    }
    let mut hist = BTreeMap::new();
    for d in deg {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Most frequent degree, smallest on ties.
pub fn degree_mode(hist: &BTreeMap<usize, usize>) -> Option<usize> {
    hist.iter().fold(None, |best: Option<(usize, usize)>, (&d, &c)| match best {
        Some((_, bc)) if bc >= c => best,
        _ => Some((d, c)),
    })
    .map(|(d, _)| d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStat {
    pub kv: f64,
    pub lines: usize,
    pub percent_of_lines: f64,
    pub miles: f64,
    pub gva_miles: f64,
}

/// Line count share, total length and GVA-miles per voltage level.
pub fn branch_stats(model: &GridModel) -> Vec<BranchStat> {
    let mut by_kv: BTreeMap<u64, BranchStat> = BTreeMap::new();
    for (_, br) in model.lines() {
        let kv = br.voltage_kv();
        let s = by_kv.entry(kv.to_bits()).or_insert(BranchStat { kv, lines: 0, percent_of_lines: 0.0, miles: 0.0, gva_miles: 0.0 });
        let miles = br.length_miles();
        s.lines += 1;
        s.miles += miles;
        s.gva_miles += br.rate_mva / 1000.0 * miles;
    }
    let total = model.n_lines().max(1) as f64;
    let mut stats: Vec<BranchStat> = by_kv.into_values().collect();
    stats.sort_by(|a, b| b.kv.total_cmp(&a.kv));
    for s in &mut stats {
        s.percent_of_lines = 100.0 * s.lines as f64 / total;
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour: usize,
    pub dc_cost: f64,
    pub ac_cost: f64,
    pub dc_gen_mw: f64,
    pub ac_gen_mw: f64,
    pub dc_binding: usize,
    pub ac_binding: usize,
    pub curtailed_mw: f64,
    pub dc_max_loading: f64,
    pub ac_max_loading: f64,
    pub dc_feasible: bool,
    pub ac_feasible: bool,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, median: 0.0, max: 0.0, min: 0.0 };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self { mean: v.iter().sum::<f64>() / n as f64, median, max: v[n - 1], min: v[0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub hours: usize,
    pub feasible_hours: usize,
    pub dc_cost: Stats,
    pub ac_cost: Stats,
    pub dc_gen_mw: Stats,
    pub ac_gen_mw: Stats,
    pub dc_binding: Stats,
    pub ac_binding: Stats,
    pub curtailed_mw: Stats,
}

impl Summary {
    pub fn from_rows(rows: &[HourRow]) -> Self {
        let col = |f: fn(&HourRow) -> f64| Stats::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            hours: rows.len(),
            feasible_hours: rows.iter().filter(|r| r.feasible).count(),
            dc_cost: col(|r| r.dc_cost),
            ac_cost: col(|r| r.ac_cost),
            dc_gen_mw: col(|r| r.dc_gen_mw),
            ac_gen_mw: col(|r| r.ac_gen_mw),
            dc_binding: col(|r| r.dc_binding as f64),
            ac_binding: col(|r| r.ac_binding as f64),
            curtailed_mw: col(|r| r.curtailed_mw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<HourRow>,
    /// AC dispatch by fuel for each row.
    pub ac_fuel_mw: Vec<BTreeMap<String, f64>>,
    pub summary: Summary,
    pub degree_histogram: BTreeMap<usize, usize>,
    pub branch_stats: Vec<BranchStat>,
    /// Share of AC energy by fuel.
    pub fuel_mix: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    summary: &'a Summary,
    degree_histogram: &'a BTreeMap<usize, usize>,
    branch_stats: &'a [BranchStat],
    fuel_mix: &'a BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("hour,dc_cost,ac_cost,dc_gen_mw,ac_gen_mw,dc_binding,ac_binding,curtailed_mw,feasible\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.hour, r.dc_cost, r.ac_cost, r.dc_gen_mw, r.ac_gen_mw, r.dc_binding, r.ac_binding, r.curtailed_mw, r.feasible
            );
        }
        s
    }

    /// Summary statistics, degree histogram, branch table and fuel mix.
    pub fn summary_json(&self) -> String {
        let body = ReportSummary {
            summary: &self.summary,
            degree_histogram: &self.degree_histogram,
            branch_stats: &self.branch_stats,
            fuel_mix: &self.fuel_mix,
        };
        serde_json::to_string_pretty(&body).expect("serializable")
    }

    pub fn all_feasible(&self) -> bool {
        self.rows.iter().all(|r| r.feasible)
    }
}

struct HourOutcome {
    row: HourRow,
    fuel: BTreeMap<String, f64>,
    dc: Option<OpfSolution>,
    ac: Option<OpfSolution>,
}

fn evaluate_hour(model: &GridModel, ts: &TimeSeries, hour: usize, scfg: &ScenarioConfig, pf: &PowerflowConfig) -> HourOutcome {
    let mut row = HourRow {
        hour,
        dc_cost: 0.0,
        ac_cost: 0.0,
        dc_gen_mw: 0.0,
        ac_gen_mw: 0.0,
        dc_binding: 0,
        ac_binding: 0,
        curtailed_mw: 0.0,
        dc_max_loading: 0.0,
        ac_max_loading: 0.0,
        dc_feasible: false,
        ac_feasible: false,
        feasible: false,
        error: None,
    };
    let mut out = HourOutcome { row: row.clone(), fuel: BTreeMap::new(), dc: None, ac: None };
    let op = match make_scenario(model, ts, ScenarioHour { hour, tag: ScenarioTag::YearlyEval }, DispatchKind::Economic).and_then(|sc| {
        let committed = unit_commitment(sc.total_load(), &model.generators, &sc.renewable_caps, scfg)?;
        Ok(OperatingPoint { bus_load_mw: sc.bus_load_mw, caps: sc.renewable_caps, committed })
    }) {
        Ok(op) => op,
        Err(e) => {
            row.error = Some(e.to_string());
            out.row = row;
            return out;
        }
    };
    match dc_opf(model, &op, pf) {
        Ok(dc) => {
            row.dc_feasible = true;
            row.dc_cost = dc.objective;
            row.dc_gen_mw = dc.total_pg();
            row.dc_binding = dc.binding_lines;
            row.dc_max_loading = dc.max_loading();
            row.curtailed_mw = model
                .generators
                .iter()
                .enumerate()
                .filter(|(_, g)| g.scalable_cap())
                .map(|(k, _)| (op.caps[k] - dc.pg_mw[k]).max(0.0))
                .sum();
            out.dc = Some(dc);
        }
        Err(e) => row.error = Some(format!("dc: {e}")),
    }
    match ac_opf_surrogate(model, &op, pf) {
        Ok(ac) => {
            row.ac_feasible = ac.feasible();
            row.ac_cost = ac.objective;
            row.ac_gen_mw = ac.total_pg();
            row.ac_binding = ac.binding_lines;
            row.ac_max_loading = ac.max_loading();
            if !ac.feasible() && row.error.is_none() {
                row.error = Some(format!("ac: {}", serde_json::to_string(&ac.violations).expect("serializable")));
            }
            for (g, p) in model.generators.iter().zip(&ac.pg_mw) {
                *out.fuel.entry(g.fuel.as_str().to_string()).or_insert(0.0) += p;
            }
            out.ac = Some(ac);
        }
        Err(e) => {
            if row.error.is_none() {
                row.error = Some(format!("ac: {e}"));
            }
        }
    }
    row.feasible = row.dc_feasible && row.ac_feasible;
    out.row = row;
    out
}

/// Runs DC OPF and the AC surrogate independently for every listed hour.
/// Failed hours are recorded as infeasible rows.
pub fn yearly_evaluation(
    model: &GridModel,
    ts: &TimeSeries,
    hours: &[usize],
    scfg: &ScenarioConfig,
    pf: &PowerflowConfig,
    mode: ExecMode,
) -> Result<EvaluationReport> {
    Ok(evaluate_hours(model, ts, hours, scfg, pf, mode)?.0)
}

/// Like [`yearly_evaluation`] but also returns the per-hour DC and AC solutions.
pub fn evaluate_hours(
    model: &GridModel,
    ts: &TimeSeries,
    hours: &[usize],
    scfg: &ScenarioConfig,
    pf: &PowerflowConfig,
    mode: ExecMode,
) -> Result<(EvaluationReport, Vec<(Option<OpfSolution>, Option<OpfSolution>)>)> {
    scfg.validate()?;
    pf.validate()?;
    ts.validate()?;
    if let Some(&h) = hours.iter().find(|&&h| h >= ts.hours()) {
        return Err(crate::GridError::Validation(format!("hour {h} outside the {}-hour series", ts.hours())));
    }
    let outcomes = par::map(mode, hours, |&h| evaluate_hour(model, ts, h, scfg, pf));
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut fuels = Vec::with_capacity(outcomes.len());
    let mut sols = Vec::with_capacity(outcomes.len());
    let mut energy: BTreeMap<String, f64> = BTreeMap::new();
    for o in outcomes {
        for (f, p) in &o.fuel {
            *energy.entry(f.clone()).or_insert(0.0) += p;
        }
        rows.push(o.row);
        fuels.push(o.fuel);
        sols.push((o.dc, o.ac));
    }
    let total: f64 = energy.values().sum();
    let fuel_mix = energy.into_iter().map(|(f, e)| (f, if total > 0.0 { e / total } else { 0.0 })).collect();
    let report = EvaluationReport {
        summary: Summary::from_rows(&rows),
        rows,
        ac_fuel_mw: fuels,
        degree_histogram: degree_distribution(model),
        branch_stats: branch_stats(model),
        fuel_mix,
    };
    Ok((report, sols))
}

/// Per-hour AC generation by fuel for rows whose hour lies in `window`.
pub fn dispatch_stack(report: &EvaluationReport, window: std::ops::Range<usize>) -> Vec<(usize, String, f64)> {
    report
        .rows
        .iter()
        .zip(&report.ac_fuel_mw)
        .filter(|(r, _)| window.contains(&r.hour))
        .flat_map(|(r, f)| f.iter().map(move |(fuel, mw)| (r.hour, fuel.clone(), *mw)))
        .collect()
}

pub fn dispatch_stack_csv(stack: &[(usize, String, f64)]) -> String {
    let mut s = String::from("hour,fuel,mw\n");
    for (h, f, mw) in stack {
        let _ = writeln!(s, "{h},{f},{mw}");
    }
    s
}

/// One line per solved hour: `hour,objective,total_pg,binding_lines,max_loading,converged`.
pub fn opf_hourly_csv(solutions: &[(usize, &OpfSolution)]) -> String {
    let mut s = String::from("hour,objective,total_pg,binding_lines,max_loading,converged\n");
    for (h, sol) in solutions {
        let _ = writeln!(s, "{h},{},{},{},{},{}", sol.objective, sol.total_pg(), sol.binding_lines, sol.max_loading(), sol.feasible());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::NetworkBuilder;

    #[test]
    fn degree_examples() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 100.0).build();
        assert_eq!(degree_distribution(&m), BTreeMap::from([(1, 2)]));
        let star = NetworkBuilder::new(5)
            .branch(0, 1, 0.0, 0.1, 0.0, 1.0)
            .branch(0, 2, 0.0, 0.1, 0.0, 1.0)
            .branch(0, 3, 0.0, 0.1, 0.0, 1.0)
            .branch(0, 4, 0.0, 0.1, 0.0, 1.0)
            .build();
        let h = degree_distribution(&star);
        assert_eq!(h, BTreeMap::from([(1, 4), (4, 1)]));
        assert_eq!(degree_mode(&h), Some(1));
    }

    #[test]
    fn transformers_do_not_count() {
        let m = NetworkBuilder::new(3).voltage(2, 115.0).branch(0, 1, 0.0, 0.1, 0.0, 1.0).transformer(1, 2, 0.0, 0.1, 1.0).build();
        assert_eq!(degree_distribution(&m), BTreeMap::from([(0, 1), (1, 2)]));
    }

    #[test]
    fn gva_miles_definition() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 500.0).build();
        let s = branch_stats(&m);
        let miles = m.branches[0].length_miles();
        assert_eq!(s.len(), 1);
        assert!((s[0].gva_miles - 0.5 * miles).abs() < 1e-12);
        assert!((s[0].percent_of_lines - 100.0).abs() < 1e-12);
    }

    #[test]
    fn stats_of_even_and_odd() {
        let s = Stats::of(&[3.0, 1.0, 2.0]);
        assert_eq!((s.mean, s.median, s.max, s.min), (2.0, 2.0, 3.0, 1.0));
        assert_eq!(Stats::of(&[4.0, 1.0, 2.0, 3.0]).median, 2.5);
    }
}
