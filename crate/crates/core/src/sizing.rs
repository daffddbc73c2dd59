//! Iterative line resizing against the relaxed-limit redispatch LP.

use std::collections::BTreeSet;

use gridsynth_solver::{solve_lp, LinearProgram, Sense, SolverError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::lineparams::{apply_line_state, downsize_state, upgrade_state, ConductorCatalog, LineParamsConfig};
use crate::model::GridModel;
use crate::par::{self, ExecMode};
use crate::powerflow::{bus_injections, slack_bus, DcNetwork, OperatingPoint};
use crate::scenarios::InjectionScenario;

/// Violations below this many MW count as zero.
pub const DELTA_TOL_MW: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizingConfig {
    pub lambda: f64,
    pub batch_frac: f64,
    pub underutil_frac: f64,
    pub tau_initial: usize,
    pub tau_escalation_start: usize,
    pub max_circuits: u32,
    pub rng_seed: u64,
}

impl Default for SizingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            batch_frac: 0.05,
            underutil_frac: 0.30,
            tau_initial: 0,
            tau_escalation_start: 50,
            max_circuits: 8,
            rng_seed: 0,
        }
    }
}

impl SizingConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.lambda) && unit(self.batch_frac) && unit(self.underutil_frac) && (1..=8).contains(&self.max_circuits) && self.tau_escalation_start >= 1 {
            Ok(())
        } else {
            Err(GridError::Validation("invalid sizing settings".into()))
        }
    }

    /// Threshold in force at 1-based iteration `iter`.
    pub fn tau_at(&self, iter: usize) -> usize {
        self.tau_initial + (iter + 1).saturating_sub(self.tau_escalation_start)
    }
}

/// Outcome of the redispatch LP for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeLpResult {
    /// Limit violation per branch (zero for transformers).
    pub delta_mw: Vec<f64>,
    /// Redispatch magnitude per generator.
    pub redispatch_mw: Vec<f64>,
    pub pg_mw: Vec<f64>,
    pub flow_mw: Vec<f64>,
    /// `λ·ΣΔ + (1−λ)·Σδ` at the solution.
    pub objective: f64,
}

/// Minimizes weighted redispatch plus limit relaxation for one scenario.
pub fn line_upgrade_lp(model: &GridModel, inj: &InjectionScenario, lambda: f64) -> Result<UpgradeLpResult> {
    let op = OperatingPoint::from_injection(inj);
    let n = model.n_buses();
    let slack = slack_bus(model, &op.committed);
    // A small cost on both terms makes the zero-weight limits pick the smallest value.
    let eps = 1e-9;
    let mut lp = LinearProgram::new();
    let theta: Vec<usize> = (0..n)
        .map(|k| if k == slack { lp.add_var(0.0, 0.0, 0.0) } else { lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY) })
        .collect();
    let mut gen_vars = Vec::with_capacity(model.generators.len());
    for (g, gen) in model.generators.iter().enumerate() {
        if !op.committed[g] {
            gen_vars.push(None);
            continue;
        }
        let hi = op.caps[g].min(gen.pmax_mw).max(0.0);
        let lo = gen.pmin_mw.min(hi).max(0.0);
        let p0 = inj.dispatch.pg_mw[g];
        let pg = lp.add_var(0.0, lo, hi);
        let up = lp.add_var(lambda + eps, 0.0, f64::INFINITY);
        let dn = lp.add_var(lambda + eps, 0.0, f64::INFINITY);
        lp.add_constraint(vec![(pg, 1.0), (up, -1.0), (dn, 1.0)], Sense::Eq, p0);
        gen_vars.push(Some((pg, up, dn)));
    }
    let mut flow = Vec::with_capacity(model.branches.len());
    let mut delta = Vec::with_capacity(model.branches.len());
    for br in &model.branches {
        let f = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let b = model.base_mva / br.x_pu;
        lp.add_constraint(vec![(f, 1.0), (theta[br.from], -b), (theta[br.to], b)], Sense::Eq, 0.0);
        if br.is_line() {
            let d = lp.add_var(1.0 - lambda + eps, 0.0, f64::INFINITY);
            lp.add_constraint(vec![(f, 1.0), (d, -1.0)], Sense::Le, br.rate_mva);
            lp.add_constraint(vec![(f, 1.0), (d, 1.0)], Sense::Ge, -br.rate_mva);
            delta.push(Some(d));
        } else {
            delta.push(None);
        }
        flow.push(f);
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (gen, v) in model.generators.iter().zip(&gen_vars) {
        if let Some((pg, _, _)) = v {
            rows[gen.bus].push((*pg, 1.0));
        }
    }
    for (br, &f) in model.branches.iter().zip(&flow) {
        rows[br.from].push((f, -1.0));
        rows[br.to].push((f, 1.0));
    }
    for (r, d) in rows.into_iter().zip(&op.bus_load_mw) {
        lp.add_constraint(r, Sense::Eq, *d);
    }
    let sol = solve_lp(&lp).map_err(|e| match e {
        SolverError::Infeasible => GridError::Numerical(format!("redispatch LP infeasible at hour {}", inj.scenario.hour)),
        other => other.into(),
    })?;
    let delta_mw: Vec<f64> = delta.iter().map(|d| d.map_or(0.0, |d| sol.x[d].max(0.0))).collect();
    let redispatch_mw: Vec<f64> = gen_vars.iter().map(|v| v.map_or(0.0, |(_, u, d)| sol.x[u] + sol.x[d])).collect();
    let pg_mw = gen_vars.iter().map(|v| v.map_or(0.0, |(p, _, _)| sol.x[p])).collect();
    let objective = lambda * redispatch_mw.iter().sum::<f64>() + (1.0 - lambda) * delta_mw.iter().sum::<f64>();
    Ok(UpgradeLpResult { delta_mw, redispatch_mw, pg_mw, flow_mw: flow.iter().map(|&f| sol.x[f]).collect(), objective })
}

/// Worst case of each quantity over all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub delta_mw: Vec<f64>,
    pub utilization: Vec<f64>,
    /// Per scenario, per generator redispatch.
    pub redispatch_mw: Vec<Vec<f64>>,
    /// Largest absolute flow per branch.
    pub max_flow_mw: Vec<f64>,
}

impl ViolationReport {
    pub fn overloaded(&self, model: &GridModel) -> Vec<usize> {
        model.lines().map(|(k, _)| k).filter(|&k| self.delta_mw[k] > DELTA_TOL_MW).collect()
    }

    pub fn underutilized(&self, model: &GridModel, frac: f64) -> Vec<usize> {
        model
            .lines()
            .map(|(k, _)| k)
            .filter(|&k| self.delta_mw[k] <= DELTA_TOL_MW && self.utilization[k] < frac)
            .collect()
    }
}

pub fn aggregate_violations(model: &GridModel, results: &[UpgradeLpResult]) -> ViolationReport {
    let nb = model.branches.len();
    let mut delta_mw = vec![0.0f64; nb];
    let mut utilization = vec![0.0f64; nb];
    let mut max_flow_mw = vec![0.0f64; nb];
    for r in results {
        for k in 0..nb {
            delta_mw[k] = delta_mw[k].max(r.delta_mw[k]);
            max_flow_mw[k] = max_flow_mw[k].max(r.flow_mw[k].abs());
            utilization[k] = utilization[k].max(r.flow_mw[k].abs() / model.branches[k].rate_mva);
        }
    }
    ViolationReport { delta_mw, utilization, redispatch_mw: results.iter().map(|r| r.redispatch_mw.clone()).collect(), max_flow_mw }
}

/// `round(batch_frac · lines)`.
pub fn batch_limit(n_lines: usize, batch_frac: f64) -> usize {
    (batch_frac * n_lines as f64).round() as usize
}

/// One line's move within an iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineChange {
    pub id: String,
    pub from: (usize, u32),
    pub to: (usize, u32),
}

fn choose(mut eligible: Vec<usize>, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    eligible.sort_unstable();
    let mut chosen: Vec<usize> = if eligible.len() <= limit {
        eligible
    } else {
        eligible.choose_multiple(rng, limit).copied().collect()
    };
    chosen.sort_unstable();
    chosen
}

fn n_conductors(model: &GridModel, k: usize, catalog: &ConductorCatalog) -> Result<usize> {
    Ok(catalog.for_voltage(model.branches[k].voltage_kv())?.len())
}

/// Upgrades a random batch of overloaded lines. Lines already at the top
/// conductor with the maximum circuit count join `saturated` and are skipped.
pub fn upgrade_batch(
    model: &mut GridModel,
    report: &ViolationReport,
    cfg: &SizingConfig,
    catalog: &ConductorCatalog,
    params: &LineParamsConfig,
    saturated: &mut BTreeSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LineChange>> {
    let mut eligible = Vec::new();
    for k in report.overloaded(model) {
        let state = model.branches[k].state.ok_or_else(|| GridError::Validation(format!("line {} has no conductor state", model.branches[k].id)))?;
        if upgrade_state(state, n_conductors(model, k, catalog)?, cfg.max_circuits).is_some() && !saturated.contains(&k) {
            eligible.push(k);
        } else {
            saturated.insert(k);
        }
    }
    let chosen = choose(eligible, batch_limit(model.n_lines(), cfg.batch_frac), rng);
    let mut log = Vec::with_capacity(chosen.len());
    for k in chosen {
        let old = model.branches[k].state.expect("checked above");
        let new = upgrade_state(old, n_conductors(model, k, catalog)?, cfg.max_circuits).expect("eligible");
        apply_line_state(&mut model.branches[k], new, catalog, params)?;
        log.push(LineChange { id: model.branches[k].id.clone(), from: (old.conductor, old.circuits), to: (new.conductor, new.circuits) });
    }
    Ok(log)
}

/// Downsizes a random batch of lines below the utilization threshold,
/// skipping lines at one circuit of the smallest conductor.
pub fn downsize_batch(
    model: &mut GridModel,
    report: &ViolationReport,
    cfg: &SizingConfig,
    catalog: &ConductorCatalog,
    params: &LineParamsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LineChange>> {
    let eligible: Vec<usize> = report
        .underutilized(model, cfg.underutil_frac)
        .into_iter()
        .filter(|&k| model.branches[k].state.and_then(downsize_state).is_some())
        .collect();
    let chosen = choose(eligible, batch_limit(model.n_lines(), cfg.batch_frac), rng);
    let mut log = Vec::with_capacity(chosen.len());
    for k in chosen {
        let old = model.branches[k].state.expect("filtered above");
        let new = downsize_state(old).expect("filtered above");
        apply_line_state(&mut model.branches[k], new, catalog, params)?;
        log.push(LineChange { id: model.branches[k].id.clone(), from: (old.conductor, old.circuits), to: (new.conductor, new.circuits) });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingIteration {
    pub iter: usize,
    pub tau: usize,
    pub overloaded: usize,
    pub underutilized: usize,
    pub upgraded: Vec<LineChange>,
    pub downsized: Vec<LineChange>,
    pub saturated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingTrace {
    /// How per-scenario utilization is combined.
    pub utilization_aggregation: String,
    pub iterations: Vec<SizingIteration>,
    /// Worst-case quantities on the returned model.
    pub final_report: ViolationReport,
}

impl SizingTrace {
    /// A header line followed by one JSON object per iteration.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "utilization_aggregation": self.utilization_aggregation }).to_string();
        out.push('\n');
        for it in &self.iterations {
            out += &serde_json::to_string(it).expect("serializable");
            out.push('\n');
        }
        out
    }
}

pub fn solve_scenarios(model: &GridModel, injections: &[InjectionScenario], lambda: f64, mode: ExecMode) -> Result<Vec<UpgradeLpResult>> {
    par::try_map(mode, injections, |inj| line_upgrade_lp(model, inj, lambda))
}

/// Runs redispatch LPs, then upgrades and downsizes batches until the
/// overloaded-line count is at most τ. The returned model is the one whose
/// LPs met the criterion.
pub fn run_sizing(
    model: &GridModel,
    injections: &[InjectionScenario],
    cfg: &SizingConfig,
    catalog: &ConductorCatalog,
    params: &LineParamsConfig,
    mode: ExecMode,
) -> Result<(GridModel, SizingTrace)> {
    cfg.validate()?;
    let mut model = model.clone();
    let mut up_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    up_rng.set_stream(1);
    let mut down_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    down_rng.set_stream(2);
    let mut saturated = BTreeSet::new();
    let mut iterations = Vec::new();
    for iter in 1.. {
        let results = solve_scenarios(&model, injections, cfg.lambda, mode)?;
        let report = aggregate_violations(&model, &results);
        let tau = cfg.tau_at(iter);
        let overloaded = report.overloaded(&model).len();
        let underutilized = report.underutilized(&model, cfg.underutil_frac).len();
        log::info!("sizing iteration {iter}: {overloaded} overloaded, {underutilized} underutilized, tau {tau}");
        if overloaded <= tau {
            iterations.push(SizingIteration { iter, tau, overloaded, underutilized, upgraded: vec![], downsized: vec![], saturated: vec![] });
            return Ok((model, SizingTrace { utilization_aggregation: "max".into(), iterations, final_report: report }));
        }
        let upgraded = upgrade_batch(&mut model, &report, cfg, catalog, params, &mut saturated, &mut up_rng)?;
        let downsized = downsize_batch(&mut model, &report, cfg, catalog, params, &mut down_rng)?;
        iterations.push(SizingIteration {
            iter,
            tau,
            overloaded,
            underutilized,
            upgraded,
            downsized,
            saturated: saturated.iter().map(|&k| model.branches[k].id.clone()).collect(),
        });
    }
    unreachable!("the threshold grows until the loop ends")
}

/// Largest DC flow magnitude per branch over the scenarios' scheduled injections.
pub fn dc_max_flows(model: &GridModel, injections: &[InjectionScenario], mode: ExecMode) -> Result<Vec<f64>> {
    let net = DcNetwork::new(model, 0)?;
    let flows = par::map(mode, injections, |inj| {
        let p = bus_injections(model, &inj.dispatch.pg_mw, &inj.scenario.bus_load_mw);
        net.solve(model, &p).p_from_mw
    });
    let mut max = vec![0.0f64; model.branches.len()];
    for f in flows {
        for (m, v) in max.iter_mut().zip(f) {
            *m = m.max(v.abs());
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_schedule() {
        let cfg = SizingConfig::default();
        assert_eq!(cfg.tau_at(1), 0);
        assert_eq!(cfg.tau_at(49), 0);
        assert_eq!(cfg.tau_at(50), 1);
        assert_eq!(cfg.tau_at(53), 4);
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(batch_limit(10_180, 0.05), 509);
        assert_eq!(batch_limit(100, 0.05), 5);
    }

    use crate::fixture::NetworkBuilder;
    use crate::scenarios::{DispatchKind, DispatchResult, Scenario, ScenarioTag};

    fn injection(model: &GridModel, load: Vec<f64>, pg: Vec<f64>) -> InjectionScenario {
        let n = model.generators.len();
        InjectionScenario {
            scenario: Scenario {
                hour: 0,
                tag: ScenarioTag::MaxLoadWindow,
                kind: DispatchKind::Economic,
                bus_load_mw: load,
                renewable_caps: model.generators.iter().map(|g| g.pmax_mw).collect(),
            },
            dispatch: DispatchResult { committed: vec![true; n], pg_mw: pg, total_cost: 0.0 },
        }
    }

    fn two_bus(rate: f64) -> GridModel {
        NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, rate).linear_gen(0, 0.0, 200.0, 1.0).linear_gen(1, 0.0, 200.0, 5.0).build()
    }

    #[test]
    fn ample_rating_needs_nothing() {
        let m = two_bus(200.0);
        let r = line_upgrade_lp(&m, &injection(&m, vec![0.0, 100.0], vec![100.0, 0.0]), 0.5).unwrap();
        assert!(r.delta_mw[0].abs() < 1e-9);
        assert!(r.redispatch_mw.iter().sum::<f64>().abs() < 1e-9);
        assert!(r.objective.abs() < 1e-9);
    }

    #[test]
    fn single_source_forces_overload() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 80.0).linear_gen(0, 0.0, 200.0, 1.0).build();
        for lambda in [0.0, 0.5, 1.0] {
            let r = line_upgrade_lp(&m, &injection(&m, vec![0.0, 100.0], vec![100.0]), lambda).unwrap();
            assert!((r.delta_mw[0] - 20.0).abs() < 1e-7, "lambda {lambda}");
        }
    }

    #[test]
    fn balanced_weight_prefers_overload() {
        // Shifting 20 MW costs 0.5 * 40 while the overload costs 0.5 * 20.
        let m = two_bus(80.0);
        let r = line_upgrade_lp(&m, &injection(&m, vec![0.0, 100.0], vec![100.0, 0.0]), 0.5).unwrap();
        assert!((r.delta_mw[0] - 20.0).abs() < 1e-7);
        assert!((r.objective - 10.0).abs() < 1e-7);
        assert!((r.flow_mw[0] - 100.0).abs() < 1e-7);
    }

    #[test]
    fn weight_extremes() {
        let m = two_bus(80.0);
        let inj = injection(&m, vec![0.0, 100.0], vec![100.0, 0.0]);
        let r1 = line_upgrade_lp(&m, &inj, 1.0).unwrap();
        assert!((r1.delta_mw[0] - 20.0).abs() < 1e-7);
        assert!(r1.redispatch_mw.iter().sum::<f64>() < 1e-7);
        let r0 = line_upgrade_lp(&m, &inj, 0.0).unwrap();
        assert!(r0.delta_mw[0] < 1e-7);
        assert!((r0.redispatch_mw.iter().sum::<f64>() - 40.0).abs() < 1e-7);
        assert!((r0.pg_mw[1] - 20.0).abs() < 1e-7);
    }

    #[test]
    fn aggregation_takes_maxima() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 100.0).build();
        let r = |d: f64, f: f64| UpgradeLpResult { delta_mw: vec![d], redispatch_mw: vec![], pg_mw: vec![], flow_mw: vec![f], objective: 0.0 };
        let rep = aggregate_violations(&m, &[r(0.0, 10.0), r(5.0, -105.0), r(3.0, 103.0)]);
        assert_eq!(rep.delta_mw, vec![5.0]);
        assert!((rep.utilization[0] - 1.05).abs() < 1e-12);
        let idle = aggregate_violations(&m, &[r(0.0, 0.0)]);
        assert_eq!(idle.utilization, vec![0.0]);
    }
}
