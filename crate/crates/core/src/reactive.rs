//! Synchronous condenser placement and thermal-limit doubling.

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::model::{Condenser, GridModel};
use crate::powerflow::{ac_opf_surrogate, OperatingPoint, OpfSolution, PowerflowConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactiveConfig {
    pub condenser_mvar: f64,
    pub prune_frac: f64,
    pub coverage_stop: f64,
    pub restore_threshold: f64,
}

impl Default for ReactiveConfig {
    fn default() -> Self {
        Self { condenser_mvar: 200.0, prune_frac: 0.20, coverage_stop: 0.20, restore_threshold: 0.50 }
    }
}

impl ReactiveConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.condenser_mvar > 0.0 && unit(self.prune_frac) && unit(self.coverage_stop) && unit(self.restore_threshold) {
            Ok(())
        } else {
            Err(GridError::Validation("invalid reactive support settings".into()))
        }
    }
}

/// Doubles every line rating, keeping the original on the branch.
/// Impedances and transformers are untouched.
pub fn double_limits(model: &mut GridModel) {
    for br in model.branches.iter_mut().filter(|b| b.is_line()) {
        let original = br.original_rate_mva.unwrap_or(br.rate_mva);
        br.original_rate_mva = Some(original);
        br.rate_mva = 2.0 * original;
    }
}

/// Lines loaded below `threshold` of the doubled rating return to their
/// original rating; the rest keep the doubled rating and are flagged.
pub fn restore_limits(model: &mut GridModel, loading: &[f64], threshold: f64) {
    for (br, &l) in model.branches.iter_mut().zip(loading) {
        let Some(original) = br.original_rate_mva else { continue };
        if !br.is_line() {
            continue;
        }
        if l < threshold {
            br.rate_mva = original;
            br.original_rate_mva = None;
            br.doubled = false;
        } else {
            br.doubled = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactiveIteration {
    pub iter: usize,
    pub active_condensers: usize,
    pub feasible: bool,
    /// Bus ids whose condensers were switched off.
    pub pruned: Vec<u32>,
    pub rolled_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactiveTrace {
    pub iterations: Vec<ReactiveIteration>,
    pub final_active: usize,
    pub n_buses: usize,
    pub doubled_lines: usize,
    pub restored_lines: usize,
}

impl ReactiveTrace {
    pub fn to_jsonl(&self) -> String {
        self.iterations.iter().map(|it| serde_json::to_string(it).expect("serializable") + "\n").collect()
    }

    pub fn coverage(&self) -> f64 {
        self.final_active as f64 / self.n_buses.max(1) as f64
    }
}

fn active_count(model: &GridModel) -> usize {
    model.condensers.iter().filter(|c| c.active).count()
}

/// Active condensers ordered by increasing |Q|, ties by bus index.
fn prune_order(model: &GridModel, sol: &OpfSolution) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..model.condensers.len()).filter(|&c| model.condensers[c].active).collect();
    idx.sort_by(|&a, &b| {
        sol.condenser_q_mvar[a]
            .abs()
            .total_cmp(&sol.condenser_q_mvar[b].abs())
            .then(model.condensers[a].bus.cmp(&model.condensers[b].bus))
    });
    idx
}

fn try_prune(model: &mut GridModel, chosen: &[usize], op: &OperatingPoint, pf: &PowerflowConfig) -> Result<Option<OpfSolution>> {
    for &c in chosen {
        model.condensers[c].active = false;
    }
    let sol = match ac_opf_surrogate(model, op, pf) {
        Ok(s) if s.feasible() => Some(s),
        Ok(_) | Err(GridError::Infeasible(_)) => None,
        Err(e) => return Err(e),
    };
    if sol.is_none() {
        for &c in chosen {
            model.condensers[c].active = true;
        }
    }
    Ok(sol)
}

/// Seeds a condenser at every bus and switches them off in batches while
/// the operating point stays AC feasible. Infeasible batches are rolled
/// back and retried at half the size, down to single condensers.
pub fn place_and_prune(model: &mut GridModel, op: &OperatingPoint, cfg: &ReactiveConfig, pf: &PowerflowConfig) -> Result<(OpfSolution, Vec<ReactiveIteration>)> {
    cfg.validate()?;
    let n = model.n_buses();
    model.condensers = (0..n).map(|bus| Condenser { bus, qmax_mvar: cfg.condenser_mvar, active: true }).collect();
    let mut sol = ac_opf_surrogate(model, op, pf)?;
    if !sol.feasible() {
        return Err(GridError::Infeasible(format!(
            "AC infeasible with a condenser at every bus: {}",
            serde_json::to_string(&sol.violations).expect("serializable")
        )));
    }
    let mut trace = Vec::new();
    let stop = cfg.coverage_stop * n as f64;
    let mut iter = 0;
    'outer: while (active_count(model) as f64) >= stop {
        iter += 1;
        let active = active_count(model);
        let mut frac = cfg.prune_frac;
        let order = prune_order(model, &sol);
        let mut size = ((frac * active as f64).round() as usize).max(1);
        loop {
            if size > 1 {
                let chosen = &order[..size.min(order.len())];
                if let Some(s) = try_prune(model, chosen, op, pf)? {
                    trace.push(ReactiveIteration { iter, active_condensers: active_count(model), feasible: true, pruned: bus_ids(model, chosen), rolled_back: false });
                    sol = s;
                    continue 'outer;
                }
                trace.push(ReactiveIteration { iter, active_condensers: active, feasible: false, pruned: bus_ids(model, chosen), rolled_back: true });
                frac /= 2.0;
                size = ((frac * active as f64).round() as usize).max(1);
                continue;
            }
            for &c in &order {
                if let Some(s) = try_prune(model, &[c], op, pf)? {
                    trace.push(ReactiveIteration { iter, active_condensers: active_count(model), feasible: true, pruned: bus_ids(model, &[c]), rolled_back: false });
                    sol = s;
                    continue 'outer;
                }
            }
            log::warn!("no condenser can be removed while staying feasible; stopping at {active} active");
            trace.push(ReactiveIteration { iter, active_condensers: active, feasible: false, pruned: vec![], rolled_back: true });
            break 'outer;
        }
    }
    Ok((sol, trace))
}

fn bus_ids(model: &GridModel, cond: &[usize]) -> Vec<u32> {
    cond.iter().map(|&c| model.buses[model.condensers[c].bus].id).collect()
}

/// Doubles line limits, places and prunes condensers at the given operating
/// point, then restores lightly loaded lines. Inactive condensers are dropped.
pub fn run_reactive(model: &GridModel, op: &OperatingPoint, cfg: &ReactiveConfig, pf: &PowerflowConfig) -> Result<(GridModel, ReactiveTrace, OpfSolution)> {
    let mut model = model.clone();
    double_limits(&mut model);
    let (sol, iterations) = place_and_prune(&mut model, op, cfg, pf)?;
    restore_limits(&mut model, &sol.loading, cfg.restore_threshold);
    model.condensers.retain(|c| c.active);
    let doubled_lines = model.lines().filter(|(_, b)| b.doubled).count();
    let trace = ReactiveTrace {
        iterations,
        final_active: model.condensers.len(),
        n_buses: model.n_buses(),
        doubled_lines,
        restored_lines: model.n_lines() - doubled_lines,
    };
    let final_sol = ac_opf_surrogate(&model, op, pf)?;
    Ok((model, trace, final_sol))
}
