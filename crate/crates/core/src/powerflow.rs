//! DC and AC power flow, DC optimal power flow, and an AC feasibility check
//! built on the DC dispatch.

use gridsynth_solver::{solve_lp, LinearProgram, LuFactor, Sense, SolverError, SparseMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assignment::CostKind;
use crate::error::{GridError, Result};
use crate::model::{Generator, GridModel};
use crate::scenarios::InjectionScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerflowConfig {
    pub pwl_segments: usize,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
    pub vset_pu: f64,
    pub tolerance_pu: f64,
    pub max_iterations: usize,
    pub max_outer: usize,
    pub binding_threshold: f64,
}

impl Default for PowerflowConfig {
    fn default() -> Self {
        Self {
            pwl_segments: 3,
            vmin_pu: 0.95,
            vmax_pu: 1.05,
            vset_pu: 1.0,
            tolerance_pu: 1e-8,
            max_iterations: 30,
            max_outer: 10,
            binding_threshold: 0.9999,
        }
    }
}

impl PowerflowConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pwl_segments >= 1
            && 0.0 < self.vmin_pu
            && self.vmin_pu <= self.vset_pu
            && self.vset_pu <= self.vmax_pu
            && self.tolerance_pu > 0.0
            && self.max_iterations >= 1
            && self.max_outer >= 1
            && (0.0..=1.0).contains(&self.binding_threshold);
        if ok {
            Ok(())
        } else {
            Err(GridError::Validation("invalid power flow settings".into()))
        }
    }
}

/// Demand, availability and commitment for one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub bus_load_mw: Vec<f64>,
    /// Available capacity per generator.
    pub caps: Vec<f64>,
    pub committed: Vec<bool>,
}

impl OperatingPoint {
    pub fn from_injection(inj: &InjectionScenario) -> Self {
        Self {
            bus_load_mw: inj.scenario.bus_load_mw.clone(),
            caps: inj.scenario.renewable_caps.clone(),
            committed: inj.dispatch.committed.clone(),
        }
    }

    fn limits(&self, g: usize, gen: &Generator) -> (f64, f64) {
        let hi = self.caps[g].min(gen.pmax_mw).max(0.0);
        (gen.pmin_mw.min(hi).max(0.0), hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub theta_rad: Vec<f64>,
    pub v_pu: Vec<f64>,
    /// Flow leaving the from-bus.
    pub p_from_mw: Vec<f64>,
    pub q_from_mvar: Vec<f64>,
    /// Flow leaving the to-bus.
    pub p_to_mw: Vec<f64>,
    pub q_to_mvar: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub slack: usize,
}

impl PfSolution {
    /// Apparent power at the more heavily loaded end of each branch.
    pub fn mva(&self) -> Vec<f64> {
        (0..self.p_from_mw.len())
            .map(|k| self.p_from_mw[k].hypot(self.q_from_mvar[k]).max(self.p_to_mw[k].hypot(self.q_to_mvar[k])))
            .collect()
    }

    pub fn losses_mw(&self) -> f64 {
        self.p_from_mw.iter().zip(&self.p_to_mw).map(|(a, b)| a + b).sum()
    }
}

/// Bus of the largest committed generator; the largest generator when none
/// is committed; bus 0 without generators.
pub fn slack_bus(model: &GridModel, committed: &[bool]) -> usize {
    let pick = |only_committed: bool| {
        (0..model.generators.len())
            .filter(|&g| !only_committed || committed.get(g).copied().unwrap_or(false))
            .fold(None, |best: Option<usize>, g| match best {
                Some(b) if model.generators[b].pmax_mw >= model.generators[g].pmax_mw => Some(b),
                _ => Some(g),
            })
    };
    pick(true).or_else(|| pick(false)).map_or(0, |g| model.generators[g].bus)
}

/// Net injection per bus in MW.
pub fn bus_injections(model: &GridModel, pg_mw: &[f64], bus_load_mw: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = bus_load_mw.iter().map(|d| -d).collect();
    for (g, &v) in model.generators.iter().zip(pg_mw) {
        p[g.bus] += v;
    }
    p
}

/// Factorized reduced susceptance matrix for repeated DC solves.
pub struct DcNetwork {
    slack: usize,
    pos: Vec<Option<usize>>,
    lu: Option<LuFactor>,
}

impl DcNetwork {
    pub fn new(model: &GridModel, slack: usize) -> Result<Self> {
        let n = model.n_buses();
        if slack >= n {
            return Err(GridError::Validation(format!("slack bus index {slack} out of range")));
        }
        let mut pos = vec![None; n];
        let mut order = Vec::with_capacity(n - 1);
        for k in (0..n).filter(|&k| k != slack) {
            pos[k] = Some(order.len());
            order.push(k);
        }
        let mut trip = Vec::new();
        for br in &model.branches {
            if !(br.x_pu > 0.0) {
                return Err(GridError::Validation(format!("branch {} has no reactance", br.id)));
            }
            let b = 1.0 / br.x_pu;
            let (i, j) = (pos[br.from], pos[br.to]);
            if let Some(i) = i {
                trip.push((i, i, b));
            }
            if let Some(j) = j {
                trip.push((j, j, b));
            }
            if let (Some(i), Some(j)) = (i, j) {
                trip.push((i, j, -b));
                trip.push((j, i, -b));
            }
        }
        let lu = if order.is_empty() {
            None
        } else {
            let m = SparseMatrix::from_triplets(order.len(), order.len(), trip)?;
            Some(LuFactor::new(&m).map_err(|e| match e {
                SolverError::Singular { pivot } => GridError::Numerical(format!(
                    "singular network matrix: bus {} is islanded",
                    order.get(pivot).map_or(0, |&k| model.buses[k].id)
                )),
                other => other.into(),
            })?)
        };
        Ok(Self { slack, pos, lu })
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Angles and flows for the given net injections; the slack absorbs any imbalance.
    pub fn solve(&self, model: &GridModel, p_inj_mw: &[f64]) -> PfSolution {
        let n = model.n_buses();
        let mut theta = vec![0.0; n];
        if let Some(lu) = &self.lu {
            let rhs: Vec<f64> = (0..n).filter(|&k| k != self.slack).map(|k| p_inj_mw[k] / model.base_mva).collect();
            let x = lu.solve(&rhs);
            for k in 0..n {
                if let Some(r) = self.pos[k] {
                    theta[k] = x[r];
                }
            }
        }
        let p_from: Vec<f64> = model
            .branches
            .iter()
            .map(|br| model.base_mva * (theta[br.from] - theta[br.to]) / br.x_pu)
            .collect();
        let nb = p_from.len();
        PfSolution {
            theta_rad: theta,
            v_pu: vec![1.0; n],
            p_to_mw: p_from.iter().map(|p| -p).collect(),
            p_from_mw: p_from,
            q_from_mvar: vec![0.0; nb],
            q_to_mvar: vec![0.0; nb],
            converged: true,
            iterations: 1,
            slack: self.slack,
        }
    }
}

pub fn dc_powerflow(model: &GridModel, p_inj_mw: &[f64], slack: usize) -> Result<PfSolution> {
    Ok(DcNetwork::new(model, slack)?.solve(model, p_inj_mw))
}

/// Piecewise-linear cost of `p` with `segments` equal-width pieces over
/// `[lo, hi]`; linear and zero curves are exact.
pub fn pwl_cost(gen: &Generator, lo: f64, hi: f64, p: f64, segments: usize) -> f64 {
    match gen.cost.kind {
        CostKind::Zero => 0.0,
        CostKind::Linear => gen.cost.eval(p),
        CostKind::Quadratic => {
            let mut rest = (p - lo).max(0.0);
            let mut total = gen.cost.eval(lo);
            let mut last = gen.cost.marginal(lo);
            for (slope, width) in pwl_segments(gen, lo, hi, segments) {
                let take = rest.min(width);
                total += slope * take;
                rest -= take;
                last = slope;
            }
            total + last * rest
        }
    }
}

/// `(slope, width)` of each cost segment over `[lo, hi]`.
fn pwl_segments(gen: &Generator, lo: f64, hi: f64, segments: usize) -> Vec<(f64, f64)> {
    if !(hi > lo) {
        return Vec::new();
    }
    match gen.cost.kind {
        CostKind::Quadratic => {
            let w = (hi - lo) / segments as f64;
            (0..segments)
                .map(|s| {
                    let a = lo + w * s as f64;
                    ((gen.cost.eval(a + w) - gen.cost.eval(a)) / w, w)
                })
                .collect()
        }
        _ => vec![(gen.cost.c1, hi - lo)],
    }
}

/// Total piecewise-linear cost of a dispatch.
pub fn dispatch_cost(model: &GridModel, op: &OperatingPoint, pg_mw: &[f64], segments: usize) -> f64 {
    model
        .generators
        .iter()
        .enumerate()
        .filter(|(g, _)| op.committed[*g])
        .map(|(g, gen)| {
            let (lo, hi) = op.limits(g, gen);
            pwl_cost(gen, lo, hi, pg_mw[g], segments)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Violation {
    Voltage { bus: u32, v_pu: f64 },
    Thermal { branch: String, loading: f64 },
    SlackReactive { bus: u32, q_mvar: f64, qmin_mvar: f64, qmax_mvar: f64 },
    SlackActive { bus: u32, p_mw: f64, pmin_mw: f64, pmax_mw: f64 },
    Diverged { bus: u32, mismatch_pu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub pg_mw: Vec<f64>,
    pub qg_mvar: Vec<f64>,
    pub condenser_q_mvar: Vec<f64>,
    /// Piecewise-linear generation cost ($/h).
    pub objective: f64,
    pub theta_rad: Vec<f64>,
    pub v_pu: Vec<f64>,
    pub flow_mw: Vec<f64>,
    pub mva: Vec<f64>,
    /// Branch MVA over rating.
    pub loading: Vec<f64>,
    pub binding_lines: usize,
    pub losses_mw: f64,
    /// `|primal − dual|` objective gap of the LP certificate.
    pub dual_gap: f64,
    pub violations: Vec<Violation>,
}

impl OpfSolution {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn total_pg(&self) -> f64 {
        self.pg_mw.iter().sum()
    }

    pub fn max_loading(&self) -> f64 {
        self.loading.iter().copied().fold(0.0, f64::max)
    }
}

fn count_binding(model: &GridModel, loading: &[f64], threshold: f64) -> usize {
    model.lines().filter(|(k, _)| loading[*k] >= threshold).count()
}

struct DcOpfLp {
    lp: LinearProgram,
    theta: Vec<usize>,
    segs: Vec<Vec<usize>>,
    lo: Vec<f64>,
    flow: Vec<usize>,
    balance_rows: Vec<usize>,
}

fn build_dc_opf(model: &GridModel, op: &OperatingPoint, limits_mw: &[f64], cfg: &PowerflowConfig, slack: usize) -> DcOpfLp {
    let n = model.n_buses();
    let mut lp = LinearProgram::new();
    let theta: Vec<usize> = (0..n)
        .map(|k| if k == slack { lp.add_var(0.0, 0.0, 0.0) } else { lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY) })
        .collect();
    let mut segs = Vec::with_capacity(model.generators.len());
    let mut lo = vec![0.0; model.generators.len()];
    for (g, gen) in model.generators.iter().enumerate() {
        if !op.committed[g] {
            segs.push(Vec::new());
            continue;
        }
        let (l, h) = op.limits(g, gen);
        lo[g] = l;
        segs.push(pwl_segments(gen, l, h, cfg.pwl_segments).into_iter().map(|(c, w)| lp.add_var(c, 0.0, w)).collect());
    }
    let flow: Vec<usize> = model
        .branches
        .iter()
        .zip(limits_mw)
        .map(|(br, &lim)| {
            let f = lp.add_var(0.0, -lim, lim);
            let b = model.base_mva / br.x_pu;
            lp.add_constraint(vec![(f, 1.0), (theta[br.from], -b), (theta[br.to], b)], Sense::Eq, 0.0);
            f
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = op.bus_load_mw.clone();
    for (g, gen) in model.generators.iter().enumerate() {
        rows[gen.bus].extend(segs[g].iter().map(|&v| (v, 1.0)));
        rhs[gen.bus] -= lo[g];
    }
    for (br, &f) in model.branches.iter().zip(&flow) {
        rows[br.from].push((f, -1.0));
        rows[br.to].push((f, 1.0));
    }
    let balance_rows = rows.into_iter().zip(rhs).map(|(r, b)| lp.add_constraint(r, Sense::Eq, b)).collect();
    DcOpfLp { lp, theta, segs, lo, flow, balance_rows }
}

/// Names the largest violation in an elastic copy of an infeasible DC OPF.
/// Branch relaxation is cheaper than nodal imbalance.
fn diagnose_dc_infeasibility(model: &GridModel, built: &DcOpfLp) -> String {
    let mut lp = built.lp.clone();
    for &f in &built.flow {
        lp.objective[f] = 0.0;
    }
    let mut over = Vec::new();
    for (k, &f) in built.flow.iter().enumerate() {
        let lim = built.lp.upper[f];
        lp.lower[f] = f64::NEG_INFINITY;
        lp.upper[f] = f64::INFINITY;
        let s_hi = lp.add_var(1.0, 0.0, f64::INFINITY);
        let s_lo = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_constraint(vec![(f, 1.0), (s_hi, -1.0)], Sense::Le, lim);
        lp.add_constraint(vec![(f, 1.0), (s_lo, 1.0)], Sense::Ge, -lim);
        over.push((k, s_hi, s_lo));
    }
    let mut short = Vec::new();
    for (k, &row) in built.balance_rows.iter().enumerate() {
        let up = lp.add_var(1e3, 0.0, f64::INFINITY);
        let dn = lp.add_var(1e3, 0.0, f64::INFINITY);
        lp.constraints[row].coeffs.push((up, 1.0));
        lp.constraints[row].coeffs.push((dn, -1.0));
        short.push((k, up, dn));
    }
    let Ok(sol) = solve_lp(&lp) else {
        return "DC OPF is infeasible".into();
    };
    let worst_branch = over
        .iter()
        .map(|&(k, a, b)| (k, sol.x[a] + sol.x[b]))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let worst_bus = short
        .iter()
        .map(|&(k, a, b)| (k, sol.x[a] - sol.x[b]))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
    match (worst_branch, worst_bus) {
        (Some((k, v)), Some((_, w))) if v >= w.abs() && v > 0.0 => {
            format!("DC OPF infeasible: branch {} exceeds its limit by {v:.3} MW", model.branches[k].id)
        }
        (_, Some((k, w))) if w != 0.0 => format!(
            "DC OPF infeasible: bus {} {} {:.3} MW",
            model.buses[k].id,
            if w > 0.0 { "is short by" } else { "has surplus" },
            w.abs()
        ),
        _ => "DC OPF is infeasible".into(),
    }
}

/// DC OPF with branch limits at their ratings.
pub fn dc_opf(model: &GridModel, op: &OperatingPoint, cfg: &PowerflowConfig) -> Result<OpfSolution> {
    let limits: Vec<f64> = model.branches.iter().map(|b| b.rate_mva).collect();
    dc_opf_with_limits(model, op, &limits, cfg)
}

/// DC OPF with explicit per-branch MW limits; loadings are still reported
/// against the branch ratings.
pub fn dc_opf_with_limits(model: &GridModel, op: &OperatingPoint, limits_mw: &[f64], cfg: &PowerflowConfig) -> Result<OpfSolution> {
    cfg.validate()?;
    let slack = slack_bus(model, &op.committed);
    let built = build_dc_opf(model, op, limits_mw, cfg, slack);
    let sol = match solve_lp(&built.lp) {
        Ok(s) => s,
        Err(SolverError::Infeasible) => return Err(GridError::Infeasible(diagnose_dc_infeasibility(model, &built))),
        Err(e) => return Err(e.into()),
    };
    let pg_mw: Vec<f64> = (0..model.generators.len())
        .map(|g| if op.committed[g] { built.lo[g] + built.segs[g].iter().map(|&v| sol.x[v]).sum::<f64>() } else { 0.0 })
        .collect();
    let flow_mw: Vec<f64> = built.flow.iter().map(|&f| sol.x[f]).collect();
    let mva: Vec<f64> = flow_mw.iter().map(|f| f.abs()).collect();
    let loading: Vec<f64> = mva.iter().zip(&model.branches).map(|(m, br)| m / br.rate_mva).collect();
    let fixed: f64 = model
        .generators
        .iter()
        .enumerate()
        .filter(|(g, _)| op.committed[*g])
        .map(|(g, gen)| if gen.cost.kind == CostKind::Zero { 0.0 } else { gen.cost.eval(built.lo[g]) })
        .sum();
    Ok(OpfSolution {
        qg_mvar: vec![0.0; pg_mw.len()],
        condenser_q_mvar: vec![0.0; model.condensers.len()],
        objective: sol.objective + fixed,
        theta_rad: built.theta.iter().map(|&t| sol.x[t]).collect(),
        v_pu: vec![1.0; model.n_buses()],
        binding_lines: count_binding(model, &loading, cfg.binding_threshold),
        flow_mw,
        mva,
        loading,
        losses_mw: 0.0,
        dual_gap: (sol.objective - sol.dual_objective).abs(),
        violations: Vec::new(),
        pg_mw,
    })
}

struct Ybus {
    diag: Vec<Complex64>,
    adj: Vec<Vec<(usize, Complex64)>>,
}

fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(r, x).inv()
}

fn build_ybus(model: &GridModel) -> Ybus {
    let n = model.n_buses();
    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    let mut adj = vec![Vec::new(); n];
    for br in &model.branches {
        let ys = series_admittance(br.r_pu, br.x_pu);
        let sh = Complex64::new(0.0, br.b_pu / 2.0);
        diag[br.from] += ys + sh;
        diag[br.to] += ys + sh;
        adj[br.from].push((br.to, -ys));
        adj[br.to].push((br.from, -ys));
    }
    Ybus { diag, adj }
}

fn injections(y: &Ybus, v: &[f64], th: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = v[i] * v[i] * y.diag[i].re;
        let mut qi = -v[i] * v[i] * y.diag[i].im;
        for &(j, yij) in &y.adj[i] {
            let (s, c) = (th[i] - th[j]).sin_cos();
            pi += v[i] * v[j] * (yij.re * c + yij.im * s);
            qi += v[i] * v[j] * (yij.re * s - yij.im * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
    (p, q)
}

/// Active and reactive injections at every bus for the given voltages,
/// computed directly from branch admittances.
pub fn bus_power(model: &GridModel, v_pu: &[f64], theta_rad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    injections(&build_ybus(model), v_pu, theta_rad)
}

/// Branch end flows in MW/MVAr for the given voltages.
pub fn branch_flows(model: &GridModel, v_pu: &[f64], theta_rad: &[f64]) -> [Vec<f64>; 4] {
    let nb = model.branches.len();
    let mut out = [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]];
    for (k, br) in model.branches.iter().enumerate() {
        let vi = Complex64::from_polar(v_pu[br.from], theta_rad[br.from]);
        let vj = Complex64::from_polar(v_pu[br.to], theta_rad[br.to]);
        let ys = series_admittance(br.r_pu, br.x_pu);
        let sh = Complex64::new(0.0, br.b_pu / 2.0);
        let s_from = vi * ((vi - vj) * ys + vi * sh).conj() * model.base_mva;
        let s_to = vj * ((vj - vi) * ys + vj * sh).conj() * model.base_mva;
        out[0][k] = s_from.re;
        out[1][k] = s_from.im;
        out[2][k] = s_to.re;
        out[3][k] = s_to.im;
    }
    out
}

/// Dispatch handed to the AC power flow.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSetpoint {
    pub pg_mw: Vec<f64>,
    pub committed: Vec<bool>,
    pub bus_load_mw: Vec<f64>,
    pub slack: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcSolution {
    pub pf: PfSolution,
    /// Scheduled outputs with the slack bus units adjusted to the solution.
    pub pg_mw: Vec<f64>,
    pub qg_mvar: Vec<f64>,
    pub condenser_q_mvar: Vec<f64>,
    /// Generation at each bus (MW, MVAr).
    pub bus_pg_mw: Vec<f64>,
    pub bus_qg_mvar: Vec<f64>,
    /// Reactive limits of the devices at each bus.
    pub bus_qmin_mvar: Vec<f64>,
    pub bus_qmax_mvar: Vec<f64>,
    /// Buses switched from voltage control to fixed reactive output.
    pub switched: Vec<usize>,
    pub max_mismatch_pu: f64,
    pub worst_bus: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BusType {
    Slack,
    Pv,
    Pq,
}

fn reactive_ranges(model: &GridModel, committed: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let n = model.n_buses();
    let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
    for (g, gen) in model.generators.iter().enumerate() {
        if committed[g] {
            lo[gen.bus] += gen.qmin_mvar;
            hi[gen.bus] += gen.qmax_mvar;
        }
    }
    for c in model.active_condensers() {
        lo[c.bus] += c.qmin_mvar();
        hi[c.bus] += c.qmax_mvar;
    }
    (lo, hi)
}

struct Newton {
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
    worst_bus: usize,
}

fn newton(y: &Ybus, types: &[BusType], p_sch: &[f64], q_sch: &[f64], v: &mut [f64], th: &mut [f64], cfg: &PowerflowConfig) -> Result<Newton> {
    let n = v.len();
    let mut a_idx = vec![usize::MAX; n];
    let mut b_idx = vec![usize::MAX; n];
    let mut na = 0;
    for k in 0..n {
        if types[k] != BusType::Slack {
            a_idx[k] = na;
            na += 1;
        }
    }
    let mut nv = 0;
    for k in 0..n {
        if types[k] == BusType::Pq {
            b_idx[k] = na + nv;
            nv += 1;
        }
    }
    let dim = na + nv;
    let mut it = 0;
    loop {
        let (p, q) = injections(y, v, th);
        let mut mism = vec![0.0; dim];
        let (mut worst, mut worst_bus) = (0.0f64, 0);
        for k in 0..n {
            if a_idx[k] != usize::MAX {
                mism[a_idx[k]] = p_sch[k] - p[k];
                if mism[a_idx[k]].abs() > worst {
                    worst = mism[a_idx[k]].abs();
                    worst_bus = k;
                }
            }
            if b_idx[k] != usize::MAX {
                mism[b_idx[k]] = q_sch[k] - q[k];
                if mism[b_idx[k]].abs() > worst {
                    worst = mism[b_idx[k]].abs();
                    worst_bus = k;
                }
            }
        }
        if !worst.is_finite() {
            return Ok(Newton { converged: false, iterations: it, max_mismatch: f64::INFINITY, worst_bus });
        }
        if worst <= cfg.tolerance_pu {
            return Ok(Newton { converged: true, iterations: it, max_mismatch: worst, worst_bus });
        }
        if it >= cfg.max_iterations {
            return Ok(Newton { converged: false, iterations: it, max_mismatch: worst, worst_bus });
        }
        let mut trip = Vec::new();
        for i in 0..n {
            let (ai, bi) = (a_idx[i], b_idx[i]);
            if ai == usize::MAX && bi == usize::MAX {
                continue;
            }
            let (gii, bii) = (y.diag[i].re, y.diag[i].im);
            if ai != usize::MAX {
                trip.push((ai, ai, -q[i] - bii * v[i] * v[i]));
                if b_idx[i] != usize::MAX {
                    trip.push((ai, b_idx[i], p[i] / v[i] + gii * v[i]));
                }
            }
            if bi != usize::MAX {
                trip.push((bi, ai, p[i] - gii * v[i] * v[i]));
                trip.push((bi, bi, q[i] / v[i] - bii * v[i]));
            }
            for &(j, yij) in &y.adj[i] {
                let (s, c) = (th[i] - th[j]).sin_cos();
                let (g, b) = (yij.re, yij.im);
                let gs_bc = g * s - b * c;
                let gc_bs = g * c + b * s;
                if ai != usize::MAX {
                    if a_idx[j] != usize::MAX {
                        trip.push((ai, a_idx[j], v[i] * v[j] * gs_bc));
                    }
                    if b_idx[j] != usize::MAX {
                        trip.push((ai, b_idx[j], v[i] * gc_bs));
                    }
                }
                if bi != usize::MAX {
                    if a_idx[j] != usize::MAX {
                        trip.push((bi, a_idx[j], -v[i] * v[j] * gc_bs));
                    }
                    if b_idx[j] != usize::MAX {
                        trip.push((bi, b_idx[j], v[i] * gs_bc));
                    }
                }
            }
        }
        let jac = SparseMatrix::from_triplets(dim, dim, trip)?;
        let dx = match LuFactor::new(&jac) {
            Ok(lu) => lu.solve(&mism),
            Err(SolverError::Singular { .. }) => {
                return Ok(Newton { converged: false, iterations: it, max_mismatch: worst, worst_bus });
            }
            Err(e) => return Err(e.into()),
        };
        for k in 0..n {
            if a_idx[k] != usize::MAX {
                th[k] += dx[a_idx[k]];
            }
            if b_idx[k] != usize::MAX {
                v[k] += dx[b_idx[k]];
            }
        }
        it += 1;
    }
}

/// Newton power flow in polar form with reactive-limit switching of
/// voltage-controlled buses. Divergence is reported through
/// `pf.converged`, `max_mismatch_pu` and `worst_bus`.
pub fn ac_powerflow(model: &GridModel, sp: &AcSetpoint, cfg: &PowerflowConfig) -> Result<AcSolution> {
    cfg.validate()?;
    let n = model.n_buses();
    let base = model.base_mva;
    let y = build_ybus(model);
    let (qlo, qhi) = reactive_ranges(model, &sp.committed);
    let mut types: Vec<BusType> = (0..n)
        .map(|k| if k == sp.slack { BusType::Slack } else if qhi[k] > qlo[k] { BusType::Pv } else { BusType::Pq })
        .collect();
    let p_sch: Vec<f64> = bus_injections(model, &sp.pg_mw, &sp.bus_load_mw).iter().map(|p| p / base).collect();
    let qd: Vec<f64> = sp.bus_load_mw.iter().map(|d| d * model.load_q_ratio / base).collect();
    let mut q_sch: Vec<f64> = qd.iter().map(|q| -q).collect();
    let mut v: Vec<f64> = types.iter().map(|t| if *t == BusType::Pq { 1.0 } else { cfg.vset_pu }).collect();
    let mut th = vec![0.0; n];
    let mut switched = Vec::new();
    let mut total_it = 0;
    let mut nt;
    let mut round = 0;
    loop {
        nt = newton(&y, &types, &p_sch, &q_sch, &mut v, &mut th, cfg)?;
        total_it += nt.iterations;
        if !nt.converged {
            break;
        }
        let (_, q) = injections(&y, &v, &th);
        let mut changed = false;
        for k in 0..n {
            if types[k] != BusType::Pv {
                continue;
            }
            let qg = (q[k] + qd[k]) * base;
            let tol = 1e-9 * (1.0 + qhi[k].abs());
            let limit = if qg > qhi[k] + tol {
                Some(qhi[k])
            } else if qg < qlo[k] - tol {
                Some(qlo[k])
            } else {
                None
            };
            if let Some(l) = limit {
                types[k] = BusType::Pq;
                q_sch[k] = l / base - qd[k];
                switched.push(k);
                changed = true;
            }
        }
        round += 1;
        if !changed || round >= cfg.max_outer {
            break;
        }
    }

    let (p, q) = injections(&y, &v, &th);
    let bus_pg: Vec<f64> = (0..n).map(|k| (p[k] * base) + sp.bus_load_mw[k]).collect();
    let bus_qg: Vec<f64> = (0..n).map(|k| (q[k] + qd[k]) * base).collect();

    let mut pg = sp.pg_mw.clone();
    let slack_units: Vec<usize> = (0..pg.len()).filter(|&g| model.generators[g].bus == sp.slack && sp.committed[g]).collect();
    let lead = slack_units.iter().copied().max_by(|&a, &b| {
        model.generators[a].pmax_mw.total_cmp(&model.generators[b].pmax_mw).then(b.cmp(&a))
    });
    if let Some(lead) = lead {
        let others: f64 = slack_units.iter().filter(|&&g| g != lead).map(|&g| pg[g]).sum();
        pg[lead] = bus_pg[sp.slack] - others;
    }

    let share = |k: usize, lo: f64, hi: f64| -> f64 {
        if qhi[k] > qlo[k] {
            lo + (bus_qg[k] - qlo[k]) / (qhi[k] - qlo[k]) * (hi - lo)
        } else {
            0.0
        }
    };
    let qg: Vec<f64> = model
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| if sp.committed[g] { share(gen.bus, gen.qmin_mvar, gen.qmax_mvar) } else { 0.0 })
        .collect();
    let condenser_q = model
        .condensers
        .iter()
        .map(|c| if c.active { share(c.bus, c.qmin_mvar(), c.qmax_mvar) } else { 0.0 })
        .collect();
    let [pf_, qf, pt, qt] = branch_flows(model, &v, &th);
    Ok(AcSolution {
        pf: PfSolution {
            theta_rad: th,
            v_pu: v,
            p_from_mw: pf_,
            q_from_mvar: qf,
            p_to_mw: pt,
            q_to_mvar: qt,
            converged: nt.converged,
            iterations: total_it,
            slack: sp.slack,
        },
        pg_mw: pg,
        qg_mvar: qg,
        condenser_q_mvar: condenser_q,
        bus_pg_mw: bus_pg,
        bus_qg_mvar: bus_qg,
        bus_qmin_mvar: qlo,
        bus_qmax_mvar: qhi,
        switched,
        max_mismatch_pu: nt.max_mismatch,
        worst_bus: nt.worst_bus,
    })
}

/// Moves `amount` MW onto (positive) or off (negative) committed units in
/// merit order, within `floor` and the units' caps. Returns the unplaced part.
fn redistribute(model: &GridModel, op: &OperatingPoint, pg: &mut [f64], floor: &[f64], mut amount: f64) -> f64 {
    let mut units: Vec<usize> = (0..pg.len()).filter(|&g| op.committed[g]).collect();
    let mc = |g: usize| model.generators[g].cost.marginal(pg[g]);
    units.sort_by(|&a, &b| mc(a).total_cmp(&mc(b)).then(a.cmp(&b)));
    if amount < 0.0 {
        units.reverse();
    }
    for g in units {
        let (_, hi) = op.limits(g, &model.generators[g]);
        if amount > 0.0 {
            let add = amount.min(hi - pg[g]).max(0.0);
            pg[g] += add;
            amount -= add;
        } else if amount < 0.0 {
            let cut = (-amount).min(pg[g] - floor[g]).max(0.0);
            pg[g] -= cut;
            amount += cut;
        }
    }
    amount
}

fn ac_violations(model: &GridModel, op: &OperatingPoint, ac: &AcSolution, cfg: &PowerflowConfig) -> (Vec<Violation>, Vec<f64>) {
    let mut out = Vec::new();
    if !ac.pf.converged {
        out.push(Violation::Diverged { bus: model.buses[ac.worst_bus].id, mismatch_pu: ac.max_mismatch_pu });
        return (out, vec![0.0; model.branches.len()]);
    }
    let vtol = 1e-6;
    for (k, &v) in ac.pf.v_pu.iter().enumerate() {
        if v < cfg.vmin_pu - vtol || v > cfg.vmax_pu + vtol {
            out.push(Violation::Voltage { bus: model.buses[k].id, v_pu: v });
        }
    }
    let loading: Vec<f64> = ac.pf.mva().iter().zip(&model.branches).map(|(m, b)| m / b.rate_mva).collect();
    for (k, &l) in loading.iter().enumerate() {
        if l > 1.0 + 1e-6 {
            out.push(Violation::Thermal { branch: model.branches[k].id.clone(), loading: l });
        }
    }
    let s = ac.pf.slack;
    let qg = ac.bus_qg_mvar[s];
    let qtol = 1e-6 * (1.0 + ac.bus_qmax_mvar[s].abs());
    if qg > ac.bus_qmax_mvar[s] + qtol || qg < ac.bus_qmin_mvar[s] - qtol {
        out.push(Violation::SlackReactive {
            bus: model.buses[s].id,
            q_mvar: qg,
            qmin_mvar: ac.bus_qmin_mvar[s],
            qmax_mvar: ac.bus_qmax_mvar[s],
        });
    }
    let (mut pmin, mut pmax) = (0.0, 0.0);
    for (g, gen) in model.generators.iter().enumerate() {
        if gen.bus == s && op.committed[g] {
            let (lo, hi) = op.limits(g, gen);
            pmin += lo;
            pmax += hi;
        }
    }
    let pg = ac.bus_pg_mw[s];
    if pg > pmax + 1e-6 || pg < pmin - 1e-6 {
        out.push(Violation::SlackActive { bus: model.buses[s].id, p_mw: pg, pmin_mw: pmin, pmax_mw: pmax });
    }
    (out, loading)
}

/// DC OPF dispatch, losses spread over committed units in merit order, then
/// an AC power flow with voltage, thermal and slack-limit checks. Branches
/// over their rating tighten the DC limits for another pass.
pub fn ac_opf_surrogate(model: &GridModel, op: &OperatingPoint, cfg: &PowerflowConfig) -> Result<OpfSolution> {
    cfg.validate()?;
    let mut limits: Vec<f64> = model.branches.iter().map(|b| b.rate_mva).collect();
    let slack = slack_bus(model, &op.committed);
    let mut last: Option<OpfSolution> = None;
    for _ in 0..cfg.max_outer {
        let dc = dc_opf_with_limits(model, op, &limits, cfg)?;
        let floor = dc.pg_mw.clone();
        let mut pg = dc.pg_mw.clone();
        let mut ac = ac_powerflow(model, &AcSetpoint { pg_mw: pg.clone(), committed: op.committed.clone(), bus_load_mw: op.bus_load_mw.clone(), slack }, cfg)?;
        for _ in 0..cfg.max_outer {
            if !ac.pf.converged {
                break;
            }
            let scheduled: f64 = (0..pg.len()).filter(|&g| model.generators[g].bus == slack && op.committed[g]).map(|g| pg[g]).sum();
            // Target slack surplus band: [0, 1e-6] MW.
            let error = ac.bus_pg_mw[slack] - scheduled - 5e-7;
            if error.abs() <= 5e-7 {
                break;
            }
            let before = pg.clone();
            let left = redistribute(model, op, &mut pg, &floor, error);
            if pg == before && left != 0.0 {
                break;
            }
            ac = ac_powerflow(model, &AcSetpoint { pg_mw: pg.clone(), committed: op.committed.clone(), bus_load_mw: op.bus_load_mw.clone(), slack }, cfg)?;
        }
        let (violations, loading) = ac_violations(model, op, &ac, cfg);
        let final_pg = if ac.pf.converged { ac.pg_mw.clone() } else { pg.clone() };
        let over: Vec<usize> = loading.iter().enumerate().filter(|(_, l)| **l > 1.0 + 1e-6).map(|(k, _)| k).collect();
        let only_thermal = violations.iter().all(|v| matches!(v, Violation::Thermal { .. }));
        let sol = OpfSolution {
            objective: dispatch_cost(model, op, &final_pg, cfg.pwl_segments),
            pg_mw: final_pg,
            qg_mvar: ac.qg_mvar.clone(),
            condenser_q_mvar: ac.condenser_q_mvar.clone(),
            theta_rad: ac.pf.theta_rad.clone(),
            v_pu: ac.pf.v_pu.clone(),
            flow_mw: ac.pf.p_from_mw.clone(),
            mva: ac.pf.mva(),
            binding_lines: count_binding(model, &loading, cfg.binding_threshold),
            loading,
            losses_mw: ac.pf.losses_mw(),
            dual_gap: dc.dual_gap,
            violations,
        };
        let done = sol.feasible() || over.is_empty() || !only_thermal;
        last = Some(sol);
        if done {
            break;
        }
        for k in over {
            let l = last.as_ref().expect("set above").loading[k];
            limits[k] = (dc.flow_mw[k].abs() / l * 0.99).min(limits[k]);
        }
    }
    Ok(last.expect("at least one pass"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::NetworkBuilder;

    #[test]
    fn two_bus_dc_example() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 1000.0).build();
        let pf = dc_powerflow(&m, &[100.0, -100.0], 0).unwrap();
        assert!((pf.p_from_mw[0] - 100.0).abs() < 1e-9);
        assert!((pf.theta_rad[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_injection_gives_zero_flows() {
        let m = NetworkBuilder::new(3).branch(0, 1, 0.0, 0.1, 0.0, 100.0).branch(1, 2, 0.0, 0.2, 0.0, 100.0).build();
        let pf = dc_powerflow(&m, &[0.0; 3], 0).unwrap();
        assert!(pf.p_from_mw.iter().chain(&pf.theta_rad).all(|v| *v == 0.0));
    }

    #[test]
    fn islanded_bus_is_named() {
        let m = NetworkBuilder::new(3).branch(0, 1, 0.0, 0.1, 0.0, 100.0).build();
        let e = dc_powerflow(&m, &[0.0; 3], 0).unwrap_err();
        assert!(e.to_string().contains("islanded"), "{e}");
    }

    #[test]
    fn pwl_cost_matches_curve_at_breakpoints() {
        let m = NetworkBuilder::new(1).quadratic_gen(0, 0.0, 90.0, 0.01, 5.0, 2.0).build();
        let g = &m.generators[0];
        for p in [0.0, 30.0, 60.0, 90.0] {
            assert!((pwl_cost(g, 0.0, 90.0, p, 3) - g.cost.eval(p)).abs() < 1e-9);
        }
        assert!(pwl_cost(g, 0.0, 90.0, 45.0, 3) >= g.cost.eval(45.0));
    }

    fn setpoint(m: &GridModel, pg: Vec<f64>) -> AcSetpoint {
        AcSetpoint {
            committed: vec![true; m.generators.len()],
            bus_load_mw: m.bus_peak_demand(),
            slack: slack_bus(m, &vec![true; m.generators.len()]),
            pg_mw: pg,
        }
    }

    #[test]
    fn two_bus_ac_matches_closed_form() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 1000.0).linear_gen(0, 0.0, 500.0, 10.0).load(1, 100.0).build();
        let ac = ac_powerflow(&m, &setpoint(&m, vec![100.0]), &PowerflowConfig::default()).unwrap();
        assert!(ac.pf.converged);
        let th = -(0.2f64).asin() / 2.0;
        assert!((ac.pf.theta_rad[1] - th).abs() < 1e-8);
        assert!((ac.pf.v_pu[1] - th.cos()).abs() < 1e-8);
    }

    #[test]
    fn flat_start_zero_load_converges_immediately() {
        let m = NetworkBuilder::new(3).branch(0, 1, 0.01, 0.1, 0.0, 100.0).branch(1, 2, 0.01, 0.1, 0.0, 100.0).linear_gen(0, 0.0, 50.0, 1.0).build();
        let ac = ac_powerflow(&m, &setpoint(&m, vec![0.0]), &PowerflowConfig::default()).unwrap();
        assert!(ac.pf.converged && ac.pf.iterations <= 2);
        assert!(ac.pf.v_pu.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(ac.pf.p_from_mw.iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn congested_two_bus_opf() {
        let m = NetworkBuilder::new(2)
            .branch(0, 1, 0.0, 0.1, 0.0, 60.0)
            .linear_gen(0, 0.0, 200.0, 10.0)
            .linear_gen(1, 0.0, 200.0, 30.0)
            .load(1, 100.0)
            .build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![200.0; 2], committed: vec![true; 2] };
        let s = dc_opf(&m, &op, &PowerflowConfig::default()).unwrap();
        assert!((s.pg_mw[0] - 60.0).abs() < 1e-7 && (s.pg_mw[1] - 40.0).abs() < 1e-7);
        assert_eq!(s.binding_lines, 1);
        assert!((s.objective - (600.0 + 1200.0)).abs() < 1e-6);
        assert!(s.dual_gap < 1e-6);
    }

    #[test]
    fn objective_counts_output_below_pmin() {
        let m = NetworkBuilder::new(1).linear_gen(0, 50.0, 200.0, 20.0).quadratic_gen(0, 10.0, 100.0, 0.01, 5.0, 7.0).load(0, 80.0).build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![200.0, 100.0], committed: vec![true; 2] };
        let s = dc_opf(&m, &op, &PowerflowConfig::default()).unwrap();
        let expect = dispatch_cost(&m, &op, &s.pg_mw, 3);
        assert!((s.objective - expect).abs() < 1e-6, "{} vs {expect}", s.objective);
        assert!(s.objective >= 20.0 * 50.0);
    }

    #[test]
    fn infeasible_opf_names_the_branch() {
        let m = NetworkBuilder::new(2).branch(0, 1, 0.0, 0.1, 0.0, 60.0).linear_gen(0, 0.0, 200.0, 10.0).load(1, 100.0).build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![200.0], committed: vec![true] };
        let e = dc_opf(&m, &op, &PowerflowConfig::default()).unwrap_err();
        assert!(matches!(e, GridError::Infeasible(_)));
        assert!(e.to_string().contains("L1"), "{e}");
    }

    #[test]
    fn lossless_surrogate_keeps_dc_dispatch() {
        let m = NetworkBuilder::new(2)
            .branch(0, 1, 0.0, 0.05, 0.0, 300.0)
            .linear_gen(0, 0.0, 200.0, 10.0)
            .linear_gen(1, 0.0, 200.0, 30.0)
            .load(1, 100.0)
            .build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![200.0; 2], committed: vec![true; 2] };
        let cfg = PowerflowConfig::default();
        let dc = dc_opf(&m, &op, &cfg).unwrap();
        let ac = ac_opf_surrogate(&m, &op, &cfg).unwrap();
        assert!(ac.feasible(), "{:?}", ac.violations);
        assert_eq!(ac.pg_mw[1], dc.pg_mw[1]);
        assert!((ac.pg_mw[0] - dc.pg_mw[0]).abs() < 1e-6);
    }

    #[test]
    fn lossy_surrogate_generates_more() {
        let m = NetworkBuilder::new(2)
            .branch(0, 1, 0.01, 0.05, 0.02, 300.0)
            .linear_gen(0, 0.0, 200.0, 10.0)
            .linear_gen(1, 0.0, 200.0, 30.0)
            .load(1, 100.0)
            .build();
        let op = OperatingPoint { bus_load_mw: m.bus_peak_demand(), caps: vec![200.0; 2], committed: vec![true; 2] };
        let cfg = PowerflowConfig::default();
        let dc = dc_opf(&m, &op, &cfg).unwrap();
        let ac = ac_opf_surrogate(&m, &op, &cfg).unwrap();
        assert!(ac.feasible(), "{:?}", ac.violations);
        assert!(ac.losses_mw > 0.0);
        assert!((ac.total_pg() - 100.0 - ac.losses_mw).abs() < 1e-6);
        assert!(ac.objective >= dc.objective);
    }
}
