//! The evolving grid artifact shared by all pipeline stages.

use serde::{Deserialize, Serialize};

use crate::assignment::CostCurve;
use crate::error::{GridError, Result};
use crate::geodata::{FuelType, GeoPoint, LinePath};

/// System power base in MVA.
pub const BASE_MVA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Substation,
    Added,
    VoltageSplit,
}

impl BusKind {
    pub fn code(self) -> u8 {
        match self {
            BusKind::Substation => 1,
            BusKind::Added => 2,
            BusKind::VoltageSplit => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(BusKind::Substation),
            2 => Some(BusKind::Added),
            3 => Some(BusKind::VoltageSplit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub voltage_kv: f64,
    pub kind: BusKind,
    pub location: GeoPoint,
    /// Source substation id for `Substation` buses.
    pub origin: Option<String>,
    /// Id of the bus this one was split from (voltage-split buses only).
    pub group: Option<u32>,
}

/// Position of a line in its voltage's conductor catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineState {
    pub conductor: usize,
    pub circuits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BranchKind {
    Line { path: LinePath },
    Transformer { kv_hi: f64, kv_lo: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub kind: BranchKind,
    pub r_pu: f64,
    pub x_pu: f64,
    pub b_pu: f64,
    pub rate_mva: f64,
    /// Conductor configuration; lines only, set once parameters are assigned.
    pub state: Option<LineState>,
    /// Limit temporarily or permanently doubled (ACSS reconductoring).
    pub doubled: bool,
    /// Pre-doubling rating while `doubled` is set.
    pub original_rate_mva: Option<f64>,
}

impl Branch {
    pub fn line(id: impl Into<String>, from: usize, to: usize, path: LinePath) -> Self {
        Self {
            id: id.into(),
            from,
            to,
            kind: BranchKind::Line { path },
            r_pu: 0.0,
            x_pu: 0.0,
            b_pu: 0.0,
            rate_mva: 0.0,
            state: None,
            doubled: false,
            original_rate_mva: None,
        }
    }

    pub fn transformer(id: impl Into<String>, from: usize, to: usize, kv_hi: f64, kv_lo: f64) -> Self {
        Self {
            id: id.into(),
            from,
            to,
            kind: BranchKind::Transformer { kv_hi, kv_lo },
            r_pu: 0.0,
            x_pu: 0.0,
            b_pu: 0.0,
            rate_mva: 0.0,
            state: None,
            doubled: false,
            original_rate_mva: None,
        }
    }

    pub fn is_line(&self) -> bool {
        matches!(self.kind, BranchKind::Line { .. })
    }

    pub fn path(&self) -> Option<&LinePath> {
        match &self.kind {
            BranchKind::Line { path } => Some(path),
            BranchKind::Transformer { .. } => None,
        }
    }

    pub fn length_miles(&self) -> f64 {
        self.path().map_or(0.0, LinePath::length_miles)
    }

    pub fn voltage_kv(&self) -> f64 {
        match &self.kind {
            BranchKind::Line { path } => path.voltage_kv,
            BranchKind::Transformer { kv_hi, .. } => *kv_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    pub fuel: FuelType,
    pub location: GeoPoint,
    pub pmax_mw: f64,
    pub pmin_mw: f64,
    pub qmax_mvar: f64,
    pub qmin_mvar: f64,
    pub power_factor: f64,
    pub cost: CostCurve,
    pub plant_code: Option<String>,
    pub unit_id: Option<String>,
}

impl Generator {
    pub fn is_renewable(&self) -> bool {
        self.fuel.is_renewable()
    }

    pub fn scalable_cap(&self) -> bool {
        self.fuel.is_scalable()
    }
}

/// Synchronous condenser: a zero-P reactive device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condenser {
    pub bus: usize,
    pub qmax_mvar: f64,
    pub active: bool,
}

impl Condenser {
    pub fn qmin_mvar(&self) -> f64 {
        -self.qmax_mvar
    }
}

/// A census-tract load attached to a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub tract_id: String,
    pub bus: usize,
    pub location: GeoPoint,
    /// Demand at the system peak hour; used for the exported case.
    pub peak_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub condensers: Vec<Condenser>,
    /// Reactive-to-active ratio applied to every load.
    pub load_q_ratio: f64,
}

impl GridModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_mva: BASE_MVA,
            buses: Vec::new(),
            branches: Vec::new(),
            generators: Vec::new(),
            loads: Vec::new(),
            condensers: Vec::new(),
            load_q_ratio: 0.0,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn lines(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.is_line())
    }

    pub fn line_indices(&self) -> Vec<usize> {
        self.lines().map(|(i, _)| i).collect()
    }

    pub fn n_lines(&self) -> usize {
        self.lines().count()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn next_bus_id(&self) -> u32 {
        self.buses.iter().map(|b| b.id).max().map_or(1, |m| m + 1)
    }

    /// Active condensers, in model order.
    pub fn active_condensers(&self) -> impl Iterator<Item = &Condenser> {
        self.condensers.iter().filter(|c| c.active)
    }

    /// Per-bus demand from per-load values aligned with `self.loads`.
    pub fn bus_demand(&self, load_mw: &[f64]) -> Vec<f64> {
        let mut pd = vec![0.0; self.buses.len()];
        for (l, v) in self.loads.iter().zip(load_mw) {
            pd[l.bus] += v;
        }
        pd
    }

    /// Peak-hour demand per bus.
    pub fn bus_peak_demand(&self) -> Vec<f64> {
        let peaks: Vec<f64> = self.loads.iter().map(|l| l.peak_mw).collect();
        self.bus_demand(&peaks)
    }

    /// Structural checks on indices and electrical parameters.
    pub fn validate(&self, require_parameters: bool) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(GridError::Validation("model has no buses".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(GridError::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !(b.voltage_kv > 0.0) {
                return Err(GridError::Validation(format!("bus {} has no voltage", b.id)));
            }
        }
        for br in &self.branches {
            if br.from >= n || br.to >= n || br.from == br.to {
                return Err(GridError::Validation(format!("branch {} has invalid endpoints", br.id)));
            }
            if require_parameters && (!(br.x_pu > 0.0) || !(br.rate_mva > 0.0) || br.r_pu < 0.0 || br.b_pu < 0.0) {
                return Err(GridError::Validation(format!("branch {} is missing electrical parameters", br.id)));
            }
        }
        for g in &self.generators {
            if g.bus >= n {
                return Err(GridError::Validation(format!("generator {} on unknown bus", g.id)));
            }
        }
        for l in &self.loads {
            if l.bus >= n {
                return Err(GridError::Validation(format!("load {} on unknown bus", l.tract_id)));
            }
        }
        for c in &self.condensers {
            if c.bus >= n {
                return Err(GridError::Validation("condenser on unknown bus".into()));
            }
        }
        Ok(())
    }
}
