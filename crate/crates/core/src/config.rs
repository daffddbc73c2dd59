//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentConfig;
use crate::error::{GridError, Result};
use crate::lineparams::LineParamsConfig;
use crate::par::ExecMode;
use crate::powerflow::PowerflowConfig;
use crate::reactive::ReactiveConfig;
use crate::scenarios::ScenarioConfig;
use crate::sizing::SizingConfig;
use crate::topology::TopologyConfig;

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    /// Directory holding `lines.geojson`, `substations.csv`, `generators.csv`, `loads.csv`.
    pub data_dir: PathBuf,
    /// Reference cost curves, `plant_code,unit_id,fuel,pmax_mw,c2,c1,c0`.
    pub costs: PathBuf,
    /// Statewide hourly totals, `hour,solar_mw,wind_mw`.
    pub renewables: PathBuf,
    pub edits: Option<PathBuf>,
    pub form1: Option<PathBuf>,
    pub conductors: Option<PathBuf>,
    pub transformer_impedance: Option<PathBuf>,
    pub transformer_xr: Option<PathBuf>,
}

impl Default for InputPaths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            costs: PathBuf::from("data/costs.csv"),
            renewables: PathBuf::from("data/renewables.csv"),
            edits: None,
            form1: None,
            conductors: None,
            transformer_impedance: None,
            transformer_xr: None,
        }
    }
}

impl InputPaths {
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.costs);
        fix(&mut self.renewables);
        for p in [&mut self.edits, &mut self.form1, &mut self.conductors, &mut self.transformer_impedance, &mut self.transformer_xr]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

/// A named range of hours for a dispatch-stack file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourWindow {
    pub name: String,
    pub start: usize,
    pub hours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub start_hour: usize,
    /// Hours evaluated from `start_hour`; all remaining hours when absent.
    pub hours: Option<usize>,
    pub stack_windows: Vec<HourWindow>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            start_hour: 0,
            hours: None,
            stack_windows: vec![
                HourWindow { name: "winter".into(), start: 0, hours: 168 },
                HourWindow { name: "summer".into(), start: 4368, hours: 168 },
            ],
        }
    }
}

impl EvaluationConfig {
    pub fn hour_list(&self, total: usize) -> Vec<usize> {
        let end = self.hours.map_or(total, |n| (self.start_hour + n).min(total));
        (self.start_hour.min(end)..end).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub rng_seed: u64,
    pub parallel: bool,
    pub inputs: InputPaths,
    pub topology: TopologyConfig,
    pub assignment: AssignmentConfig,
    pub scenarios: ScenarioConfig,
    pub lineparams: LineParamsConfig,
    pub sizing: SizingConfig,
    pub powerflow: PowerflowConfig,
    pub reactive: ReactiveConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "gridsynth".into(),
            rng_seed: 0,
            parallel: true,
            inputs: InputPaths::default(),
            topology: TopologyConfig::default(),
            assignment: AssignmentConfig::default(),
            scenarios: ScenarioConfig::default(),
            lineparams: LineParamsConfig::default(),
            sizing: SizingConfig::default(),
            powerflow: PowerflowConfig::default(),
            reactive: ReactiveConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GridError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Reads a config file and resolves its input paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.inputs.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.assignment.validate()?;
        self.scenarios.validate()?;
        self.lineparams.validate()?;
        self.sizing.validate()?;
        self.powerflow.validate()?;
        self.reactive.validate()?;
        if self.sizing.max_circuits != self.lineparams.max_circuits {
            return Err(GridError::Validation(format!(
                "sizing.max_circuits ({}) differs from lineparams.max_circuits ({})",
                self.sizing.max_circuits, self.lineparams.max_circuits
            )));
        }
        Ok(())
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    /// Sizing settings with the run seed applied.
    pub fn sizing_config(&self) -> SizingConfig {
        SizingConfig { rng_seed: self.rng_seed, ..self.sizing.clone() }
    }
}
