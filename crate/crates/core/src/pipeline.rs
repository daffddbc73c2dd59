//! Stage-by-stage synthesis with JSON checkpoints.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assignment::{assign, parse_cost_catalog, parse_renewables, CostReference, LoadAssignment, RenewableSeries};
use crate::case::{export_case, write_case};
use crate::config::{InputPaths, RunConfig};
use crate::error::{GridError, Result};
use crate::geodata::{load_dataset, DatasetPaths, GeoDataset};
use crate::lineparams::{
    default_catalog, init_lines, init_transformers, parse_catalog, parse_form1, parse_transformer_tables, resize_transformers,
    ConductorCatalog, Form1Record, TransformerTables,
};
use crate::metrics::{dispatch_stack, dispatch_stack_csv, yearly_evaluation, EvaluationReport};
use crate::model::GridModel;
use crate::powerflow::{OperatingPoint, OpfSolution};
use crate::reactive::{run_reactive, ReactiveTrace};
use crate::scenarios::{build_injections, injections_to_jsonl, select_scenarios, DispatchKind, InjectionScenario, ScenarioHour, TimeSeries};
use crate::sizing::{dc_max_flows, run_sizing, SizingTrace};
use crate::topology::{apply_edits, build_topology, diagnostics_to_csv, parse_edit_script, RetentionReport, TopologyDiagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Topology,
    Assign,
    Scenarios,
    Lineparams,
    Sizing,
    Reactive,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Ingest, Stage::Topology, Stage::Assign, Stage::Scenarios, Stage::Lineparams, Stage::Sizing, Stage::Reactive, Stage::Metrics];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Topology => "topology",
            Stage::Assign => "assign",
            Stage::Scenarios => "scenarios",
            Stage::Lineparams => "lineparams",
            Stage::Sizing => "sizing",
            Stage::Reactive => "reactive",
            Stage::Metrics => "metrics",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    pub fn previous(self) -> Option<Stage> {
        self.index().checked_sub(1).map(|i| Self::ALL[i])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| GridError::Validation(format!("unknown stage `{s}`")))
    }
}

/// Immutable inputs shared by all stages. Edits are already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub dataset: GeoDataset,
    pub renewables: RenewableSeries,
    pub costs: Vec<CostReference>,
    pub form1: Vec<Form1Record>,
    pub catalog: ConductorCatalog,
    pub tables: TransformerTables,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GridError::io(path, e))
}

impl Inputs {
    pub fn load(paths: &InputPaths, cfg: &RunConfig) -> Result<Self> {
        let dataset = load_dataset(&DatasetPaths::in_dir(&paths.data_dir))?;
        let dataset = match &paths.edits {
            Some(p) => apply_edits(&dataset, &parse_edit_script(&read(p)?)?, cfg.topology.radius_m)?,
            None => dataset,
        };
        let name = |p: &Path| p.display().to_string();
        let renewables = parse_renewables(&read(&paths.renewables)?, &name(&paths.renewables))?;
        let costs = parse_cost_catalog(&read(&paths.costs)?, &name(&paths.costs))?;
        let form1 = match &paths.form1 {
            Some(p) => parse_form1(&read(p)?, &name(p))?,
            None => Vec::new(),
        };
        let catalog = match &paths.conductors {
            Some(p) => parse_catalog(&read(p)?, &name(p))?,
            None => default_catalog(),
        };
        let tables = match (&paths.transformer_impedance, &paths.transformer_xr) {
            (Some(z), Some(xr)) => parse_transformer_tables(&read(z)?, &read(xr)?)?,
            (None, None) => TransformerTables::default_for(&cfg.lineparams.transformer_ladder_mva),
            _ => return Err(GridError::Validation("transformer impedance and X/R tables must be given together".into())),
        };
        let inputs = Self { dataset, renewables, costs, form1, catalog, tables };
        inputs.time_series()?;
        Ok(inputs)
    }

    pub fn time_series(&self) -> Result<TimeSeries> {
        let ts = TimeSeries::new(&self.dataset, &self.renewables)?;
        ts.validate()?;
        Ok(ts)
    }
}

/// Everything produced so far. Serialized as the stage checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub completed: Vec<Stage>,
    pub model: Option<GridModel>,
    pub diagnostics: Vec<TopologyDiagnostic>,
    pub retention: Option<RetentionReport>,
    pub assignment: Option<LoadAssignment>,
    pub scenario_hours: Vec<ScenarioHour>,
    pub injections: Vec<InjectionScenario>,
    pub sizing: Option<SizingTrace>,
    pub reactive: Option<ReactiveTrace>,
    /// AC surrogate solution at the reactive-planning scenario.
    pub peak_ac: Option<OpfSolution>,
    pub report: Option<EvaluationReport>,
}

impl PipelineState {
    pub fn last(&self) -> Option<Stage> {
        self.completed.last().copied()
    }

    fn model(&self, stage: Stage) -> Result<&GridModel> {
        self.model.as_ref().ok_or_else(|| GridError::Validation(format!("stage {stage} needs a model from an earlier stage")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str, file: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GridError::schema(file, format!("line {}", e.line()), "checkpoint", e))
    }
}

pub fn checkpoint_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{:02}_{}.json", stage.index(), stage))
}

pub fn write_checkpoint(dir: &Path, stage: Stage, state: &PipelineState) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
    let p = checkpoint_path(dir, stage);
    std::fs::write(&p, state.to_json()).map_err(|e| GridError::io(&p, e))?;
    Ok(p)
}

pub fn read_checkpoint(dir: &Path, stage: Stage) -> Result<PipelineState> {
    let p = checkpoint_path(dir, stage);
    let state = PipelineState::from_json(&read(&p)?, &p.display().to_string())?;
    if state.last() != Some(stage) {
        return Err(GridError::Validation(format!("{} does not end at stage {stage}", p.display())));
    }
    Ok(state)
}

/// Economic injection with the largest total demand; earliest hour on ties.
pub fn planning_scenario(injections: &[InjectionScenario]) -> Option<&InjectionScenario> {
    injections
        .iter()
        .filter(|i| i.scenario.kind == DispatchKind::Economic)
        .fold(None, |best: Option<&InjectionScenario>, i| match best {
            Some(b) if b.scenario.total_load() >= i.scenario.total_load() => Some(b),
            _ => Some(i),
        })
}

/// Runs one stage on top of `state`.
pub fn run_stage(stage: Stage, state: &mut PipelineState, inputs: &Inputs, cfg: &RunConfig) -> Result<()> {
    let mode = cfg.exec_mode();
    match stage {
        Stage::Ingest => {
            inputs.dataset.validate()?;
            inputs.time_series()?;
        }
        Stage::Topology => {
            let t = build_topology(&inputs.dataset, &cfg.topology, mode)?;
            let mut model = t.model;
            model.name = cfg.name.clone();
            state.model = Some(model);
            state.diagnostics = t.diagnostics;
            state.retention = Some(t.retention);
        }
        Stage::Assign => {
            let (model, la) = assign(state.model(stage)?, &inputs.dataset, &inputs.costs, &cfg.assignment, mode)?;
            state.model = Some(model);
            state.assignment = Some(la);
        }
        Stage::Scenarios => {
            let ts = inputs.time_series()?;
            let hours = select_scenarios(&ts.total_load(), &ts.solar_mw, &ts.wind_mw)?;
            state.injections = build_injections(state.model(stage)?, &ts, &hours, &cfg.scenarios, mode)?;
            state.scenario_hours = hours;
        }
        Stage::Lineparams => {
            let mut model = state.model(stage)?.clone();
            init_lines(&mut model, &inputs.catalog, &inputs.form1, &cfg.lineparams)?;
            init_transformers(&mut model, &inputs.tables, &cfg.lineparams)?;
            state.model = Some(model);
        }
        Stage::Sizing => {
            let (mut model, trace) =
                run_sizing(state.model(stage)?, &state.injections, &cfg.sizing_config(), &inputs.catalog, &cfg.lineparams, mode)?;
            let flows = dc_max_flows(&model, &state.injections, mode)?;
            resize_transformers(&mut model, &flows, &inputs.tables, &cfg.lineparams)?;
            state.model = Some(model);
            state.sizing = Some(trace);
        }
        Stage::Reactive => {
            let inj = planning_scenario(&state.injections)
                .ok_or_else(|| GridError::Validation("reactive planning needs scenarios".into()))?;
            let op = OperatingPoint::from_injection(inj);
            let (model, trace, sol) = run_reactive(state.model(stage)?, &op, &cfg.reactive, &cfg.powerflow)?;
            state.model = Some(model);
            state.reactive = Some(trace);
            state.peak_ac = Some(sol);
        }
        Stage::Metrics => {
            let ts = inputs.time_series()?;
            let hours = cfg.evaluation.hour_list(ts.hours());
            state.report = Some(yearly_evaluation(state.model(stage)?, &ts, &hours, &cfg.scenarios, &cfg.powerflow, mode)?);
        }
    }
    state.completed.push(stage);
    Ok(())
}

/// Runs `from..=until`. With a checkpoint directory, the state before
/// `from` is read from it and every finished stage is written to it.
pub fn run_pipeline(cfg: &RunConfig, inputs: &Inputs, checkpoint_dir: Option<&Path>, from: Stage, until: Stage) -> Result<PipelineState> {
    cfg.validate()?;
    if from > until {
        return Err(GridError::Validation(format!("stage {from} comes after {until}")));
    }
    let mut last_ckpt = String::from("none");
    let mut state = match (from.previous(), checkpoint_dir) {
        (None, _) => PipelineState::default(),
        (Some(prev), Some(dir)) => {
            last_ckpt = checkpoint_path(dir, prev).display().to_string();
            read_checkpoint(dir, prev)?
        }
        (Some(_), None) => return Err(GridError::Validation(format!("resuming at {from} needs a checkpoint directory"))),
    };
    for stage in Stage::ALL.into_iter().filter(|s| (from..=until).contains(s)) {
        let t0 = Instant::now();
        run_stage(stage, &mut state, inputs, cfg).map_err(|e| GridError::Stage {
            stage: stage.to_string(),
            checkpoint: last_ckpt.clone(),
            source: Box::new(e),
        })?;
        log::info!("stage {stage} finished in {:.2?}", t0.elapsed());
        if let Some(dir) = checkpoint_dir {
            last_ckpt = write_checkpoint(dir, stage, &state)?.display().to_string();
        }
    }
    Ok(state)
}

/// Writes the case, its path sidecar and every trace or report present.
pub fn write_outputs(state: &PipelineState, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| GridError::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    if !state.diagnostics.is_empty() || state.completed.contains(&Stage::Topology) {
        put("topology_diagnostics.csv", diagnostics_to_csv(&state.diagnostics))?;
    }
    if let (Some(model), false) = (&state.model, state.injections.is_empty()) {
        put("scenarios.jsonl", injections_to_jsonl(model, &state.injections))?;
    }
    if let Some(t) = &state.sizing {
        put("sizing_trace.jsonl", t.to_jsonl())?;
    }
    if let Some(t) = &state.reactive {
        put("reactive_trace.jsonl", t.to_jsonl())?;
    }
    if let Some(r) = &state.report {
        put("evaluation_hourly.csv", r.rows_csv())?;
        put("evaluation_summary.json", r.summary_json())?;
        for w in &cfg.evaluation.stack_windows {
            let stack = dispatch_stack(r, w.start..w.start + w.hours);
            put(&format!("dispatch_{}.csv", w.name), dispatch_stack_csv(&stack))?;
        }
    }
    if let Some(model) = &state.model {
        if state.completed.contains(&Stage::Lineparams) {
            let case = export_case(model)?;
            write_case(dir, "case", &case)?;
            written.extend([dir.join("case.m"), dir.join("case_paths.geojson")]);
        }
    }
    Ok(written)
}
