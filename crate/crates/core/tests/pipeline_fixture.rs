use gridsynth_core::case::{export_case, import_case, read_case};
use gridsynth_core::config::RunConfig;
use gridsynth_core::fixture::{fixture_config, fixture_inputs, write_fixture, AUGUST};
use gridsynth_core::pipeline::{read_checkpoint, run_pipeline, write_outputs, Inputs, Stage};
use gridsynth_core::GridError;

fn short_config() -> RunConfig {
    let mut cfg = fixture_config("data".into());
    cfg.evaluation.start_hour = AUGUST.start;
    cfg.evaluation.hours = Some(24);
    cfg.evaluation.stack_windows.truncate(1);
    cfg
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = short_config();
    let inputs = fixture_inputs();
    let dir = tempfile::tempdir().unwrap();
    let full = run_pipeline(&cfg, &inputs, Some(dir.path()), Stage::Ingest, Stage::Metrics).unwrap();
    assert_eq!(full.completed, Stage::ALL.to_vec());
    assert_eq!(read_checkpoint(dir.path(), Stage::Metrics).unwrap(), full);

    let resumed = run_pipeline(&cfg, &inputs, Some(dir.path()), Stage::Reactive, Stage::Metrics).unwrap();
    assert_eq!(resumed.to_json(), full.to_json());

    let report = full.report.as_ref().unwrap();
    assert_eq!(report.rows.len(), 24);
    assert!(report.all_feasible(), "{:?}", report.rows.iter().filter(|r| !r.feasible).collect::<Vec<_>>());

    let model = full.model.as_ref().unwrap();
    let case = export_case(model).unwrap();
    assert_eq!(&import_case(&case.matpower, &case.geojson).unwrap(), model);

    let out = tempfile::tempdir().unwrap();
    let written = write_outputs(&full, &cfg, out.path()).unwrap();
    for name in ["case.m", "case_paths.geojson", "sizing_trace.jsonl", "reactive_trace.jsonl", "evaluation_hourly.csv", "evaluation_summary.json"] {
        assert!(written.iter().any(|p| p.ends_with(name)), "{name} missing");
    }
    assert_eq!(&read_case(out.path(), "case").unwrap(), model);
}

#[test]
fn resume_without_checkpoint_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let e = run_pipeline(&short_config(), &fixture_inputs(), Some(dir.path()), Stage::Sizing, Stage::Sizing).unwrap_err();
    assert!(e.to_string().contains("04_lineparams.json"), "{e}");
}

#[test]
fn written_fixture_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path()).unwrap();
    let loaded = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(loaded.rng_seed, cfg.rng_seed);
    let inputs = Inputs::load(&loaded.inputs, &loaded).unwrap();
    assert_eq!(inputs, fixture_inputs());
    let st = run_pipeline(&loaded, &inputs, None, Stage::Ingest, Stage::Scenarios).unwrap();
    assert_eq!(st.scenario_hours.len(), 245);
    assert_eq!(st.injections.len(), 490);
}

#[test]
fn failing_stage_reports_last_checkpoint() {
    let mut inputs = fixture_inputs();
    inputs.costs.clear();
    let dir = tempfile::tempdir().unwrap();
    let e = run_pipeline(&short_config(), &inputs, Some(dir.path()), Stage::Ingest, Stage::Assign).unwrap_err();
    let GridError::Stage { stage, checkpoint, .. } = &e else { panic!("{e}") };
    assert_eq!(stage, "assign");
    assert!(checkpoint.ends_with("01_topology.json"), "{checkpoint}");
    assert_eq!(e.exit_code(), 2);
}
