use std::path::Path;
use std::process::{Command, Output};

fn gridsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsynth")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_runs_to_scenarios_and_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let ck = tmp.path().join("ck");
    let out = tmp.path().join("out");
    assert!(gridsynth(&["fixture", s(&fx)]).status.success());
    let cfg = fx.join("config.toml");

    let run = gridsynth(&["--config", s(&cfg), "--checkpoint-dir", s(&ck), "--out", s(&out), "--sequential", "pipeline", "--until", "scenarios"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("model: 42 buses"), "{stdout}");
    for name in ["00_ingest.json", "01_topology.json", "02_assign.json", "03_scenarios.json"] {
        assert!(ck.join(name).exists(), "{name}");
    }

    let export_dir = tmp.path().join("export");
    let export = gridsynth(&["--config", s(&cfg), "--checkpoint-dir", s(&ck), "--out", s(&export_dir), "export"]);
    assert!(export.status.success(), "{}", String::from_utf8_lossy(&export.stderr));
    assert_eq!(std::fs::read(out.join("scenarios.jsonl")).unwrap(), std::fs::read(export_dir.join("scenarios.jsonl")).unwrap());
}

#[test]
fn missing_config_is_a_validation_error() {
    let run = gridsynth(&["pipeline"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("--config"));
}

#[test]
fn unreadable_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "rng_seed = \"x\"\n").unwrap();
    assert_eq!(gridsynth(&["--config", s(&cfg), "ingest"]).status.code(), Some(2));
    assert_eq!(gridsynth(&["--config", s(&tmp.path().join("none.toml")), "ingest"]).status.code(), Some(2));
}

#[test]
fn resuming_without_checkpoint_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    assert!(gridsynth(&["fixture", s(&fx)]).status.success());
    let run = gridsynth(&["--config", s(&fx.join("config.toml")), "--checkpoint-dir", s(&tmp.path().join("ck")), "reactive"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("05_sizing.json"));
}

#[test]
fn unknown_stage_is_rejected() {
    assert_eq!(gridsynth(&["pipeline", "--until", "bogus"]).status.code(), Some(2));
}
