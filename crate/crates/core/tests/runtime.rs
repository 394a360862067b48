use std::path::{Path, PathBuf};

use twin_core::conformance::TwinConfiguration;
use twin_core::data::DataManager;
use twin_core::engine::SyncDecision;
use twin_core::runtime::{LogLine, RuntimeError, Scenario, SimEndpoint, Twin, TwinOptions};

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn demo_config() -> TwinConfiguration {
    TwinConfiguration::from_json(&std::fs::read_to_string(demo_dir().join("tank.json")).unwrap())
        .unwrap()
}

fn demo_script() -> Scenario {
    Scenario::from_json(&std::fs::read_to_string(demo_dir().join("tank-script.json")).unwrap())
        .unwrap()
}

/// Options that keep the journal out of the demo directory.
fn scratch(dir: &Path) -> TwinOptions {
    TwinOptions {
        base_dir: demo_dir(),
        journal: Some(dir.join("journal.ndjson")),
        decisions: None,
    }
}

struct Run {
    decisions: Vec<SyncDecision>,
    journal: Vec<u8>,
    log: String,
}

fn run_demo(dir: &Path) -> Run {
    let opts = TwinOptions {
        base_dir: demo_dir(),
        journal: Some(dir.join("journal.ndjson")),
        decisions: Some(dir.join("decisions.ndjson")),
    };
    let mut twin = Twin::start(&demo_config(), &opts).unwrap();
    demo_script().run(&mut twin).unwrap();
    let decisions = twin.decisions().to_vec();
    drop(twin);
    Run {
        decisions,
        journal: std::fs::read(dir.join("journal.ndjson")).unwrap(),
        log: std::fs::read_to_string(dir.join("decisions.ndjson")).unwrap(),
    }
}

#[test]
fn demo_script_passes_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_demo(a.path());
    let second = run_demo(b.path());
    assert_eq!(first.decisions, second.decisions);
    assert_eq!(first.journal, second.journal);
    assert_eq!(first.log, second.log);
}

#[test]
fn decision_log_lists_every_decision_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_demo(dir.path());
    let logged: Vec<SyncDecision> = run
        .log
        .lines()
        .filter_map(|l| match serde_json::from_str::<LogLine>(l).unwrap() {
            LogLine::Decision(d) => Some(d),
            LogLine::Notice(_) => None,
        })
        .collect();
    assert_eq!(logged, run.decisions);
    assert!(run.decisions.windows(2).all(|w| w[0].tick <= w[1].tick));
}

#[test]
fn journal_replays_to_the_live_records() {
    let dir = tempfile::tempdir().unwrap();
    let opts = TwinOptions {
        base_dir: demo_dir(),
        journal: Some(dir.path().join("j.ndjson")),
        decisions: None,
    };
    let mut twin = Twin::start(&demo_config(), &opts).unwrap();
    demo_script().run(&mut twin).unwrap();
    let live = twin.engine().data().unwrap().records().to_vec();
    drop(twin);
    let replayed = DataManager::open(dir.path().join("j.ndjson")).unwrap();
    assert_eq!(replayed.records(), live.as_slice());
    assert_eq!(live.len(), 37);
}

#[test]
fn failing_expectation_names_its_step() {
    let mut script = demo_script();
    let text = r#"{"step": "expect_model", "property": {"model": "tank_model", "element": "tank", "property": "level"}, "value": {"real": 99.0}}"#;
    script.steps.insert(1, serde_json::from_str(text).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut twin = Twin::start(&demo_config(), &scratch(dir.path())).unwrap();
    let err = script.run(&mut twin).unwrap_err();
    assert_eq!(err.index, 1);
    assert!(
        err.to_string()
            .starts_with("step 1: expected tank_model/tank.level"),
        "{err}"
    );
}

#[test]
fn unmanaged_models_are_refused() {
    let mut config = demo_config();
    config.models[0].manager = None;
    let dir = tempfile::tempdir().unwrap();
    let err = Twin::start(&config, &scratch(dir.path())).unwrap_err();
    assert!(matches!(err, RuntimeError::Config(_)), "{err}");
}

#[test]
fn sim_endpoints_parse() {
    let e = SimEndpoint::parse("sim://tank?inflow=5&step_ms=50")
        .unwrap()
        .unwrap();
    assert_eq!(
        (e.model.as_str(), e.step_ms, e.params["inflow"].as_str()),
        ("tank", 50, "5")
    );
    assert!(SimEndpoint::parse("tcp://127.0.0.1:9").is_none());
    assert!(SimEndpoint::parse("sim://tank?step_ms=soon")
        .unwrap()
        .is_err());
}
