mod support;

use std::time::Duration;

use serde_json::json;
use support::fixture;
use toolpath_core::matcher::ErrorClass;
use toolpath_core::metrics::{aggregate, MsssDenominator};
use toolpath_core::model::{AgentAction, ToolCall};
use toolpath_core::report::ReportBundle;
use toolpath_core::runner::remote::{RemoteConfig, RemoteFactory};
use toolpath_core::runner::{
    gold_script, run_case, run_dataset, AdapterFactory, AgentTurn, CaseOutcome, PathChoice, ReplayFactory, RunConfig,
    ScriptedAdapter, ScriptedFactory, Speaker,
};

fn calls(list: &[(&str, serde_json::Value)]) -> AgentTurn {
    AgentAction::ToolCalls(list.iter().map(|(n, a)| ToolCall::new(*n, a.clone())).collect()).into()
}

#[test]
fn serial_gold_passes_but_is_not_optimal() {
    let ds = fixture();
    let case = ds.case("c01-movie-deck").unwrap();
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, gold_script(case, PathChoice::Serial)), &RunConfig::default());
    let m = &run.outcome.scored().unwrap().mission_results[0];
    assert!(m.passed);
    assert_eq!(m.optimal, Some(false));
    assert_eq!(m.path_taken.as_ref().unwrap().to_string(), "[0] [1] [2] [3]");
}

#[test]
fn parallel_mission_done_serially_is_suboptimal() {
    let ds = fixture();
    let case = ds.case("c05-stock-board").unwrap();
    let script = ["AAPL", "MSFT", "NVDA"].map(|s| calls(&[("get_stock_price", json!({ "symbol": s }))])).to_vec();
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    let r = run.outcome.scored().unwrap();
    assert!(r.all_passed);
    let a = aggregate(std::slice::from_ref(r), 0, &[], 4);
    assert_eq!(a.optimal_path_rate, Some(0.0));
}

#[test]
fn exhausted_script_leaves_case_unscored_with_partial_transcript() {
    let ds = fixture();
    let case = ds.case("c07-currency-chat").unwrap();
    let script = gold_script(case, PathChoice::Optimal)[..1].to_vec();
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    match &run.outcome {
        CaseOutcome::Unscored { reason, .. } => assert!(reason.contains("script exhausted"), "{reason}"),
        other => panic!("expected unscored, got {other:?}"),
    }
    let last = run.transcript.last().unwrap();
    assert_eq!(last.speaker, Speaker::Agent);
    assert!(last.payload.get("adapter_error").is_some());
    assert!(run.transcript.iter().any(|t| t.speaker == Speaker::Tool));
}

#[test]
fn teacher_forcing_injects_gold_and_continues() {
    let ds = fixture();
    let case = ds.case("c08-fail-once").unwrap();
    let mut script = gold_script(case, PathChoice::Optimal);
    script[0] = calls(&[("get_forecast", json!({ "city": "Madrid", "days": 1 }))]);
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    let r = run.outcome.scored().unwrap();
    let passed: Vec<bool> = r.mission_results.iter().map(|m| m.passed).collect();
    assert_eq!(passed, [false, true, true, true]);
    assert_eq!(r.mission_results[0].error, Some(ErrorClass::ToolError));
    let injected: Vec<_> = run.transcript.iter().filter(|t| t.injected).collect();
    assert_eq!(injected.len(), 2, "one injected agent turn and one injected tool result");
    assert!(injected.iter().all(|t| t.mission == 0));
}

#[test]
fn clarify_skipped_is_a_failure_without_error_class() {
    let ds = fixture();
    let case = ds.case("c04-weather-clarify").unwrap();
    let script = vec![calls(&[("get_weather", json!({ "city": "Paris" }))])];
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    let m = &run.outcome.scored().unwrap().mission_results[0];
    assert!(!m.passed);
    assert_eq!(m.error, None);
    assert_eq!((m.steps_accepted, m.steps_required), (0, 2));
    assert!(run.transcript.iter().any(|t| t.injected && t.speaker == Speaker::User));
}

#[test]
fn clarify_question_must_name_the_missing_parameter() {
    let ds = fixture();
    let case = ds.case("c04-weather-clarify").unwrap();
    let vague = vec![AgentAction::Clarify("Can you say more?".into()).into()];
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, vague), &RunConfig::default());
    assert!(!run.outcome.scored().unwrap().all_passed);

    let by_alias = vec![
        AgentAction::Clarify("What is your location?".into()).into(),
        calls(&[("get_weather", json!({ "city": "lyon " }))]),
    ];
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, by_alias), &RunConfig::default());
    assert!(run.outcome.scored().unwrap().all_passed);
}

#[test]
fn malformed_turn_is_a_format_error() {
    let ds = fixture();
    let case = ds.case("c02-weather-now").unwrap();
    let script = vec![AgentTurn::Malformed { malformed: "<tool>get_weather(Oslo</tool>".into() }];
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    assert_eq!(run.outcome.scored().unwrap().mission_results[0].error, Some(ErrorClass::FormatError));
}

#[test]
fn alternates_and_defaults_are_accepted() {
    let ds = fixture();
    let case = ds.case("c02-weather-now").unwrap();
    let script = vec![calls(&[("get_weather", json!({ "city": "Oslo, Norway", "unit": "celsius" }))])];
    let run = run_case(case, &mut ScriptedAdapter::new(&case.id, script), &RunConfig::default());
    assert!(run.outcome.scored().unwrap().all_passed);
}

#[test]
fn replay_reproduces_outcomes_and_tables() {
    let ds = fixture();
    let mut factory = ScriptedFactory::gold(&ds.cases, PathChoice::Serial);
    factory.scripts.get_mut("c10-ranking").unwrap()[0] = calls(&[("get_movie_ranking", json!({ "year": 1999 }))]);
    factory.scripts.get_mut("c07-currency-chat").unwrap().truncate(1);
    let cfg = RunConfig::default();
    let runs = run_dataset(&ds.cases, &factory, &cfg);
    let transcript: Vec<_> = runs.iter().flat_map(|r| r.transcript.clone()).collect();

    let replay = ReplayFactory::from_transcripts("replay", &transcript).unwrap();
    let again = run_dataset(&ds.cases, &replay, &cfg);
    assert_eq!(runs.iter().map(|r| &r.outcome).collect::<Vec<_>>(), again.iter().map(|r| &r.outcome).collect::<Vec<_>>());
    assert_eq!(runs.iter().map(|r| &r.transcript).collect::<Vec<_>>(), again.iter().map(|r| &r.transcript).collect::<Vec<_>>());

    let a = ReportBundle::build(&ds, &runs, &cfg, "x", 4, MsssDenominator::Cumulative);
    let b = ReportBundle::build(&ds, &again, &cfg, "x", 4, MsssDenominator::Cumulative);
    assert_eq!(a.aggregates, b.aggregates);
    assert_eq!(a.aggregates.unscored_cases, 1);
}

#[test]
fn report_bundle_writes_every_listed_file() {
    let ds = fixture();
    let factory = ScriptedFactory::gold(&ds.cases, PathChoice::Optimal);
    let cfg = RunConfig::default();
    let runs = run_dataset(&ds.cases, &factory, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut bundle = ReportBundle::build(&ds, &runs, &cfg, &factory.identity(), 4, MsssDenominator::Cumulative);
    bundle.write(dir.path(), &runs).unwrap();
    assert_eq!(bundle.manifest.len(), 10);
    for name in &bundle.manifest {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let header = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("accuracy_by_action_type.csv"), "action_type,passed,total,accuracy");
    assert_eq!(header("combo_heatmap.csv"), "preceding,action_type,passed,total,accuracy");
    assert_eq!(
        header("error_distribution.csv"),
        "view,failures,tool_error,param_name_hallucination,param_value_hallucination,param_value_error,format_error"
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["config_hash"], bundle.metadata.config_hash.as_str());
}

#[test]
fn config_hash_tracks_settings_but_not_concurrency() {
    let ds = fixture();
    let runs = Vec::new();
    let hash = |cfg: &RunConfig, adapter: &str| ReportBundle::build(&ds, &runs, cfg, adapter, 4, MsssDenominator::Cumulative).metadata.config_hash;
    let base = RunConfig::default();
    let wide = RunConfig { request_concurrency: 8, ..RunConfig::default() };
    let off = RunConfig { teacher_forcing: false, ..RunConfig::default() };
    assert_eq!(hash(&base, "a"), hash(&wide, "a"));
    assert_ne!(hash(&base, "a"), hash(&off, "a"));
    assert_ne!(hash(&base, "a"), hash(&base, "b"));
}

#[test]
fn unreachable_endpoint_leaves_cases_unscored() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = RemoteConfig::new(url, "m");
    cfg.retry_budget = 1;
    cfg.retry_backoff = Duration::ZERO;
    cfg.timeout = Duration::from_millis(500);
    let factory = RemoteFactory::new(cfg).unwrap();
    let ds = fixture();
    let runs = run_dataset(&ds.cases[..3], &factory, &RunConfig::default());
    for r in &runs {
        match &r.outcome {
            CaseOutcome::Unscored { reason, .. } => assert!(reason.contains("2 attempts"), "{reason}"),
            other => panic!("expected unscored, got {other:?}"),
        }
    }
}
