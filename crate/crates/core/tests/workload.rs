//! The scripted 20-question workload: routing cost and run determinism.

mod support;

use finrag::agent::traces_to_jsonl;
use finrag::eval::{cost_report, run_eval, CostGroup};
use finrag::{load_dataset, AgentConfig, DatasetFormat, RouterMode};
use support::{client_from_file, World};

fn run(mode: RouterMode, workers: usize) -> finrag::eval::EvalRun {
    let data = load_dataset(&support::fixtures().join("workload/dataset.json"), DatasetFormat::Native).unwrap();
    let world = World::from_docs(&data.documents);
    let cfg = AgentConfig { router_mode: mode, ..AgentConfig::default() };
    let client = client_from_file("workload/rules.toml");
    run_eval(&data.examples, Some(DatasetFormat::Native), &client, &world.resources(true), &cfg, workers).unwrap()
}

#[test]
fn routing_saves_calls_by_the_trace_derived_amount() {
    let on = run(RouterMode::Heuristic, 4);
    let off = run(RouterMode::Off, 4);
    let simple = on.traces.iter().filter(|t| !t.complex()).count();
    assert_eq!((simple, on.traces.len() - simple), (12, 8));

    let report = cost_report(&[
        CostGroup { label: "router_on", traces: &on.traces, correct: Some(&on.correct) },
        CostGroup { label: "router_off", traces: &off.traces, correct: Some(&off.correct) },
    ]);
    let calls = |ts: &[finrag::AgentTrace]| ts.iter().map(|t| t.totals.total_calls).sum::<u64>() as f64 / ts.len() as f64;
    let (mean_on, mean_off) = (calls(&on.traces), calls(&off.traces));
    assert!(mean_on < mean_off);
    assert_eq!(report.row("router_on").unwrap().mean_calls, mean_on);
    assert_eq!(report.call_reduction("router_on", "router_off").unwrap(), 1.0 - mean_on / mean_off);
    assert_eq!((mean_on, mean_off), (3.6, 4.8));

    assert_eq!(on.report.exe_acc, 1.0);
    assert_eq!(off.report.exe_acc, 1.0);
}

#[test]
fn runs_are_byte_identical_regardless_of_workers() {
    let a = run(RouterMode::Heuristic, 4);
    let b = run(RouterMode::Heuristic, 4);
    let c = run(RouterMode::Heuristic, 1);
    assert_eq!(traces_to_jsonl(&a.traces), traces_to_jsonl(&b.traces));
    assert_eq!(traces_to_jsonl(&a.traces), traces_to_jsonl(&c.traces));
    assert_eq!(a.report.to_json(), b.report.to_json());
}
