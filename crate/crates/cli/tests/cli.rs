use std::path::{Path, PathBuf};

use finrag_cli::{resolve_config, run_with, GlobalArgs, Io};

const CHANGE: &str = "What was the percentage change in Acme Corp total revenue from 2018 to 2019?";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run_env(args: &[&str], stdin: &str, env: &dyn Fn(&str) -> Option<String>) -> Run {
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut io = Io { stdin: &mut input, out: &mut out, err: &mut err };
    let argv = std::iter::once("finrag").chain(args.iter().copied());
    let code = run_with(argv, env, &mut io);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn run(args: &[&str]) -> Run {
    run_env(args, "", &|_| None)
}

#[test]
fn ask_answers_the_worked_example() {
    let r = run(&["--config", &fx("case1.toml"), "ask", CHANGE]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out.trim(), "5.19%");

    let r = run(&["--config", &fx("case1.toml"), "ask", "--trace", CHANGE]);
    let json = r.out.split_once('\n').unwrap().1;
    let trace: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(trace["iterations"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["--help"]).code, 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[retrieval]\nbogus = 1\n").unwrap();
    let r = run(&["--config", bad.to_str().unwrap(), "config"]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("bogus"), "{}", r.err);

    let r = run(&["--config", &fx("case1.toml"), "--set", "retrieval.alpha=2", "config"]);
    assert_eq!(r.code, 1, "{}", r.out);

    // nothing scripted: every call fails, so no answer is produced
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let backend = format!("scripted:{}", empty.display());
    let r = run(&["--config", &fx("case1.toml"), "--backend", &backend, "ask", CHANGE]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("no answer"), "{}", r.err);

    let r = run(&["--config", &fx("workload/config.toml"), "eval", "--dataset", "/nonexistent.json"]);
    assert_eq!(r.code, 2);
}

#[test]
fn flags_beat_env_beat_file_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    std::fs::write(&file, "[retrieval]\ntop_k = 7\nalpha = 0.4\n[agent]\nmax_iterations = 4\n").unwrap();
    let env = |k: &str| match k {
        "FINRAG_RETRIEVAL_TOP_K" => Some("9".to_string()),
        "FINRAG_AGENT_MAX_ITERATIONS" => Some("5".to_string()),
        _ => None,
    };
    let g = GlobalArgs { config: Some(file.clone()), k: Some(11), ..GlobalArgs::default() };
    let s = resolve_config(&g, &env).unwrap();
    let c = s.config();
    assert_eq!(c.retrieval.top_k, 11);
    assert_eq!(c.agent.max_iterations, 5);
    assert_eq!(c.retrieval.alpha, 0.4);
    assert_eq!(c.agent.beta, 0.2);

    let g = GlobalArgs { config: Some(file), ..GlobalArgs::default() };
    assert_eq!(resolve_config(&g, &env).unwrap().config().retrieval.top_k, 9);
    assert_eq!(resolve_config(&g, &|_| None).unwrap().config().retrieval.top_k, 7);
    assert_eq!(resolve_config(&GlobalArgs::default(), &|_| None).unwrap().config().retrieval.top_k, 5);
}

#[test]
fn eval_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "4"), ("b", "4"), ("c", "1")] {
        let out = dir.path().join(name);
        let r = run(&[
            "--config",
            &fx("workload/config.toml"),
            "eval",
            "--dataset",
            &fx("workload/dataset.json"),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        let traces = std::fs::read(out.join("traces.jsonl")).unwrap();
        let report = std::fs::read(out.join("report.json")).unwrap();
        outputs.push((traces, report));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn baseline_comparison_reports_the_call_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let off = dir.path().join("off");
    let cfg = fx("workload/config.toml");
    let data = fx("workload/dataset.json");
    let r = run(&["--config", &cfg, "--router", "off", "eval", "--dataset", &data, "--out", off.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    let on = dir.path().join("on");
    let base = off.join("traces.jsonl");
    let r = run(&["--config", &cfg, "eval", "--dataset", &data, "--baseline", base.to_str().unwrap(), "--out", on.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("call reduction     25.00%"), "{}", r.out);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(on.join("report.json")).unwrap()).unwrap();
    let rows = report["baseline"]["cost"]["rows"].as_array().unwrap();
    let calls: Vec<f64> = rows.iter().map(|r| r["mean_calls"].as_f64().unwrap()).collect();
    assert_eq!(calls, vec![3.6, 4.8]);
    assert_eq!(report["baseline"]["call_reduction"].as_f64().unwrap(), 1.0 - 3.6 / 4.8);
}

#[test]
fn theta_sweep_has_a_row_per_value() {
    let r = run(&[
        "--config",
        &fx("workload/config.toml"),
        "sweep",
        "--dataset",
        &fx("workload/dataset.json"),
        "--theta",
        "0.5..1.0:0.1",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let lines: Vec<&str> = r.out.lines().collect();
    assert_eq!(lines.len(), 7, "{}", r.out);
    let thetas: Vec<&str> = lines[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(thetas, ["0.50", "0.60", "0.70", "0.80", "0.90", "1.00"]);
}

#[test]
fn chat_keeps_history_until_reset() {
    let stdin = format!("{CHANGE}\n/history\n/reset\n/history\n/bogus\n/quit\n");
    let r = run_env(&["--config", &fx("case1.toml"), "chat"], &stdin, &|_| None);
    assert_eq!(r.code, 0, "{}", r.err);
    let out = r.out;
    assert!(out.contains("> 5.19%\n"), "{out}");
    assert!(out.contains(&format!("[1] Q: {CHANGE}\n    A: 5.19%")), "{out}");
    let after_reset = out.split("conversation reset").nth(1).unwrap();
    assert!(after_reset.contains("no turns yet"));
    assert!(after_reset.contains("unknown command /bogus"));
}

#[test]
fn index_round_trip_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("index.json");
    let r = run(&["--config", &fx("case1.toml"), "index", "--out", idx.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    let r = run(&["--config", &fx("case1.toml"), "ask", "--index", idx.to_str().unwrap(), CHANGE]);
    assert_eq!(r.out.trim(), "5.19%", "{}", r.err);

    let r = run(&["--config", &fx("case1.toml"), "ingest"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let n = r.out.lines().count();
    assert!(n > 0);
    assert!(r.err.contains(&format!("{n} passages")), "{}", r.err);
}

#[test]
fn train_and_calibrate_write_loadable_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fx("workload/config.toml");
    let data = fx("workload/dataset.json");
    let router = dir.path().join("router.json");
    let r = run(&["--config", &cfg, "train-router", "--dataset", &data, "--out", router.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("cv accuracy"));
    finrag::RouterModel::load(&router).unwrap();

    let cal = dir.path().join("cal.json");
    let r = run(&["--config", &cfg, "calibrate", "--dataset", &data, "--out", cal.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    let model = finrag::CalibrationModel::from_json(&std::fs::read_to_string(&cal).unwrap()).unwrap();
    assert!(model.pairs.windows(2).all(|w| w[0].1 <= w[1].1));

    // the trained router drives routing when passed by path
    let r = run(&["--config", &cfg, "--router", router.to_str().unwrap(), "eval", "--dataset", &data, "--limit", "3"]);
    assert_eq!(r.code, 0, "{}", r.err);
}
