use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use finrag::agent::{history_entry, run_question, traces_from_jsonl, traces_to_jsonl, Conversation};
use finrag::config::known_keys;
use finrag::eval::{
    bootstrap_ci, correctness, cost_report, parse_grid, run_eval, run_examples, run_sweep, significance, CostGroup,
    CostReport, Dataset, Significance, SweepParam,
};
use finrag::mining::{contrastive_loss, mine_negatives, ContrastiveConfig, GoldQuery};
use finrag::reason::fit_calibration;
use finrag::router::{derive_labels, train_router, GbdtConfig};
use finrag::{
    build_corpus, exe_accuracy, load_dataset, AgentTrace, DatasetFormat, Document, Index, MetricReport, RouterMode,
    RouterModel,
};
use serde::Serialize;

use crate::setup::{load_corpus, load_documents, Settings, World};
use crate::{runtime, Cli, CliError, Command, DatasetArgs, Io, SourceArgs};

type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

pub fn dispatch(cli: Cli, env: Env, io: &mut Io) -> Result<(), CliError> {
    let settings = crate::resolve_config(&cli.global, env)?;
    let s = &settings;
    match cli.command {
        Command::Config => show_config(s, io),
        Command::Ingest { docs, dataset, format, out } => ingest(s, docs.as_deref(), dataset.as_deref(), &format, out.as_deref(), io),
        Command::Index { corpus, out } => build_index(s, corpus.as_deref(), &out, io),
        Command::Ask { question, source, trace } => ask(s, env, &question, &source, trace, io),
        Command::Chat { source } => chat(s, env, &source, io),
        Command::Eval { data, out, baseline } => eval(s, env, &data, out.as_deref(), baseline.as_deref(), io),
        Command::MineNegatives { corpus, queries, dataset, format, out } => {
            mine(s, corpus.as_deref(), queries.as_deref(), dataset.as_deref(), &format, out.as_deref(), io)
        }
        Command::TrainRouter { data, out, folds } => train(s, env, &data, &out, folds, io),
        Command::Calibrate { data, out } => calibrate(s, env, &data, &out, io),
        Command::Sweep { data, theta, top_k, out } => sweep(s, env, &data, theta, top_k, out.as_deref(), io),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    runtime(e)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn parse_format(s: &str) -> Result<DatasetFormat, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn show_config(s: &Settings, io: &mut Io) -> Result<(), CliError> {
    write!(io.out, "{}", s.config().to_toml()).map_err(io_err)?;
    writeln!(io.out).map_err(io_err)?;
    for (section, key) in known_keys() {
        let path = format!("{section}.{key}");
        writeln!(io.out, "# {path:<32} {:?}", s.resolved.source(&path)).map_err(io_err)?;
    }
    Ok(())
}

fn documents_for(s: &Settings, docs: Option<&Path>, dataset: Option<&Path>, format: &str) -> Result<Vec<Document>, CliError> {
    if let Some(d) = dataset {
        return Ok(load_dataset(d, parse_format(format)?).map_err(runtime)?.documents);
    }
    let path = docs
        .map(Path::to_path_buf)
        .or_else(|| s.path("paths.corpus", &s.config().paths.corpus))
        .ok_or_else(|| CliError::Config("no documents: pass --docs or --dataset, or set paths.corpus".into()))?;
    load_documents(&path)
}

fn ingest(s: &Settings, docs: Option<&Path>, dataset: Option<&Path>, format: &str, out: Option<&Path>, io: &mut Io) -> Result<(), CliError> {
    let docs = documents_for(s, docs, dataset, format)?;
    let passages = build_corpus(&docs, &s.config().chunk_config()).map_err(runtime)?;
    let text = finrag::corpus::passages_to_jsonl(&passages);
    match out {
        Some(p) => write_file(p, &text)?,
        None => write!(io.out, "{text}").map_err(io_err)?,
    }
    writeln!(io.err, "{} documents, {} passages", docs.len(), passages.len()).map_err(io_err)
}

fn build_index(s: &Settings, corpus: Option<&Path>, out: &Path, io: &mut Io) -> Result<(), CliError> {
    let path = corpus
        .map(Path::to_path_buf)
        .or_else(|| s.path("paths.corpus", &s.config().paths.corpus))
        .ok_or_else(|| CliError::Config("no corpus: pass --corpus or set paths.corpus".into()))?;
    let (passages, _) = load_corpus(&path, &s.config().chunk_config())?;
    let embedder = s.embedder()?;
    let index = Index::build(passages, embedder.as_ref()).map_err(runtime)?;
    index.save(out).map_err(runtime)?;
    writeln!(io.err, "indexed {} passages ({} terms, dim {}) into {}", index.n_passages(), index.inverted.len(), index.dim, out.display())
        .map_err(io_err)
}

fn summary(t: &AgentTrace) -> String {
    format!(
        "{} iteration(s), termination {}, {} LLM call(s)",
        t.iterations.len(),
        serde_json::to_value(t.termination).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        t.totals.total_calls
    )
}

fn ask(s: &Settings, env: Env, question: &str, src: &SourceArgs, show_trace: bool, io: &mut Io) -> Result<(), CliError> {
    let world = s.world_from_source(src)?;
    let client = s.client(env)?;
    let cfg = s.agent_config()?;
    let (answer, trace) = run_question("q1", question, &client, &world.resources(), &cfg);
    if let Some(a) = &answer {
        writeln!(io.out, "{a}").map_err(io_err)?;
    }
    if show_trace {
        writeln!(io.out, "{}", serde_json::to_string_pretty(&trace).expect("trace serializes")).map_err(io_err)?;
    }
    writeln!(io.err, "{}", summary(&trace)).map_err(io_err)?;
    match answer {
        Some(_) => Ok(()),
        None => Err(CliError::Runtime(format!("no answer: {}", trace.error.as_deref().unwrap_or("unknown failure")))),
    }
}

fn chat(s: &Settings, env: Env, src: &SourceArgs, io: &mut Io) -> Result<(), CliError> {
    let world = s.world_from_source(src)?;
    let client = s.client(env)?;
    let cfg = s.agent_config()?;
    let res = world.resources();
    let mut conv = Conversation::new(&client, &cfg);
    let mut line = String::new();
    loop {
        write!(io.out, "> ").map_err(io_err)?;
        io.out.flush().map_err(io_err)?;
        line.clear();
        if io.stdin.read_line(&mut line).map_err(io_err)? == 0 {
            writeln!(io.out).map_err(io_err)?;
            break;
        }
        let input = line.trim();
        match input {
            "" => continue,
            "/quit" | "/exit" => break,
            "/reset" => {
                conv.reset(&cfg);
                writeln!(io.out, "conversation reset").map_err(io_err)?;
            }
            "/trace" => match conv.traces.last() {
                Some(t) => writeln!(io.out, "{}", serde_json::to_string_pretty(t).expect("trace serializes")).map_err(io_err)?,
                None => writeln!(io.out, "no turns yet").map_err(io_err)?,
            },
            "/history" => {
                if conv.history.is_empty() {
                    writeln!(io.out, "no turns yet").map_err(io_err)?;
                }
                for (i, pair) in conv.history.chunks(2).enumerate() {
                    writeln!(io.out, "[{}] Q: {}", i + 1, pair[0]).map_err(io_err)?;
                    writeln!(io.out, "    A: {}", pair.get(1).map_or("", String::as_str)).map_err(io_err)?;
                }
            }
            cmd if cmd.starts_with('/') => {
                writeln!(io.out, "unknown command {cmd}; try /reset, /trace, /history or /quit").map_err(io_err)?;
            }
            question => {
                let id = format!("turn{}", conv.traces.len() + 1);
                let trace = conv.ask(&id, question, &res, &cfg);
                writeln!(io.out, "{}", history_entry(trace)).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

struct Loaded {
    format: DatasetFormat,
    data: Dataset,
    world: World,
    workers: usize,
}

fn load_data(s: &Settings, args: &DatasetArgs) -> Result<Loaded, CliError> {
    let format = parse_format(&args.format)?;
    let mut data = load_dataset(&args.dataset, format).map_err(runtime)?;
    if let Some(n) = args.limit {
        data.examples.truncate(n);
    }
    let world = if data.documents.is_empty() {
        s.world_from_source(&SourceArgs::default())?
    } else {
        s.world_from_docs(&data.documents)?
    };
    let workers = args.workers.unwrap_or(s.config().eval.workers).max(1);
    Ok(Loaded { format, data, world, workers })
}

#[derive(Serialize)]
struct Comparison {
    cost: CostReport,
    call_reduction: Option<f64>,
    significance: Significance,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    router: &'a str,
    seed: u64,
    n_boot: usize,
    metrics: &'a MetricReport,
    exe_acc_ci95: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<Comparison>,
}

fn route_label(traces: &[AgentTrace]) -> String {
    format!("router_{}", traces.first().map_or("none", |t| t.route.mode.as_str()))
}

fn eval(s: &Settings, env: Env, args: &DatasetArgs, out: Option<&Path>, baseline: Option<&Path>, io: &mut Io) -> Result<(), CliError> {
    let l = load_data(s, args)?;
    let client = s.client(env)?;
    let cfg = s.agent_config()?;
    let (seed, n_boot) = (s.config().eval.seed, s.config().eval.n_boot);
    let run = run_eval(&l.data.examples, Some(l.format), &client, &l.world.resources(), &cfg, l.workers).map_err(runtime)?;
    let label = route_label(&run.traces);

    let comparison = match baseline {
        None => None,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            let base = traces_from_jsonl(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            let ids = |ts: &[AgentTrace]| ts.iter().map(|t| t.question_id.clone()).collect::<Vec<_>>();
            if ids(&base) != ids(&run.traces) {
                return Err(CliError::Runtime(format!("{} covers different questions than this run", p.display())));
            }
            let base_correct = correctness(&l.data.examples, &base);
            let mut base_label = route_label(&base);
            if base_label == label {
                base_label = "baseline".into();
            }
            let cost = cost_report(&[
                CostGroup { label: &label, traces: &run.traces, correct: Some(&run.correct) },
                CostGroup { label: &base_label, traces: &base, correct: Some(&base_correct) },
            ]);
            let call_reduction = cost.call_reduction(&label, &base_label);
            let significance = significance(&run.correct, &base_correct, n_boot, seed).map_err(runtime)?;
            Some(Comparison { cost, call_reduction, significance })
        }
    };

    let output = EvalOutput {
        router: &label,
        seed,
        n_boot,
        metrics: &run.report,
        exe_acc_ci95: bootstrap_ci(&run.correct, n_boot, seed),
        baseline: comparison,
    };
    let mut text = run.report.render_table();
    let (lo, hi) = output.exe_acc_ci95;
    let _ = writeln!(text, "exe_acc 95% CI     [{:.2}, {:.2}]", lo * 100.0, hi * 100.0);
    if let Some(c) = &output.baseline {
        text.push('\n');
        text.push_str(&c.cost.render_table());
        if let Some(r) = c.call_reduction {
            let _ = writeln!(text, "call reduction     {:.2}%", r * 100.0);
        }
        let sig = &c.significance;
        let _ = writeln!(text, "mcnemar            chi2 {:.3}, p {:.4} (b={}, c={})", sig.mcnemar_chi2, sig.mcnemar_p, sig.b, sig.c);
    }
    write!(io.out, "{text}").map_err(io_err)?;

    if let Some(dir) = out {
        write_file(&dir.join("traces.jsonl"), &traces_to_jsonl(&run.traces))?;
        write_file(&dir.join("report.json"), &(serde_json::to_string_pretty(&output).expect("report serializes") + "\n"))?;
        write_file(&dir.join("report.txt"), &text)?;
    }
    Ok(())
}

fn mine(
    s: &Settings,
    corpus: Option<&Path>,
    queries: Option<&Path>,
    dataset: Option<&Path>,
    format: &str,
    out: Option<&Path>,
    io: &mut Io,
) -> Result<(), CliError> {
    let data = match dataset {
        Some(d) => Some(load_dataset(d, parse_format(format)?).map_err(runtime)?),
        None => None,
    };
    let docs = match &data {
        Some(d) if !d.documents.is_empty() => d.documents.clone(),
        _ => documents_for(s, corpus, None, format)?,
    };
    let passages = build_corpus(&docs, &s.config().chunk_config()).map_err(runtime)?;
    let metas: HashMap<String, _> = docs.iter().map(|d| (d.id.clone(), d.source_meta.clone())).collect();

    let gold: Vec<GoldQuery> = match (queries, &data) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| runtime(format!("{}: {e}", p.display()))))
                .collect::<Result<_, _>>()?
        }
        (None, Some(d)) => d
            .examples
            .iter()
            .filter_map(|e| {
                let id = e.gold_passage_ids.as_ref()?.first()?;
                Some(GoldQuery { query_id: e.id.clone(), gold_id: id.clone() })
            })
            .collect(),
        (None, None) => return Err(CliError::Usage("pass --queries or --dataset".into())),
    };

    let lexicon = s.lexicon()?;
    let lex = lexicon.as_ref().unwrap_or_else(|| finrag::Lexicon::builtin());
    let mined = mine_negatives(&passages, &metas, &gold, lex);

    // mean contrastive loss when the question texts are known
    let mut loss = None;
    if let Some(d) = &data {
        let questions: HashMap<&str, &str> = d.examples.iter().map(|e| (e.id.as_str(), e.question.as_str())).collect();
        let by_id: HashMap<&str, &str> = passages.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
        let embedder = s.embedder()?;
        let cfg = ContrastiveConfig { tau: s.config().mining.tau };
        let mut total = 0.0;
        let mut n = 0usize;
        for q in &gold {
            let negs: Vec<&str> =
                mined.pairs.iter().filter(|p| p.query_id == q.query_id).map(|p| by_id[p.negative_id.as_str()]).collect();
            let (Some(question), Some(pos)) = (questions.get(q.query_id.as_str()), by_id.get(q.gold_id.as_str())) else {
                continue;
            };
            if negs.is_empty() {
                continue;
            }
            let qv = embedder.embed(question).map_err(runtime)?;
            let pv = embedder.embed(pos).map_err(runtime)?;
            let nv = negs.iter().map(|t| embedder.embed(t)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
            total += contrastive_loss(&qv, &pv, &nv, &cfg).map_err(runtime)?;
            n += 1;
        }
        if n > 0 {
            loss = Some(total / n as f64);
        }
    }

    let mut report = serde_json::to_value(&mined.report).expect("report serializes");
    if let Some(l) = loss {
        report["mean_contrastive_loss"] = serde_json::json!(l);
    }
    let report_text = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(p) => {
            write_file(p, &mined.pairs_jsonl())?;
            writeln!(io.out, "{report_text}").map_err(io_err)
        }
        None => {
            write!(io.out, "{}", mined.pairs_jsonl()).map_err(io_err)?;
            writeln!(io.err, "{report_text}").map_err(io_err)
        }
    }
}

fn train(s: &Settings, env: Env, args: &DatasetArgs, out: &Path, folds: usize, io: &mut Io) -> Result<(), CliError> {
    let l = load_data(s, args)?;
    let client = s.client(env)?;
    let base = s.agent_config()?;
    let res = l.world.resources();
    let examples = &l.data.examples;

    let single_cfg = finrag::AgentConfig { router_mode: RouterMode::ForceSimple, ..base.clone() };
    let full_cfg = finrag::AgentConfig { router_mode: RouterMode::Off, ..base };
    let single = run_examples(examples, &client, &res, &single_cfg, l.workers);
    let full = run_examples(examples, &client, &res, &full_cfg, l.workers);
    let pairs = |ts: &[AgentTrace]| -> Vec<(String, bool)> {
        examples.iter().map(|e| e.id.clone()).zip(correctness(examples, ts)).collect()
    };
    let labels = derive_labels(&pairs(&single), &pairs(&full)).map_err(runtime)?;
    let features: Vec<_> = full.iter().map(|t| t.route.features.unwrap_or_default()).collect();
    let routes: Vec<_> = labels.iter().map(|(_, r)| *r).collect();
    let gcfg = GbdtConfig { folds, seed: s.config().eval.seed, ..GbdtConfig::default() };
    let (model, report) = train_router(&features, &routes, &gcfg).map_err(runtime)?;
    write_file(out, &(RouterModel::Gbdt(model).to_json() + "\n"))?;
    writeln!(io.out, "examples           {}", report.n).map_err(io_err)?;
    writeln!(io.out, "labelled complex   {}", report.n_complex).map_err(io_err)?;
    let folds: Vec<String> = report.fold_accuracy.iter().map(|a| format!("{:.3}", a)).collect();
    writeln!(io.out, "fold accuracy      {}", folds.join(" ")).map_err(io_err)?;
    writeln!(io.out, "cv accuracy        {:.4}", report.cv_accuracy).map_err(io_err)?;
    writeln!(io.out, "model written to   {}", out.display()).map_err(io_err)
}

fn calibrate(s: &Settings, env: Env, args: &DatasetArgs, out: &Path, io: &mut Io) -> Result<(), CliError> {
    let mut l = load_data(s, args)?;
    // fit against raw scores, so the run itself must not be calibrated
    l.world.calibration = None;
    let client = s.client(env)?;
    let cfg = finrag::AgentConfig { router_mode: RouterMode::Off, ..s.agent_config()? };
    let traces = run_examples(&l.data.examples, &client, &l.world.resources(), &cfg, l.workers);
    let mut pairs = Vec::new();
    for (e, t) in l.data.examples.iter().zip(&traces) {
        for o in t.iterations.iter().filter_map(|r| r.outcome.as_ref()) {
            pairs.push((o.raw_confidence, exe_accuracy(&o.answer, &e.gold_answer)));
        }
    }
    if pairs.len() < 2 {
        return Err(CliError::Runtime(format!("need at least 2 reasoning outcomes to calibrate, got {}", pairs.len())));
    }
    let model = fit_calibration(&pairs);
    write_file(out, &(model.to_json() + "\n"))?;
    writeln!(io.out, "fitted on {} outcomes from {} questions", pairs.len(), traces.len()).map_err(io_err)?;
    writeln!(io.out, "{:>8} {:>10}", "raw", "calibrated").map_err(io_err)?;
    for (raw, cal) in &model.pairs {
        writeln!(io.out, "{raw:>8.3} {cal:>10.3}").map_err(io_err)?;
    }
    Ok(())
}

fn sweep(
    s: &Settings,
    env: Env,
    args: &DatasetArgs,
    theta: Option<String>,
    top_k: Option<String>,
    out: Option<&Path>,
    io: &mut Io,
) -> Result<(), CliError> {
    let (param, spec) = match (theta, top_k) {
        (Some(t), None) => (SweepParam::Theta, t),
        (None, Some(k)) => (SweepParam::TopK, k),
        _ => return Err(CliError::Usage("pass exactly one of --theta or --top-k".into())),
    };
    let values = parse_grid(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let l = load_data(s, args)?;
    let client = s.client(env)?;
    let cfg = s.agent_config()?;
    let report = run_sweep(&l.data.examples, &client, &l.world.resources(), &cfg, param, &values, l.workers).map_err(runtime)?;
    write!(io.out, "{}", report.render_table()).map_err(io_err)?;
    if let Some(p) = out {
        write_file(p, &(serde_json::to_string_pretty(&report).expect("sweep serializes") + "\n"))?;
    }
    Ok(())
}
