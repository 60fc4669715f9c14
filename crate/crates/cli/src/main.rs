use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use toolpath_core::dataset::{coverage_report, load_dataset, validate_dataset, DatasetFile};
use toolpath_core::metrics::MsssDenominator;
use toolpath_core::plan::{enumerate_paths, partition_paths, render_paths, EnumLimits};
use toolpath_core::report::{short_digest, ReportBundle};
use toolpath_core::runner::remote::{ClarifyConvention, RemoteConfig, RemoteFactory};
use toolpath_core::runner::{
    gold_script, read_transcripts, run_dataset, AdapterFactory, CaseOutcome, PathChoice, ReplayFactory, RunConfig,
    ScriptedFactory,
};
use toolpath_core::tree::build_tree;

#[derive(Parser)]
#[command(name = "toolpath", version, about = "Evaluate multi-mission tool-calling agents against gold plans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file; prints one violation per line.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Show the graph, every execution path and the decision tree of a mission.
    Explain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "case")]
        case_id: String,
        #[arg(long, default_value_t = 0)]
        mission: usize,
    },
    /// Run an agent over the dataset and write a report bundle.
    Run(RunArgs),
    /// Mission-switching coverage of a dataset.
    Coverage {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        /// Also write coverage.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-score stored transcripts without calling any agent.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        /// transcripts.jsonl written by `run`.
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Write gold scripts for every case, usable with `run --script`.
    Script {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = PathKind::Optimal)]
        path: PathKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value_t = Switch::On)]
    teacher_forcing: Switch,
    #[arg(long, value_enum, default_value_t = Denominator::Cumulative)]
    msss_denominator: Denominator,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Restrict to these case ids (repeatable).
    #[arg(long = "case")]
    cases: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AdapterKind::Scripted)]
    adapter: AdapterKind,
    /// Script file (JSON object: case id -> turns). Defaults to gold optimal scripts.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    /// Name of the environment variable holding the bearer token.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long, default_value = "auto")]
    clarify_convention: String,
    #[arg(long)]
    max_turns: Option<usize>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterKind {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Denominator {
    Cumulative,
    Exact,
}

impl From<Denominator> for MsssDenominator {
    fn from(d: Denominator) -> Self {
        match d {
            Denominator::Cumulative => MsssDenominator::Cumulative,
            Denominator::Exact => MsssDenominator::Exact,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathKind {
    Optimal,
    Serial,
}

/// A failure with the exit code it maps to.
struct Fail {
    code: u8,
    message: String,
}

impl Fail {
    fn usage(message: impl Into<String>) -> Self {
        Fail { code: 1, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Fail { code: 2, message: message.into() }
    }
}

type CmdResult = Result<ExitCode, Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { dataset } => cmd_validate(&dataset),
        Command::Explain { dataset, case_id, mission } => cmd_explain(&dataset, &case_id, mission),
        Command::Run(args) => cmd_run(args),
        Command::Coverage { dataset, max_n, out } => cmd_coverage(&dataset, max_n, out.as_deref()),
        Command::Replay { dataset, transcripts, out, eval } => cmd_replay(&dataset, &transcripts, &out, &eval),
        Command::Script { dataset, path, out } => cmd_script(&dataset, path, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<DatasetFile, Fail> {
    load_dataset(path).map_err(|e| Fail::io(e.to_string()))
}

/// Loads and validates; violations are printed and turn into exit code 1.
fn load_valid(path: &Path) -> Result<DatasetFile, Fail> {
    let ds = load(path)?;
    let violations = validate_dataset(&ds);
    if violations.is_empty() {
        return Ok(ds);
    }
    for v in &violations {
        println!("{v}");
    }
    Err(Fail::usage(format!("dataset has {} violation(s)", violations.len())))
}

fn cmd_validate(path: &Path) -> CmdResult {
    let ds = load(path)?;
    let violations = validate_dataset(&ds);
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        eprintln!("{} cases, no violations", ds.cases.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_explain(path: &Path, case_id: &str, index: usize) -> CmdResult {
    let ds = load(path)?;
    let case = ds.case(case_id).ok_or_else(|| Fail::usage(format!("case `{case_id}` not found")))?;
    let mission = case
        .missions
        .get(index)
        .ok_or_else(|| Fail::usage(format!("case `{case_id}` has no mission {index}")))?;
    let mut out = String::new();
    out.push_str(&format!("case {} mission {} ({}, relation {})\n", case.id, index, mission.action_type, mission.relation_type));
    out.push_str(&format!("query: {}\n", mission.query));
    if mission.graph.is_empty() {
        out.push_str(&format!("no tool plan: {} missions are answered in text\n", mission.action_type));
        print!("{out}");
        return Ok(ExitCode::SUCCESS);
    }
    out.push_str("\nnodes:\n");
    for n in &mission.graph.nodes {
        out.push_str(&format!("  [{}] {} {}\n", n.id, n.tool_name, serde_json::Value::Object(n.arguments.clone())));
    }
    out.push_str("edges:\n");
    for (a, b) in &mission.graph.edges {
        out.push_str(&format!("  {a} -> {b}\n"));
    }
    let paths = enumerate_paths(&mission.graph, EnumLimits::default()).map_err(|e| Fail::usage(e.to_string()))?;
    let partition = partition_paths(&paths);
    out.push_str(&format!(
        "\n{} paths, {} optimal with {} steps:\n",
        partition.total(),
        partition.optimal.len(),
        partition.optimal_steps().unwrap_or(0)
    ));
    for line in render_paths(&paths).lines() {
        let path = paths.iter().find(|p| p.to_string() == line);
        let mark = if path.is_some_and(|p| partition.is_optimal(p)) { "*" } else { " " };
        out.push_str(&format!("  {mark} {line}\n"));
    }
    let tree = build_tree(&partition).map_err(|e| Fail::usage(e.to_string()))?;
    out.push_str("\ndecision tree:\n");
    out.push_str(&tree.render());
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn run_config(eval: &EvalArgs) -> RunConfig {
    RunConfig { teacher_forcing: eval.teacher_forcing == Switch::On, ..RunConfig::default() }
}

fn select_cases(ds: &DatasetFile, eval: &EvalArgs) -> Result<DatasetFile, Fail> {
    if eval.cases.is_empty() {
        return Ok(ds.clone());
    }
    let mut picked = DatasetFile { version: ds.version.clone(), cases: Vec::new() };
    for id in &eval.cases {
        let case = ds.case(id).ok_or_else(|| Fail::usage(format!("case `{id}` not found")))?;
        picked.cases.push(case.clone());
    }
    picked.cases.sort_by(|a, b| a.id.cmp(&b.id));
    picked.cases.dedup_by(|a, b| a.id == b.id);
    Ok(picked)
}

fn build_factory(args: &RunArgs, ds: &DatasetFile) -> Result<Box<dyn AdapterFactory>, Fail> {
    match args.adapter {
        AdapterKind::Scripted => match &args.script {
            None => Ok(Box::new(ScriptedFactory::gold(&ds.cases, PathChoice::Optimal))),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Fail::io(format!("cannot read {}: {e}", path.display())))?;
                let name = format!("scripted:{}", path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()));
                let factory = ScriptedFactory::from_json(name, &text)
                    .map_err(|e| Fail::io(format!("cannot parse script {}: {e}", path.display())))?;
                Ok(Box::new(factory))
            }
        },
        AdapterKind::Remote => {
            let endpoint = args.endpoint.clone().ok_or_else(|| Fail::usage("--endpoint is required for the remote adapter"))?;
            let model = args.model.clone().ok_or_else(|| Fail::usage("--model is required for the remote adapter"))?;
            let mut cfg = RemoteConfig::new(endpoint, model);
            cfg.timeout = Duration::from_secs_f64(args.timeout.max(0.001));
            cfg.retry_budget = args.retries;
            cfg.clarify_convention = args.clarify_convention.parse::<ClarifyConvention>().map_err(Fail::usage)?;
            if let Some(var) = &args.auth_env {
                let token = std::env::var(var).map_err(|_| Fail::usage(format!("environment variable {var} is not set")))?;
                cfg.auth_token = Some(token);
            }
            eprintln!("clarify convention: {}", cfg.clarify_convention.label());
            let factory = RemoteFactory::new(cfg).map_err(|e| Fail::io(e.to_string()))?;
            Ok(Box::new(factory))
        }
    }
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let ds = select_cases(&load_valid(&args.dataset)?, &args.eval)?;
    let factory = build_factory(&args, &ds)?;
    let mut cfg = run_config(&args.eval);
    cfg.request_concurrency = args.concurrency;
    cfg.retry_budget = args.retries;
    cfg.max_turns_per_mission = args.max_turns;
    let runs = run_dataset(&ds.cases, factory.as_ref(), &cfg);
    finish_report(&ds, &runs, &cfg, &factory.identity(), &args.out, &args.eval)
}

fn cmd_replay(path: &Path, transcripts: &Path, out: &Path, eval: &EvalArgs) -> CmdResult {
    let ds = select_cases(&load_valid(path)?, eval)?;
    let file = fs::File::open(transcripts).map_err(|e| Fail::io(format!("cannot read {}: {e}", transcripts.display())))?;
    let turns = read_transcripts(BufReader::new(file)).map_err(|e| Fail::io(e.to_string()))?;
    let body = fs::read(transcripts).map_err(|e| Fail::io(e.to_string()))?;
    let factory = ReplayFactory::from_transcripts(format!("replay#{}", short_digest(&body)), &turns).map_err(Fail::io)?;
    let cfg = run_config(eval);
    let runs = run_dataset(&ds.cases, &factory, &cfg);
    finish_report(&ds, &runs, &cfg, &factory.identity(), out, eval)
}

fn finish_report(
    ds: &DatasetFile,
    runs: &[toolpath_core::runner::CaseRun],
    cfg: &RunConfig,
    identity: &str,
    out: &Path,
    eval: &EvalArgs,
) -> CmdResult {
    let mut bundle = ReportBundle::build(ds, runs, cfg, identity, eval.max_n, eval.msss_denominator.into());
    bundle.write(out, runs).map_err(|e| Fail::io(format!("cannot write report to {}: {e}", out.display())))?;
    print!("{}", bundle.summary());
    let unscored: Vec<(&str, &str)> = runs
        .iter()
        .filter_map(|r| match &r.outcome {
            CaseOutcome::Unscored { case_id, reason } => Some((case_id.as_str(), reason.as_str())),
            CaseOutcome::Scored(_) => None,
        })
        .collect();
    if unscored.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for (id, reason) in &unscored {
        eprintln!("unscored\t{id}\t{reason}");
    }
    eprintln!("{} of {} cases unscored", unscored.len(), runs.len());
    Ok(ExitCode::from(3))
}

fn cmd_coverage(path: &Path, max_n: usize, out: Option<&Path>) -> CmdResult {
    if !(1..=6).contains(&max_n) {
        return Err(Fail::usage("--max-n must be between 1 and 6"));
    }
    let ds = load(path)?;
    let report = coverage_report(&ds, max_n);
    let mut stdout = io::stdout().lock();
    let mut text = String::new();
    for row in &report.per_length {
        text.push_str(&format!("length {}: {}/{} covered\n", row.length, row.covered.len(), row.possible));
        let list = |combos: &[toolpath_core::dataset::Combo]| combos.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        if !row.covered.is_empty() {
            text.push_str(&format!("  covered: {}\n", list(&row.covered)));
        }
        if !row.missing.is_empty() && row.length <= 2 {
            text.push_str(&format!("  missing: {}\n", list(&row.missing)));
        } else if !row.missing.is_empty() {
            text.push_str(&format!("  missing: {} combos\n", row.missing.len()));
        }
    }
    text.push_str(&format!("MSSS cumulative: {:.2}\nMSSS exact:      {:.2}\n", report.msss_cumulative, report.msss_exact));
    stdout.write_all(text.as_bytes()).map_err(|e| Fail::io(e.to_string()))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Fail::io(e.to_string()))?;
        let mut csv = String::from("length,possible,covered,missing\n");
        for row in &report.per_length {
            csv.push_str(&format!("{},{},{},{}\n", row.length, row.possible, row.covered.len(), row.missing.len()));
        }
        fs::write(dir.join("coverage.csv"), csv).map_err(|e| Fail::io(e.to_string()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_script(path: &Path, kind: PathKind, out: Option<&Path>) -> CmdResult {
    let ds = load_valid(path)?;
    let choice = match kind {
        PathKind::Optimal => PathChoice::Optimal,
        PathKind::Serial => PathChoice::Serial,
    };
    let scripts: serde_json::Map<String, serde_json::Value> = ds
        .cases
        .iter()
        .map(|c| (c.id.clone(), serde_json::to_value(gold_script(c, choice)).expect("scripts serialize")))
        .collect();
    let mut text = serde_json::to_string_pretty(&scripts).expect("scripts serialize");
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Fail::io(format!("cannot write {}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
