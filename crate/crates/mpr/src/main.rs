use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpr::admissibility::GuardConfig;
use mpr::harness::{
    run_baseline, run_inference, run_training, write_reports, Mode, PolicyChoice, ReflectorChoice,
    ReportFormat, RetrievalConfig, RoundReport, RunConfig,
};
use mpr::memory::{MetaPolicyMemory, RuleSource};
use mpr::policy::DefectProfile;
use mpr::rulelang::print_rule;
use mpr::suites::gen_tasks;

#[derive(Parser)]
#[command(
    name = "mpr",
    version,
    about = "Rule-memory agent loop for a deterministic household text world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training rounds: failures are reflected into rule memory.
    Train(RunArgs),
    /// Evaluate a frozen memory with the admissibility guard.
    Infer(RunArgs),
    /// Run the per-task reflection baseline (no rule memory, no guard).
    Baseline(RunArgs),
    /// Write a bundled task suite to a directory.
    GenTasks {
        /// Suite name (train_small or test_small).
        #[arg(long)]
        suite: String,
        /// Output directory for the task files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect or lint memory files.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Print every rule with confidence, provenance, and usage counters.
    Inspect {
        file: PathBuf,
        /// Only show rules mentioning this predicate or action verb.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Validate a memory file and report the first problem.
    Lint { file: PathBuf },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// key=value config file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of task files.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Number of rounds (train and baseline only). [default: 1]
    #[arg(long)]
    rounds: Option<usize>,
    /// Placement seed for tasks with pools. [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Hard admissibility check: on or off (infer only). [default: on]
    #[arg(long)]
    guard: Option<String>,
    /// Confidence needed before a rule can hard-block. [default: 0.9]
    #[arg(long)]
    guard_threshold: Option<f64>,
    /// Resamples before falling back to look(). [default: 3]
    #[arg(long)]
    resample_budget: Option<usize>,
    /// Max rules retrieved per state. [default: 8]
    #[arg(long)]
    retrieval_k: Option<usize>,
    /// Minimum confidence for retrieval. [default: 0.2]
    #[arg(long)]
    min_conf: Option<f64>,
    /// Scripted policy defects: all, none, or a comma list. [default: all]
    #[arg(long)]
    defects: Option<String>,
    /// Action policy: scripted or remote. [default: scripted]
    #[arg(long)]
    policy: Option<String>,
    /// Reflection source: scripted or remote. [default: scripted]
    #[arg(long)]
    reflector: Option<String>,
    /// Memory file to start from (required for infer).
    #[arg(long)]
    memory_in: Option<PathBuf>,
    /// Memory file to write (required for train).
    #[arg(long)]
    memory_out: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report format: csv or json. [default: csv]
    #[arg(long)]
    report_format: Option<String>,
    /// Directory for per-episode trajectory logs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

const CONFIG_KEYS: &[&str] = &[
    "tasks",
    "rounds",
    "seed",
    "guard",
    "guard_threshold",
    "resample_budget",
    "retrieval_k",
    "min_conf",
    "defects",
    "policy",
    "reflector",
    "memory_in",
    "memory_out",
    "report",
    "report_format",
    "log_dir",
];

fn load_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!(
                "{} line {}: expected key=value",
                path.display(),
                idx + 1
            ))
        })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(CliError::config(format!(
                "{} line {}: unknown key `{key}`",
                path.display(),
                idx + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.file.get(key).cloned())
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(PathBuf::from))
    }

    fn parsed<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map(Some)
                    .map_err(|_| CliError::config(format!("bad value for `{key}`: {raw}"))),
                None => Ok(None),
            },
        }
    }
}

fn resolve_run_config(mode: Mode, args: RunArgs) -> Result<(RunConfig, RunArgs), CliError> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?,
        None => BTreeMap::new(),
    };
    let r = Resolver { file };
    let a = args.clone();

    let task_dir = r
        .path(a.tasks, "tasks")
        .ok_or_else(|| CliError::config("--tasks is required"))?;
    if !task_dir.is_dir() {
        return Err(CliError::config(format!(
            "task directory {} does not exist",
            task_dir.display()
        )));
    }
    let guard_enabled = match r.string(a.guard, "guard").as_deref() {
        None | Some("on") => true,
        Some("off") => false,
        Some(other) => {
            return Err(CliError::config(format!(
                "--guard must be on or off, got `{other}`"
            )))
        }
    };
    let defaults = GuardConfig::default();
    let guard = GuardConfig {
        enabled: guard_enabled,
        hard_conf_threshold: r
            .parsed(a.guard_threshold, "guard_threshold")?
            .unwrap_or(defaults.hard_conf_threshold),
        resample_budget: r
            .parsed(a.resample_budget, "resample_budget")?
            .unwrap_or(defaults.resample_budget),
        fallback: defaults.fallback,
    };
    let retrieval_defaults = RetrievalConfig::default();
    let retrieval = RetrievalConfig {
        k: r.parsed(a.retrieval_k, "retrieval_k")?
            .unwrap_or(retrieval_defaults.k),
        min_conf: r
            .parsed(a.min_conf, "min_conf")?
            .unwrap_or(retrieval_defaults.min_conf),
    };
    let defects = match r.string(a.defects, "defects") {
        Some(spec) => DefectProfile::parse(&spec).map_err(CliError::Config)?,
        None => DefectProfile::all(),
    };
    let policy = match r.string(a.policy, "policy").as_deref() {
        None | Some("scripted") => PolicyChoice::Scripted(defects),
        Some("remote") => PolicyChoice::Remote,
        Some(other) => {
            return Err(CliError::config(format!(
                "--policy must be scripted or remote, got `{other}`"
            )))
        }
    };
    let reflector = match r.string(a.reflector, "reflector").as_deref() {
        None | Some("scripted") => ReflectorChoice::Scripted,
        Some("remote") => ReflectorChoice::Remote,
        Some(other) => {
            return Err(CliError::config(format!(
                "--reflector must be scripted or remote, got `{other}`"
            )))
        }
    };
    let memory_in = r.path(a.memory_in, "memory_in");
    if let Some(path) = &memory_in {
        if !path.is_file() {
            return Err(CliError::config(format!(
                "memory file {} does not exist",
                path.display()
            )));
        }
    }
    let memory_out = r.path(a.memory_out, "memory_out");
    match mode {
        Mode::Infer if memory_in.is_none() => {
            return Err(CliError::config("infer requires --memory-in"))
        }
        Mode::Train if memory_out.is_none() => {
            return Err(CliError::config("train requires --memory-out"))
        }
        _ => {}
    }

    let cfg = RunConfig {
        mode,
        task_dir,
        rounds: r.parsed(a.rounds, "rounds")?.unwrap_or(1),
        seed: r.parsed(a.seed, "seed")?.unwrap_or(7),
        guard,
        retrieval,
        policy,
        reflector,
        memory_in,
        memory_out,
        log_dir: r.path(a.log_dir, "log_dir"),
    };
    if cfg.rounds == 0 {
        return Err(CliError::config("--rounds must be >= 1"));
    }
    let resolved_report = RunArgs {
        report: r.path(args.report, "report"),
        report_format: r.string(args.report_format, "report_format"),
        ..RunArgs::default()
    };
    Ok((cfg, resolved_report))
}

fn emit_reports(
    method: &str,
    reports: &[RoundReport],
    args: &RunArgs,
) -> Result<(), CliError> {
    for r in reports {
        println!(
            "{method} round {}: {}/{} solved ({:.1}%)",
            r.round, r.solved, r.total, r.accuracy
        );
    }
    if let Some(path) = &args.report {
        let format = match args.report_format.as_deref() {
            None | Some("csv") => ReportFormat::Csv,
            Some("json") => ReportFormat::Json,
            Some(other) => {
                return Err(CliError::config(format!(
                    "--report-format must be csv or json, got `{other}`"
                )))
            }
        };
        write_reports(method, reports, format, path)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn source_label(source: RuleSource) -> &'static str {
    match source {
        RuleSource::Scripted => "scripted",
        RuleSource::Remote => "remote",
        RuleSource::Manual => "manual",
    }
}

fn rules_inspect(file: &PathBuf, filter: Option<&str>) -> Result<(), CliError> {
    let memory = MetaPolicyMemory::load(file).map_err(|e| CliError::Config(e.to_string()))?;
    println!("hash          conf   rule");
    let mut entries: Vec<_> = memory.entries().collect();
    entries.sort_by(|(ha, a), (hb, b)| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| ha.cmp(hb))
    });
    let mut shown = 0;
    for (hash, entry) in entries {
        if let Some(symbol) = filter {
            let mentions = entry.rule.directive.pattern.predicate == symbol
                || entry
                    .rule
                    .condition
                    .iter()
                    .any(|lit| lit.predicate == symbol);
            if !mentions {
                continue;
            }
        }
        println!(
            "{}  {:.3}  {}  [{} task={} round={} retrieved={} followed={} ok={} fail={}]",
            &hash[..12],
            entry.confidence,
            print_rule(&entry.rule),
            source_label(entry.provenance.source),
            entry.provenance.task_id,
            entry.provenance.round,
            entry.stats.retrieved,
            entry.stats.followed,
            entry.stats.successes,
            entry.stats.failures,
        );
        shown += 1;
    }
    if shown == 0 {
        println!("(empty)");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, report_args) = resolve_run_config(Mode::Train, args)?;
            let (reports, memory) =
                run_training(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            emit_reports("mpr", &reports, &report_args)?;
            println!(
                "memory written to {} ({} rules)",
                cfg.memory_out.as_ref().unwrap().display(),
                memory.len()
            );
            Ok(())
        }
        Command::Infer(args) => {
            let (cfg, report_args) = resolve_run_config(Mode::Infer, args)?;
            let report = run_inference(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            emit_reports("infer", std::slice::from_ref(&report), &report_args)
        }
        Command::Baseline(args) => {
            let (cfg, report_args) = resolve_run_config(Mode::Baseline, args)?;
            let reports = run_baseline(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            emit_reports("reflexion", &reports, &report_args)
        }
        Command::GenTasks { suite, out } => {
            let count = gen_tasks(&suite, &out).map_err(|e| CliError::Config(e.to_string()))?;
            println!("wrote {count} tasks to {}", out.display());
            Ok(())
        }
        Command::Rules { command } => match command {
            RulesCommand::Inspect { file, filter } => rules_inspect(&file, filter.as_deref()),
            RulesCommand::Lint { file } => {
                let memory =
                    MetaPolicyMemory::load(&file).map_err(|e| CliError::Config(e.to_string()))?;
                println!("ok: {} rules", memory.len());
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
