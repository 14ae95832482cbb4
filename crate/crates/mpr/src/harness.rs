//! Experiment runner: training rounds with memory updates, frozen-memory
//! inference with the guard, and the Reflexion-style per-task baseline.
//! Everything it emits (reports, logs, memory snapshots) is deterministic
//! for a given config and suite.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admissibility::{guard_step, GuardConfig, Verdict};
use crate::memory::{MetaPolicyMemory, DEFAULT_MIN_CONFIDENCE, DEFAULT_RETRIEVAL_K};
use crate::policy::{DefectProfile, Policy, PolicyContext, PolicyError, RemotePolicy, ScriptedPolicy};
use crate::reflection::{
    apply_update, baseline_note, diagnose, RemoteReflector, Reflector, ScriptedReflector,
    TrajStep, Trajectory,
};
use crate::remote::RemoteEndpoint;
use crate::textworld::{TaskError, TaskSpec, TextWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
    Baseline,
}

#[derive(Debug, Clone, Copy)]
pub struct RetrievalConfig {
    pub k: usize,
    pub min_conf: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_RETRIEVAL_K,
            min_conf: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PolicyChoice {
    Scripted(DefectProfile),
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectorChoice {
    Scripted,
    Remote,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub task_dir: PathBuf,
    pub rounds: usize,
    pub seed: u64,
    pub guard: GuardConfig,
    pub retrieval: RetrievalConfig,
    pub policy: PolicyChoice,
    pub reflector: ReflectorChoice,
    pub memory_in: Option<PathBuf>,
    pub memory_out: Option<PathBuf>,
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] crate::textworld::EnvError),
    #[error(transparent)]
    Transport(#[from] crate::remote::TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub success: bool,
    pub steps: usize,
    pub attempts_total: usize,
    pub invalid_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub solved: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_task: Vec<TaskReport>,
}

impl RoundReport {
    fn new(round: usize, per_task: Vec<TaskReport>) -> Self {
        let total = per_task.len();
        let solved = per_task.iter().filter(|t| t.success).count();
        RoundReport {
            round,
            solved,
            total,
            accuracy: if total == 0 {
                0.0
            } else {
                100.0 * solved as f64 / total as f64
            },
            per_task,
        }
    }
}

/// First round index whose accuracy is 100, if any.
pub fn rounds_to_full_accuracy(reports: &[RoundReport]) -> Option<usize> {
    reports
        .iter()
        .find(|r| r.total > 0 && r.solved == r.total)
        .map(|r| r.round)
}

pub fn load_tasks(dir: &Path) -> Result<Vec<TaskSpec>, HarnessError> {
    let mut tasks = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_file() {
            tasks.push(TaskSpec::parse(&fs::read_to_string(&path)?)?);
        }
    }
    if tasks.is_empty() {
        return Err(HarnessError::Config(format!(
            "no task files in {}",
            dir.display()
        )));
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    for pair in tasks.windows(2) {
        if pair[0].task_id == pair[1].task_id {
            return Err(HarnessError::Config(format!(
                "duplicate task_id `{}`",
                pair[0].task_id
            )));
        }
    }
    Ok(tasks)
}

fn build_policy(choice: &PolicyChoice) -> Result<Box<dyn Policy>, HarnessError> {
    Ok(match choice {
        PolicyChoice::Scripted(defects) => Box::new(ScriptedPolicy::new(*defects)),
        PolicyChoice::Remote => Box::new(RemotePolicy {
            endpoint: RemoteEndpoint::from_env()?,
        }),
    })
}

fn build_reflector(choice: ReflectorChoice) -> Result<Box<dyn Reflector>, HarnessError> {
    Ok(match choice {
        ReflectorChoice::Scripted => Box::new(ScriptedReflector),
        ReflectorChoice::Remote => Box::new(RemoteReflector {
            endpoint: RemoteEndpoint::from_env()?,
        }),
    })
}

fn verdict_label(verdict: &Verdict) -> String {
    match verdict {
        Verdict::Admissible => "admissible".to_string(),
        Verdict::Violation { kind, .. } => format!("violation:{}", kind.label()),
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    task_id: &'a str,
    round: usize,
    seed: u64,
    mode: &'a str,
    success: bool,
    steps: usize,
}

fn write_episode_log(
    log_dir: &Path,
    mode: &str,
    round: usize,
    seed: u64,
    traj: &Trajectory,
) -> Result<(), HarnessError> {
    let dir = log_dir.join(format!("round{round}"));
    fs::create_dir_all(&dir)?;
    let mut file = fs::File::create(dir.join(format!("{}.jsonl", traj.task_id)))?;
    let header = LogHeader {
        task_id: &traj.task_id,
        round,
        seed,
        mode,
        success: traj.success,
        steps: traj.steps.len(),
    };
    writeln!(file, "{}", serde_json::to_string(&header).unwrap())?;
    for step in &traj.steps {
        writeln!(file, "{}", serde_json::to_string(step).unwrap())?;
    }
    Ok(())
}

/// Whether decisions go through the hard admissibility check.
enum Shield<'a> {
    /// Algorithm 1a and the baseline: raw policy decisions.
    Off,
    /// Algorithm 1b: guard_step on every decision (cfg may disable it for
    /// the ablation arm, which still logs attempts = 1).
    Guard(&'a GuardConfig),
}

fn run_episode(
    task: &TaskSpec,
    seed: u64,
    round: usize,
    policy: &dyn Policy,
    memory: &mut MetaPolicyMemory,
    use_memory: bool,
    retrieval: RetrievalConfig,
    shield: &Shield,
    notes: &[String],
) -> Result<(Trajectory, TaskReport), HarnessError> {
    let (mut env, mut obs) = TextWorld::reset(task, seed)?;
    let mut steps: Vec<TrajStep> = Vec::new();
    let mut attempts_total = 0;
    let mut invalid_steps = 0;
    while !obs.done {
        let retrieved = if use_memory {
            memory.retrieve(&obs.facts, retrieval.k, retrieval.min_conf)
        } else {
            Vec::new()
        };
        let retrieved_hashes: Vec<String> = retrieved.iter().map(|r| r.hash.clone()).collect();
        let mut ctx = PolicyContext {
            task_goal: task.goal.clone(),
            observation: obs.clone(),
            retrieved,
            feedback_notes: notes.to_vec(),
            resample_index: 0,
        };
        let (action, attempts, verdict, followed) = match shield {
            Shield::Off => {
                let trace = policy.decide(&ctx)?;
                (trace.action, 1, "unguarded".to_string(), trace.followed)
            }
            Shield::Guard(cfg) => {
                let outcome = guard_step(&mut ctx, memory, cfg, policy)?;
                let verdict = if cfg.enabled {
                    verdict_label(&outcome.verdict)
                } else {
                    "unguarded".to_string()
                };
                (outcome.action, outcome.attempts, verdict, outcome.followed)
            }
        };
        let invalid = !obs.admissible.contains(&action);
        let next = env.step(&action)?;
        attempts_total += attempts;
        invalid_steps += usize::from(invalid);
        steps.push(TrajStep {
            facts: obs.facts,
            retrieved: retrieved_hashes,
            followed,
            action: action.to_fact(),
            verdict,
            attempts,
            invalid,
            reward: next.reward,
            done: next.done,
        });
        obs = next;
    }
    let success = steps.last().is_some_and(|s| s.reward == 1);
    let report = TaskReport {
        task_id: task.task_id.clone(),
        success,
        steps: steps.len(),
        attempts_total,
        invalid_steps,
    };
    let traj = Trajectory {
        task_id: task.task_id.clone(),
        round: round as u32,
        goal: task.goal.clone(),
        steps,
        success,
    };
    Ok((traj, report))
}

fn followed_feedback(traj: &Trajectory) -> Vec<(String, bool)> {
    let mut hashes: Vec<String> = Vec::new();
    for step in &traj.steps {
        for hash in &step.followed {
            if !hashes.contains(hash) {
                hashes.push(hash.clone());
            }
        }
    }
    hashes.into_iter().map(|h| (h, true)).collect()
}

fn stamped(path: &Path, round: usize) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(format!(".round{round}"));
    PathBuf::from(name)
}

/// Algorithm 1a: no guard, memory grows on failures, followed rules are
/// reinforced on success, snapshots written per round.
pub fn run_training(
    cfg: &RunConfig,
) -> Result<(Vec<RoundReport>, MetaPolicyMemory), HarnessError> {
    if cfg.rounds == 0 {
        return Err(HarnessError::Config("rounds must be >= 1".into()));
    }
    let memory_out = cfg
        .memory_out
        .as_ref()
        .ok_or_else(|| HarnessError::Config("train mode requires memory_out".into()))?;
    let tasks = load_tasks(&cfg.task_dir)?;
    let policy = build_policy(&cfg.policy)?;
    let reflector = build_reflector(cfg.reflector)?;
    let mut memory = match &cfg.memory_in {
        Some(path) => MetaPolicyMemory::load(path)?,
        None => MetaPolicyMemory::new(),
    };
    memory.set_frozen(false);
    let mut reports = Vec::new();
    for round in 1..=cfg.rounds {
        let mut rows = Vec::new();
        for task in &tasks {
            let (traj, row) = run_episode(
                task,
                cfg.seed,
                round,
                policy.as_ref(),
                &mut memory,
                true,
                cfg.retrieval,
                &Shield::Off,
                &[],
            )?;
            if traj.success {
                memory.reinforce(&followed_feedback(&traj), true)?;
            } else {
                let (rules, _dropped) = reflector.reflect(&traj)?;
                apply_update(&rules, &traj, &mut memory)?;
            }
            if let Some(log_dir) = &cfg.log_dir {
                write_episode_log(log_dir, "train", round, cfg.seed, &traj)?;
            }
            rows.push(row);
        }
        reports.push(RoundReport::new(round, rows));
        memory.save(&stamped(memory_out, round))?;
    }
    memory.save(memory_out)?;
    Ok((reports, memory))
}

/// Algorithm 1b: frozen memory, guard on every decision, single pass.
pub fn run_inference(cfg: &RunConfig) -> Result<RoundReport, HarnessError> {
    let memory_in = cfg
        .memory_in
        .as_ref()
        .ok_or_else(|| HarnessError::Config("infer mode requires memory_in".into()))?;
    let tasks = load_tasks(&cfg.task_dir)?;
    let policy = build_policy(&cfg.policy)?;
    let mut memory = MetaPolicyMemory::load(memory_in)?;
    memory.set_frozen(true);
    let mut rows = Vec::new();
    for task in &tasks {
        let (traj, row) = run_episode(
            task,
            cfg.seed,
            1,
            policy.as_ref(),
            &mut memory,
            true,
            cfg.retrieval,
            &Shield::Guard(&cfg.guard),
            &[],
        )?;
        if let Some(log_dir) = &cfg.log_dir {
            write_episode_log(log_dir, "infer", 1, cfg.seed, &traj)?;
        }
        rows.push(row);
    }
    Ok(RoundReport::new(1, rows))
}

/// Reflexion-style baseline: per-task note buffers, no rule memory, no
/// guard, no cross-task transfer.
pub fn run_baseline(cfg: &RunConfig) -> Result<Vec<RoundReport>, HarnessError> {
    if cfg.rounds == 0 {
        return Err(HarnessError::Config("rounds must be >= 1".into()));
    }
    let tasks = load_tasks(&cfg.task_dir)?;
    let policy = build_policy(&cfg.policy)?;
    let mut scratch = MetaPolicyMemory::new();
    let mut notes: Vec<Vec<String>> = vec![Vec::new(); tasks.len()];
    let mut reports = Vec::new();
    for round in 1..=cfg.rounds {
        let mut rows = Vec::new();
        for (idx, task) in tasks.iter().enumerate() {
            let (traj, row) = run_episode(
                task,
                cfg.seed,
                round,
                policy.as_ref(),
                &mut scratch,
                false,
                cfg.retrieval,
                &Shield::Off,
                &notes[idx],
            )?;
            if !traj.success {
                if let Some(note) = diagnose(&traj).first().and_then(baseline_note) {
                    if !notes[idx].contains(&note) {
                        notes[idx].push(note);
                    }
                }
            }
            if let Some(log_dir) = &cfg.log_dir {
                write_episode_log(log_dir, "baseline", round, cfg.seed, &traj)?;
            }
            rows.push(row);
        }
        reports.push(RoundReport::new(round, rows));
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    method: &'a str,
    rounds: &'a [RoundReport],
}

pub fn write_reports(
    method: &str,
    reports: &[RoundReport],
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("method,round,solved,total,accuracy\n");
            for r in reports {
                out.push_str(&format!(
                    "{},{},{},{},{:.2}\n",
                    method, r.round, r.solved, r.total, r.accuracy
                ));
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(&ReportDoc { method, rounds: reports }).unwrap();
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suites::gen_tasks;

    fn config(mode: Mode, dir: &Path) -> RunConfig {
        RunConfig {
            mode,
            task_dir: dir.to_path_buf(),
            rounds: 5,
            seed: 7,
            guard: GuardConfig::default(),
            retrieval: RetrievalConfig::default(),
            policy: PolicyChoice::Scripted(DefectProfile::all()),
            reflector: ReflectorChoice::Scripted,
            memory_in: None,
            memory_out: None,
            log_dir: None,
        }
    }

    #[test]
    fn zero_defect_training_keeps_memory_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let tasks = tmp.path().join("tasks");
        gen_tasks("train_small", &tasks).unwrap();
        let mut cfg = config(Mode::Train, &tasks);
        cfg.rounds = 1;
        cfg.policy = PolicyChoice::Scripted(DefectProfile::default());
        cfg.memory_out = Some(tmp.path().join("m.mpm"));
        let (reports, memory) = run_training(&cfg).unwrap();
        assert_eq!(reports[0].accuracy, 100.0);
        assert!(memory.is_empty());
    }

    #[test]
    fn training_converges_with_all_defects() {
        let tmp = tempfile::tempdir().unwrap();
        let tasks = tmp.path().join("tasks");
        gen_tasks("train_small", &tasks).unwrap();
        let mut cfg = config(Mode::Train, &tasks);
        cfg.memory_out = Some(tmp.path().join("m.mpm"));
        let (reports, memory) = run_training(&cfg).unwrap();
        assert!(reports.windows(2).all(|w| w[0].solved <= w[1].solved));
        assert_eq!(reports.last().unwrap().accuracy, 100.0);
        assert!(!memory.is_empty());
        for round in 1..=5 {
            assert!(tmp.path().join(format!("m.mpm.round{round}")).exists());
        }
    }

    #[test]
    fn inference_requires_memory_in() {
        let tmp = tempfile::tempdir().unwrap();
        let tasks = tmp.path().join("tasks");
        gen_tasks("test_small", &tasks).unwrap();
        let cfg = config(Mode::Infer, &tasks);
        assert!(matches!(
            run_inference(&cfg),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn one_round_baseline_equals_memoryless_run() {
        let tmp = tempfile::tempdir().unwrap();
        let tasks = tmp.path().join("tasks");
        gen_tasks("train_small", &tasks).unwrap();
        let mut cfg = config(Mode::Baseline, &tasks);
        cfg.rounds = 1;
        let baseline = run_baseline(&cfg).unwrap();
        cfg.rounds = 2;
        let two_rounds = run_baseline(&cfg).unwrap();
        // round 1 is unaffected by reflection, which only exists from round 2
        assert_eq!(baseline[0], two_rounds[0]);
        assert!(two_rounds[1].solved >= two_rounds[0].solved);
    }

    #[test]
    fn reports_render_stable_csv_and_json() {
        let reports = vec![RoundReport::new(
            1,
            vec![TaskReport {
                task_id: "t01".into(),
                success: true,
                steps: 2,
                attempts_total: 2,
                invalid_steps: 0,
            }],
        )];
        let tmp = tempfile::tempdir().unwrap();
        let csv_path = tmp.path().join("r.csv");
        write_reports("mpr", &reports, ReportFormat::Csv, &csv_path).unwrap();
        let csv = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv, "method,round,solved,total,accuracy\nmpr,1,1,1,100.00\n");
        let json_path = tmp.path().join("r.json");
        write_reports("mpr", &reports, ReportFormat::Json, &json_path).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed["method"], "mpr");
        assert_eq!(parsed["rounds"][0]["per_task"][0]["task_id"], "t01");
    }
}
