//! End-to-end tests of the `mpr` binary: exit codes, error messages, and
//! flag/config-file precedence.

use std::path::Path;
use std::process::{Command, Output};

use mpr::memory::{MetaPolicyMemory, Provenance, RuleSource};
use mpr::rulelang::parse_rule;

fn mpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpr"))
        .args(args)
        .output()
        .expect("failed to spawn mpr")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process was killed by signal")
}

fn gen(dir: &Path, suite: &str) -> String {
    let path = dir.join(suite);
    let out = mpr(&["gen-tasks", "--suite", suite, "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "gen-tasks failed: {}", stderr(&out));
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_tasks_writes_suite_and_rejects_unknown_names() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tasks");
    let out = mpr(&["gen-tasks", "--suite", "train_small", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("wrote 12 tasks"));
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 12);

    let out = mpr(&["gen-tasks", "--suite", "nope", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("nope"), "error should name the bad suite: {err}");
    assert!(err.contains("train_small") && err.contains("test_small"));
}

#[test]
fn train_writes_memory_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = gen(tmp.path(), "train_small");
    let memory = tmp.path().join("m.mpm");
    let report = tmp.path().join("r.csv");
    let out = mpr(&[
        "train",
        "--tasks",
        &tasks,
        "--rounds",
        "2",
        "--memory-out",
        memory.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mpr round 1:"));
    assert!(text.contains("mpr round 2:"));
    assert!(memory.is_file());
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("method,round,solved,total,accuracy"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn infer_requires_an_existing_memory_file() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = gen(tmp.path(), "test_small");

    let out = mpr(&["infer", "--tasks", &tasks]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("infer requires --memory-in"));

    let missing = tmp.path().join("missing.mpm");
    let out = mpr(&["infer", "--tasks", &tasks, "--memory-in", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("missing.mpm"),
        "error should name the file: {}",
        stderr(&out)
    );
}

#[test]
fn rules_lint_reports_line_of_first_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.mpm");
    let mut memory = MetaPolicyMemory::new();
    memory
        .insert(
            &parse_rule("WHEN dirty(?x) THEN PREFER clean(?x)").unwrap(),
            Provenance {
                source: RuleSource::Manual,
                task_id: "t".into(),
                round: 1,
            },
        )
        .unwrap();
    memory.save(&path).unwrap();
    // push the stored confidence (0.5) out of range by editing the file
    let text = std::fs::read_to_string(&path).unwrap().replace("0.5", "1.5");
    std::fs::write(&path, text).unwrap();

    let out = mpr(&["rules", "lint", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("line 2"), "lint should report the line: {err}");
    assert!(err.contains("confidence"), "lint should name the problem: {err}");
}

#[test]
fn rules_inspect_lists_filters_and_handles_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.mpm");
    let mut memory = MetaPolicyMemory::new();
    let prov = Provenance {
        source: RuleSource::Manual,
        task_id: "t".into(),
        round: 1,
    };
    memory
        .insert(&parse_rule("WHEN closed(?c) THEN PREFER open(?c)").unwrap(), prov.clone())
        .unwrap();
    memory
        .insert(&parse_rule("WHEN dirty(?x) THEN AVOID clean(?x)").unwrap(), prov)
        .unwrap();
    memory.save(&path).unwrap();

    let out = mpr(&["rules", "inspect", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("PREFER open(?v0)"));
    assert!(text.contains("AVOID clean(?v0)"));

    let out = mpr(&["rules", "inspect", path.to_str().unwrap(), "--filter", "closed"]);
    let text = stdout(&out);
    assert!(text.contains("open(?v0)"));
    assert!(!text.contains("clean(?v0)"));

    let out = mpr(&["rules", "inspect", path.to_str().unwrap(), "--filter", "heat"]);
    assert!(stdout(&out).contains("(empty)"));

    let empty = tmp.path().join("empty.mpm");
    MetaPolicyMemory::new().save(&empty).unwrap();
    let out = mpr(&["rules", "inspect", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("(empty)"));
}

#[test]
fn config_file_matches_flags_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = gen(tmp.path(), "train_small");

    let flag_memory = tmp.path().join("flags.mpm");
    let out = mpr(&[
        "train",
        "--tasks",
        &tasks,
        "--rounds",
        "2",
        "--seed",
        "9",
        "--memory-out",
        flag_memory.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let file_memory = tmp.path().join("file.mpm");
    let config = tmp.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "# training settings\ntasks = {tasks}\nrounds = 2\nseed = 9\nmemory_out = {}\n",
            file_memory.display()
        ),
    )
    .unwrap();
    let out = mpr(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read(&flag_memory).unwrap(),
        std::fs::read(&file_memory).unwrap(),
        "config file run should match the equivalent flag run"
    );

    // an explicit flag overrides the file value
    let override_memory = tmp.path().join("override.mpm");
    let out = mpr(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--rounds",
        "1",
        "--memory-out",
        override_memory.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).matches("mpr round").count(), 1);

    // unknown config keys are rejected with their line number
    std::fs::write(&config, "tasks = x\nbogus = 1\n").unwrap();
    let out = mpr(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
}

#[test]
fn bad_flags_and_values_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = gen(tmp.path(), "test_small");

    let out = mpr(&["train", "--no-such-flag"]);
    assert_eq!(code(&out), 1);

    let memory = tmp.path().join("m.mpm");
    MetaPolicyMemory::new().save(&memory).unwrap();
    let out = mpr(&[
        "infer",
        "--tasks",
        &tasks,
        "--memory-in",
        memory.to_str().unwrap(),
        "--guard",
        "maybe",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("on or off"));

    let out = mpr(&["train", "--tasks", tmp.path().join("absent").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not exist"));
}
