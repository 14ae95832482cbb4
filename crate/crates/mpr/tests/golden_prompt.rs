//! Pins the exact prompt layout sent to the remote policy endpoint.
//! Run with UPDATE_GOLDEN=1 to regenerate the fixture after a deliberate
//! format change.

use std::path::PathBuf;

use mpr::memory::{MetaPolicyMemory, Provenance, RuleSource};
use mpr::policy::{render_prompt, PolicyContext};
use mpr::rulelang::parse_rule;
use mpr::textworld::{TaskSpec, TextWorld};

const FIXTURE: &str = "\
task_id: golden
location: kitchen
location: pantry
agent_at: kitchen
receptacle: fridge loc=kitchen openable closed
receptacle: table loc=kitchen
object: apple in=fridge dirty
object: bread in=pantry
appliance: pantry clean
goal: in(apple, table)
goal: clean(apple)
";

fn golden_context() -> PolicyContext {
    let task = TaskSpec::parse(FIXTURE).unwrap();
    let (_, obs) = TextWorld::reset(&task, 0).unwrap();
    let mut memory = MetaPolicyMemory::new();
    for text in [
        "WHEN at(?r) AND closed(?c) THEN PREFER open(?c)",
        "WHEN dirty(?x) AND visible(?x) AND hand_empty() THEN REQUIRE take(?x)",
        "WHEN open(?c) AND hand_empty() THEN AVOID close(?c)",
    ] {
        memory
            .insert(
                &parse_rule(text).unwrap(),
                Provenance {
                    source: RuleSource::Scripted,
                    task_id: "golden".into(),
                    round: 1,
                },
            )
            .unwrap();
    }
    let retrieved = memory.retrieve(&obs.facts, 8, 0.2);
    PolicyContext {
        task_goal: task.goal.clone(),
        observation: obs,
        retrieved,
        feedback_notes: vec!["violation: avoid close(fridge)".to_string()],
        resample_index: 1,
    }
}

#[test]
fn prompt_matches_golden_fixture() {
    let prompt = render_prompt(&golden_context());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompt.txt");
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &prompt).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&path)
        .expect("golden fixture missing; run with UPDATE_GOLDEN=1 to create it");
    assert_eq!(
        prompt, golden,
        "prompt layout changed; rerun with UPDATE_GOLDEN=1 if intentional"
    );
}
