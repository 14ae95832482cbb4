//! Reflection turns a failed trajectory into corrective rules: a fixed
//! table of diagnosis heuristics feeds rule templates, each targeting one
//! policy failure mode. The remote reflector shares the interface and the
//! reply parser enforces the DSL on free-form output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::memory::{InsertOutcome, MemoryError, MetaPolicyMemory, Provenance, RuleSource};
use crate::remote::{RemoteEndpoint, TransportError};
use crate::rulelang::{parse_rule, Fact, RuleAst};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub facts: BTreeSet<Fact>,
    pub retrieved: Vec<String>,
    pub followed: Vec<String>,
    /// The executed action as a ground fact, e.g. `open(fridge)`.
    pub action: Fact,
    pub verdict: String,
    pub attempts: usize,
    pub invalid: bool,
    pub reward: u8,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub round: u32,
    pub goal: Vec<Fact>,
    pub steps: Vec<TrajStep>,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisKind {
    BlockedByClosedContainer,
    MissingPrecondition,
    ActionLoop,
    WastedSteps,
    AvoidRepeatInvalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub kind: DiagnosisKind,
    pub evidence: Vec<usize>,
    pub template_args: Vec<String>,
}

fn fact_display(fact: &Fact) -> String {
    format!("{fact}")
}

fn has(facts: &BTreeSet<Fact>, predicate: &str, args: &[&str]) -> bool {
    facts.contains(&Fact::new(predicate, args))
}

fn find_arg0<'a>(facts: &'a BTreeSet<Fact>, predicate: &str) -> Option<&'a str> {
    facts
        .iter()
        .find(|f| f.predicate == predicate)
        .map(|f| f.args[0].as_str())
}

fn closed_container_diagnosis(traj: &Trajectory) -> Option<Diagnosis> {
    let hidden_goal_object = traj.goal.iter().filter_map(|g| g.args.first()).any(|obj| {
        !traj
            .steps
            .iter()
            .any(|s| has(&s.facts, "visible", &[obj]))
    });
    if !hidden_goal_object {
        return None;
    }
    let evidence: Vec<usize> = traj
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.facts.iter().any(|f| f.predicate == "closed"))
        .map(|(i, _)| i)
        .collect();
    let last_with_closed = *evidence.last()?;
    let receptacles: Vec<String> = traj.steps[last_with_closed]
        .facts
        .iter()
        .filter(|f| f.predicate == "closed")
        .map(|f| f.args[0].clone())
        .collect();
    Some(Diagnosis {
        kind: DiagnosisKind::BlockedByClosedContainer,
        evidence: vec![evidence[0], last_with_closed],
        template_args: receptacles,
    })
}

fn missing_precondition_diagnosis(traj: &Trajectory) -> Option<Diagnosis> {
    for (idx, step) in traj.steps.iter().enumerate() {
        if !step.invalid {
            continue;
        }
        let verb = step.action.predicate.as_str();
        let obj = step.action.args.first()?.as_str();
        match verb {
            "clean" if has(&step.facts, "hand_empty", &[]) => {
                return Some(Diagnosis {
                    kind: DiagnosisKind::MissingPrecondition,
                    evidence: vec![idx],
                    template_args: vec!["clean".into(), obj.into()],
                });
            }
            "heat" | "cool" if has(&step.facts, "holding", &[obj]) => {
                let capability = if verb == "heat" { "can_heat" } else { "can_cool" };
                let loc = find_arg0(&step.facts, capability)?;
                return Some(Diagnosis {
                    kind: DiagnosisKind::MissingPrecondition,
                    evidence: vec![idx],
                    template_args: vec![verb.into(), obj.into(), loc.into()],
                });
            }
            _ => {}
        }
    }
    None
}

fn action_loop_diagnosis(traj: &Trajectory, skip_go: bool) -> Option<Diagnosis> {
    let mut groups: BTreeMap<(&Fact, &BTreeSet<Fact>), Vec<usize>> = BTreeMap::new();
    for (idx, step) in traj.steps.iter().enumerate() {
        if step.invalid || step.action.predicate == "look" {
            continue;
        }
        if skip_go && step.action.predicate == "go" {
            continue;
        }
        groups.entry((&step.action, &step.facts)).or_default().push(idx);
    }
    let ((action, facts), evidence) = groups
        .into_iter()
        .filter(|(_, idxs)| idxs.len() >= 3)
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))?;
    let loc = find_arg0(facts, "at")?;
    let mut template_args = vec![loc.to_string(), action.predicate.clone()];
    template_args.extend(action.args.iter().cloned());
    Some(Diagnosis {
        kind: DiagnosisKind::ActionLoop,
        evidence,
        template_args,
    })
}

fn repeat_invalid_diagnosis(traj: &Trajectory) -> Option<Diagnosis> {
    let mut groups: BTreeMap<&Fact, Vec<usize>> = BTreeMap::new();
    for (idx, step) in traj.steps.iter().enumerate() {
        if step.invalid {
            groups.entry(&step.action).or_default().push(idx);
        }
    }
    let (action, evidence) = groups
        .into_iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))?;
    let mut template_args = vec![action.predicate.clone()];
    template_args.extend(action.args.iter().cloned());
    Some(Diagnosis {
        kind: DiagnosisKind::AvoidRepeatInvalid,
        evidence,
        template_args,
    })
}

/// Heuristics in fixed order, at most one diagnosis per kind.
pub fn diagnose(traj: &Trajectory) -> Vec<Diagnosis> {
    if traj.success {
        return Vec::new();
    }
    let mut out = Vec::new();
    let closed = closed_container_diagnosis(traj);
    let skip_go = closed.is_some();
    out.extend(closed);
    out.extend(missing_precondition_diagnosis(traj));
    // navigation loops are expected while a container is still closed, so
    // the loop detector ignores movement once diagnosis 1 fired
    out.extend(action_loop_diagnosis(traj, skip_go));
    out.extend(repeat_invalid_diagnosis(traj));
    out
}

fn template(text: &str) -> RuleAst {
    parse_rule(text).expect("built-in template must be valid")
}

/// Map a diagnosis to its corrective rule. Templates generalize over
/// objects and locations; only loop rules pin the concrete state.
pub fn rule_for(traj: &Trajectory, diag: &Diagnosis) -> Option<RuleAst> {
    match diag.kind {
        DiagnosisKind::BlockedByClosedContainer => {
            Some(template("WHEN at(?r) AND closed(?c) THEN PREFER open(?c)"))
        }
        DiagnosisKind::MissingPrecondition => match diag.template_args[0].as_str() {
            "clean" => Some(template(
                "WHEN dirty(?x) AND visible(?x) AND hand_empty() THEN REQUIRE take(?x)",
            )),
            "heat" => Some(template(
                "WHEN holding(?x) AND can_heat(?l) AND NOT hot(?x) AND NOT at(?l) THEN PREFER go(?l)",
            )),
            "cool" => Some(template(
                "WHEN holding(?x) AND can_cool(?l) AND NOT cold(?x) AND NOT at(?l) THEN PREFER go(?l)",
            )),
            _ => None,
        },
        DiagnosisKind::ActionLoop => {
            let loc = &diag.template_args[0];
            let verb = &diag.template_args[1];
            let args = diag.template_args[2..].join(", ");
            parse_rule(&format!("WHEN at({loc}) THEN AVOID {verb}({args})")).ok()
        }
        DiagnosisKind::WastedSteps => None,
        DiagnosisKind::AvoidRepeatInvalid => {
            let verb = diag.template_args[0].as_str();
            let facts = &traj.steps[diag.evidence[0]].facts;
            let holding = facts.iter().any(|f| f.predicate == "holding");
            match verb {
                "clean" if has(facts, "hand_empty", &[]) => Some(template(
                    "WHEN hand_empty() AND visible(?x) THEN AVOID clean(?x)",
                )),
                "clean" if holding => Some(template(
                    "WHEN holding(?x) AND at(?l) AND NOT can_clean(?l) THEN AVOID clean(?x)",
                )),
                "heat" if holding => Some(template(
                    "WHEN holding(?x) AND at(?l) AND NOT can_heat(?l) THEN AVOID heat(?x)",
                )),
                "cool" if holding => Some(template(
                    "WHEN holding(?x) AND at(?l) AND NOT can_cool(?l) THEN AVOID cool(?x)",
                )),
                "take" if holding => Some(template(
                    "WHEN holding(?y) AND visible(?x) THEN AVOID take(?x)",
                )),
                _ => None,
            }
        }
    }
}

/// One plain sentence for the Reflexion-style baseline buffer, from the
/// first diagnosis only. Richer hints recreate rule memory by the back
/// door, which is exactly what the baseline must not have.
pub fn baseline_note(diag: &Diagnosis) -> Option<String> {
    match diag.kind {
        DiagnosisKind::BlockedByClosedContainer => {
            let rec = diag.template_args.first()?;
            Some(format!("hint: prefer open({rec}), something may be inside"))
        }
        DiagnosisKind::MissingPrecondition => match diag.template_args[0].as_str() {
            "clean" => Some(format!(
                "hint: prefer take({}) before anything else",
                diag.template_args[1]
            )),
            "heat" | "cool" => Some(format!(
                "hint: prefer go({}) while carrying the item",
                diag.template_args[2]
            )),
            _ => None,
        },
        DiagnosisKind::ActionLoop | DiagnosisKind::AvoidRepeatInvalid => {
            let skip = usize::from(diag.kind == DiagnosisKind::ActionLoop);
            let verb = &diag.template_args[skip];
            let args = diag.template_args[skip + 1..].join(", ");
            Some(format!("hint: avoid {verb}({args}), it went nowhere"))
        }
        DiagnosisKind::WastedSteps => None,
    }
}

/// f(tau): diagnosis table to rule templates, deduplicated by canonical
/// hash. Successful trajectories yield nothing.
pub fn reflect(traj: &Trajectory) -> Vec<RuleAst> {
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for diag in diagnose(traj) {
        if let Some(rule) = rule_for(traj, &diag) {
            if seen.insert(crate::memory::canonical_hash(&rule)) {
                rules.push(rule);
            }
        }
    }
    rules
}

fn followed_hashes(traj: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    for step in &traj.steps {
        for hash in &step.followed {
            if !out.contains(hash) {
                out.push(hash.clone());
            }
        }
    }
    out
}

/// Insert the given rules and apply the failure penalty to every rule that
/// was followed during the failed episode.
pub fn apply_update(
    rules: &[RuleAst],
    traj: &Trajectory,
    memory: &mut MetaPolicyMemory,
) -> Result<Vec<(String, InsertOutcome)>, MemoryError> {
    let mut outcomes = Vec::new();
    for rule in rules {
        outcomes.push(memory.insert(
            rule,
            Provenance {
                source: RuleSource::Scripted,
                task_id: traj.task_id.clone(),
                round: traj.round,
            },
        )?);
    }
    let feedback: Vec<(String, bool)> = followed_hashes(traj)
        .into_iter()
        .map(|h| (h, true))
        .collect();
    memory.reinforce(&feedback, false)?;
    Ok(outcomes)
}

/// M <- M union f(tau), plus the failure penalty, in one mutation point.
pub fn meta_policy_update(
    traj: &Trajectory,
    memory: &mut MetaPolicyMemory,
) -> Result<Vec<(String, InsertOutcome)>, MemoryError> {
    apply_update(&reflect(traj), traj, memory)
}

pub trait Reflector {
    /// Returns corrective rules plus the count of dropped (unparseable)
    /// reply lines; always 0 for the scripted reflector.
    fn reflect(&self, traj: &Trajectory) -> Result<(Vec<RuleAst>, usize), TransportError>;
}

pub struct ScriptedReflector;

impl Reflector for ScriptedReflector {
    fn reflect(&self, traj: &Trajectory) -> Result<(Vec<RuleAst>, usize), TransportError> {
        Ok((reflect(traj), 0))
    }
}

pub fn render_reflection_prompt(traj: &Trajectory) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "An agent failed task {} (round {}). Goal:",
        traj.task_id, traj.round
    )
    .unwrap();
    for g in &traj.goal {
        writeln!(out, "- {g}").unwrap();
    }
    out.push_str("\nSteps taken:\n");
    for (idx, step) in traj.steps.iter().enumerate() {
        writeln!(
            out,
            "{}. {} -> {}",
            idx + 1,
            fact_display(&step.action),
            if step.invalid { "invalid" } else { "ok" }
        )
        .unwrap();
    }
    if let Some(last) = traj.steps.last() {
        out.push_str("\nFinal facts:\n");
        for f in &last.facts {
            writeln!(out, "- {f}").unwrap();
        }
    }
    out.push_str(
        "\nWrite corrective rules, one per line, in this grammar:\n\
         WHEN cond AND ... THEN AVOID|PREFER|REQUIRE verb(args)\n\
         Conditions are predicates over facts; variables start with `?`.\n\
         Examples:\n\
         WHEN at(?r) AND closed(?c) THEN PREFER open(?c)\n\
         WHEN hand_empty() AND visible(?x) THEN AVOID clean(?x)\n",
    );
    out
}

/// Parse-or-drop over reply lines; markdown fences and bullets stripped.
pub fn parse_reflection_reply(text: &str) -> (Vec<RuleAst>, usize) {
    let mut rules = Vec::new();
    let mut dropped = 0;
    for raw in text.lines() {
        let line = raw.trim().trim_matches('`');
        let line = line.strip_prefix("- ").unwrap_or(line).trim();
        if line.is_empty() || raw.trim().starts_with("```") {
            continue;
        }
        match parse_rule(line) {
            Ok(rule) => rules.push(rule),
            Err(_) => dropped += 1,
        }
    }
    (rules, dropped)
}

pub struct RemoteReflector {
    pub endpoint: RemoteEndpoint,
}

impl Reflector for RemoteReflector {
    fn reflect(&self, traj: &Trajectory) -> Result<(Vec<RuleAst>, usize), TransportError> {
        let reply = self.endpoint.call(&render_reflection_prompt(traj))?;
        Ok(parse_reflection_reply(&reply))
    }
}
