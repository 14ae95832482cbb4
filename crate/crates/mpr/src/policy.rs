//! The frozen base policy: a greedy goal-regression planner with
//! configurable defects, conditioned on retrieved rules (soft guidance) and
//! feedback notes. Also the prompt/reply codecs shared with the remote
//! policy endpoint.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::memory::RetrievedRule;
use crate::remote::{RemoteEndpoint, TransportError};
use crate::rulelang::{print_rule, DirectiveKind, Fact};
use crate::textworld::{Action, Observation};

/// Everything the policy sees for one decision: (s_t, M_t) plus feedback.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub task_goal: Vec<Fact>,
    pub observation: Observation,
    pub retrieved: Vec<RetrievedRule>,
    pub feedback_notes: Vec<String>,
    pub resample_index: usize,
}

/// Deliberate flaws in the scripted planner. Each one is correctable by a
/// rule the scripted reflector can emit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DefectProfile {
    /// Never proposes `open`, so closed containers stay closed.
    pub never_opens_closed: bool,
    /// Tries to clean a visible dirty object before picking it up.
    pub cleans_before_taking: bool,
    /// Fires heat/cool as soon as the object is held, ignoring that the
    /// matching appliance is elsewhere.
    pub ignores_temperature_goals: bool,
    /// Searches for a missing object by plain room-hopping instead of
    /// checking containers.
    pub wanders_on_missing_object: bool,
}

impl DefectProfile {
    pub fn all() -> Self {
        DefectProfile {
            never_opens_closed: true,
            cleans_before_taking: true,
            ignores_temperature_goals: true,
            wanders_on_missing_object: true,
        }
    }

    pub fn parse(spec: &str) -> Result<Self, String> {
        match spec.trim() {
            "all" => return Ok(Self::all()),
            "none" | "" => return Ok(Self::default()),
            _ => {}
        }
        let mut profile = DefectProfile::default();
        for flag in spec.split(',') {
            match flag.trim() {
                "never_opens_closed" => profile.never_opens_closed = true,
                "cleans_before_taking" => profile.cleans_before_taking = true,
                "ignores_temperature_goals" => profile.ignores_temperature_goals = true,
                "wanders_on_missing_object" => profile.wanders_on_missing_object = true,
                other => return Err(format!("unknown defect flag `{other}`")),
            }
        }
        Ok(profile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTrace {
    pub action: Action,
    /// Hashes of retrieved rules whose directive changed or confirmed the
    /// decision: an AVOID that removed a candidate, or a PREFER/REQUIRE
    /// whose ground action was chosen.
    pub followed: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("model reply contained no action: {reply:?}")]
    Unparseable { reply: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub trait Policy {
    fn decide(&self, ctx: &PolicyContext) -> Result<DecisionTrace, PolicyError>;
}

// ---------------------------------------------------------------------------
// Scripted policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedPolicy {
    pub defects: DefectProfile,
}

impl ScriptedPolicy {
    pub fn new(defects: DefectProfile) -> Self {
        ScriptedPolicy { defects }
    }
}

struct View<'a> {
    facts: &'a BTreeSet<Fact>,
    admissible: &'a BTreeSet<Action>,
    here: String,
    held: Option<String>,
    locations: BTreeSet<String>,
}

impl<'a> View<'a> {
    fn new(obs: &'a Observation) -> Self {
        let here = obs
            .facts
            .iter()
            .find(|f| f.predicate == "at")
            .map(|f| f.args[0].clone())
            .unwrap_or_default();
        let held = obs
            .facts
            .iter()
            .find(|f| f.predicate == "holding")
            .map(|f| f.args[0].clone());
        let mut locations: BTreeSet<String> = obs
            .admissible
            .iter()
            .filter_map(|a| match a {
                Action::Go(l) => Some(l.clone()),
                _ => None,
            })
            .collect();
        locations.insert(here.clone());
        View {
            facts: &obs.facts,
            admissible: &obs.admissible,
            here,
            held,
            locations,
        }
    }

    fn has(&self, predicate: &str, args: &[&str]) -> bool {
        self.facts.contains(&Fact::new(predicate, args))
    }

    fn container_of(&self, thing: &str) -> Option<&str> {
        self.facts
            .iter()
            .find(|f| f.predicate == "in" && f.args[0] == thing)
            .map(|f| f.args[1].as_str())
    }

    /// Resolve a place name (location or receptacle) to its location.
    fn location_of(&self, place: &str) -> Option<String> {
        if self.locations.contains(place) {
            return Some(place.to_string());
        }
        let container = self.container_of(place)?;
        if self.locations.contains(container) {
            Some(container.to_string())
        } else {
            None
        }
    }

    fn capable_location(&self, capability_pred: &str) -> Option<String> {
        self.facts
            .iter()
            .find(|f| f.predicate == capability_pred && f.args[0] != self.here)
            .map(|f| f.args[0].clone())
    }

    fn closed_receptacles(&self) -> Vec<&str> {
        self.facts
            .iter()
            .filter(|f| f.predicate == "closed")
            .map(|f| f.args[0].as_str())
            .collect()
    }
}

fn goal_rank(fact: &Fact) -> u8 {
    match fact.predicate.as_str() {
        "clean" | "dirty" | "hot" | "cold" | "room_temp" => 0,
        "in" => 1,
        "holding" => 2,
        _ => 3,
    }
}

impl ScriptedPolicy {
    fn search(&self, view: &View) -> Vec<Action> {
        let mut out = Vec::new();
        if self.defects.wanders_on_missing_object {
            for loc in &view.locations {
                if loc != &view.here {
                    out.push(Action::Go(loc.clone()));
                }
            }
            return out;
        }
        let closed = view.closed_receptacles();
        for rec in &closed {
            let open = Action::Open(rec.to_string());
            if view.admissible.contains(&open) {
                out.push(open);
            }
        }
        let mut container_rooms = BTreeSet::new();
        for rec in &closed {
            if let Some(loc) = view.location_of(rec) {
                if loc != view.here {
                    container_rooms.insert(loc);
                }
            }
        }
        for loc in &container_rooms {
            out.push(Action::Go(loc.clone()));
        }
        for loc in &view.locations {
            if loc != &view.here && !container_rooms.contains(loc) {
                out.push(Action::Go(loc.clone()));
            }
        }
        out
    }

    fn stash(&self, view: &View, held: &str) -> Vec<Action> {
        view.admissible
            .iter()
            .find(|a| matches!(a, Action::Put(obj, _) if obj == held))
            .cloned()
            .into_iter()
            .collect()
    }

    fn acquire(&self, view: &View, object: &str) -> Vec<Action> {
        if let Some(held) = &view.held {
            if held != object {
                return self.stash(view, held);
            }
        }
        let take = Action::Take(object.to_string());
        if view.admissible.contains(&take) {
            return vec![take];
        }
        if view.has("visible", &[object]) {
            if let Some(loc) = view
                .container_of(object)
                .and_then(|place| self.reach(view, place))
            {
                return vec![Action::Go(loc)];
            }
            return Vec::new();
        }
        self.search(view)
    }

    fn reach(&self, view: &View, place: &str) -> Option<String> {
        let loc = view.location_of(place)?;
        (loc != view.here).then_some(loc)
    }

    fn attribute_goal(&self, view: &View, goal: &Fact) -> Vec<Action> {
        let object = goal.args[0].as_str();
        let (make, capability) = match goal.predicate.as_str() {
            "clean" => (Action::Clean(object.to_string()), "can_clean"),
            "hot" => (Action::Heat(object.to_string()), "can_heat"),
            "cold" => (Action::Cool(object.to_string()), "can_cool"),
            _ => return Vec::new(),
        };
        let temperature = goal.predicate != "clean";
        if view.held.as_deref() == Some(object) {
            if temperature && self.defects.ignores_temperature_goals {
                return vec![make];
            }
            if view.admissible.contains(&make) {
                return vec![make];
            }
            if let Some(loc) = view.capable_location(capability) {
                return vec![Action::Go(loc)];
            }
            return Vec::new();
        }
        if !temperature
            && self.defects.cleans_before_taking
            && view.has("visible", &[object])
            && view.held.is_none()
        {
            return vec![make];
        }
        self.acquire(view, object)
    }

    fn goal_candidates(&self, view: &View, goal: &Fact) -> Vec<Action> {
        match goal.predicate.as_str() {
            "clean" | "hot" | "cold" => self.attribute_goal(view, goal),
            "in" => {
                let object = goal.args[0].as_str();
                let place = goal.args[1].as_str();
                if view.held.as_deref() == Some(object) {
                    let put = Action::Put(object.to_string(), place.to_string());
                    if view.admissible.contains(&put) {
                        return vec![put];
                    }
                    if view.has("closed", &[place]) {
                        return match self.reach(view, place) {
                            Some(loc) => vec![Action::Go(loc)],
                            None => vec![Action::Open(place.to_string())],
                        };
                    }
                    return self
                        .reach(view, place)
                        .map(Action::Go)
                        .into_iter()
                        .collect();
                }
                self.acquire(view, object)
            }
            "holding" => self.acquire(view, goal.args[0].as_str()),
            _ => Vec::new(),
        }
    }

    fn plan(&self, ctx: &PolicyContext, view: &View) -> Vec<Action> {
        let mut goals: Vec<&Fact> = ctx
            .task_goal
            .iter()
            .filter(|g| !view.facts.contains(g))
            .collect();
        goals.sort_by_key(|g| (goal_rank(g), *g));
        let mut candidates = Vec::new();
        for goal in goals {
            for action in self.goal_candidates(view, goal) {
                if !candidates.contains(&action) {
                    candidates.push(action);
                }
            }
        }
        candidates.push(Action::Look);
        if self.defects.never_opens_closed {
            candidates.retain(|a| !matches!(a, Action::Open(_)));
        }
        candidates
    }
}

struct GuidanceDirective {
    hash: Option<String>,
    kind: DirectiveKind,
    action: Option<Action>,
}

/// Pull `avoid f(x)` / `prefer f(x)` / `require f(x)` spans out of a
/// feedback note. Guard violation messages and baseline reflections both
/// use this vocabulary, so resampling and Reflexion-style retries steer the
/// same machinery as retrieved rules.
fn note_directive(note: &str) -> Option<(DirectiveKind, Action)> {
    let lower = note.to_lowercase();
    let hits = [
        ("avoid ", DirectiveKind::Avoid),
        ("prefer ", DirectiveKind::Prefer),
        ("require ", DirectiveKind::Require),
    ];
    let (pos, kind, keyword) = hits
        .iter()
        .filter_map(|(kw, kind)| lower.find(kw).map(|p| (p, *kind, *kw)))
        .min_by_key(|(p, _, _)| *p)?;
    let tail = &note[pos + keyword.len()..];
    let end = tail.find(')')?;
    let fact = crate::textworld::parse_fact(&tail[..=end]).ok()?;
    Action::from_fact(&fact).map(|a| (kind, a))
}

fn apply_guidance(
    mut candidates: Vec<Action>,
    ctx: &PolicyContext,
) -> (Vec<Action>, Vec<String>) {
    let mut directives: Vec<GuidanceDirective> = ctx
        .retrieved
        .iter()
        .map(|r| GuidanceDirective {
            hash: Some(r.hash.clone()),
            kind: r.kind,
            action: Action::from_fact(&r.ground),
        })
        .collect();
    for note in &ctx.feedback_notes {
        if let Some((kind, action)) = note_directive(note) {
            directives.push(GuidanceDirective {
                hash: None,
                kind,
                action: Some(action),
            });
        }
    }

    let mut followed = Vec::new();
    // promote/inject targets must be executable right now
    for d in &directives {
        if d.kind == DirectiveKind::Avoid {
            continue;
        }
        if let Some(action) = &d.action {
            if ctx.observation.admissible.contains(action) && !candidates.contains(action) {
                candidates.push(action.clone());
            }
        }
    }
    for d in &directives {
        if d.kind != DirectiveKind::Avoid {
            continue;
        }
        if let Some(action) = &d.action {
            let before = candidates.len();
            candidates.retain(|c| c != action);
            if candidates.len() != before {
                if let Some(hash) = &d.hash {
                    if !followed.contains(hash) {
                        followed.push(hash.clone());
                    }
                }
            }
        }
    }
    let preferred = |c: &Action| {
        directives
            .iter()
            .any(|d| d.kind != DirectiveKind::Avoid && d.action.as_ref() == Some(c))
    };
    let (front, back): (Vec<Action>, Vec<Action>) = candidates.into_iter().partition(preferred);
    let mut merged = front;
    merged.extend(back);

    let chosen = merged.first().cloned().unwrap_or(Action::Look);
    for d in &directives {
        if d.kind != DirectiveKind::Avoid && d.action.as_ref() == Some(&chosen) {
            if let Some(hash) = &d.hash {
                if !followed.contains(hash) {
                    followed.push(hash.clone());
                }
            }
        }
    }
    (merged, followed)
}

impl Policy for ScriptedPolicy {
    fn decide(&self, ctx: &PolicyContext) -> Result<DecisionTrace, PolicyError> {
        let view = View::new(&ctx.observation);
        let candidates = self.plan(ctx, &view);
        let (guided, followed) = apply_guidance(candidates, ctx);
        let action = guided.into_iter().next().unwrap_or(Action::Look);
        Ok(DecisionTrace { action, followed })
    }
}

// ---------------------------------------------------------------------------
// Prompt / reply codecs (shared with the remote endpoint)
// ---------------------------------------------------------------------------

/// Deterministic prompt template; byte-stable for identical contexts.
pub fn render_prompt(ctx: &PolicyContext) -> String {
    let mut out = String::new();
    out.push_str("You control an agent in a household world.\n\nGOAL:\n");
    for g in &ctx.task_goal {
        writeln!(out, "- {g}").unwrap();
    }
    out.push_str("\nFACTS:\n");
    for f in &ctx.observation.facts {
        writeln!(out, "- {f}").unwrap();
    }
    out.push_str("\nADMISSIBLE ACTIONS:\n");
    for a in &ctx.observation.admissible {
        writeln!(out, "- {a}").unwrap();
    }
    out.push_str("\nRULES:\n");
    if ctx.retrieved.is_empty() {
        out.push_str("(none)\n");
    } else {
        for r in &ctx.retrieved {
            writeln!(out, "- [{:.2}] {}", r.confidence, print_rule(&r.rule)).unwrap();
        }
    }
    out.push_str("\nNOTES:\n");
    if ctx.feedback_notes.is_empty() {
        out.push_str("(none)\n");
    } else {
        for n in &ctx.feedback_notes {
            writeln!(out, "- {n}").unwrap();
        }
    }
    writeln!(
        out,
        "\nAnswer with exactly one action from the admissible list, e.g. look()."
    )
    .unwrap();
    out
}

/// Extract the first parseable `verb(arg, ...)` span from a model reply.
pub fn parse_action(text: &str) -> Result<Action, PolicyError> {
    for line in text.lines() {
        let line = line.trim().trim_matches('`');
        if line.starts_with("```") {
            continue;
        }
        let bytes = line.as_bytes();
        for start in 0..bytes.len() {
            if !bytes[start].is_ascii_lowercase() {
                continue;
            }
            if start > 0 && (bytes[start - 1].is_ascii_alphanumeric() || bytes[start - 1] == b'_') {
                continue;
            }
            let Some(close) = line[start..].find(')') else {
                break;
            };
            let span = &line[start..start + close + 1];
            if !span.contains('(') {
                continue;
            }
            if let Ok(fact) = crate::textworld::parse_fact(span) {
                if let Some(action) = Action::from_fact(&fact) {
                    return Ok(action);
                }
            }
        }
    }
    Err(PolicyError::Unparseable {
        reply: text.to_string(),
    })
}

/// Frozen LLM policy behind an HTTP endpoint; deterministic decoding
/// (temperature 0), bounded retries, no silent fallbacks.
pub struct RemotePolicy {
    pub endpoint: RemoteEndpoint,
}

impl Policy for RemotePolicy {
    fn decide(&self, ctx: &PolicyContext) -> Result<DecisionTrace, PolicyError> {
        let reply = self.endpoint.call(&render_prompt(ctx))?;
        let action = parse_action(&reply)?;
        // remote decisions carry no per-rule attribution
        Ok(DecisionTrace {
            action,
            followed: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{MetaPolicyMemory, Provenance, RuleSource};
    use crate::rulelang::parse_rule;
    use crate::textworld::{TaskSpec, TextWorld};

    const CLOSED_FRIDGE: &str = "\
task_id: fixture
location: kitchen
location: pantry
agent_at: kitchen
receptacle: fridge loc=kitchen openable closed
receptacle: table loc=kitchen
object: apple in=fridge
goal: in(apple, table)
";

    fn ctx_for(task_text: &str, retrieved_rules: &[&str]) -> PolicyContext {
        let task = TaskSpec::parse(task_text).unwrap();
        let (_, obs) = TextWorld::reset(&task, 0).unwrap();
        let mut memory = MetaPolicyMemory::new();
        for rule in retrieved_rules {
            memory
                .insert(
                    &parse_rule(rule).unwrap(),
                    Provenance {
                        source: RuleSource::Manual,
                        task_id: "fixture".into(),
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
            feedback_notes: Vec::new(),
            resample_index: 0,
        }
    }

    #[test]
    fn defective_policy_never_opens_without_memory() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let ctx = ctx_for(CLOSED_FRIDGE, &[]);
        let trace = policy.decide(&ctx).unwrap();
        assert_eq!(trace.action, Action::Go("pantry".into()));
    }

    #[test]
    fn prefer_rule_injects_the_corrective_open() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let ctx = ctx_for(
            CLOSED_FRIDGE,
            &["WHEN at(?r) AND closed(?c) THEN PREFER open(?c)"],
        );
        let trace = policy.decide(&ctx).unwrap();
        assert_eq!(trace.action, Action::Open("fridge".into()));
        assert_eq!(trace.followed.len(), 1);
    }

    #[test]
    fn avoid_of_the_sole_candidate_falls_back_to_look() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let ctx = ctx_for(
            CLOSED_FRIDGE,
            &["WHEN at(?r) THEN AVOID go(pantry)"],
        );
        let trace = policy.decide(&ctx).unwrap();
        assert_eq!(trace.action, Action::Look);
        assert_eq!(trace.followed.len(), 1);
    }

    #[test]
    fn irrelevant_memory_is_inert() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let bare = policy.decide(&ctx_for(CLOSED_FRIDGE, &[])).unwrap();
        let ctx = ctx_for(
            CLOSED_FRIDGE,
            &["WHEN holding(?x) AND dirty(?x) THEN PREFER clean(?x)"],
        );
        let guided = policy.decide(&ctx).unwrap();
        assert_eq!(bare.action, guided.action);
        assert!(guided.followed.is_empty());
    }

    #[test]
    fn decide_is_deterministic_and_does_not_mutate_context() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let ctx = ctx_for(CLOSED_FRIDGE, &[]);
        let snapshot = format!("{ctx:?}");
        let first = policy.decide(&ctx).unwrap();
        for _ in 0..1000 {
            assert_eq!(policy.decide(&ctx).unwrap(), first);
        }
        assert_eq!(format!("{ctx:?}"), snapshot);
    }

    #[test]
    fn violation_notes_steer_the_next_decision() {
        let policy = ScriptedPolicy::new(DefectProfile::all());
        let mut ctx = ctx_for(CLOSED_FRIDGE, &[]);
        ctx.feedback_notes
            .push("violation: avoid go(pantry) - it is a dead end".into());
        let trace = policy.decide(&ctx).unwrap();
        assert_eq!(trace.action, Action::Look);
    }

    #[test]
    fn parse_action_extracts_first_span() {
        assert_eq!(parse_action("open(fridge)").unwrap(), Action::Open("fridge".into()));
        assert_eq!(
            parse_action("I will now open(fridge) carefully").unwrap(),
            Action::Open("fridge".into())
        );
        assert_eq!(
            parse_action("```\nput(apple, table)\n```").unwrap(),
            Action::Put("apple".into(), "table".into())
        );
        assert!(matches!(
            parse_action("I cannot help"),
            Err(PolicyError::Unparseable { .. })
        ));
    }

    #[test]
    fn prompt_marks_empty_rule_section() {
        let ctx = ctx_for(CLOSED_FRIDGE, &[]);
        let prompt = render_prompt(&ctx);
        assert!(prompt.contains("RULES:\n(none)"));
        assert_eq!(prompt, render_prompt(&ctx));
    }

    #[test]
    fn prompt_lists_rules_with_two_decimal_confidence() {
        let ctx = ctx_for(
            CLOSED_FRIDGE,
            &[
                "WHEN at(?r) AND closed(?c) THEN PREFER open(?c)",
                "WHEN hand_empty() AND visible(?x) THEN AVOID clean(?x)",
            ],
        );
        let prompt = render_prompt(&ctx);
        assert!(prompt.contains("[0.50] WHEN"));
        assert!(prompt.contains("THEN PREFER open(?v1)") || prompt.contains("THEN PREFER open(?c)"));
    }
}
