//! The hard admissibility check: an action must lie in the environment's
//! admissible set and must not cross any high-confidence learned rule.
//! Violations feed back into the policy context for resampling; a bounded
//! budget ends in the universally admissible fallback.

use crate::memory::{MetaPolicyMemory, RetrievedRule};
use crate::policy::{Policy, PolicyContext, PolicyError};
use crate::rulelang::DirectiveKind;
use crate::textworld::{Action, Observation};

pub const DEFAULT_HARD_CONF_THRESHOLD: f64 = 0.9;
pub const DEFAULT_RESAMPLE_BUDGET: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    EnvInadmissible,
    AvoidRule,
    RequireRule,
    Unparseable,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::EnvInadmissible => "env_inadmissible",
            ViolationKind::AvoidRule => "avoid_rule",
            ViolationKind::RequireRule => "require_rule",
            ViolationKind::Unparseable => "unparseable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Admissible,
    Violation {
        kind: ViolationKind,
        detail: String,
        rule_hash: Option<String>,
    },
}

impl Verdict {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Verdict::Admissible)
    }
}

#[derive(Debug, Clone)]
pub struct GuardConfig {
    pub enabled: bool,
    pub hard_conf_threshold: f64,
    pub resample_budget: usize,
    pub fallback: Action,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            enabled: true,
            hard_conf_threshold: DEFAULT_HARD_CONF_THRESHOLD,
            resample_budget: DEFAULT_RESAMPLE_BUDGET,
            fallback: Action::Look,
        }
    }
}

impl GuardConfig {
    pub fn disabled() -> Self {
        GuardConfig {
            enabled: false,
            ..GuardConfig::default()
        }
    }
}

fn rule_action(rule: &RetrievedRule) -> Option<Action> {
    Action::from_fact(&rule.ground)
}

/// Validate one action against C(s): environment admissibility first, then
/// hard AVOID rules, then hard REQUIRE rules. REQUIRE only binds when at
/// least one required action is actually executable, so the guard can never
/// dead-end.
pub fn check(
    action: &Action,
    obs: &Observation,
    memory: &MetaPolicyMemory,
    cfg: &GuardConfig,
) -> Verdict {
    if !obs.admissible.contains(action) {
        return Verdict::Violation {
            kind: ViolationKind::EnvInadmissible,
            detail: format!("violation: avoid {action} - not admissible in this state"),
            rule_hash: None,
        };
    }
    let hard = memory.hard_constraints(&obs.facts, cfg.hard_conf_threshold);
    for rule in &hard {
        if rule.kind == DirectiveKind::Avoid && rule_action(rule).as_ref() == Some(action) {
            return Verdict::Violation {
                kind: ViolationKind::AvoidRule,
                detail: format!("violation: avoid {action} (rule {})", rule.hash),
                rule_hash: Some(rule.hash.clone()),
            };
        }
    }
    let mut required: Vec<(Action, &RetrievedRule)> = Vec::new();
    for rule in &hard {
        if rule.kind != DirectiveKind::Require {
            continue;
        }
        if let Some(req) = rule_action(rule) {
            if obs.admissible.contains(&req) {
                required.push((req, rule));
            }
        }
    }
    if !required.is_empty() && !required.iter().any(|(a, _)| a == action) {
        let (first_action, first_rule) = &required[0];
        return Verdict::Violation {
            kind: ViolationKind::RequireRule,
            detail: format!("violation: require {first_action} (rule {})", first_rule.hash),
            rule_hash: Some(first_rule.hash.clone()),
        };
    }
    Verdict::Admissible
}

#[derive(Debug, Clone)]
pub struct GuardOutcome {
    pub action: Action,
    pub attempts: usize,
    pub verdict: Verdict,
    /// Rules followed by the decision that was finally executed.
    pub followed: Vec<String>,
}

/// Decide-validate-resample loop. Each violation becomes a feedback note in
/// the context before the next attempt; once the budget is spent the
/// configured fallback is returned with the last violation attached. With
/// the guard disabled the first decision passes through untouched.
pub fn guard_step(
    ctx: &mut PolicyContext,
    memory: &MetaPolicyMemory,
    cfg: &GuardConfig,
    policy: &dyn Policy,
) -> Result<GuardOutcome, PolicyError> {
    if !cfg.enabled {
        let trace = policy.decide(ctx)?;
        return Ok(GuardOutcome {
            action: trace.action,
            attempts: 1,
            verdict: Verdict::Admissible,
            followed: trace.followed,
        });
    }
    let mut last_verdict = Verdict::Admissible;
    for attempt in 1..=cfg.resample_budget + 1 {
        let trace = match policy.decide(ctx) {
            Ok(trace) => trace,
            Err(PolicyError::Unparseable { reply }) => {
                last_verdict = Verdict::Violation {
                    kind: ViolationKind::Unparseable,
                    detail: format!("violation: reply had no action: {reply:?}"),
                    rule_hash: None,
                };
                if let Verdict::Violation { detail, .. } = &last_verdict {
                    ctx.feedback_notes.push(detail.clone());
                }
                ctx.resample_index += 1;
                continue;
            }
            Err(other) => return Err(other),
        };
        let verdict = check(&trace.action, &ctx.observation, memory, cfg);
        match verdict {
            Verdict::Admissible => {
                return Ok(GuardOutcome {
                    action: trace.action,
                    attempts: attempt,
                    verdict: Verdict::Admissible,
                    followed: trace.followed,
                });
            }
            Verdict::Violation { ref detail, .. } => {
                ctx.feedback_notes.push(detail.clone());
                ctx.resample_index += 1;
                last_verdict = verdict;
            }
        }
    }
    Ok(GuardOutcome {
        action: cfg.fallback.clone(),
        attempts: cfg.resample_budget + 1,
        verdict: last_verdict,
        followed: Vec::new(),
    })
}
