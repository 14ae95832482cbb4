//! Deterministic household MDP: locations, openable receptacles, a one-slot
//! inventory, clean/heat/cool appliances, goal-indicator reward and an exact
//! admissible-action set. Objects inside closed receptacles are invisible and
//! emit no facts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rulelang::{action_verb_arity, Fact};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Go(String),
    Open(String),
    Close(String),
    Take(String),
    Put(String, String),
    Clean(String),
    Heat(String),
    Cool(String),
    Examine(String),
    Look,
}

impl Action {
    pub fn verb(&self) -> &'static str {
        match self {
            Action::Go(_) => "go",
            Action::Open(_) => "open",
            Action::Close(_) => "close",
            Action::Take(_) => "take",
            Action::Put(..) => "put",
            Action::Clean(_) => "clean",
            Action::Heat(_) => "heat",
            Action::Cool(_) => "cool",
            Action::Examine(_) => "examine",
            Action::Look => "look",
        }
    }

    pub fn args(&self) -> Vec<&str> {
        match self {
            Action::Go(a)
            | Action::Open(a)
            | Action::Close(a)
            | Action::Take(a)
            | Action::Clean(a)
            | Action::Heat(a)
            | Action::Cool(a)
            | Action::Examine(a) => vec![a],
            Action::Put(a, b) => vec![a, b],
            Action::Look => vec![],
        }
    }

    pub fn from_parts(verb: &str, args: &[&str]) -> Option<Action> {
        if action_verb_arity(verb) != Some(args.len()) {
            return None;
        }
        Some(match verb {
            "go" => Action::Go(args[0].into()),
            "open" => Action::Open(args[0].into()),
            "close" => Action::Close(args[0].into()),
            "take" => Action::Take(args[0].into()),
            "put" => Action::Put(args[0].into(), args[1].into()),
            "clean" => Action::Clean(args[0].into()),
            "heat" => Action::Heat(args[0].into()),
            "cool" => Action::Cool(args[0].into()),
            "examine" => Action::Examine(args[0].into()),
            "look" => Action::Look,
            _ => return None,
        })
    }

    pub fn from_fact(fact: &Fact) -> Option<Action> {
        let args: Vec<&str> = fact.args.iter().map(|s| s.as_str()).collect();
        Action::from_parts(&fact.predicate, &args)
    }

    pub fn to_fact(&self) -> Fact {
        Fact {
            predicate: self.verb().to_string(),
            args: self.args().iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.verb(), self.args().join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Capability {
    Cleaning,
    Heating,
    Cooling,
}

impl Capability {
    fn fact_predicate(self) -> &'static str {
        match self {
            Capability::Cleaning => "can_clean",
            Capability::Heating => "can_heat",
            Capability::Cooling => "can_cool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptacleInfo {
    pub at: String,
    pub openable: bool,
    pub open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Temp {
    Hot,
    Cold,
    RoomTemp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Place {
    Location(String),
    Receptacle(String),
    Inventory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectInfo {
    pub place: Place,
    pub clean: bool,
    pub temp: Temp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub agent_at: String,
    pub locations: BTreeSet<String>,
    pub receptacles: BTreeMap<String, ReceptacleInfo>,
    pub objects: BTreeMap<String, ObjectInfo>,
    pub appliances: BTreeMap<String, BTreeSet<Capability>>,
}

impl WorldState {
    pub fn holding(&self) -> Option<&str> {
        self.objects
            .iter()
            .find(|(_, o)| o.place == Place::Inventory)
            .map(|(name, _)| name.as_str())
    }

    fn receptacle_reachable(&self, rec: &ReceptacleInfo) -> bool {
        !rec.openable || rec.open
    }

    /// Visible means not inside a closed receptacle. Held objects count as
    /// visible.
    pub fn is_visible(&self, object: &str) -> bool {
        match &self.objects[object].place {
            Place::Location(_) | Place::Inventory => true,
            Place::Receptacle(r) => self.receptacle_reachable(&self.receptacles[r]),
        }
    }

    /// The location an object can be interacted from, if any.
    pub fn object_location(&self, object: &str) -> Option<&str> {
        match &self.objects[object].place {
            Place::Location(l) => Some(l),
            Place::Receptacle(r) => Some(self.receptacles[r].at.as_str()),
            Place::Inventory => None,
        }
    }

    fn has_capability(&self, location: &str, cap: Capability) -> bool {
        self.appliances
            .get(location)
            .is_some_and(|caps| caps.contains(&cap))
    }
}

/// The exact environment half of the constraint set C(s).
pub fn admissible_actions(state: &WorldState) -> BTreeSet<Action> {
    let mut out = BTreeSet::new();
    out.insert(Action::Look);
    for loc in &state.locations {
        if loc != &state.agent_at {
            out.insert(Action::Go(loc.clone()));
        }
    }
    for (name, rec) in &state.receptacles {
        if rec.at == state.agent_at && rec.openable {
            if rec.open {
                out.insert(Action::Close(name.clone()));
            } else {
                out.insert(Action::Open(name.clone()));
            }
        }
    }
    let held = state.holding();
    for (name, _) in &state.objects {
        if state.is_visible(name) && state.object_location(name) == Some(state.agent_at.as_str()) {
            out.insert(Action::Examine(name.clone()));
            if held.is_none() {
                out.insert(Action::Take(name.clone()));
            }
        }
    }
    if let Some(obj) = held {
        for (name, rec) in &state.receptacles {
            if rec.at == state.agent_at && state.receptacle_reachable(rec) {
                out.insert(Action::Put(obj.to_string(), name.clone()));
            }
        }
        out.insert(Action::Put(obj.to_string(), state.agent_at.clone()));
        if state.has_capability(&state.agent_at, Capability::Cleaning) {
            out.insert(Action::Clean(obj.to_string()));
        }
        if state.has_capability(&state.agent_at, Capability::Heating) {
            out.insert(Action::Heat(obj.to_string()));
        }
        if state.has_capability(&state.agent_at, Capability::Cooling) {
            out.insert(Action::Cool(obj.to_string()));
        }
    }
    out
}

/// Fact expansion of the full state, ignoring visibility. Goal checks use
/// this; observations use the filtered variant.
pub fn full_facts(state: &WorldState) -> BTreeSet<Fact> {
    facts_of(state, false, false)
}

fn facts_of(state: &WorldState, filter_visibility: bool, last_invalid: bool) -> BTreeSet<Fact> {
    let mut facts = BTreeSet::new();
    facts.insert(Fact::new("at", &[&state.agent_at]));
    match state.holding() {
        Some(obj) => {
            facts.insert(Fact::new("holding", &[obj]));
        }
        None => {
            facts.insert(Fact::new("hand_empty", &[]));
        }
    }
    for (name, rec) in &state.receptacles {
        facts.insert(Fact::new("in", &[name, &rec.at]));
        if rec.openable {
            facts.insert(Fact::new("openable", &[name]));
            facts.insert(Fact::new(if rec.open { "open" } else { "closed" }, &[name]));
        }
    }
    for (name, obj) in &state.objects {
        if filter_visibility && !state.is_visible(name) {
            continue;
        }
        facts.insert(Fact::new("visible", &[name]));
        match &obj.place {
            Place::Location(l) => {
                facts.insert(Fact::new("in", &[name, l]));
            }
            Place::Receptacle(r) => {
                facts.insert(Fact::new("in", &[name, r]));
            }
            Place::Inventory => {}
        }
        facts.insert(Fact::new(if obj.clean { "clean" } else { "dirty" }, &[name]));
        facts.insert(Fact::new(
            match obj.temp {
                Temp::Hot => "hot",
                Temp::Cold => "cold",
                Temp::RoomTemp => "room_temp",
            },
            &[name],
        ));
    }
    for (loc, caps) in &state.appliances {
        for cap in caps {
            facts.insert(Fact::new(cap.fact_predicate(), &[loc]));
        }
    }
    if last_invalid {
        facts.insert(Fact::new("last_action_invalid", &[]));
    }
    facts
}

pub fn goal_satisfied(state: &WorldState, goal: &[Fact]) -> bool {
    let facts = full_facts(state);
    goal.iter().all(|g| facts.contains(g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub facts: BTreeSet<Fact>,
    pub admissible: BTreeSet<Action>,
    pub step_index: usize,
    pub done: bool,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPool {
    pub object: String,
    pub receptacles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub initial: WorldState,
    pub pools: Vec<PlacementPool>,
    pub goal: Vec<Fact>,
    pub step_budget: usize,
    pub gamma: f64,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid task `{task_id}`: {message}")]
    Invalid { task_id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_STEP_BUDGET: usize = 30;

const GOAL_PREDICATES: &[&str] = &["in", "clean", "dirty", "hot", "cold", "room_temp", "holding"];

impl TaskSpec {
    /// Line-based key/value format; `#` comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<TaskSpec, TaskError> {
        let mut task_id = None;
        let mut step_budget = DEFAULT_STEP_BUDGET;
        let mut gamma = 1.0;
        let mut state = WorldState {
            agent_at: String::new(),
            locations: BTreeSet::new(),
            receptacles: BTreeMap::new(),
            objects: BTreeMap::new(),
            appliances: BTreeMap::new(),
        };
        let mut pools = Vec::new();
        let mut goal = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TaskError::Parse {
                line: line_no,
                message,
            };
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `key: value`".to_string()))?;
            let rest = rest.trim();
            match key.trim() {
                "task_id" => task_id = Some(rest.to_string()),
                "step_budget" => {
                    step_budget = rest
                        .parse()
                        .map_err(|e| err(format!("bad step_budget: {e}")))?;
                }
                "gamma" => {
                    gamma = rest.parse().map_err(|e| err(format!("bad gamma: {e}")))?;
                }
                "location" => {
                    state.locations.insert(rest.to_string());
                }
                "agent_at" => state.agent_at = rest.to_string(),
                "receptacle" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts
                        .next()
                        .ok_or_else(|| err("receptacle needs a name".to_string()))?
                        .to_string();
                    let mut info = ReceptacleInfo {
                        at: String::new(),
                        openable: false,
                        open: false,
                    };
                    for part in parts {
                        if let Some(loc) = part.strip_prefix("loc=") {
                            info.at = loc.to_string();
                        } else {
                            match part {
                                "openable" => info.openable = true,
                                "open" => info.open = true,
                                "closed" => info.open = false,
                                other => return Err(err(format!("unknown flag `{other}`"))),
                            }
                        }
                    }
                    state.receptacles.insert(name, info);
                }
                "object" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts
                        .next()
                        .ok_or_else(|| err("object needs a name".to_string()))?
                        .to_string();
                    let mut place = None;
                    let mut info = ObjectInfo {
                        place: Place::Inventory,
                        clean: true,
                        temp: Temp::RoomTemp,
                    };
                    for part in parts {
                        if let Some(p) = part.strip_prefix("in=") {
                            place = Some(p.to_string());
                        } else {
                            match part {
                                "clean" => info.clean = true,
                                "dirty" => info.clean = false,
                                "hot" => info.temp = Temp::Hot,
                                "cold" => info.temp = Temp::Cold,
                                "room_temp" => info.temp = Temp::RoomTemp,
                                other => return Err(err(format!("unknown flag `{other}`"))),
                            }
                        }
                    }
                    let place =
                        place.ok_or_else(|| err(format!("object {name} needs in=<place>")))?;
                    // resolved to Location/Receptacle during validation
                    info.place = Place::Location(place);
                    state.objects.insert(name, info);
                }
                "appliance" => {
                    let mut parts = rest.split_whitespace();
                    let loc = parts
                        .next()
                        .ok_or_else(|| err("appliance needs a location".to_string()))?
                        .to_string();
                    let caps = state.appliances.entry(loc).or_default();
                    for part in parts {
                        caps.insert(match part {
                            "clean" => Capability::Cleaning,
                            "heat" => Capability::Heating,
                            "cool" => Capability::Cooling,
                            other => return Err(err(format!("unknown capability `{other}`"))),
                        });
                    }
                }
                "pool" => {
                    let mut parts = rest.split_whitespace();
                    let object = parts
                        .next()
                        .ok_or_else(|| err("pool needs an object".to_string()))?
                        .to_string();
                    let recs = parts
                        .next()
                        .ok_or_else(|| err("pool needs receptacles".to_string()))?;
                    pools.push(PlacementPool {
                        object,
                        receptacles: recs.split(',').map(|s| s.to_string()).collect(),
                    });
                }
                "goal" => {
                    goal.push(parse_fact(rest).map_err(|m| err(m))?);
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }

        let task = TaskSpec {
            task_id: task_id.ok_or(TaskError::Parse {
                line: 0,
                message: "missing task_id".to_string(),
            })?,
            initial: state,
            pools,
            goal,
            step_budget,
            gamma,
        };
        task.validate()?;
        Ok(task)
    }

    fn invalid(&self, message: String) -> TaskError {
        TaskError::Invalid {
            task_id: self.task_id.clone(),
            message,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let s = &self.initial;
        if self.step_budget == 0 {
            return Err(self.invalid("step_budget must be >= 1".into()));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(self.invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !s.locations.contains(&s.agent_at) {
            return Err(self.invalid(format!("agent_at `{}` is not a location", s.agent_at)));
        }
        for (name, rec) in &s.receptacles {
            if !s.locations.contains(&rec.at) {
                return Err(self.invalid(format!("receptacle {name} at unknown location")));
            }
            if rec.open && !rec.openable {
                return Err(self.invalid(format!("receptacle {name} open but not openable")));
            }
        }
        for (name, obj) in &s.objects {
            let place = match &obj.place {
                Place::Location(p) | Place::Receptacle(p) => p,
                Place::Inventory => continue,
            };
            if !s.locations.contains(place) && !s.receptacles.contains_key(place) {
                return Err(self.invalid(format!("object {name} placed in unknown `{place}`")));
            }
        }
        for loc in s.appliances.keys() {
            if !s.locations.contains(loc) {
                return Err(self.invalid(format!("appliance at unknown location `{loc}`")));
            }
        }
        for pool in &self.pools {
            if !s.objects.contains_key(&pool.object) {
                return Err(self.invalid(format!("pool for unknown object `{}`", pool.object)));
            }
            if pool.receptacles.is_empty() {
                return Err(self.invalid(format!("empty pool for `{}`", pool.object)));
            }
            for rec in &pool.receptacles {
                if !s.receptacles.contains_key(rec) {
                    return Err(self.invalid(format!("pool names unknown receptacle `{rec}`")));
                }
            }
        }
        for g in &self.goal {
            if !GOAL_PREDICATES.contains(&g.predicate.as_str()) {
                return Err(self.invalid(format!("goal predicate `{}` not supported", g.predicate)));
            }
            let obj = g.args.first().map(String::as_str).unwrap_or("");
            if !s.objects.contains_key(obj) {
                return Err(self.invalid(format!("goal references unknown object `{obj}`")));
            }
            if g.predicate == "in" {
                let place = g.args.get(1).map(String::as_str).unwrap_or("");
                if !s.locations.contains(place) && !s.receptacles.contains_key(place) {
                    return Err(self.invalid(format!("goal references unknown place `{place}`")));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_fact(text: &str) -> Result<Fact, String> {
    let text = text.trim();
    let (pred, rest) = text
        .split_once('(')
        .ok_or_else(|| format!("bad fact `{text}`"))?;
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| format!("bad fact `{text}`"))?;
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(|s| s.trim().to_string()).collect()
    };
    Ok(Fact {
        predicate: pred.trim().to_string(),
        args,
    })
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeFinished,
}

/// One episode instance of a task.
#[derive(Debug, Clone)]
pub struct TextWorld {
    state: WorldState,
    goal: Vec<Fact>,
    step_budget: usize,
    step_index: usize,
    done: bool,
    last_invalid: bool,
}

impl TextWorld {
    /// The seed only permutes placements declared via pools; fixed-layout
    /// tasks ignore it entirely.
    pub fn reset(task: &TaskSpec, seed: u64) -> Result<(TextWorld, Observation), TaskError> {
        task.validate()?;
        let mut state = task.initial.clone();
        // resolve raw placements into Location vs Receptacle
        let rec_names: BTreeSet<String> = state.receptacles.keys().cloned().collect();
        for obj in state.objects.values_mut() {
            if let Place::Location(p) = &obj.place {
                if rec_names.contains(p) {
                    obj.place = Place::Receptacle(p.clone());
                }
            }
        }
        if !task.pools.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for pool in &task.pools {
                let pick = rng.gen_range(0..pool.receptacles.len());
                state.objects.get_mut(&pool.object).unwrap().place =
                    Place::Receptacle(pool.receptacles[pick].clone());
            }
        }
        let env = TextWorld {
            state,
            goal: task.goal.clone(),
            step_budget: task.step_budget,
            step_index: 0,
            done: false,
            last_invalid: false,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observation(&self) -> Observation {
        Observation {
            facts: facts_of(&self.state, true, self.last_invalid),
            admissible: admissible_actions(&self.state),
            step_index: self.step_index,
            done: self.done,
            reward: u8::from(self.done && goal_satisfied(&self.state, &self.goal)),
        }
    }

    /// Inadmissible actions are inert no-ops that still consume a step and
    /// flag `last_action_invalid()` on the next observation.
    pub fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let admissible = admissible_actions(&self.state);
        if admissible.contains(action) {
            self.apply(action);
            self.last_invalid = false;
        } else {
            self.last_invalid = true;
        }
        self.step_index += 1;
        if goal_satisfied(&self.state, &self.goal) || self.step_index >= self.step_budget {
            self.done = true;
        }
        Ok(self.observation())
    }

    fn apply(&mut self, action: &Action) {
        match action {
            Action::Go(loc) => self.state.agent_at = loc.clone(),
            Action::Open(rec) => self.state.receptacles.get_mut(rec).unwrap().open = true,
            Action::Close(rec) => self.state.receptacles.get_mut(rec).unwrap().open = false,
            Action::Take(obj) => {
                self.state.objects.get_mut(obj).unwrap().place = Place::Inventory;
            }
            Action::Put(obj, place) => {
                let target = if self.state.receptacles.contains_key(place) {
                    Place::Receptacle(place.clone())
                } else {
                    Place::Location(place.clone())
                };
                self.state.objects.get_mut(obj).unwrap().place = target;
            }
            Action::Clean(obj) => self.state.objects.get_mut(obj).unwrap().clean = true,
            Action::Heat(obj) => self.state.objects.get_mut(obj).unwrap().temp = Temp::Hot,
            Action::Cool(obj) => self.state.objects.get_mut(obj).unwrap().temp = Temp::Cold,
            Action::Examine(_) | Action::Look => {}
        }
    }
}
