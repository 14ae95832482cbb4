//! The predicate-rule language: a Datalog-lite conjunctive condition with
//! safe negation, plus one directive (AVOID / PREFER / REQUIRE) that names an
//! action pattern. Rules are matched against ground observation facts by
//! enumeration; everything here is pure and deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Action verbs with their arities. AVOID/PREFER directives must use one of
/// these; the simulator's action set is derived from the same table.
pub const ACTION_VERBS: &[(&str, usize)] = &[
    ("clean", 1),
    ("close", 1),
    ("cool", 1),
    ("examine", 1),
    ("go", 1),
    ("heat", 1),
    ("look", 0),
    ("open", 1),
    ("put", 2),
    ("take", 1),
];

pub fn action_verb_arity(symbol: &str) -> Option<usize> {
    ACTION_VERBS
        .iter()
        .find(|(v, _)| *v == symbol)
        .map(|(_, a)| *a)
}

/// Maximum argument count per predicate.
pub const MAX_ARITY: usize = 3;
/// Maximum number of condition literals per rule.
pub const MAX_CONDITION_LITERALS: usize = 6;

/// A term is either a variable (`?x`) or a lowercase constant symbol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// Stored without the leading `?`.
    Variable(String),
    Constant(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(v) => write!(f, "?{v}"),
            Term::Constant(c) => write!(f, "{c}"),
        }
    }
}

/// One (possibly negated) predicate application.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub negated: bool,
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Literal {
    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Variable(v) => Some(v.as_str()),
            Term::Constant(_) => None,
        })
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "NOT ")?;
        }
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DirectiveKind {
    Avoid,
    Prefer,
    Require,
}

impl DirectiveKind {
    pub fn keyword(self) -> &'static str {
        match self {
            DirectiveKind::Avoid => "AVOID",
            DirectiveKind::Prefer => "PREFER",
            DirectiveKind::Require => "REQUIRE",
        }
    }
}

/// The action-side effect of a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Directive {
    pub kind: DirectiveKind,
    /// Never negated.
    pub pattern: Literal,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind.keyword(), self.pattern)
    }
}

/// A parsed rule: conjunctive condition plus one directive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleAst {
    pub condition: Vec<Literal>,
    pub directive: Directive,
}

/// A ground atom. Used both for observation facts and for grounded
/// directive patterns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Fact {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Fact {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Variable name (without `?`) to constant symbol.
pub type Binding = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {offset}: expected {expected}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("variable ?{0} in the directive is not bound by a non-negated condition literal")]
    UnboundDirectiveVariable(String),
    #[error("variable ?{0} in a negated literal is not bound by a non-negated literal")]
    UnboundNegatedVariable(String),
    #[error("predicate {0} used with arities {1} and {2} in one rule")]
    ArityClash(String, usize, usize),
    #[error("condition has no non-negated literal")]
    AllNegated,
    #[error("condition is empty")]
    EmptyCondition,
    #[error("predicate {0} has arity {1}, maximum is {max}", max = MAX_ARITY)]
    ArityTooLarge(String, usize),
    #[error("condition has {0} literals, maximum is {max}", max = MAX_CONDITION_LITERALS)]
    TooManyLiterals(usize),
    #[error("{0} directive uses {1}, which is not an action verb")]
    NotAnActionVerb(String, String),
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError {
            offset: self.pos,
            expected: expected.to_string(),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(kw) {
            let after = self.pos + kw.len();
            // keyword must not run into a following identifier character
            let boundary = self
                .src
                .as_bytes()
                .get(after)
                .map_or(true, |b| !b.is_ascii_alphanumeric() && *b != b'_');
            if boundary {
                self.pos = after;
                return Ok(());
            }
        }
        Err(self.err(kw))
    }

    fn peek_keyword(&mut self, kw: &str) -> bool {
        let save = self.pos;
        let ok = self.eat_keyword(kw).is_ok();
        self.pos = save;
        ok
    }

    fn eat_symbol(&mut self, sym: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(sym) {
            self.pos += sym.len_utf8();
            Ok(())
        } else {
            Err(self.err(&format!("`{sym}`")))
        }
    }

    fn peek_symbol(&mut self, sym: char) -> bool {
        self.skip_ws();
        self.rest().starts_with(sym)
    }

    fn eat_ident(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let bytes = self.rest().as_bytes();
        if bytes.is_empty() || !bytes[0].is_ascii_lowercase() {
            return Err(self.err("identifier"));
        }
        let mut len = 1;
        while len < bytes.len()
            && (bytes[len].is_ascii_lowercase() || bytes[len].is_ascii_digit() || bytes[len] == b'_')
        {
            len += 1;
        }
        let ident = self.rest()[..len].to_string();
        self.pos += len;
        Ok(ident)
    }

    fn eat_term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        if self.rest().starts_with('?') {
            self.pos += 1;
            let name = self.eat_ident().map_err(|mut e| {
                e.expected = "variable name".to_string();
                e
            })?;
            Ok(Term::Variable(name))
        } else {
            Ok(Term::Constant(self.eat_ident().map_err(|mut e| {
                e.expected = "term".to_string();
                e
            })?))
        }
    }

    fn eat_literal(&mut self, allow_not: bool) -> Result<Literal, ParseError> {
        self.skip_ws();
        let negated = allow_not && self.peek_keyword("NOT");
        if negated {
            self.eat_keyword("NOT")?;
        }
        let predicate = self.eat_ident().map_err(|mut e| {
            e.expected = "predicate".to_string();
            e
        })?;
        self.eat_symbol('(')?;
        let mut args = Vec::new();
        if !self.peek_symbol(')') {
            args.push(self.eat_term()?);
            while self.peek_symbol(',') {
                self.eat_symbol(',')?;
                args.push(self.eat_term()?);
            }
        }
        self.eat_symbol(')')?;
        Ok(Literal {
            negated,
            predicate,
            args,
        })
    }
}

/// Parse one rule line. Validation runs after a syntactically clean parse.
pub fn parse_rule(text: &str) -> Result<RuleAst, RuleError> {
    let mut cur = Cursor::new(text);
    cur.eat_keyword("WHEN")?;
    cur.skip_ws();
    if cur.peek_keyword("THEN") {
        return Err(cur.err("predicate").into());
    }
    let mut condition = vec![cur.eat_literal(true)?];
    while cur.peek_keyword("AND") {
        cur.eat_keyword("AND")?;
        condition.push(cur.eat_literal(true)?);
    }
    cur.eat_keyword("THEN")?;
    cur.skip_ws();
    let kind = if cur.peek_keyword("AVOID") {
        cur.eat_keyword("AVOID")?;
        DirectiveKind::Avoid
    } else if cur.peek_keyword("PREFER") {
        cur.eat_keyword("PREFER")?;
        DirectiveKind::Prefer
    } else if cur.peek_keyword("REQUIRE") {
        cur.eat_keyword("REQUIRE")?;
        DirectiveKind::Require
    } else {
        return Err(cur.err("AVOID, PREFER or REQUIRE").into());
    };
    let pattern = cur.eat_literal(false)?;
    cur.skip_ws();
    if !cur.rest().is_empty() {
        return Err(cur.err("end of rule").into());
    }
    let ast = RuleAst {
        condition,
        directive: Directive { kind, pattern },
    };
    if let Some(err) = validate_rule(&ast).into_iter().next() {
        return Err(err.into());
    }
    Ok(ast)
}

/// Either kind of failure when accepting rule text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Canonical single-space rendering; `parse_rule(print_rule(a))` round-trips.
pub fn print_rule(ast: &RuleAst) -> String {
    let cond = ast
        .condition
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(" AND ");
    format!("WHEN {cond} THEN {}", ast.directive)
}

/// Collect every structural problem; never aborts on the first.
pub fn validate_rule(ast: &RuleAst) -> Vec<ValidationError> {
    let mut errs = Vec::new();
    if ast.condition.is_empty() {
        errs.push(ValidationError::EmptyCondition);
        return errs;
    }
    if ast.condition.len() > MAX_CONDITION_LITERALS {
        errs.push(ValidationError::TooManyLiterals(ast.condition.len()));
    }
    if ast.condition.iter().all(|l| l.negated) {
        errs.push(ValidationError::AllNegated);
    }

    let mut arities: BTreeMap<&str, usize> = BTreeMap::new();
    for lit in ast.condition.iter().chain(Some(&ast.directive.pattern)) {
        if lit.args.len() > MAX_ARITY {
            errs.push(ValidationError::ArityTooLarge(
                lit.predicate.clone(),
                lit.args.len(),
            ));
        }
        match arities.get(lit.predicate.as_str()) {
            Some(&a) if a != lit.args.len() => {
                errs.push(ValidationError::ArityClash(
                    lit.predicate.clone(),
                    a,
                    lit.args.len(),
                ));
            }
            Some(_) => {}
            None => {
                arities.insert(&lit.predicate, lit.args.len());
            }
        }
    }

    let bound: BTreeSet<&str> = ast
        .condition
        .iter()
        .filter(|l| !l.negated)
        .flat_map(|l| l.variables())
        .collect();
    for v in ast.directive.pattern.variables() {
        if !bound.contains(v) {
            errs.push(ValidationError::UnboundDirectiveVariable(v.to_string()));
        }
    }
    for lit in ast.condition.iter().filter(|l| l.negated) {
        for v in lit.variables() {
            if !bound.contains(v) {
                errs.push(ValidationError::UnboundNegatedVariable(v.to_string()));
            }
        }
    }

    match ast.directive.kind {
        DirectiveKind::Avoid | DirectiveKind::Prefer => {
            let p = &ast.directive.pattern.predicate;
            if action_verb_arity(p) != Some(ast.directive.pattern.args.len()) {
                errs.push(ValidationError::NotAnActionVerb(
                    ast.directive.kind.keyword().to_string(),
                    p.clone(),
                ));
            }
        }
        // REQUIRE may name a state predicate; the guard simply ignores
        // patterns that do not ground to an executable action.
        DirectiveKind::Require => {}
    }
    errs
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

fn extend_binding(binding: &Binding, lit: &Literal, fact: &Fact) -> Option<Binding> {
    if lit.predicate != fact.predicate || lit.args.len() != fact.args.len() {
        return None;
    }
    let mut out = binding.clone();
    for (term, value) in lit.args.iter().zip(&fact.args) {
        match term {
            Term::Constant(c) => {
                if c != value {
                    return None;
                }
            }
            Term::Variable(v) => match out.get(v) {
                Some(bound) if bound != value => return None,
                Some(_) => {}
                None => {
                    out.insert(v.clone(), value.clone());
                }
            },
        }
    }
    Some(out)
}

fn substitute(lit: &Literal, binding: &Binding) -> Result<Fact, ValidationError> {
    let mut args = Vec::with_capacity(lit.args.len());
    for term in &lit.args {
        match term {
            Term::Constant(c) => args.push(c.clone()),
            Term::Variable(v) => match binding.get(v) {
                Some(c) => args.push(c.clone()),
                None => return Err(ValidationError::UnboundNegatedVariable(v.clone())),
            },
        }
    }
    Ok(Fact {
        predicate: lit.predicate.clone(),
        args,
    })
}

/// All bindings under which every non-negated literal is present in `facts`
/// and every negated literal is absent. Negation is closed-world over the
/// given fact set; negated literals are checked only once fully ground.
/// Output order is lexicographic over the bound constants.
pub fn match_condition(
    condition: &[Literal],
    facts: &BTreeSet<Fact>,
) -> Result<Vec<Binding>, ValidationError> {
    let positives: Vec<&Literal> = condition.iter().filter(|l| !l.negated).collect();
    let negatives: Vec<&Literal> = condition.iter().filter(|l| l.negated).collect();
    if positives.is_empty() {
        return Err(ValidationError::AllNegated);
    }

    let mut bindings = vec![Binding::new()];
    for lit in &positives {
        let mut next = Vec::new();
        for binding in &bindings {
            for fact in facts {
                if let Some(ext) = extend_binding(binding, lit, fact) {
                    next.push(ext);
                }
            }
        }
        bindings = next;
        if bindings.is_empty() {
            return Ok(bindings);
        }
    }

    let mut out = Vec::new();
    'candidate: for binding in bindings {
        for lit in &negatives {
            let ground = substitute(lit, &binding)?;
            if facts.contains(&ground) {
                continue 'candidate;
            }
        }
        out.push(binding);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Apply a binding to the directive pattern. The validator guarantees every
/// pattern variable is bound, so a leftover variable is an internal bug.
pub fn ground_directive(directive: &Directive, binding: &Binding) -> (DirectiveKind, Fact) {
    let fact = substitute(&directive.pattern, binding)
        .expect("directive variable unbound despite range restriction");
    (directive.kind, fact)
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

fn rename_apart(condition: &[&Literal], directive: &Directive) -> RuleAst {
    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let rename = |term: &Term, names: &mut BTreeMap<String, String>| match term {
        Term::Constant(c) => Term::Constant(c.clone()),
        Term::Variable(v) => {
            let next = format!("v{}", names.len());
            Term::Variable(names.entry(v.clone()).or_insert(next).clone())
        }
    };
    let map_lit = |lit: &Literal, names: &mut BTreeMap<String, String>| Literal {
        negated: lit.negated,
        predicate: lit.predicate.clone(),
        args: lit.args.iter().map(|t| rename(t, names)).collect(),
    };
    let condition = condition
        .iter()
        .map(|l| map_lit(l, &mut names))
        .collect::<Vec<_>>();
    let pattern = map_lit(&directive.pattern, &mut names);
    RuleAst {
        condition,
        directive: Directive {
            kind: directive.kind,
            pattern,
        },
    }
}

fn permutations<'a>(items: &[&'a Literal]) -> Vec<Vec<&'a Literal>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Alpha-equivalent rules (variable renamings, condition reorderings) map to
/// the same canonical form: the minimal printed rendering over all condition
/// orders with variables renamed to first-occurrence `?v0, ?v1, ...`.
/// Condition length is capped at six literals, so the permutation sweep is
/// cheap.
pub fn canonicalize(ast: &RuleAst) -> RuleAst {
    let refs: Vec<&Literal> = ast.condition.iter().collect();
    permutations(&refs)
        .into_iter()
        .map(|perm| rename_apart(&perm, &ast.directive))
        .min_by(|a, b| print_rule(a).cmp(&print_rule(b)))
        .expect("non-empty condition")
}
