//! The meta-policy memory: canonical-hashed rule entries with confidence
//! weights, retrieval against a state's fact set, reinforcement, pruning and
//! line-delimited persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rulelang::{
    canonicalize, match_condition, parse_rule, print_rule, validate_rule, Binding, DirectiveKind,
    Fact, RuleAst, RuleError,
};

pub const INITIAL_CONFIDENCE: f64 = 0.5;
pub const MERGE_BONUS: f64 = 0.05;
pub const SUCCESS_REWARD: f64 = 0.1;
pub const FAILURE_PENALTY: f64 = 0.2;
pub const DEFAULT_PRUNE_FLOOR: f64 = 0.1;
pub const DEFAULT_RETRIEVAL_K: usize = 8;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.2;

const FORMAT_NAME: &str = "mpm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleSource {
    Scripted,
    Remote,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: RuleSource,
    pub task_id: String,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStats {
    pub retrieved: u64,
    pub followed: u64,
    pub successes: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleEntry {
    pub rule: RuleAst,
    pub confidence: f64,
    pub provenance: Provenance,
    pub stats: UsageStats,
}

/// One retrieval hit: an entry matched the state under one binding.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedRule {
    pub hash: String,
    pub rule: RuleAst,
    pub confidence: f64,
    pub binding: Binding,
    pub kind: DirectiveKind,
    pub ground: Fact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Added,
    Merged,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown rule hash {0}")]
    UnknownRule(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

/// 128-bit digest (hex) of the canonical printed rule. Alpha-equivalent
/// rules collide; anything else does not at desk scale.
pub fn canonical_hash(rule: &RuleAst) -> String {
    let canonical = print_rule(&canonicalize(rule));
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(32);
    for byte in &digest[..16] {
        write!(out, "{byte:02x}").unwrap();
    }
    out
}

/// The store M. Entries are keyed by canonical hash; iteration order is
/// hash-lexicographic, so every derived artifact is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaPolicyMemory {
    entries: BTreeMap<String, RuleEntry>,
    version: u32,
    frozen: bool,
}

impl MetaPolicyMemory {
    pub fn new() -> Self {
        MetaPolicyMemory {
            entries: BTreeMap::new(),
            version: FORMAT_VERSION,
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Frozen memories skip the `retrieved` counter update so an inference
    /// run leaves the store byte-identical.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &RuleEntry)> {
        self.entries.iter()
    }

    pub fn get(&self, hash: &str) -> Option<&RuleEntry> {
        self.entries.get(hash)
    }

    /// New rules enter at confidence 0.5; a re-inserted (alpha-equivalent)
    /// rule gets a +0.05 confidence bump instead of a duplicate entry.
    pub fn insert(
        &mut self,
        rule: &RuleAst,
        provenance: Provenance,
    ) -> Result<(String, InsertOutcome), MemoryError> {
        if let Some(err) = validate_rule(rule).into_iter().next() {
            return Err(RuleError::from(err).into());
        }
        let canonical = canonicalize(rule);
        let hash = canonical_hash(&canonical);
        match self.entries.get_mut(&hash) {
            Some(entry) => {
                entry.confidence = clamp(entry.confidence + MERGE_BONUS);
                Ok((hash, InsertOutcome::Merged))
            }
            None => {
                self.entries.insert(
                    hash.clone(),
                    RuleEntry {
                        rule: canonical,
                        confidence: INITIAL_CONFIDENCE,
                        provenance,
                        stats: UsageStats::default(),
                    },
                );
                Ok((hash, InsertOutcome::Added))
            }
        }
    }

    /// The state-relevant subset M_t: one hit per (entry, binding), ordered
    /// by confidence descending then hash then binding, truncated to `k`.
    pub fn retrieve(&mut self, facts: &BTreeSet<Fact>, k: usize, min_conf: f64) -> Vec<RetrievedRule> {
        let mut hits = Vec::new();
        for (hash, entry) in &self.entries {
            if entry.confidence < min_conf {
                continue;
            }
            let bindings = match match_condition(&entry.rule.condition, facts) {
                Ok(b) => b,
                Err(_) => continue,
            };
            for binding in bindings {
                let (kind, ground) =
                    crate::rulelang::ground_directive(&entry.rule.directive, &binding);
                hits.push(RetrievedRule {
                    hash: hash.clone(),
                    rule: entry.rule.clone(),
                    confidence: entry.confidence,
                    binding,
                    kind,
                    ground,
                });
            }
        }
        hits.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| a.hash.cmp(&b.hash))
                .then_with(|| a.binding.cmp(&b.binding))
        });
        hits.truncate(k);
        if !self.frozen {
            let returned: BTreeSet<&str> = hits.iter().map(|h| h.hash.as_str()).collect();
            for hash in returned {
                if let Some(entry) = self.entries.get_mut(hash) {
                    entry.stats.retrieved += 1;
                }
            }
        }
        hits
    }

    /// Matching entries at or above the hard-constraint threshold, for the
    /// admissibility guard. Never touches usage counters.
    pub fn hard_constraints(&self, facts: &BTreeSet<Fact>, threshold: f64) -> Vec<RetrievedRule> {
        let mut hits = Vec::new();
        for (hash, entry) in &self.entries {
            if entry.confidence < threshold {
                continue;
            }
            if let Ok(bindings) = match_condition(&entry.rule.condition, facts) {
                for binding in bindings {
                    let (kind, ground) =
                        crate::rulelang::ground_directive(&entry.rule.directive, &binding);
                    hits.push(RetrievedRule {
                        hash: hash.clone(),
                        rule: entry.rule.clone(),
                        confidence: entry.confidence,
                        binding,
                        kind,
                        ground,
                    });
                }
            }
        }
        hits
    }

    /// Apply episode feedback to the rules that were actually followed:
    /// +0.1 on success, -0.2 on failure, clamped to [0, 1].
    pub fn reinforce(
        &mut self,
        feedback: &[(String, bool)],
        episode_success: bool,
    ) -> Result<(), MemoryError> {
        for (hash, _) in feedback {
            if !self.entries.contains_key(hash) {
                return Err(MemoryError::UnknownRule(hash.clone()));
            }
        }
        for (hash, followed) in feedback {
            if !*followed {
                continue;
            }
            let entry = self.entries.get_mut(hash).unwrap();
            entry.stats.followed += 1;
            if episode_success {
                entry.stats.successes += 1;
                entry.confidence = clamp(entry.confidence + SUCCESS_REWARD);
            } else {
                entry.stats.failures += 1;
                entry.confidence = clamp(entry.confidence - FAILURE_PENALTY);
            }
        }
        Ok(())
    }

    /// Drop entries strictly below `floor`; returns how many were removed.
    pub fn prune(&mut self, floor: f64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.confidence >= floor);
        before - self.entries.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let mut file = std::fs::File::create(path)?;
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: self.version,
        };
        writeln!(file, "{}", serde_json::to_string(&header).unwrap())?;
        for (_, entry) in &self.entries {
            let record = Record {
                rule: print_rule(&entry.rule),
                confidence: entry.confidence,
                provenance: entry.provenance.clone(),
                stats: entry.stats,
            };
            writeln!(file, "{}", serde_json::to_string(&record).unwrap())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut memory = MetaPolicyMemory::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                let header: Header = serde_json::from_str(&line).map_err(|e| {
                    MemoryError::Format {
                        line: line_no,
                        message: format!("bad header: {e}"),
                    }
                })?;
                if header.format != FORMAT_NAME {
                    return Err(MemoryError::Format {
                        line: line_no,
                        message: format!("unknown format `{}`", header.format),
                    });
                }
                memory.version = header.version;
                saw_header = true;
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| MemoryError::Format {
                    line: line_no,
                    message: format!("bad record: {e}"),
                })?;
            if !(0.0..=1.0).contains(&record.confidence) {
                return Err(MemoryError::Format {
                    line: line_no,
                    message: format!("confidence {} out of [0, 1]", record.confidence),
                });
            }
            let rule = parse_rule(&record.rule).map_err(|e| MemoryError::Format {
                line: line_no,
                message: format!("bad rule: {e}"),
            })?;
            let hash = canonical_hash(&rule);
            if memory.entries.contains_key(&hash) {
                return Err(MemoryError::Format {
                    line: line_no,
                    message: "duplicate rule".to_string(),
                });
            }
            memory.entries.insert(
                hash,
                RuleEntry {
                    rule: canonicalize(&rule),
                    confidence: record.confidence,
                    provenance: record.provenance,
                    stats: record.stats,
                },
            );
        }
        Ok(memory)
    }
}

fn clamp(confidence: f64) -> f64 {
    // keep confidences on a 0.001 grid so snapshots serialize stably
    (confidence.clamp(0.0, 1.0) * 1000.0).round() / 1000.0
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Record {
    rule: String,
    confidence: f64,
    provenance: Provenance,
    stats: UsageStats,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulelang::parse_rule;

    fn prov(task: &str) -> Provenance {
        Provenance {
            source: RuleSource::Scripted,
            task_id: task.to_string(),
            round: 1,
        }
    }

    fn facts(list: &[(&str, &[&str])]) -> BTreeSet<Fact> {
        list.iter().map(|(p, a)| Fact::new(p, a)).collect()
    }

    #[test]
    fn alpha_variants_share_a_hash() {
        let a = parse_rule("WHEN dirty(?a) THEN PREFER clean(?a)").unwrap();
        let b = parse_rule("WHEN dirty(?x) THEN PREFER clean(?x)").unwrap();
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn condition_order_does_not_change_the_hash() {
        let a = parse_rule("WHEN at(?r) AND closed(?c) THEN PREFER open(?c)").unwrap();
        let b = parse_rule("WHEN closed(?c) AND at(?r) THEN PREFER open(?c)").unwrap();
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn directive_kind_is_part_of_the_hash() {
        let a = parse_rule("WHEN dirty(?x) THEN PREFER clean(?x)").unwrap();
        let b = parse_rule("WHEN dirty(?x) THEN AVOID clean(?x)").unwrap();
        assert_ne!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn insert_then_merge() {
        let mut memory = MetaPolicyMemory::new();
        let rule = parse_rule("WHEN dirty(?x) THEN PREFER clean(?x)").unwrap();
        let (hash, outcome) = memory.insert(&rule, prov("t1")).unwrap();
        assert_eq!(outcome, InsertOutcome::Added);
        assert_eq!(memory.get(&hash).unwrap().confidence, 0.5);

        let variant = parse_rule("WHEN dirty(?y) THEN PREFER clean(?y)").unwrap();
        let (hash2, outcome) = memory.insert(&variant, prov("t2")).unwrap();
        assert_eq!(outcome, InsertOutcome::Merged);
        assert_eq!(hash, hash2);
        assert_eq!(memory.len(), 1);
        assert_eq!(memory.get(&hash).unwrap().confidence, 0.55);
    }

    #[test]
    fn retrieve_matches_and_respects_threshold() {
        let mut memory = MetaPolicyMemory::new();
        let rule = parse_rule("WHEN closed(?c) THEN PREFER open(?c)").unwrap();
        memory.insert(&rule, prov("t1")).unwrap();
        let fs = facts(&[("closed", &["fridge"])]);

        let hits = memory.retrieve(&fs, 8, 0.2);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].ground, Fact::new("open", &["fridge"]));
        // entries are canonicalized, so bindings use the renamed variables
        assert_eq!(hits[0].binding.get("v0").unwrap(), "fridge");

        assert!(memory.retrieve(&fs, 8, 0.6).is_empty());
        assert!(memory.retrieve(&fs, 0, 0.2).is_empty());
    }

    #[test]
    fn retrieval_counter_updates_unless_frozen() {
        let mut memory = MetaPolicyMemory::new();
        let rule = parse_rule("WHEN closed(?c) THEN PREFER open(?c)").unwrap();
        let (hash, _) = memory.insert(&rule, prov("t1")).unwrap();
        let fs = facts(&[("closed", &["fridge"])]);
        memory.retrieve(&fs, 8, 0.2);
        assert_eq!(memory.get(&hash).unwrap().stats.retrieved, 1);
        memory.set_frozen(true);
        memory.retrieve(&fs, 8, 0.2);
        assert_eq!(memory.get(&hash).unwrap().stats.retrieved, 1);
    }

    #[test]
    fn reinforce_applies_update_law_with_clamps() {
        let mut memory = MetaPolicyMemory::new();
        let rule = parse_rule("WHEN dirty(?x) THEN PREFER clean(?x)").unwrap();
        let (hash, _) = memory.insert(&rule, prov("t1")).unwrap();

        memory.reinforce(&[(hash.clone(), true)], true).unwrap();
        assert_eq!(memory.get(&hash).unwrap().confidence, 0.6);

        // drive down to the floor
        for _ in 0..4 {
            memory.reinforce(&[(hash.clone(), true)], false).unwrap();
        }
        assert_eq!(memory.get(&hash).unwrap().confidence, 0.0);

        // and up to the ceiling
        for _ in 0..11 {
            memory.reinforce(&[(hash.clone(), true)], true).unwrap();
        }
        assert_eq!(memory.get(&hash).unwrap().confidence, 1.0);

        let err = memory.reinforce(&[("missing".into(), true)], true).unwrap_err();
        assert!(matches!(err, MemoryError::UnknownRule(_)));
    }

    #[test]
    fn prune_is_strict() {
        let mut memory = MetaPolicyMemory::new();
        for (i, conf) in [(0, 0.0), (1, 0.09), (2, 0.1)] {
            let rule = parse_rule(&format!("WHEN dirty(?x) AND tag{i}(?x) THEN PREFER clean(?x)"))
                .unwrap();
            let (hash, _) = memory.insert(&rule, prov("t")).unwrap();
            memory.entries.get_mut(&hash).unwrap().confidence = conf;
        }
        assert_eq!(memory.prune(0.1), 2);
        assert_eq!(memory.len(), 1);
        assert_eq!(MetaPolicyMemory::new().prune(0.1), 0);
        assert_eq!(memory.prune(0.0), 0);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mpm");
        let mut memory = MetaPolicyMemory::new();
        for line in [
            "WHEN dirty(?x) THEN PREFER clean(?x)",
            "WHEN closed(?c) THEN PREFER open(?c)",
            "WHEN at(?l) AND NOT can_heat(?l) AND holding(?x) THEN AVOID heat(?x)",
        ] {
            memory.insert(&parse_rule(line).unwrap(), prov("t")).unwrap();
        }
        memory.save(&path).unwrap();
        let loaded = MetaPolicyMemory::load(&path).unwrap();
        assert_eq!(memory, loaded);
    }

    #[test]
    fn load_rejects_out_of_range_confidence_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mpm");
        std::fs::write(
            &path,
            concat!(
                "{\"format\":\"mpm\",\"version\":1}\n",
                "{\"rule\":\"WHEN dirty(?x) THEN PREFER clean(?x)\",\"confidence\":1.7,",
                "\"provenance\":{\"source\":\"scripted\",\"task_id\":\"t\",\"round\":1},",
                "\"stats\":{\"retrieved\":0,\"followed\":0,\"successes\":0,\"failures\":0}}\n"
            ),
        )
        .unwrap();
        match MetaPolicyMemory::load(&path).unwrap_err() {
            MemoryError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_loads_as_empty_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mpm");
        std::fs::write(&path, "").unwrap();
        assert!(MetaPolicyMemory::load(&path).unwrap().is_empty());
    }
}
