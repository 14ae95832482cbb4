//! Meta-policy reflexion for a deterministic household text world.
//!
//! Failed episodes are distilled into predicate-style rules with confidence
//! weights. Rules are retrieved per state to bias a frozen scripted policy
//! (soft guidance) and, above a confidence threshold, to hard-block actions
//! alongside the environment's own admissibility set.

pub mod admissibility;
pub mod harness;
pub mod memory;
pub mod policy;
pub mod reflection;
pub mod remote;
pub mod rulelang;
pub mod suites;
pub mod textworld;
