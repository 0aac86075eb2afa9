//! Problem-setting engine for competitive programming: forges
//! competition-grade test data (validator, generators, checker, interactor)
//! through multi-candidate selection around a pluggable language-model
//! gateway, judges submissions in a resource-limited sandbox, measures
//! verdict fidelity against official judgments, and generates new problems
//! under a dual-verification protocol.

pub mod domain;
pub mod sandbox;
pub(crate) mod util;
