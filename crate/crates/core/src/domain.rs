//! Core data model shared by every stage: problems, candidate programs,
//! test cases, verdicts.
//!
//! All values here are immutable after construction and safe to share
//! across threads.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// A problem statement plus the machine-relevant limits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    pub id: String,
    pub statement: String,
    pub time_limit_ms: u64,
    pub memory_limit_mib: u64,
    #[serde(default)]
    pub interactive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i32>,
    /// The input-format/constraints section extracted from the statement.
    #[serde(default)]
    pub constraints_digest: String,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.time_limit_ms == 0 {
            return Err(DomainError::Invalid {
                field: "time_limit_ms",
                reason: "must be > 0".into(),
            });
        }
        if self.memory_limit_mib == 0 {
            return Err(DomainError::Invalid {
                field: "memory_limit_mib",
                reason: "must be > 0".into(),
            });
        }
        if self.statement.trim().is_empty() {
            return Err(DomainError::Invalid {
                field: "statement",
                reason: "must be non-empty".into(),
            });
        }
        if let Some(r) = self.rating {
            if !(800..=3500).contains(&r) {
                return Err(DomainError::Invalid {
                    field: "rating",
                    reason: format!("{r} outside [800, 3500]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Cpp,
    Python,
}

impl Language {
    pub fn extension(self) -> &'static str {
        match self {
            Language::Cpp => "cpp",
            Language::Python => "py",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Language> {
        match ext {
            "cpp" | "cc" | "cxx" => Some(Language::Cpp),
            "py" => Some(Language::Python),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::Cpp => write!(f, "cpp"),
            Language::Python => write!(f, "python"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramRole {
    Validator,
    Checker,
    Interactor,
    Generator,
    ReferenceSolution,
    BruteSolution,
    Mutant,
    Submission,
}

/// Opaque handle to a compiled artifact, content-addressed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildId(pub String);

impl fmt::Display for BuildId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A program under consideration: source plus role, with the build handle
/// attached once compiled. The role never changes after creation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateProgram {
    role: ProgramRole,
    pub language: Language,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_id: Option<BuildId>,
}

impl CandidateProgram {
    pub fn new(role: ProgramRole, language: Language, source: impl Into<String>) -> Self {
        let source = source.into();
        debug_assert!(!source.is_empty(), "candidate source must be non-empty");
        CandidateProgram {
            role,
            language,
            source,
            build_id: None,
        }
    }

    pub fn role(&self) -> ProgramRole {
        self.role
    }

    pub fn with_build(mut self, id: BuildId) -> Self {
        self.build_id = Some(id);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exhaustive,
    RandomExtreme,
    TleInducing,
    Sample,
    Manual,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Exhaustive => "exhaustive",
            Provenance::RandomExtreme => "random_extreme",
            Provenance::TleInducing => "tle_inducing",
            Provenance::Sample => "sample",
            Provenance::Manual => "manual",
        };
        f.write_str(s)
    }
}

/// The three test-construction strategies realized by generator programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenStrategy {
    ExhaustiveSmall,
    RandomExtreme,
    TleInducing,
}

impl GenStrategy {
    pub fn all() -> [GenStrategy; 3] {
        [
            GenStrategy::ExhaustiveSmall,
            GenStrategy::RandomExtreme,
            GenStrategy::TleInducing,
        ]
    }

    pub fn provenance(self) -> Provenance {
        match self {
            GenStrategy::ExhaustiveSmall => Provenance::Exhaustive,
            GenStrategy::RandomExtreme => Provenance::RandomExtreme,
            GenStrategy::TleInducing => Provenance::TleInducing,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenStrategy::ExhaustiveSmall => "exhaustive_small",
            GenStrategy::RandomExtreme => "random_extreme",
            GenStrategy::TleInducing => "tle_inducing",
        }
    }
}

impl fmt::Display for GenStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One test input, optionally with its materialized answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub input: Vec<u8>,
    pub answer: Option<Vec<u8>>,
    pub provenance: Provenance,
    /// 64-bit hash of the normalized input; pure function of the input.
    pub signature: u64,
}

impl TestCase {
    pub fn new(input: Vec<u8>, provenance: Provenance) -> Self {
        let signature = input_signature(&input);
        TestCase {
            input,
            answer: None,
            provenance,
            signature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "WA")]
    Wa,
    #[serde(rename = "TLE")]
    Tle,
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "RE")]
    Re,
    #[serde(rename = "JUDGE_FAIL")]
    JudgeFail,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VerdictKind::Ac => "AC",
            VerdictKind::Wa => "WA",
            VerdictKind::Tle => "TLE",
            VerdictKind::Mle => "MLE",
            VerdictKind::Re => "RE",
            VerdictKind::JudgeFail => "JUDGE_FAIL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// 1-based index of the failing test; 0 is the pre-run sentinel
    /// (compile failure). Absent for AC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_test: Option<usize>,
    #[serde(default)]
    pub detail: String,
}

impl Verdict {
    pub fn accepted() -> Self {
        Verdict {
            kind: VerdictKind::Ac,
            failing_test: None,
            detail: String::new(),
        }
    }

    pub fn failure(kind: VerdictKind, failing_test: usize, detail: impl Into<String>) -> Self {
        debug_assert!(kind != VerdictKind::Ac);
        Verdict {
            kind,
            failing_test: Some(failing_test),
            detail: detail.into(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.kind == VerdictKind::Ac
    }
}

/// First-failure aggregation: AC iff every test is AC, otherwise the first
/// non-AC verdict in test order.
pub fn aggregate_verdict(per_test: &[Verdict]) -> Result<Verdict, DomainError> {
    if per_test.is_empty() {
        return Err(DomainError::Contract(
            "aggregate_verdict requires at least one per-test verdict".into(),
        ));
    }
    for v in per_test {
        if !v.is_accepted() {
            return Ok(v.clone());
        }
    }
    Ok(Verdict::accepted())
}

/// Canonical form used for dedup signatures and token comparison, never for
/// the bytes handed to contestant programs: CRLF becomes LF, trailing
/// whitespace is stripped per line, trailing blank lines collapse, and the
/// result ends in exactly one newline. Idempotent.
pub fn normalize_input(raw: &[u8]) -> Vec<u8> {
    let mut lines: Vec<&[u8]> = Vec::new();
    let mut start = 0;
    for (i, &b) in raw.iter().enumerate() {
        if b == b'\n' {
            lines.push(&raw[start..i]);
            start = i + 1;
        }
    }
    if start < raw.len() {
        lines.push(&raw[start..]);
    }

    let mut stripped: Vec<&[u8]> = lines
        .iter()
        .map(|line| {
            let mut end = line.len();
            while end > 0 && matches!(line[end - 1], b' ' | b'\t' | b'\r') {
                end -= 1;
            }
            &line[..end]
        })
        .collect();

    while stripped.last().is_some_and(|l| l.is_empty()) {
        stripped.pop();
    }

    let mut out = Vec::with_capacity(raw.len() + 1);
    for line in stripped {
        out.extend_from_slice(line);
        out.push(b'\n');
    }
    if out.is_empty() {
        out.push(b'\n');
    }
    out
}

/// 64-bit FNV-1a over the normalized bytes.
pub fn input_signature(raw: &[u8]) -> u64 {
    fnv1a64(&normalize_input(raw))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ac() -> Verdict {
        Verdict::accepted()
    }

    #[test]
    fn aggregate_all_pass() {
        let v = aggregate_verdict(&[ac(), ac(), ac()]).unwrap();
        assert_eq!(v.kind, VerdictKind::Ac);
        assert!(v.failing_test.is_none());
    }

    #[test]
    fn aggregate_first_failure_wins() {
        let per_test = vec![
            ac(),
            Verdict::failure(VerdictKind::Wa, 2, "mismatch"),
            Verdict::failure(VerdictKind::Tle, 3, ""),
        ];
        let v = aggregate_verdict(&per_test).unwrap();
        assert_eq!(v.kind, VerdictKind::Wa);
        assert_eq!(v.failing_test, Some(2));
    }

    #[test]
    fn aggregate_single_failure() {
        let v = aggregate_verdict(&[Verdict::failure(VerdictKind::Tle, 1, "")]).unwrap();
        assert_eq!(v.kind, VerdictKind::Tle);
        assert_eq!(v.failing_test, Some(1));
    }

    #[test]
    fn aggregate_empty_is_contract_violation() {
        assert!(matches!(
            aggregate_verdict(&[]),
            Err(DomainError::Contract(_))
        ));
    }

    #[test]
    fn normalize_strips_and_terminates() {
        assert_eq!(normalize_input(b"1 2 \r\n"), b"1 2\n");
        assert_eq!(normalize_input(b"a\n"), b"a\n");
        assert_eq!(normalize_input(b""), b"\n");
        assert_eq!(normalize_input(b"a\tb  \nc"), b"a\tb\nc\n");
        assert_eq!(normalize_input(b"x\n\n\n"), b"x\n");
    }

    #[test]
    fn equal_normalized_inputs_share_signature() {
        assert_eq!(input_signature(b"1 2\n"), input_signature(b"1 2 \r\n"));
        assert_ne!(input_signature(b"1 2\n"), input_signature(b"1 3\n"));
    }

    #[test]
    fn spec_rejects_bad_fields() {
        let mut spec = ProblemSpec {
            id: "p".into(),
            statement: "do the thing".into(),
            time_limit_ms: 1000,
            memory_limit_mib: 256,
            interactive: false,
            rating: Some(1500),
            constraints_digest: String::new(),
        };
        assert!(spec.validate().is_ok());
        spec.rating = Some(100);
        assert!(spec.validate().is_err());
        spec.rating = None;
        spec.time_limit_ms = 0;
        assert!(spec.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in proptest::collection::vec(any::<u8>(), 0..256)) {
            let once = normalize_input(&raw);
            let twice = normalize_input(&once);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn appending_ac_never_changes_aggregate(
            kinds in proptest::collection::vec(0u8..5, 1..16)
        ) {
            let per_test: Vec<Verdict> = kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| match k {
                    0 => Verdict::accepted(),
                    1 => Verdict::failure(VerdictKind::Wa, i + 1, ""),
                    2 => Verdict::failure(VerdictKind::Tle, i + 1, ""),
                    3 => Verdict::failure(VerdictKind::Mle, i + 1, ""),
                    _ => Verdict::failure(VerdictKind::Re, i + 1, ""),
                })
                .collect();
            let before = aggregate_verdict(&per_test).unwrap();
            let mut extended = per_test.clone();
            extended.push(Verdict::accepted());
            let after = aggregate_verdict(&extended).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}
