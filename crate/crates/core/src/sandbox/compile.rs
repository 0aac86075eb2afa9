//! Content-addressed build cache. A build directory holds the source file
//! plus, for compiled languages, the binary; the digest of (language,
//! source) is the build id.

use super::exec;
use super::{CompileError, ExecutionLimits, SandboxError, SandboxPool};
use crate::domain::{BuildId, CandidateProgram, Language};
use sha2::{Digest, Sha256};
use std::fs;

const COMPILE_WALL_MS: u64 = 60_000;
const COMPILE_MEMORY_MIB: u64 = 4096;

#[derive(Debug, Clone)]
pub enum CompileOutcome {
    Built(BuildId),
    /// Candidate disqualification, not a pipeline failure.
    Failed(CompileError),
}

impl CompileOutcome {
    pub fn built(&self) -> Option<&BuildId> {
        match self {
            CompileOutcome::Built(id) => Some(id),
            CompileOutcome::Failed(_) => None,
        }
    }
}

pub(super) fn build_digest(language: Language, source: &str) -> String {
    let mut h = Sha256::new();
    h.update(language.to_string().as_bytes());
    h.update([0u8]);
    h.update(source.as_bytes());
    crate::util::hex_lower(&h.finalize())
}

fn src_name(language: Language) -> String {
    format!("src.{}", language.extension())
}

pub(super) fn compile(
    pool: &SandboxPool,
    program: &CandidateProgram,
) -> Result<CompileOutcome, SandboxError> {
    let digest = build_digest(program.language, &program.source);
    let final_dir = pool.cache_root().join(&digest);
    if final_dir.join(".ok").exists() {
        return Ok(CompileOutcome::Built(BuildId(digest)));
    }

    let work = tempfile::Builder::new()
        .prefix("build-")
        .tempdir_in(pool.cache_root())?;
    let src_path = work.path().join(src_name(program.language));
    fs::write(&src_path, &program.source)?;
    let bin_path = work.path().join("bin");

    let cmd: Vec<String> = pool
        .settings()
        .compile_command(program.language)
        .iter()
        .map(|part| {
            part.replace("{src}", &src_path.to_string_lossy())
                .replace("{out}", &bin_path.to_string_lossy())
        })
        .collect();

    let limits = ExecutionLimits {
        wall_time_ms: COMPILE_WALL_MS,
        memory_mib: COMPILE_MEMORY_MIB,
        output_cap_bytes: 16 * 1024 * 1024,
    };
    let result = exec::execute(&cmd, &[], work.path(), b"", limits, &[], pool.settings().grace_ms)?;
    if !result.ran_clean() {
        let mut diagnostics = String::from_utf8_lossy(&result.stderr).into_owned();
        if diagnostics.trim().is_empty() {
            diagnostics = format!("compiler exited with status {:?}", result.status);
        }
        return Ok(CompileOutcome::Failed(CompileError { diagnostics }));
    }

    // Write a language marker so run_argv can reconstruct the invocation,
    // then publish atomically. A concurrent publisher winning the rename is
    // a cache hit.
    fs::write(work.path().join(".lang"), program.language.to_string())?;
    fs::write(work.path().join(".ok"), b"")?;
    let work = work.keep();
    match fs::rename(&work, &final_dir) {
        Ok(()) => {}
        Err(_) if final_dir.join(".ok").exists() => {
            let _ = fs::remove_dir_all(&work);
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&work);
            return Err(e.into());
        }
    }
    Ok(CompileOutcome::Built(BuildId(digest)))
}

/// Reconstruct the argv prefix that runs a cached build.
pub(super) fn run_argv(pool: &SandboxPool, build: &BuildId) -> Result<Vec<String>, SandboxError> {
    let dir = pool.cache_root().join(&build.0);
    if !dir.join(".ok").exists() {
        return Err(SandboxError::MissingBuild(build.clone()));
    }
    let lang_marker = fs::read_to_string(dir.join(".lang"))?;
    let language = match lang_marker.trim() {
        "cpp" => Language::Cpp,
        "python" => Language::Python,
        other => {
            return Err(SandboxError::Infra(format!(
                "corrupt build cache entry {build}: unknown language {other:?}"
            )))
        }
    };
    let src = dir.join(src_name(language));
    let bin = dir.join("bin");
    Ok(pool
        .settings()
        .run_command(language)
        .iter()
        .map(|part| {
            part.replace("{src}", &src.to_string_lossy())
                .replace("{bin}", &bin.to_string_lossy())
        })
        .collect())
}

