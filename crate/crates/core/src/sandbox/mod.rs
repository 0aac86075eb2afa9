//! Compile and execute candidate programs under wall-clock and memory
//! limits, in isolated working directories.
//!
//! Enforcement is wall-clock + RLIMIT_AS with peak tracking via /proc and
//! wait4 rusage. Each execution owns a pool worker exclusively; interactive
//! sessions own two.

mod compile;
mod exec;
mod interactive;

pub use compile::CompileOutcome;
pub use interactive::{SessionProc, Side, Transcript, TranscriptEntry};

use crate::domain::{BuildId, CandidateProgram, Language};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use crate::util::Semaphore;
use std::sync::Mutex;

pub const DEFAULT_OUTPUT_CAP: u64 = 256 * 1024 * 1024;
pub const DEFAULT_GRACE_MS: u64 = 200;
/// Peak-vs-limit fraction above which a failing exit classifies as MLE.
pub const MLE_PEAK_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_time_ms: u64,
    pub memory_mib: u64,
    pub output_cap_bytes: u64,
}

impl ExecutionLimits {
    pub fn new(wall_time_ms: u64, memory_mib: u64) -> Self {
        ExecutionLimits {
            wall_time_ms,
            memory_mib,
            output_cap_bytes: DEFAULT_OUTPUT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    /// Ran to completion and exited normally (any exit code).
    Ok,
    Timeout,
    MemoryExceeded,
    /// Terminated by a signal.
    RuntimeError,
    OutputCapped,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    /// Exit code for normal exits; -(signal) for signal terminations.
    pub exit_code: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub elapsed_ms: u64,
    pub peak_memory_mib: u64,
}

impl ExecutionResult {
    pub fn ran_clean(&self) -> bool {
        self.status == ExecStatus::Ok && self.exit_code == 0
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("compile failed: {diagnostics}")]
pub struct CompileError {
    pub diagnostics: String,
}

/// Infrastructure failure, distinct from any program-under-test failure.
/// Callers surface this as JUDGE_FAIL, never as a contestant verdict.
#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("sandbox infrastructure failure: {0}")]
    Infra(String),
    #[error("unknown build id {0}")]
    MissingBuild(BuildId),
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Infra(e.to_string())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get().min(4))
        .unwrap_or(2)
}

fn default_grace_ms() -> u64 {
    DEFAULT_GRACE_MS
}

fn default_output_cap() -> u64 {
    DEFAULT_OUTPUT_CAP
}

fn default_cpp_compile() -> Vec<String> {
    ["g++", "-O2", "-std=c++17", "-o", "{out}", "{src}"]
        .map(String::from)
        .to_vec()
}

fn default_python_compile() -> Vec<String> {
    ["python3", "-m", "py_compile", "{src}"]
        .map(String::from)
        .to_vec()
}

fn default_cpp_run() -> Vec<String> {
    vec!["{bin}".to_string()]
}

fn default_python_run() -> Vec<String> {
    ["python3", "-S", "-B", "{src}"].map(String::from).to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSettings {
    pub workers: usize,
    pub grace_ms: u64,
    pub output_cap_bytes: u64,
    /// Build cache root; a temp directory when unset.
    pub build_cache_dir: Option<PathBuf>,
    /// Parent for per-run scratch directories; system temp when unset.
    pub scratch_dir: Option<PathBuf>,
    pub cpp_compile: Vec<String>,
    pub python_compile: Vec<String>,
    pub cpp_run: Vec<String>,
    pub python_run: Vec<String>,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        SandboxSettings {
            workers: default_workers(),
            grace_ms: default_grace_ms(),
            output_cap_bytes: default_output_cap(),
            build_cache_dir: None,
            scratch_dir: None,
            cpp_compile: default_cpp_compile(),
            python_compile: default_python_compile(),
            cpp_run: default_cpp_run(),
            python_run: default_python_run(),
        }
    }
}

impl SandboxSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("sandbox.workers must be positive".into());
        }
        if self.output_cap_bytes == 0 {
            return Err("sandbox.output_cap_bytes must be positive".into());
        }
        Ok(())
    }

    fn compile_command(&self, lang: Language) -> &[String] {
        match lang {
            Language::Cpp => &self.cpp_compile,
            Language::Python => &self.python_compile,
        }
    }

    fn run_command(&self, lang: Language) -> &[String] {
        match lang {
            Language::Cpp => &self.cpp_run,
            Language::Python => &self.python_run,
        }
    }
}

/// Shared execution pool. `workers` bounds concurrent process executions;
/// an interactive session holds two worker slots for its duration.
pub struct SandboxPool {
    settings: SandboxSettings,
    cache_root: PathBuf,
    scratch_root: PathBuf,
    sem: Semaphore,
    // Keep temp roots alive for the pool's lifetime.
    _cache_guard: Option<tempfile::TempDir>,
    _scratch_guard: Option<tempfile::TempDir>,
}

impl SandboxPool {
    pub fn new(settings: SandboxSettings) -> Result<Self, SandboxError> {
        settings
            .validate()
            .map_err(SandboxError::Infra)?;
        let (cache_root, cache_guard) = match &settings.build_cache_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (dir.clone(), None)
            }
            None => {
                let t = tempfile::Builder::new().prefix("setforge-build-").tempdir()?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let (scratch_root, scratch_guard) = match &settings.scratch_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (dir.clone(), None)
            }
            None => {
                let t = tempfile::Builder::new().prefix("setforge-run-").tempdir()?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let workers = settings.workers;
        Ok(SandboxPool {
            settings,
            cache_root,
            scratch_root,
            sem: Semaphore::new(workers),
            _cache_guard: cache_guard,
            _scratch_guard: scratch_guard,
        })
    }

    pub fn with_defaults() -> Result<Self, SandboxError> {
        SandboxPool::new(SandboxSettings::default())
    }

    pub fn settings(&self) -> &SandboxSettings {
        &self.settings
    }

    pub fn workers(&self) -> usize {
        self.settings.workers
    }

    /// Compile a candidate, caching the artifact by content digest.
    /// Identical source compiles to the same build id.
    pub fn compile(&self, program: &CandidateProgram) -> Result<CompileOutcome, SandboxError> {
        let _slot = self.sem.acquire(1);
        compile::compile(self, program)
    }

    /// Run a built program on the given stdin under the limits. The status
    /// reflects the first limit breached; the process tree is reaped and the
    /// scratch directory destroyed before returning.
    pub fn exec(
        &self,
        build: &BuildId,
        args: &[String],
        stdin: &[u8],
        limits: ExecutionLimits,
        env: &[(String, String)],
    ) -> Result<ExecutionResult, SandboxError> {
        let _slot = self.sem.acquire(1);
        let argv = compile::run_argv(self, build)?;
        let scratch = tempfile::Builder::new()
            .prefix("x-")
            .tempdir_in(&self.scratch_root)?;
        exec::execute(&argv, args, scratch.path(), stdin, limits, env, self.settings.grace_ms)
    }

    /// Connect two built programs stdout-to-stdin both ways and run them to
    /// completion under independent limits. Returns both results plus the
    /// line transcript.
    pub fn run_interactive(
        &self,
        a: interactive::SessionProc,
        b: interactive::SessionProc,
    ) -> Result<(ExecutionResult, ExecutionResult, Transcript), SandboxError> {
        let _slots = self.sem.acquire(2.min(self.settings.workers));
        interactive::run_session(self, a, b)
    }

    pub(crate) fn cache_root(&self) -> &Path {
        &self.cache_root
    }

    pub(crate) fn scratch_root(&self) -> &Path {
        &self.scratch_root
    }
}

impl SandboxPool {
    /// Compile-or-die helper for callers that treat a compile failure of a
    /// trusted program as an infrastructure error.
    pub fn compile_trusted(&self, program: &CandidateProgram) -> Result<BuildId, SandboxError> {
        match self.compile(program)? {
            CompileOutcome::Built(id) => Ok(id),
            CompileOutcome::Failed(e) => Err(SandboxError::Infra(format!(
                "trusted program failed to compile: {}",
                e.diagnostics
            ))),
        }
    }
}

/// Deterministic parallel map: spawns up to `threads` workers over an index
/// queue and returns results in input order.
pub fn par_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let threads = threads.max(1).min(n);
    let queue = Mutex::new(items.into_iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().pop();
                let Some((idx, item)) = item else { break };
                let out = f(idx, item);
                results.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker completed every index"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ProgramRole;

    fn pool() -> SandboxPool {
        SandboxPool::with_defaults().unwrap()
    }

    fn py(source: &str) -> CandidateProgram {
        CandidateProgram::new(ProgramRole::Submission, Language::Python, source)
    }

    fn build(pool: &SandboxPool, prog: &CandidateProgram) -> BuildId {
        match pool.compile(prog).unwrap() {
            CompileOutcome::Built(id) => id,
            CompileOutcome::Failed(e) => panic!("unexpected compile failure: {}", e.diagnostics),
        }
    }

    fn lim(wall_ms: u64, mem_mib: u64) -> ExecutionLimits {
        ExecutionLimits::new(wall_ms, mem_mib)
    }

    #[test]
    fn echo_roundtrip() {
        let p = pool();
        let id = build(&p, &py("import sys\nsys.stdout.write(sys.stdin.read())\n"));
        let r = p.exec(&id, &[], b"x\n", lim(5000, 256), &[]).unwrap();
        assert_eq!(r.status, ExecStatus::Ok);
        assert_eq!(r.exit_code, 0);
        assert_eq!(r.stdout, b"x\n");
    }

    #[test]
    fn identical_source_hits_cache() {
        let p = pool();
        let prog = py("print(7)\n");
        let a = build(&p, &prog);
        let b = build(&p, &prog);
        assert_eq!(a, b);
        let other = build(&p, &py("print(8)\n"));
        assert_ne!(a, other);
    }

    #[test]
    fn syntax_error_is_disqualification_not_failure() {
        let p = pool();
        match p.compile(&py("def broken(:\n")).unwrap() {
            CompileOutcome::Failed(e) => assert!(!e.diagnostics.is_empty()),
            CompileOutcome::Built(_) => panic!("syntax error compiled"),
        }
    }

    #[test]
    fn cpp_hello_world() {
        let p = pool();
        let prog = CandidateProgram::new(
            ProgramRole::Submission,
            Language::Cpp,
            "#include <cstdio>\nint main(){puts(\"hi\");return 0;}\n",
        );
        let id = build(&p, &prog);
        let r = p.exec(&id, &[], b"", lim(5000, 256), &[]).unwrap();
        assert_eq!(r.status, ExecStatus::Ok);
        assert_eq!(r.stdout, b"hi\n");
    }

    #[test]
    fn busy_loop_times_out_within_grace() {
        let p = pool();
        let id = build(&p, &py("while True:\n    pass\n"));
        let r = p.exec(&id, &[], b"", lim(300, 256), &[]).unwrap();
        assert_eq!(r.status, ExecStatus::Timeout);
        assert!(r.elapsed_ms >= 300, "elapsed {} < wall", r.elapsed_ms);
        assert!(
            r.elapsed_ms <= 300 + p.settings().grace_ms,
            "elapsed {} exceeds wall + grace",
            r.elapsed_ms
        );
    }

    #[test]
    fn native_crash_is_runtime_error() {
        let p = pool();
        let prog = CandidateProgram::new(
            ProgramRole::Submission,
            Language::Cpp,
            "int main(){volatile int b=0;return 1/b;}\n",
        );
        let id = build(&p, &prog);
        let r = p.exec(&id, &[], b"", lim(5000, 256), &[]).unwrap();
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert!(r.exit_code < 0, "expected signal exit, got {}", r.exit_code);
    }

    #[test]
    fn chunked_allocation_breaches_memory_limit() {
        let p = pool();
        let id = build(
            &p,
            &py("a=[]\nwhile True:\n    a.append(bytearray(1<<20))\n"),
        );
        let r = p.exec(&id, &[], b"", lim(10_000, 128), &[]).unwrap();
        assert_eq!(r.status, ExecStatus::MemoryExceeded, "result: {r:?}");
        assert!(r.peak_memory_mib >= 128 * 95 / 100);
    }

    #[test]
    fn runaway_output_is_capped() {
        let p = pool();
        let id = build(&p, &py("while True:\n    print('y'*4096)\n"));
        let mut limits = lim(10_000, 256);
        limits.output_cap_bytes = 64 * 1024;
        let r = p.exec(&id, &[], b"", limits, &[]).unwrap();
        assert_eq!(r.status, ExecStatus::OutputCapped);
        assert!(r.stdout.len() as u64 <= limits.output_cap_bytes);
    }

    #[test]
    fn seeded_runs_are_deterministic() {
        let p = pool();
        let id = build(
            &p,
            &py("import os, random\nrandom.seed(int(os.environ['SEED']))\nprint([random.randint(0, 10**9) for _ in range(20)])\n"),
        );
        let env = vec![("SEED".to_string(), "42".to_string())];
        let a = p.exec(&id, &[], b"", lim(5000, 256), &env).unwrap();
        let b = p.exec(&id, &[], b"", lim(5000, 256), &env).unwrap();
        assert_eq!(a.stdout, b.stdout);
        assert!(!a.stdout.is_empty());
    }

    #[test]
    fn concurrent_runs_have_isolated_scratch_dirs() {
        let p = std::sync::Arc::new(pool());
        let id = build(
            &p,
            &py("import sys\ndata=sys.stdin.read()\nopen('scratch.txt','w').write(data)\nprint(open('scratch.txt').read(), end='')\n"),
        );
        let results = par_map((0..8).collect::<Vec<_>>(), 8, |_, i| {
            let payload = format!("payload-{i}\n");
            let r = p
                .exec(&id, &[], payload.as_bytes(), lim(5000, 256), &[])
                .unwrap();
            (payload, r.stdout)
        });
        for (payload, stdout) in results {
            assert_eq!(payload.as_bytes(), stdout.as_slice());
        }
    }

    #[test]
    fn exec_args_are_visible() {
        let p = pool();
        let id = build(&p, &py("import sys\nprint(' '.join(sys.argv[1:]))\n"));
        let r = p
            .exec(
                &id,
                &["alpha".into(), "beta".into()],
                b"",
                lim(5000, 256),
                &[],
            )
            .unwrap();
        assert_eq!(r.stdout, b"alpha beta\n");
    }

    fn session(build: &BuildId, wall_ms: u64) -> SessionProc {
        SessionProc {
            build: build.clone(),
            args: Vec::new(),
            limits: lim(wall_ms, 256),
            env: Vec::new(),
        }
    }

    #[test]
    fn interactive_exchange_produces_transcript() {
        let p = pool();
        let judge = build(
            &p,
            &py("import sys\nprint('1', flush=True)\nline = sys.stdin.readline()\nsys.exit(0 if line.strip() == 'ANSWER 1' else 1)\n"),
        );
        let solver = build(
            &p,
            &py("import sys\nline = sys.stdin.readline().strip()\nprint(f'ANSWER {line}', flush=True)\n"),
        );
        let (ra, rb, transcript) = p
            .run_interactive(session(&judge, 5000), session(&solver, 5000))
            .unwrap();
        assert_eq!(ra.status, ExecStatus::Ok, "judge: {ra:?}");
        assert_eq!(ra.exit_code, 0);
        assert_eq!(rb.status, ExecStatus::Ok, "solver: {rb:?}");
        assert_eq!(transcript.len(), 2, "transcript: {transcript:?}");
        assert_eq!(transcript[0].from, Side::A);
        assert_eq!(transcript[0].line, b"1\n");
        assert_eq!(transcript[1].from, Side::B);
        assert_eq!(transcript[1].line, b"ANSWER 1\n");
    }

    #[test]
    fn unflushed_solver_deadlocks_to_timeout_pair() {
        let p = pool();
        // the judge waits for a line that never arrives; the solver "writes"
        // without flushing and then blocks on a reply
        let judge = build(
            &p,
            &py("import sys\nline = sys.stdin.readline()\nprint('ok', flush=True)\n"),
        );
        let solver = build(
            &p,
            &py("import sys\nsys.stdout.write('query\\n')\nline = sys.stdin.readline()\n"),
        );
        let (ra, rb, _) = p
            .run_interactive(session(&judge, 400), session(&solver, 400))
            .unwrap();
        assert_eq!(ra.status, ExecStatus::Timeout, "judge: {ra:?}");
        assert_eq!(rb.status, ExecStatus::Timeout, "solver: {rb:?}");
    }

    #[test]
    fn early_exit_peer_gets_eof_and_grace() {
        let p = pool();
        let judge = build(&p, &py("import sys\nsys.exit(0)\n"));
        let solver = build(
            &p,
            &py("import sys\nline = sys.stdin.readline()\nsys.exit(0 if line == '' else 3)\n"),
        );
        let (ra, rb, _) = p
            .run_interactive(session(&judge, 5000), session(&solver, 5000))
            .unwrap();
        assert_eq!(ra.status, ExecStatus::Ok);
        assert_eq!(rb.status, ExecStatus::Ok, "solver: {rb:?}");
        assert_eq!(rb.exit_code, 0, "solver saw EOF and exited in grace");
    }

    #[test]
    fn par_map_preserves_order() {
        let out = par_map((0..40).collect::<Vec<_>>(), 7, |i, v: i32| (i, v * 2));
        for (i, (idx, doubled)) in out.iter().enumerate() {
            assert_eq!(*idx, i);
            assert_eq!(*doubled, i as i32 * 2);
        }
    }
}
