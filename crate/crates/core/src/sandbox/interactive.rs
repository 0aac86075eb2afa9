//! Bidirectional sessions: two processes with stdout connected to the
//! other's stdin, pumped through this process so every line is recorded.

use super::exec::{build_command, classify, kill_group, read_vmsize_kb, wait_nohang, WaitPoll};
use super::{ExecStatus, ExecutionLimits, ExecutionResult, SandboxError, SandboxPool};
use crate::domain::BuildId;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

const POLL_INTERVAL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub from: Side,
    pub at_ms: u64,
    #[serde(with = "line_bytes")]
    pub line: Vec<u8>,
}

mod line_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

pub type Transcript = Vec<TranscriptEntry>;

/// One participant in a session.
pub struct SessionProc {
    pub build: BuildId,
    pub args: Vec<String>,
    pub limits: ExecutionLimits,
    pub env: Vec<(String, String)>,
}

struct Running {
    child: Child,
    pid: libc::pid_t,
    limits: ExecutionLimits,
    max_vm_kb: u64,
    timed_out: bool,
    capped: Arc<AtomicBool>,
    cap_killed: bool,
    reaped: Option<(libc::c_int, u64, u64)>, // (wait status, maxrss kB, elapsed ms)
    _scratch: tempfile::TempDir,
}

pub(super) fn run_session(
    pool: &SandboxPool,
    a: SessionProc,
    b: SessionProc,
) -> Result<(ExecutionResult, ExecutionResult, Transcript), SandboxError> {
    let start = Instant::now();
    let mut proc_a = spawn_side(pool, &a)?;
    let mut proc_b = spawn_side(pool, &b)?;

    let transcript: Arc<Mutex<Transcript>> = Arc::new(Mutex::new(Vec::new()));

    let a_out = proc_a.child.stdout.take().expect("stdout piped");
    let b_out = proc_b.child.stdout.take().expect("stdout piped");
    let a_in = proc_a.child.stdin.take().expect("stdin piped");
    let b_in = proc_b.child.stdin.take().expect("stdin piped");

    let pump_ab = spawn_pump(
        Side::A,
        a_out,
        b_in,
        a.limits.output_cap_bytes,
        proc_a.capped.clone(),
        transcript.clone(),
        start,
    );
    let pump_ba = spawn_pump(
        Side::B,
        b_out,
        a_in,
        b.limits.output_cap_bytes,
        proc_b.capped.clone(),
        transcript.clone(),
        start,
    );
    let err_a = spawn_stderr(proc_a.child.stderr.take().expect("stderr piped"));
    let err_b = spawn_stderr(proc_b.child.stderr.take().expect("stderr piped"));

    let grace = Duration::from_millis(pool.settings().grace_ms);
    let mut first_exit: Option<Instant> = None;
    loop {
        for side in [&mut proc_a, &mut proc_b] {
            if side.reaped.is_some() {
                continue;
            }
            if let Some(kb) = read_vmsize_kb(side.pid) {
                side.max_vm_kb = side.max_vm_kb.max(kb);
            }
            match wait_nohang(side.pid) {
                WaitPoll::Reaped { status, maxrss_kb } => {
                    side.reaped =
                        Some((status, maxrss_kb, start.elapsed().as_millis() as u64));
                    first_exit.get_or_insert_with(Instant::now);
                }
                WaitPoll::Running => {
                    let elapsed = start.elapsed().as_millis() as u64;
                    if !side.timed_out && elapsed >= side.limits.wall_time_ms {
                        side.timed_out = true;
                        kill_group(side.pid);
                    }
                    if !side.cap_killed && side.capped.load(Ordering::Relaxed) {
                        side.cap_killed = true;
                        kill_group(side.pid);
                    }
                }
                WaitPoll::Error(e) => return Err(SandboxError::Infra(format!("wait4: {e}"))),
            }
        }

        if proc_a.reaped.is_some() && proc_b.reaped.is_some() {
            break;
        }
        // One side finished: give the survivor the grace window, then stop it.
        if let Some(t) = first_exit {
            if t.elapsed() > grace {
                for side in [&mut proc_a, &mut proc_b] {
                    if side.reaped.is_none() {
                        kill_group(side.pid);
                    }
                }
            }
        }
        thread::sleep(POLL_INTERVAL);
    }
    kill_group(proc_a.pid);
    kill_group(proc_b.pid);

    let a_stdout = pump_ab.join().unwrap_or_default();
    let b_stdout = pump_ba.join().unwrap_or_default();
    let a_stderr = err_a.join().unwrap_or_default();
    let b_stderr = err_b.join().unwrap_or_default();

    let res_a = finish_side(proc_a, a_stdout, a_stderr);
    let res_b = finish_side(proc_b, b_stdout, b_stderr);
    let transcript = Arc::try_unwrap(transcript)
        .map(|m| m.into_inner().unwrap())
        .unwrap_or_default();
    Ok((res_a, res_b, transcript))
}

fn spawn_side(pool: &SandboxPool, spec: &SessionProc) -> Result<Running, SandboxError> {
    let argv = super::compile::run_argv(pool, &spec.build)?;
    let scratch = tempfile::Builder::new()
        .prefix("ix-")
        .tempdir_in(pool.scratch_root())?;
    let mut cmd = build_command(
        &argv,
        &spec.args,
        scratch.path(),
        &spec.env,
        spec.limits.memory_mib.saturating_mul(1024 * 1024),
    );
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let child = cmd
        .spawn()
        .map_err(|e| SandboxError::Infra(format!("spawn {}: {e}", argv[0])))?;
    let pid = child.id() as libc::pid_t;
    Ok(Running {
        child,
        pid,
        limits: spec.limits,
        max_vm_kb: 0,
        timed_out: false,
        capped: Arc::new(AtomicBool::new(false)),
        cap_killed: false,
        reaped: None,
        _scratch: scratch,
    })
}

/// Forward lines from one side's stdout to the other's stdin, recording each
/// line in the transcript and echoing it into the source side's captured
/// stdout.
fn spawn_pump(
    from: Side,
    source: impl Read + Send + 'static,
    mut sink: ChildStdin,
    cap: u64,
    capped: Arc<AtomicBool>,
    transcript: Arc<Mutex<Transcript>>,
    start: Instant,
) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        let mut captured: Vec<u8> = Vec::new();
        let mut sink_open = true;
        loop {
            let mut line = Vec::new();
            match reader.read_until(b'\n', &mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let at_ms = start.elapsed().as_millis() as u64;
                    if (captured.len() + line.len()) as u64 <= cap {
                        captured.extend_from_slice(&line);
                    } else {
                        capped.store(true, Ordering::Relaxed);
                    }
                    transcript.lock().unwrap().push(TranscriptEntry {
                        from,
                        at_ms,
                        line: line.clone(),
                    });
                    if sink_open {
                        if sink.write_all(&line).and_then(|_| sink.flush()).is_err() {
                            sink_open = false;
                        }
                    }
                }
            }
        }
        // closing the sink delivers EOF to the peer
        drop(sink);
        captured
    })
}

fn spawn_stderr(mut stream: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stream.read_to_end(&mut buf);
        if buf.len() > 1024 * 1024 {
            buf.truncate(1024 * 1024);
        }
        buf
    })
}

fn finish_side(side: Running, stdout: Vec<u8>, stderr: Vec<u8>) -> ExecutionResult {
    let (wait_status, maxrss_kb, elapsed_ms) = side.reaped.expect("side reaped");
    let peak_kb = side.max_vm_kb.max(maxrss_kb);
    let (status, exit_code) = classify(
        wait_status,
        side.timed_out,
        side.cap_killed,
        peak_kb,
        side.limits.memory_mib,
    );
    let elapsed_ms = if status == ExecStatus::Timeout {
        elapsed_ms.max(side.limits.wall_time_ms)
    } else {
        elapsed_ms
    };
    ExecutionResult {
        status,
        exit_code,
        stdout,
        stderr,
        elapsed_ms,
        peak_memory_mib: peak_kb / 1024,
    }
}
