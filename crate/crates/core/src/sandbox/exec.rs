//! Single-process execution: spawn in its own process group, enforce
//! RLIMIT_AS, poll wall clock and /proc VmSize, reap with wait4 for rusage.

use super::{ExecStatus, ExecutionLimits, ExecutionResult, SandboxError, MLE_PEAK_FRACTION};
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

const POLL_INTERVAL: Duration = Duration::from_millis(2);

pub(super) fn execute(
    argv_prefix: &[String],
    extra_args: &[String],
    cwd: &Path,
    stdin_bytes: &[u8],
    limits: ExecutionLimits,
    env: &[(String, String)],
    _grace_ms: u64,
) -> Result<ExecutionResult, SandboxError> {
    if argv_prefix.is_empty() {
        return Err(SandboxError::Infra("empty command line".into()));
    }

    let mem_bytes = limits.memory_mib.saturating_mul(1024 * 1024);
    let mut cmd = build_command(argv_prefix, extra_args, cwd, env, mem_bytes);
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());

    let start = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| SandboxError::Infra(format!("spawn {}: {e}", argv_prefix[0])))?;
    let pid = child.id() as libc::pid_t;

    let stdin_pipe = child.stdin.take();
    let writer = stdin_bytes.to_vec();
    let writer_handle = thread::spawn(move || {
        if let Some(mut pipe) = stdin_pipe {
            let _ = pipe.write_all(&writer);
        }
        // dropping the handle closes the child's stdin
    });

    let out_capped = Arc::new(AtomicBool::new(false));
    let err_capped = Arc::new(AtomicBool::new(false));
    let stdout_handle = spawn_reader(
        child.stdout.take().expect("stdout piped"),
        limits.output_cap_bytes,
        out_capped.clone(),
    );
    let stderr_handle = spawn_reader(
        child.stderr.take().expect("stderr piped"),
        limits.output_cap_bytes,
        err_capped.clone(),
    );

    let mut max_vm_kb: u64 = 0;
    let mut timed_out = false;
    let mut cap_killed = false;
    let (wait_status, rusage, elapsed_ms) = loop {
        if let Some(kb) = read_vmsize_kb(pid) {
            max_vm_kb = max_vm_kb.max(kb);
        }

        let mut status: libc::c_int = 0;
        let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
        let reaped = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut ru) };
        if reaped == pid {
            break (status, ru, start.elapsed().as_millis() as u64);
        }
        if reaped == -1 {
            let e = std::io::Error::last_os_error();
            if e.raw_os_error() == Some(libc::EINTR) {
                continue;
            }
            return Err(SandboxError::Infra(format!("wait4: {e}")));
        }

        let elapsed = start.elapsed().as_millis() as u64;
        if !timed_out && elapsed >= limits.wall_time_ms {
            timed_out = true;
            kill_group(pid);
        }
        if !cap_killed && (out_capped.load(Ordering::Relaxed) || err_capped.load(Ordering::Relaxed))
        {
            cap_killed = true;
            kill_group(pid);
        }
        thread::sleep(POLL_INTERVAL);
    };
    // Sweep any stragglers in the group before collecting output.
    kill_group(pid);

    let stdout = stdout_handle.join().unwrap_or_default();
    let stderr = stderr_handle.join().unwrap_or_default();
    let _ = writer_handle.join();

    let maxrss_kb = rusage.ru_maxrss.max(0) as u64;
    let peak_kb = max_vm_kb.max(maxrss_kb);
    let peak_memory_mib = peak_kb / 1024;
    let (status, exit_code) = classify(wait_status, timed_out, cap_killed, peak_kb, limits.memory_mib);

    let elapsed_ms = if status == ExecStatus::Timeout {
        elapsed_ms.max(limits.wall_time_ms)
    } else {
        elapsed_ms
    };

    Ok(ExecutionResult {
        status,
        exit_code,
        stdout,
        stderr,
        elapsed_ms,
        peak_memory_mib,
    })
}

/// Command skeleton shared by single-process and interactive execution:
/// hermetic environment, own process group, RLIMIT_AS and no core dumps.
pub(super) fn build_command(
    argv_prefix: &[String],
    extra_args: &[String],
    cwd: &Path,
    env: &[(String, String)],
    mem_bytes: u64,
) -> Command {
    let mut cmd = Command::new(&argv_prefix[0]);
    cmd.args(&argv_prefix[1..])
        .args(extra_args)
        .current_dir(cwd)
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("HOME", cwd)
        .env("TMPDIR", cwd)
        .env("LC_ALL", "C")
        .env("PYTHONHASHSEED", "0");
    for (k, v) in env {
        cmd.env(k, v);
    }
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            let mem = libc::rlimit {
                rlim_cur: mem_bytes,
                rlim_max: mem_bytes,
            };
            libc::setrlimit(libc::RLIMIT_AS, &mem);
            let core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &core);
            Ok(())
        });
    }
    cmd
}

/// Map a reaped wait status plus kill bookkeeping to the result status.
/// A failing exit with peak at ≥95% of the memory limit is the MLE case the
/// platform cannot otherwise distinguish from RE.
pub(super) fn classify(
    wait_status: libc::c_int,
    timed_out: bool,
    cap_killed: bool,
    peak_kb: u64,
    memory_mib: u64,
) -> (ExecStatus, i32) {
    let near_limit = (peak_kb as f64) >= (memory_mib * 1024) as f64 * MLE_PEAK_FRACTION;
    if libc::WIFEXITED(wait_status) {
        let code = libc::WEXITSTATUS(wait_status);
        let s = if timed_out {
            ExecStatus::Timeout
        } else if cap_killed {
            ExecStatus::OutputCapped
        } else if code != 0 && near_limit {
            ExecStatus::MemoryExceeded
        } else {
            ExecStatus::Ok
        };
        (s, code)
    } else {
        let sig = if libc::WIFSIGNALED(wait_status) {
            libc::WTERMSIG(wait_status)
        } else {
            libc::SIGKILL
        };
        let s = if timed_out {
            ExecStatus::Timeout
        } else if cap_killed {
            ExecStatus::OutputCapped
        } else if near_limit {
            ExecStatus::MemoryExceeded
        } else {
            ExecStatus::RuntimeError
        };
        (s, -sig)
    }
}

fn spawn_reader(
    mut stream: impl Read + Send + 'static,
    cap: u64,
    capped: Arc<AtomicBool>,
) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let total = AtomicU64::new(0);
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let before = total.fetch_add(n as u64, Ordering::Relaxed);
                    let after = before + n as u64;
                    if after <= cap {
                        buf.extend_from_slice(&chunk[..n]);
                    } else {
                        capped.store(true, Ordering::Relaxed);
                        let keep = cap.saturating_sub(before) as usize;
                        buf.extend_from_slice(&chunk[..keep.min(n)]);
                        // keep draining so the child is not blocked on a
                        // full pipe while we wait to kill it
                    }
                }
            }
        }
        buf
    })
}

pub(super) fn kill_group(pid: libc::pid_t) {
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

pub(super) fn read_vmsize_kb(pid: libc::pid_t) -> Option<u64> {
    let text = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("VmSize:") {
            return rest
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse::<u64>()
                .ok();
        }
    }
    None
}

pub(super) fn wait_nohang(pid: libc::pid_t) -> WaitPoll {
    let mut status: libc::c_int = 0;
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let reaped = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut ru) };
    if reaped == pid {
        WaitPoll::Reaped {
            status,
            maxrss_kb: ru.ru_maxrss.max(0) as u64,
        }
    } else if reaped == 0 {
        WaitPoll::Running
    } else {
        let e = std::io::Error::last_os_error();
        if e.raw_os_error() == Some(libc::EINTR) {
            WaitPoll::Running
        } else {
            WaitPoll::Error(e.to_string())
        }
    }
}

pub(super) enum WaitPoll {
    Running,
    Reaped { status: libc::c_int, maxrss_kb: u64 },
    Error(String),
}
