//! Child processes with a scrubbed environment, a wall-clock timeout that
//! takes down the whole process group, and bounded output capture.

use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

/// Cap on captured stderr.
pub const STDERR_LIMIT: usize = 1 << 20;

/// Time between the polite termination signal and the forced kill.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    Signaled(i32),
    TimedOut,
    SpawnFailed(String),
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub termination: Termination,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

pub struct ProcessSpec<'a> {
    pub argv: &'a [String],
    pub cwd: &'a Path,
    pub env: &'a [(String, String)],
    pub timeout: Duration,
    pub capture_stdout: bool,
}

fn read_bounded(mut source: impl Read, limit: usize) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match source.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = limit.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    kept
}

pub fn run(spec: &ProcessSpec<'_>) -> ProcessOutput {
    let start = Instant::now();
    let Some((program, args)) = spec.argv.split_first() else {
        return spawn_failed("empty command", start);
    };
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(spec.cwd)
        .env_clear()
        .envs(spec.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(if spec.capture_stdout {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }

    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return spawn_failed(&format!("{program}: {e}"), start),
    };
    let stdout = child
        .stdout
        .take()
        .map(|s| thread::spawn(move || read_bounded(s, usize::MAX)));
    let stderr = child
        .stderr
        .take()
        .map(|s| thread::spawn(move || read_bounded(s, STDERR_LIMIT)));

    let deadline = start + spec.timeout;
    let mut poll = Duration::from_millis(2);
    let termination = loop {
        match child.try_wait() {
            Ok(Some(status)) => break classify(status),
            Ok(None) if Instant::now() >= deadline => {
                terminate_tree(&mut child);
                break Termination::TimedOut;
            }
            Ok(None) => {
                thread::sleep(poll.min(deadline.saturating_duration_since(Instant::now())));
                poll = (poll * 2).min(Duration::from_millis(25));
            }
            Err(e) => {
                terminate_tree(&mut child);
                break Termination::SpawnFailed(e.to_string());
            }
        }
    };
    // Stragglers left in the group would hold the pipes open.
    kill_group(&child, true);
    let elapsed = start.elapsed();

    let collect = |h: Option<thread::JoinHandle<Vec<u8>>>| {
        h.and_then(|h| h.join().ok())
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .unwrap_or_default()
    };
    ProcessOutput {
        termination,
        stdout: collect(stdout),
        stderr: collect(stderr),
        elapsed,
    }
}

fn spawn_failed(msg: &str, start: Instant) -> ProcessOutput {
    ProcessOutput {
        termination: Termination::SpawnFailed(msg.to_string()),
        stdout: String::new(),
        stderr: String::new(),
        elapsed: start.elapsed(),
    }
}

fn classify(status: ExitStatus) -> Termination {
    if let Some(code) = status.code() {
        return Termination::Exited(code);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return Termination::Signaled(sig);
        }
    }
    Termination::Signaled(-1)
}

#[cfg(unix)]
fn kill_group(child: &Child, force: bool) {
    let sig = if force { libc::SIGKILL } else { libc::SIGTERM };
    let pgid = child.id() as libc::pid_t;
    // SAFETY: kill(2) with a negative pid signals the process group we
    // created for this child; it has no memory-safety preconditions.
    unsafe {
        libc::kill(-pgid, sig);
    }
}

#[cfg(not(unix))]
fn kill_group(child: &Child, force: bool) {
    let _ = (child, force);
}

/// SIGTERM to the group, a grace period, then SIGKILL.
fn terminate_tree(child: &mut Child) {
    kill_group(child, false);
    let grace_end = Instant::now() + KILL_GRACE;
    while Instant::now() < grace_end {
        if let Ok(Some(_)) = child.try_wait() {
            return;
        }
        thread::sleep(Duration::from_millis(10));
    }
    kill_group(child, true);
    let _ = child.kill();
    let _ = child.wait();
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn sh(script: &str, timeout_ms: u64) -> ProcessOutput {
        let argv = vec!["/bin/sh".to_string(), "-c".to_string(), script.to_string()];
        let dir = std::env::temp_dir();
        run(&ProcessSpec {
            argv: &argv,
            cwd: &dir,
            env: &[("PATH".into(), "/usr/bin:/bin".into())],
            timeout: Duration::from_millis(timeout_ms),
            capture_stdout: true,
        })
    }

    #[test]
    fn exit_codes_and_output() {
        let out = sh("echo hi; echo err >&2; exit 3", 5000);
        assert_eq!(out.termination, Termination::Exited(3));
        assert_eq!(out.stdout, "hi\n");
        assert_eq!(out.stderr, "err\n");
    }

    #[test]
    fn timeout_kills_group() {
        let out = sh("sleep 5 & sleep 5; echo never", 200);
        assert_eq!(out.termination, Termination::TimedOut);
        assert!(out.elapsed < Duration::from_secs(3), "{:?}", out.elapsed);
        assert!(out.stdout.is_empty());
    }

    #[test]
    fn term_ignoring_child_is_killed_after_grace() {
        let out = sh("trap '' TERM; sleep 10", 100);
        assert_eq!(out.termination, Termination::TimedOut);
        assert!(out.elapsed >= KILL_GRACE);
        assert!(out.elapsed < Duration::from_secs(6));
    }

    #[test]
    fn signal_death() {
        let out = sh("kill -9 $$", 5000);
        assert_eq!(out.termination, Termination::Signaled(9));
    }

    #[test]
    fn stderr_is_bounded() {
        let out = sh("head -c 3000000 /dev/zero | tr '\\0' x >&2", 10_000);
        assert_eq!(out.termination, Termination::Exited(0));
        assert_eq!(out.stderr.len(), STDERR_LIMIT);
    }

    #[test]
    fn missing_program() {
        let argv = vec!["/definitely/not/here".to_string()];
        let out = run(&ProcessSpec {
            argv: &argv,
            cwd: Path::new("/"),
            env: &[],
            timeout: Duration::from_secs(1),
            capture_stdout: false,
        });
        assert!(matches!(out.termination, Termination::SpawnFailed(_)));
    }
}
