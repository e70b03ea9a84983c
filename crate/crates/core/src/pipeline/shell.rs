use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

/// Captured output is truncated to its last this-many bytes.
const OUTPUT_TAIL: u64 = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellOutcome {
    /// `None` when killed by a signal or by the timeout.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    /// Interleaved stdout and stderr.
    pub output: String,
}

impl ShellOutcome {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

/// Builds `sh -c <command>` in its own process group, so the whole tree
/// can be killed at once.
pub fn shell_command(command: &str, cwd: &Path) -> Command {
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .process_group(0);
    cmd
}

/// `PATH` with `extra` directories searched first, or `None` when there
/// is nothing to prepend.
pub fn search_path(extra: &[PathBuf]) -> io::Result<Option<String>> {
    if extra.is_empty() {
        return Ok(None);
    }
    let mut paths = extra.to_vec();
    if let Some(existing) = std::env::var_os("PATH") {
        paths.extend(std::env::split_paths(&existing));
    }
    let joined = std::env::join_paths(paths).map_err(io::Error::other)?;
    joined
        .into_string()
        .map(Some)
        .map_err(|p| io::Error::other(format!("PATH is not valid UTF-8: {p:?}")))
}

pub fn kill_tree(child: &mut Child) {
    // SAFETY: kill(2) has no memory-safety preconditions; the negative pid
    // targets the process group created by `shell_command`.
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Runs `command` with a wall-clock limit, capturing combined output.
pub fn run_shell(
    command: &str,
    cwd: &Path,
    env: &[(&str, &str)],
    timeout: Duration,
) -> io::Result<ShellOutcome> {
    let mut log = tempfile::tempfile()?;
    let mut cmd = shell_command(command, cwd);
    cmd.stdout(log.try_clone()?).stderr(log.try_clone()?);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn()?;
    let (exit_code, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => {
            // reap anything the shell left behind in its group
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            (status.code(), false)
        }
        None => {
            kill_tree(&mut child);
            (None, true)
        }
    };
    Ok(ShellOutcome {
        exit_code,
        timed_out,
        output: read_tail(&mut log)?,
    })
}

fn read_tail(f: &mut File) -> io::Result<String> {
    let len = f.seek(SeekFrom::End(0))?;
    f.seek(SeekFrom::Start(len.saturating_sub(OUTPUT_TAIL)))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}
