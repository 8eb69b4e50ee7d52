//! Actions executed on inventory hosts.
//!
//! Every action becomes a POSIX shell script. Local hosts run it with
//! `sh -c`; ssh hosts run it through the system OpenSSH client in batch
//! mode, and file transfers use `scp`.

use std::path::{Path, PathBuf};
use std::process::Stdio;

use qdnet_core::topology::{ConnectionMode, HostEntry};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

/// Shell helper deciding whether a pid belongs to a live process. Zombies
/// count as gone: without a reaping init they linger after being killed.
const ALIVE_FN: &str = "alive() { if [ -r /proc/$1/stat ]; then s=$(sed 's/.*) //' /proc/$1/stat | cut -c1); [ \"$s\" != Z ] && [ \"$s\" != X ]; else kill -0 $1 2>/dev/null; fi; }";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    MakeDir(PathBuf),
    /// Copies a file from the controlling machine onto the host.
    Copy { from: PathBuf, to: PathBuf },
    WriteFile { path: PathBuf, contents: String },
    /// Starts a detached process and records its pid in `pidfile`.
    Launch {
        program: PathBuf,
        args: Vec<String>,
        log: PathBuf,
        pidfile: PathBuf,
    },
    Probe { pid: u32 },
    /// Terminates a process, escalating to SIGKILL after five seconds.
    Kill { pid: u32 },
    ReadFile(PathBuf),
    Remove(PathBuf),
    /// Lists `<file> <pid>` for every pid file in a directory.
    ListPidfiles(PathBuf),
}

impl Action {
    pub fn label(&self) -> &'static str {
        match self {
            Action::MakeDir(_) => "mkdir",
            Action::Copy { .. } => "copy",
            Action::WriteFile { .. } => "write",
            Action::Launch { .. } => "launch",
            Action::Probe { .. } => "probe",
            Action::Kill { .. } => "kill",
            Action::ReadFile(_) => "read",
            Action::Remove(_) => "remove",
            Action::ListPidfiles(_) => "list",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessState {
    Running,
    Gone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutput {
    Done,
    Launched { pid: u32 },
    State(ProcessState),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemoteError {
    #[error("cannot reach host {host}: {message}")]
    Connection { host: String, message: String },
    #[error("{action} on {host} failed ({status}): {stderr}")]
    Failed {
        host: String,
        action: &'static str,
        status: String,
        stderr: String,
    },
}

/// Quotes `s` for a POSIX shell.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_./:=@,+".contains(&b)) {
        return s.to_owned();
    }
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn q(path: &Path) -> String {
    shell_quote(&path.to_string_lossy())
}

fn script(action: &Action) -> String {
    match action {
        Action::MakeDir(dir) => format!("mkdir -p {}", q(dir)),
        Action::Copy { to, .. } => format!("chmod +x {}", q(to)),
        Action::WriteFile { path, .. } => format!("cat > {}", q(path)),
        Action::Launch {
            program,
            args,
            log,
            pidfile,
        } => {
            let args: Vec<String> = args.iter().map(|a| shell_quote(a)).collect();
            format!(
                "nohup {} {} > {} 2>&1 < /dev/null & echo $! > {}; cat {}",
                q(program),
                args.join(" "),
                q(log),
                q(pidfile),
                q(pidfile)
            )
        }
        Action::Probe { pid } => format!("{ALIVE_FN}; if alive {pid}; then echo running; else echo gone; fi"),
        Action::Kill { pid } => format!(
            "{ALIVE_FN}; kill -TERM {pid} 2>/dev/null; i=0; \
             while [ $i -lt 50 ] && alive {pid}; do sleep 0.1; i=$((i+1)); done; \
             if alive {pid}; then kill -KILL {pid} 2>/dev/null; fi; true"
        ),
        Action::ReadFile(path) => format!("if [ -f {0} ]; then cat {0}; fi", q(path)),
        Action::Remove(path) => format!("rm -rf {}", q(path)),
        Action::ListPidfiles(dir) => format!(
            "if [ -d {0} ]; then for f in {0}/*.pid; do [ -f \"$f\" ] && echo \"$f $(cat \"$f\")\"; done; fi; true",
            q(dir)
        ),
    }
}

fn expand_home(path: &str) -> String {
    match (path.strip_prefix("~/"), std::env::var("HOME")) {
        (Some(rest), Ok(home)) => format!("{home}/{rest}"),
        _ => path.to_owned(),
    }
}

fn ssh_target(host: &HostEntry) -> String {
    match &host.user {
        Some(user) => format!("{user}@{}", host.address()),
        None => host.address().to_owned(),
    }
}

fn ssh_options(host: &HostEntry, port_flag: &str) -> Vec<String> {
    let mut args: Vec<String> = ["-o", "BatchMode=yes", "-o", "ConnectTimeout=5", "-o", "StrictHostKeyChecking=accept-new"]
        .into_iter()
        .map(String::from)
        .collect();
    if let Some(identity) = &host.auth {
        args.push("-i".into());
        args.push(expand_home(identity));
    }
    if let Some(port) = host.port {
        args.push(port_flag.into());
        args.push(port.to_string());
    }
    args
}

fn shell_command(host: &HostEntry, script: &str) -> Command {
    match host.connection {
        ConnectionMode::Local => {
            let mut cmd = Command::new("sh");
            cmd.arg("-c").arg(script);
            cmd
        }
        ConnectionMode::Ssh => {
            let mut cmd = Command::new("ssh");
            cmd.args(ssh_options(host, "-p")).arg(ssh_target(host)).arg(script);
            cmd
        }
    }
}

/// Exit status 255 is how ssh reports its own failures.
fn is_ssh_failure(host: &HostEntry, status: &std::process::ExitStatus) -> bool {
    host.connection == ConnectionMode::Ssh && status.code() == Some(255)
}

async fn run(host: &HostEntry, action: &Action, mut cmd: Command, stdin: Option<&str>) -> Result<String, RemoteError> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    let mut child = cmd.spawn().map_err(|e| RemoteError::Connection {
        host: host.host_name.clone(),
        message: e.to_string(),
    })?;
    if let Some(input) = stdin {
        let mut pipe = child.stdin.take().expect("stdin is piped");
        let written = pipe.write_all(input.as_bytes()).await;
        drop(pipe);
        if let Err(e) = written {
            return Err(RemoteError::Failed {
                host: host.host_name.clone(),
                action: action.label(),
                status: "stdin".into(),
                stderr: e.to_string(),
            });
        }
    }
    let output = child.wait_with_output().await.map_err(|e| RemoteError::Connection {
        host: host.host_name.clone(),
        message: e.to_string(),
    })?;
    let stderr = String::from_utf8_lossy(&output.stderr).trim().to_owned();
    if is_ssh_failure(host, &output.status) {
        return Err(RemoteError::Connection {
            host: host.host_name.clone(),
            message: stderr,
        });
    }
    if !output.status.success() {
        return Err(RemoteError::Failed {
            host: host.host_name.clone(),
            action: action.label(),
            status: output.status.to_string(),
            stderr,
        });
    }
    Ok(String::from_utf8_lossy(&output.stdout).into_owned())
}

/// Performs `action` on `host` through its connection mode.
pub async fn execute_remote(host: &HostEntry, action: &Action) -> Result<ActionOutput, RemoteError> {
    if let Action::Copy { from, to } = action {
        let copy = match host.connection {
            ConnectionMode::Local => {
                let mut cmd = Command::new("cp");
                cmd.arg("-f").arg("--").arg(from).arg(to);
                cmd
            }
            ConnectionMode::Ssh => copy_over_ssh(host, from, to),
        };
        run(host, action, copy, None).await?;
    }

    let stdin = match action {
        Action::WriteFile { contents, .. } => Some(contents.as_str()),
        _ => None,
    };
    let stdout = run(host, action, shell_command(host, &script(action)), stdin).await?;
    let parse_pid = |text: &str| {
        text.trim().parse::<u32>().map_err(|_| RemoteError::Failed {
            host: host.host_name.clone(),
            action: action.label(),
            status: "bad output".into(),
            stderr: format!("expected a pid, got `{}`", text.trim()),
        })
    };
    Ok(match action {
        Action::Launch { .. } => ActionOutput::Launched { pid: parse_pid(&stdout)? },
        Action::Probe { .. } => ActionOutput::State(if stdout.trim() == "running" {
            ProcessState::Running
        } else {
            ProcessState::Gone
        }),
        Action::ReadFile(_) | Action::ListPidfiles(_) => ActionOutput::Text(stdout),
        _ => ActionOutput::Done,
    })
}

fn copy_over_ssh(host: &HostEntry, from: &Path, to: &Path) -> Command {
    let mut cmd = Command::new("scp");
    cmd.arg("-q")
        .args(ssh_options(host, "-P"))
        .arg("--")
        .arg(from)
        .arg(format!("{}:{}", ssh_target(host), to.display()));
    cmd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("plain/path-1.yaml"), "plain/path-1.yaml");
        assert_eq!(shell_quote("two words"), "'two words'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
        assert_eq!(shell_quote(""), "''");
    }

    #[tokio::test]
    async fn local_write_read_launch_probe_kill() {
        let dir = tempfile::tempdir().unwrap();
        let host = HostEntry::local("here");
        let file = dir.path().join("sub dir/hello.txt");
        execute_remote(&host, &Action::MakeDir(file.parent().unwrap().to_path_buf())).await.unwrap();
        execute_remote(
            &host,
            &Action::WriteFile {
                path: file.clone(),
                contents: "it's here\n".into(),
            },
        )
        .await
        .unwrap();
        assert_eq!(
            execute_remote(&host, &Action::ReadFile(file.clone())).await.unwrap(),
            ActionOutput::Text("it's here\n".into())
        );

        let pidfile = dir.path().join("sleep.pid");
        let launched = execute_remote(
            &host,
            &Action::Launch {
                program: "sleep".into(),
                args: vec!["30".into()],
                log: dir.path().join("sleep.log"),
                pidfile: pidfile.clone(),
            },
        )
        .await
        .unwrap();
        let ActionOutput::Launched { pid } = launched else {
            panic!("expected a pid, got {launched:?}")
        };
        assert_eq!(
            execute_remote(&host, &Action::Probe { pid }).await.unwrap(),
            ActionOutput::State(ProcessState::Running)
        );
        let listed = execute_remote(&host, &Action::ListPidfiles(dir.path().to_path_buf())).await.unwrap();
        assert_eq!(listed, ActionOutput::Text(format!("{} {pid}\n", pidfile.display())));
        execute_remote(&host, &Action::Kill { pid }).await.unwrap();
        assert_eq!(
            execute_remote(&host, &Action::Probe { pid }).await.unwrap(),
            ActionOutput::State(ProcessState::Gone)
        );
    }

    #[tokio::test]
    async fn local_copy_marks_executable() {
        let dir = tempfile::tempdir().unwrap();
        let from = dir.path().join("artifact");
        std::fs::write(&from, "#!/bin/sh\necho ok\n").unwrap();
        let to = dir.path().join("installed");
        let host = HostEntry::local("here");
        execute_remote(&host, &Action::Copy { from, to: to.clone() }).await.unwrap();
        let out = std::process::Command::new(&to).output().unwrap();
        assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
    }

    #[tokio::test]
    async fn failures_carry_stderr() {
        let host = HostEntry::local("here");
        let err = execute_remote(&host, &Action::Copy {
            from: "/nonexistent/artifact".into(),
            to: "/tmp/never".into(),
        })
        .await
        .unwrap_err();
        assert!(matches!(err, RemoteError::Failed { action: "copy", .. }), "{err}");
    }

    #[tokio::test]
    async fn unreachable_ssh_host_is_a_connection_error() {
        let mut host = HostEntry::local("offline");
        host.connection = ConnectionMode::Ssh;
        host.address = Some("127.0.0.1".into());
        host.port = Some(1);
        let err = execute_remote(&host, &Action::Probe { pid: 1 }).await.unwrap_err();
        assert!(matches!(err, RemoteError::Connection { ref host, .. } if host == "offline"), "{err}");
    }
}
