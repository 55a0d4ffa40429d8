//! Spawning agent processes and checking on them from any later process.

use std::fs::{self, File};
use std::io;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Program and leading arguments that start one agent. The agent reads
/// its settings from the environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

/// Everything needed to start one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPlan {
    pub nodename: String,
    pub control_plane: String,
    pub kubelet_port: u16,
    pub walltime_s: u64,
    pub nodetype: String,
    pub site: String,
    pub pod_ip: String,
    pub work_root: Option<PathBuf>,
    pub log: PathBuf,
}

impl AgentPlan {
    pub fn env(&self) -> Vec<(&'static str, String)> {
        let mut env = vec![
            ("NODENAME", self.nodename.clone()),
            ("JIRIAF_CONTROL_PLANE", self.control_plane.clone()),
            ("KUBELET_PORT", self.kubelet_port.to_string()),
            ("VKUBELET_POD_IP", self.pod_ip.clone()),
            ("JIRIAF_WALLTIME", self.walltime_s.to_string()),
            ("JIRIAF_NODETYPE", self.nodetype.clone()),
            ("JIRIAF_SITE", self.site.clone()),
        ];
        if let Some(root) = &self.work_root {
            env.push(("JIRIAF_WORK_ROOT", root.display().to_string()));
        }
        env
    }
}

/// Identity of a spawned process that survives pid reuse: the pid together
/// with its start time in clock ticks since boot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessId {
    pub pid: i32,
    pub start_ticks: u64,
}

/// Starts the agent in its own process group with output appended to the
/// plan's log file.
pub fn spawn_agent(cmd: &AgentCommand, plan: &AgentPlan) -> io::Result<ProcessId> {
    if let Some(dir) = plan.log.parent() {
        fs::create_dir_all(dir)?;
    }
    if let Some(root) = &plan.work_root {
        fs::create_dir_all(root)?;
    }
    let log = File::options().create(true).append(true).open(&plan.log)?;
    let child = Command::new(&cmd.program)
        .args(&cmd.args)
        .envs(plan.env())
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .process_group(0)
        .spawn()?;
    let pid = child.id() as i32;
    // The child is tracked by pid from here on; dropping the handle does
    // not affect it.
    drop(child);
    let start_ticks = read_start_ticks(pid).unwrap_or(0);
    Ok(ProcessId { pid, start_ticks })
}

/// Field 22 of `/proc/<pid>/stat`, plus whether the process is a zombie.
fn read_stat(pid: i32) -> Option<(char, u64)> {
    let text = fs::read_to_string(Path::new("/proc").join(pid.to_string()).join("stat")).ok()?;
    let rest = &text[text.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let state = fields.first()?.chars().next()?;
    // Fields after the command start at index 3; starttime is field 22.
    let start = fields.get(22 - 3)?.parse().ok()?;
    Some((state, start))
}

fn read_start_ticks(pid: i32) -> Option<u64> {
    read_stat(pid).map(|(_, s)| s)
}

/// Reaps `pid` if it is a child of this process that has exited.
fn reap(pid: i32) {
    let mut status = 0;
    // SAFETY: WNOHANG never blocks; a pid that is not our child yields ECHILD.
    unsafe {
        libc::waitpid(pid, &mut status, libc::WNOHANG);
    }
}

pub fn is_alive(id: ProcessId) -> bool {
    reap(id.pid);
    match read_stat(id.pid) {
        Some((state, start)) => !matches!(state, 'Z' | 'X') && (id.start_ticks == 0 || start == id.start_ticks),
        None => false,
    }
}

fn signal_group(pgid: i32, signal: i32) -> io::Result<()> {
    // SAFETY: kill has no memory preconditions; a negative pid addresses
    // the process group.
    if unsafe { libc::kill(-pgid, signal) } == 0 {
        Ok(())
    } else {
        let e = io::Error::last_os_error();
        if e.raw_os_error() == Some(libc::ESRCH) {
            Ok(())
        } else {
            Err(e)
        }
    }
}

/// SIGTERM to each live group, then SIGKILL to those still running after
/// `grace`. Returns how many needed SIGKILL.
pub fn terminate_all(ids: &[ProcessId], grace: Duration) -> io::Result<usize> {
    let live: Vec<ProcessId> = ids.iter().copied().filter(|id| is_alive(*id)).collect();
    for id in &live {
        signal_group(id.pid, libc::SIGTERM)?;
    }
    let deadline = Instant::now() + grace;
    while live.iter().any(|id| is_alive(*id)) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(50));
    }
    let mut killed = 0;
    for id in live.iter().filter(|id| is_alive(**id)) {
        signal_group(id.pid, libc::SIGKILL)?;
        killed += 1;
    }
    let deadline = Instant::now() + Duration::from_secs(1);
    while live.iter().any(|id| is_alive(*id)) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    Ok(killed)
}

/// First port in `range` that can be bound on loopback and is not in
/// `taken`.
pub fn free_port(range: std::ops::RangeInclusive<u16>, taken: &[u16]) -> Option<u16> {
    range
        .filter(|p| !taken.contains(p))
        .find(|p| std::net::TcpListener::bind(("127.0.0.1", *p)).is_ok())
}
