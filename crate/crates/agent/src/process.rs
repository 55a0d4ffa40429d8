//! The OS operations container management depends on, behind a trait so
//! tests can make individual steps fail.

use std::io;
use std::process::{Child, Command};
use std::sync::mpsc;
use std::thread;

use crate::procfs::{self, ProcStat};

pub trait ProcessApi: Send + Sync + 'static {
    fn spawn(&self, cmd: &mut Command) -> io::Result<Child>;

    fn getpgid(&self, pid: u32) -> io::Result<i32>;

    /// Reaps `child` on a background thread. On failure the child is handed
    /// back so the caller can clean it up.
    fn start_waiter(&self, child: Child) -> Result<(), (io::Error, Child)>;

    fn group_members(&self, pgid: i32) -> io::Result<Vec<ProcStat>>;

    /// Sends `signal` to every process in the group.
    fn signal_group(&self, pgid: i32, signal: i32) -> io::Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RealProcessApi;

impl ProcessApi for RealProcessApi {
    fn spawn(&self, cmd: &mut Command) -> io::Result<Child> {
        cmd.spawn()
    }

    fn getpgid(&self, pid: u32) -> io::Result<i32> {
        // SAFETY: getpgid takes a plain integer and has no memory effects.
        let pgid = unsafe { libc::getpgid(pid as libc::pid_t) };
        if pgid < 0 {
            Err(io::Error::last_os_error())
        } else {
            Ok(pgid)
        }
    }

    fn start_waiter(&self, child: Child) -> Result<(), (io::Error, Child)> {
        let (tx, rx) = mpsc::channel::<Child>();
        let spawned = thread::Builder::new().name("reaper".into()).spawn(move || {
            if let Ok(mut child) = rx.recv() {
                let _ = child.wait();
            }
        });
        match spawned {
            Ok(_) => {
                // The thread is alive and holds the receiver.
                let _ = tx.send(child);
                Ok(())
            }
            Err(e) => Err((e, child)),
        }
    }

    fn group_members(&self, pgid: i32) -> io::Result<Vec<ProcStat>> {
        procfs::group_members(pgid)
    }

    fn signal_group(&self, pgid: i32, signal: i32) -> io::Result<()> {
        if pgid <= 1 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("refusing to signal group {pgid}")));
        }
        // SAFETY: killpg takes plain integers.
        if unsafe { libc::killpg(pgid, signal) } < 0 {
            Err(io::Error::last_os_error())
        } else {
            Ok(())
        }
    }
}

/// Steps a [`FaultyProcessApi`] can be told to fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Spawn,
    GetPgid,
    Waiter,
    GroupMembers,
}

/// Real process operations with one step forced to fail.
#[derive(Debug, Clone, Copy)]
pub struct FaultyProcessApi {
    pub fault: Fault,
}

impl FaultyProcessApi {
    pub fn new(fault: Fault) -> Self {
        FaultyProcessApi { fault }
    }

    fn injected(&self, step: Fault) -> io::Result<()> {
        if self.fault == step {
            Err(io::Error::other(format!("injected {step:?} failure")))
        } else {
            Ok(())
        }
    }
}

impl ProcessApi for FaultyProcessApi {
    fn spawn(&self, cmd: &mut Command) -> io::Result<Child> {
        self.injected(Fault::Spawn)?;
        RealProcessApi.spawn(cmd)
    }

    fn getpgid(&self, pid: u32) -> io::Result<i32> {
        self.injected(Fault::GetPgid)?;
        RealProcessApi.getpgid(pid)
    }

    fn start_waiter(&self, child: Child) -> Result<(), (io::Error, Child)> {
        if let Err(e) = self.injected(Fault::Waiter) {
            return Err((e, child));
        }
        RealProcessApi.start_waiter(child)
    }

    fn group_members(&self, pgid: i32) -> io::Result<Vec<ProcStat>> {
        self.injected(Fault::GroupMembers)?;
        RealProcessApi.group_members(pgid)
    }

    fn signal_group(&self, pgid: i32, signal: i32) -> io::Result<()> {
        RealProcessApi.signal_group(pgid, signal)
    }
}
