//! The single owner of all pod runtime state. Requests arrive over a
//! channel and are handled one at a time on a dedicated thread; slow work
//! such as waiting out a termination grace period is tracked as pending
//! state and advanced on each loop tick.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use jiriaf_core::api::{ContainerTermination, CreatePodRequest, TerminationOutcome, TerminationReport};
use jiriaf_core::{validate_pod, PodSpec, PodStatus};
use tokio::sync::{oneshot, watch};

use crate::process::ProcessApi;
use crate::procfs::clock_ticks_per_second;
use crate::runtime::{create_container, stage_volumes, ContainerRuntime};
use crate::AgentError;

const TICK: Duration = Duration::from_millis(100);
/// How long to wait for a group to vanish after the kill signal.
const KILL_WAIT: Duration = Duration::from_secs(1);

enum Command {
    Create(Box<CreatePodRequest>, oneshot::Sender<Result<PodStatus, AgentError>>),
    Delete(String, oneshot::Sender<Result<TerminationReport, AgentError>>),
    List(oneshot::Sender<Vec<PodStatus>>),
    TerminateAll(Duration, oneshot::Sender<Vec<TerminationReport>>),
    Stop,
}

/// Per-pod CPU usage published for the metrics endpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    /// Utilization in percent of one core, by pod. Pods without two
    /// samples yet are absent.
    pub cpu_pct: BTreeMap<String, f64>,
    pub pods: usize,
}

struct PodRuntime {
    spec: PodSpec,
    uid: u64,
    start_time: DateTime<Utc>,
    containers: Vec<ContainerRuntime>,
    cpu_prev: Option<(u64, Instant)>,
    cpu_pct: Option<f64>,
}

impl PodRuntime {
    fn status(&mut self, api: &dyn ProcessApi) -> PodStatus {
        for c in &mut self.containers {
            c.poll(api);
        }
        PodStatus::assemble(
            self.spec.name.clone(),
            self.uid,
            self.start_time,
            self.containers.iter().map(ContainerRuntime::status).collect(),
        )
    }

    fn groups(&self) -> Vec<(String, Option<i32>)> {
        self.containers.iter().map(|c| (c.name.clone(), c.pgid)).collect()
    }
}

struct Pending {
    pod: String,
    deadline: Instant,
    kill_deadline: Option<Instant>,
    containers: Vec<ContainerTermination>,
    reply: Option<oneshot::Sender<Result<TerminationReport, AgentError>>>,
}

#[derive(Clone)]
pub struct SupervisorHandle {
    tx: mpsc::Sender<Command>,
}

impl SupervisorHandle {
    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, AgentError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).map_err(|_| AgentError::Stopped)?;
        rx.await.map_err(|_| AgentError::Stopped)
    }

    pub async fn create(&self, req: CreatePodRequest) -> Result<PodStatus, AgentError> {
        self.call(|tx| Command::Create(Box::new(req), tx)).await?
    }

    pub async fn delete(&self, pod: &str) -> Result<TerminationReport, AgentError> {
        let name = pod.to_string();
        self.call(|tx| Command::Delete(name, tx)).await?
    }

    pub async fn list(&self) -> Result<Vec<PodStatus>, AgentError> {
        self.call(Command::List).await
    }

    /// Terminates every pod, allowing each group `grace` before the kill
    /// signal.
    pub async fn terminate_all(&self, grace: Duration) -> Result<Vec<TerminationReport>, AgentError> {
        self.call(|tx| Command::TerminateAll(grace, tx)).await
    }

    pub fn stop(&self) {
        let _ = self.tx.send(Command::Stop);
    }
}

pub struct Supervisor {
    api: Arc<dyn ProcessApi>,
    work_root: PathBuf,
    grace: Duration,
    sample_interval: Duration,
    pods: BTreeMap<String, PodRuntime>,
    pending: Vec<Pending>,
    snapshot: watch::Sender<Snapshot>,
    ticks_per_s: f64,
}

impl Supervisor {
    pub fn spawn(
        api: Arc<dyn ProcessApi>,
        work_root: PathBuf,
        grace: Duration,
        sample_interval: Duration,
    ) -> std::io::Result<(SupervisorHandle, watch::Receiver<Snapshot>, JoinHandle<()>)> {
        let (tx, rx) = mpsc::channel();
        let (snap_tx, snap_rx) = watch::channel(Snapshot::default());
        let sup = Supervisor {
            api,
            work_root,
            grace,
            sample_interval,
            pods: BTreeMap::new(),
            pending: Vec::new(),
            snapshot: snap_tx,
            ticks_per_s: clock_ticks_per_second(),
        };
        let join = thread::Builder::new()
            .name("supervisor".into())
            .spawn(move || sup.run(rx))?;
        Ok((SupervisorHandle { tx }, snap_rx, join))
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        let mut next_sample = Instant::now();
        loop {
            match rx.recv_timeout(TICK) {
                Ok(Command::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(cmd) => self.handle(cmd),
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.advance_pending(Instant::now());
            if Instant::now() >= next_sample {
                self.sample_cpu();
                next_sample = Instant::now() + self.sample_interval;
            }
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Create(req, reply) => {
                let _ = reply.send(self.create(*req));
            }
            Command::Delete(name, reply) => self.begin_delete(name, self.grace, reply),
            Command::List(reply) => {
                let api = self.api.clone();
                let statuses = self.pods.values_mut().map(|p| p.status(api.as_ref())).collect();
                let _ = reply.send(statuses);
            }
            Command::TerminateAll(grace, reply) => {
                let _ = reply.send(self.terminate_all(grace));
            }
            Command::Stop => {}
        }
    }

    fn create(&mut self, req: CreatePodRequest) -> Result<PodStatus, AgentError> {
        let pod = req.pod;
        let violations = validate_pod(&pod);
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(AgentError::BadRequest(msgs.join("; ")));
        }
        for cm in pod.config_map_refs() {
            if !req.configmaps.contains_key(cm) {
                return Err(AgentError::BadRequest(format!("configmap {cm:?} not supplied")));
            }
        }
        if self.pending.iter().any(|p| p.pod == pod.name) {
            return Err(AgentError::Conflict(format!("pod {} is terminating", pod.name)));
        }
        let api = self.api.clone();
        if let Some(existing) = self.pods.get_mut(&pod.name) {
            if existing.uid == req.uid {
                return Ok(existing.status(api.as_ref()));
            }
            return Err(AgentError::Conflict(format!("pod {} already exists", pod.name)));
        }

        stage_volumes(&self.work_root, &pod, &req.configmaps);
        let start_time = Utc::now();
        let containers = pod
            .containers
            .iter()
            .map(|c| create_container(api.as_ref(), &self.work_root, &pod, c))
            .collect::<Vec<_>>();
        for c in &containers {
            tracing::info!(pod = %pod.name, container = %c.name, uid = %c.create_uid, "container created");
        }
        let mut rt = PodRuntime {
            spec: pod.clone(),
            uid: req.uid,
            start_time,
            containers,
            cpu_prev: None,
            cpu_pct: None,
        };
        let status = rt.status(api.as_ref());
        self.pods.insert(pod.name.clone(), rt);
        Ok(status)
    }

    /// Sends the termination signal to each live group.
    fn start_termination(&self, pod: &PodRuntime) -> Vec<ContainerTermination> {
        pod.groups()
            .into_iter()
            .map(|(name, pgid)| {
                let outcome = match pgid {
                    None => TerminationOutcome::NoLiveProcesses,
                    Some(g) => match self.api.group_members(g) {
                        Ok(m) if m.is_empty() => TerminationOutcome::NoLiveProcesses,
                        _ => match self.api.signal_group(g, libc::SIGTERM) {
                            // ESRCH: the group vanished on its own.
                            Err(e) if e.raw_os_error() == Some(libc::ESRCH) => TerminationOutcome::NoLiveProcesses,
                            Err(e) => TerminationOutcome::SignalFailed(e.to_string()),
                            Ok(()) => TerminationOutcome::Terminated,
                        },
                    },
                };
                ContainerTermination { name, pgid, outcome }
            })
            .collect()
    }

    fn begin_delete(&mut self, name: String, grace: Duration, reply: oneshot::Sender<Result<TerminationReport, AgentError>>) {
        if self.pending.iter().any(|p| p.pod == name) {
            let _ = reply.send(Err(AgentError::Conflict(format!("pod {name} is already terminating"))));
            return;
        }
        let Some(pod) = self.pods.get(&name) else {
            let _ = reply.send(Err(AgentError::NotFound(format!("pod {name}"))));
            return;
        };
        let containers = self.start_termination(pod);
        self.pending.push(Pending {
            pod: name,
            deadline: Instant::now() + grace,
            kill_deadline: None,
            containers,
            reply: Some(reply),
        });
        self.advance_pending(Instant::now());
    }

    fn group_alive(&self, pgid: Option<i32>) -> bool {
        match pgid {
            Some(g) => self.api.group_members(g).map(|m| !m.is_empty()).unwrap_or(false),
            None => false,
        }
    }

    /// Moves each pending termination forward; finished ones are answered
    /// and their pods forgotten. Runtime directories stay on disk.
    fn advance_pending(&mut self, now: Instant) {
        let mut i = 0;
        while i < self.pending.len() {
            let done = {
                let p = &self.pending[i];
                let live: Vec<usize> = p
                    .containers
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| {
                        matches!(c.outcome, TerminationOutcome::Terminated | TerminationOutcome::Killed)
                            && self.group_alive(c.pgid)
                    })
                    .map(|(i, _)| i)
                    .collect();
                if live.is_empty() {
                    true
                } else if p.kill_deadline.is_none() && now >= p.deadline {
                    let p = &mut self.pending[i];
                    for idx in live {
                        if let Some(g) = p.containers[idx].pgid {
                            let _ = self.api.signal_group(g, libc::SIGKILL);
                        }
                        p.containers[idx].outcome = TerminationOutcome::Killed;
                    }
                    p.kill_deadline = Some(now + KILL_WAIT);
                    false
                } else {
                    p.kill_deadline.is_some_and(|d| now >= d)
                }
            };
            if done {
                let p = self.pending.remove(i);
                self.pods.remove(&p.pod);
                let report = TerminationReport {
                    pod: p.pod,
                    containers: p.containers,
                };
                tracing::info!(pod = %report.pod, "pod terminated");
                if let Some(reply) = p.reply {
                    let _ = reply.send(Ok(report));
                }
            } else {
                i += 1;
            }
        }
    }

    fn terminate_all(&mut self, grace: Duration) -> Vec<TerminationReport> {
        let names: Vec<String> = self
            .pods
            .keys()
            .filter(|n| !self.pending.iter().any(|p| &p.pod == *n))
            .cloned()
            .collect();
        let mut waiters = Vec::new();
        for name in names {
            let (tx, rx) = oneshot::channel();
            self.begin_delete(name, grace, tx);
            waiters.push(rx);
        }
        while !self.pending.is_empty() {
            thread::sleep(Duration::from_millis(20));
            self.advance_pending(Instant::now());
        }
        waiters
            .into_iter()
            .filter_map(|mut rx| rx.try_recv().ok().and_then(Result::ok))
            .collect()
    }

    fn sample_cpu(&mut self) {
        let now = Instant::now();
        let api = self.api.clone();
        for pod in self.pods.values_mut() {
            let mut ticks = 0u64;
            let mut ok = true;
            for c in &pod.containers {
                if let Some(g) = c.pgid {
                    match api.group_members(g) {
                        Ok(members) => ticks += members.iter().map(|m| m.cpu_ticks).sum::<u64>(),
                        Err(_) => ok = false,
                    }
                }
            }
            if !ok {
                pod.cpu_prev = None;
                pod.cpu_pct = None;
                continue;
            }
            if let Some((prev_ticks, prev_at)) = pod.cpu_prev {
                let wall = now.duration_since(prev_at).as_secs_f64();
                if wall > 0.0 {
                    let cpu = ticks.saturating_sub(prev_ticks) as f64 / self.ticks_per_s;
                    pod.cpu_pct = Some(cpu / wall * 100.0);
                }
            }
            pod.cpu_prev = Some((ticks, now));
        }
        let snap = Snapshot {
            cpu_pct: self
                .pods
                .iter()
                .filter_map(|(n, p)| p.cpu_pct.map(|v| (n.clone(), v)))
                .collect(),
            pods: self.pods.len(),
        };
        self.snapshot.send_replace(snap);
    }
}
