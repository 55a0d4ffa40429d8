//! Acceptance suite: one [PASS]/[FAIL] line per criterion, non-zero exit if
//! any fails. Budgets and tolerances are pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use jiriaf_agent::runtime::{create_container, stage_volumes, ContainerRuntime};
use jiriaf_agent::{start_node, AgentConfig, AgentHandle, ExitReason, Fault, FaultyProcessApi, ProcessApi, RealProcessApi};
use jiriaf_autoscaler::{desired_replicas, filter_unready, DecisionReason, GatePod, ReadinessGateConfig};
use jiriaf_control_plane::{start_control_plane, ControlPlaneConfig, ControlPlaneHandle, TargetRequest};
use jiriaf_core::api::{CreatePodRequest, NodeStatus};
use jiriaf_core::{ConfigMapSpec, ContainerSpec, CreateUid, GetUid, PodCondition, PodSpec, Volume, VolumeMount};
use jiriaf_launcher::agent_walltime;
use jiriaf_metrics::{MetricSample, TargetOwner};
use jiriaf_twin::{calc_lq, correct, predict, run_experiment, Belief, Control, TwinConfig, TwinTables};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_jiriaf");

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn block_on<F: Future<Output = Verdict>>(f: F) -> Verdict {
    runtime().block_on(f)
}

async fn eventually<T>(timeout: Duration, mut f: impl AsyncFnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(v) = f().await {
            return Some(v);
        }
        if Instant::now() > deadline {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

// ---------------------------------------------------------------- 1

/// Integer ceiling of `c * m / t`.
#[allow(clippy::manual_div_ceil)]
fn ceil_oracle(c: u64, m: u64, t: u64) -> u64 {
    (c * m + t - 1) / t
}

fn hpa_formula() -> Verdict {
    let worked = desired_replicas(4, 90.0, 50.0).map_err(|e| e.to_string())?;
    ensure(worked == 8, || format!("desired_replicas(4, 90, 50) = {worked}, want 8"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = Vec::new();
    for _ in 0..1000 {
        let c = rng.random_range(1..=100u64);
        let m = rng.random_range(0..=1000u64);
        let t = rng.random_range(1..=100u64);
        let got = desired_replicas(c as u32, m as f64, t as f64).map_err(|e| e.to_string())? as u64;
        if got != ceil_oracle(c, m, t) {
            mismatches.push((c, m, t, got));
        }
    }
    ensure(mismatches.is_empty(), || format!("{} mismatches, first {:?}", mismatches.len(), mismatches[0]))?;
    Ok("(4,90,50)=8; 1000 random cases, 0 mismatches".into())
}

// ---------------------------------------------------------------- 2

fn readiness_gate() -> Verdict {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let at = |s: i64| t0 + TimeDelta::seconds(s);
    let cfg = ReadinessGateConfig::default();
    // start 0, readiness transition at 10; init period 300 s, window 30 s.
    let (inside, outside) = (100, 1000);
    let (fresh, stale) = (45, 15);
    // (condition, now, metric timestamp, ltt, excluded)
    let table: [(Option<bool>, i64, i64, i64, bool); 14] = [
        (None, inside, fresh, 10, true),
        (None, inside, stale, 10, true),
        (None, outside, fresh, 10, true),
        (None, outside, stale, 10, true),
        (Some(true), inside, fresh, 10, false),
        (Some(true), inside, stale, 10, true),
        (Some(true), outside, fresh, 10, false),
        (Some(true), outside, stale, 10, false),
        (Some(false), inside, fresh, 10, true),
        (Some(false), inside, stale, 10, true),
        (Some(false), outside, fresh, 10, true),
        (Some(false), outside, stale, 10, true),
        // Unready after having been ready past the initial-readiness delay.
        (Some(false), outside, fresh, 40, false),
        (Some(false), outside, stale, 40, false),
    ];
    for (i, (cond, now, ts, ltt, want)) in table.iter().enumerate() {
        let pod = GatePod {
            name: format!("p{i}"),
            ready: cond.map(|s| PodCondition::new(s, at(*ltt))),
            start_time: Some(at(0)),
            metric_timestamp: Some(at(*ts)),
        };
        let excluded = !filter_unready(&[pod], at(*now), &cfg).is_empty();
        ensure(excluded == *want, || {
            format!("row {i}: condition {cond:?} now {now} metric {ts} ltt {ltt}: excluded={excluded}, want {want}")
        })?;
    }
    Ok(format!("{} truth-table rows match", table.len()))
}

// ---------------------------------------------------------------- 3

fn test_pod(name: &str, command: &[&str], script: Option<&str>) -> (PodSpec, BTreeMap<String, ConfigMapSpec>) {
    let mut pod = PodSpec {
        name: name.into(),
        containers: vec![ContainerSpec {
            name: "main".into(),
            image: "main".into(),
            command: command.iter().map(|s| s.to_string()).collect(),
            args: vec![],
            env: BTreeMap::new(),
            volume_mounts: vec![],
        }],
        ..Default::default()
    };
    let mut cms = BTreeMap::new();
    if let Some(body) = script {
        pod.containers[0].volume_mounts.push(VolumeMount {
            volume_name: "scripts".into(),
            mount_path: "work".into(),
        });
        pod.volumes.push(Volume {
            name: "scripts".into(),
            config_map: "scripts".into(),
        });
        cms.insert(
            "scripts".to_string(),
            ConfigMapSpec {
                name: "scripts".into(),
                data: [("run.sh".to_string(), body.to_string())].into(),
            },
        );
    }
    (pod, cms)
}

fn launch(api: &dyn ProcessApi, root: &Path, pod: &(PodSpec, BTreeMap<String, ConfigMapSpec>)) -> ContainerRuntime {
    stage_volumes(root, &pod.0, &pod.1);
    create_container(api, root, &pod.0, &pod.0.containers[0])
}

fn poll_until(c: &mut ContainerRuntime, want: GetUid) -> GetUid {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let got = c.poll(&RealProcessApi);
        if got == want || Instant::now() > deadline {
            return got;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn lifecycle() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = dir.path();
    let mkdir = |p: PathBuf| std::fs::create_dir_all(p).map_err(|e| e.to_string());
    let mut creates = BTreeSet::new();
    let mut gets = BTreeSet::new();
    let mut record_create = |c: &ContainerRuntime, want: CreateUid| {
        creates.insert(c.create_uid);
        ensure(c.create_uid == want, || format!("{}: got {}, want {want}", c.dir.display(), c.create_uid))
    };

    // Filesystem faults.
    let v0 = test_pod("v0", &["bash", "/work/run.sh"], Some("true\n"));
    mkdir(r.join("v0/volumes"))?;
    std::fs::write(r.join("v0/volumes/scripts"), "").map_err(|e| e.to_string())?;
    let mut c0 = launch(&RealProcessApi, r, &v0);
    record_create(&c0, CreateUid::ReadDefaultVolDirError)?;
    let g = c0.poll(&RealProcessApi);
    gets.insert(g);
    ensure(g == GetUid::Create, || format!("failed create polled as {g}"))?;

    let v1 = test_pod("v1", &["bash", "/work/run.sh"], Some("true\n"));
    mkdir(r.join("v1/containers/main/work/run.sh/x"))?;
    record_create(&launch(&RealProcessApi, r, &v1), CreateUid::CopyFileError)?;

    let v2 = test_pod("v2", &["/nonexistent/interpreter"], None);
    record_create(&launch(&RealProcessApi, r, &v2), CreateUid::CmdStartError)?;

    for (name, file, uid) in [
        ("v4", "stdout", CreateUid::CreateStdoutFileError),
        ("v5", "stderr", CreateUid::CreateStderrFileError),
        ("v7", "pgid", CreateUid::WritePgidError),
    ] {
        let pod = test_pod(name, &["sleep", "30"], None);
        mkdir(r.join(name).join("containers/main").join(file).join("x"))?;
        record_create(&launch(&RealProcessApi, r, &pod), uid)?;
    }

    // Simulated process-API failures.
    for (name, fault, uid) in [
        ("v3", Fault::GetPgid, CreateUid::GetPgidError),
        ("v6", Fault::Waiter, CreateUid::CmdWaitError),
    ] {
        let pod = test_pod(name, &["sleep", "30"], None);
        record_create(&launch(&FaultyProcessApi::new(fault), r, &pod), uid)?;
    }

    // Monitoring.
    let noisy = test_pod("noisy", &["bash", "/work/run.sh"], Some("echo oops >&2\n"));
    let mut c = launch(&RealProcessApi, r, &noisy);
    record_create(&c, CreateUid::ContainerStarted)?;
    let g = poll_until(&mut c, GetUid::StderrNotEmpty);
    gets.insert(g);
    ensure(g == GetUid::StderrNotEmpty, || format!("stderr-writing script polled as {g}"))?;

    let clean = test_pod("clean", &["bash", "/work/run.sh"], Some("echo done\n"));
    let mut c = launch(&RealProcessApi, r, &clean);
    let g = poll_until(&mut c, GetUid::Completed);
    gets.insert(g);
    ensure(g == GetUid::Completed, || format!("clean exit polled as {g}"))?;

    let long = test_pod("long", &["bash", "/work/run.sh"], Some("exec sleep 30\n"));
    let mut c = launch(&RealProcessApi, r, &long);
    let steps = [
        (None, GetUid::Running),
        (Some(c.stderr_path()), GetUid::GetStderrFileInfoError),
        (Some(c.pgid_path()), GetUid::GetPidsError),
    ];
    for (remove, want) in steps {
        if let Some(p) = remove {
            std::fs::remove_file(p).map_err(|e| e.to_string())?;
        }
        let g = c.poll(&RealProcessApi);
        gets.insert(g);
        ensure(g == want, || format!("long runner polled as {g}, want {want}"))?;
    }
    if let Some(pgid) = c.pgid {
        let _ = RealProcessApi.signal_group(pgid, libc::SIGKILL);
    }

    let all_creates: BTreeSet<CreateUid> = CreateUid::ALL.into_iter().collect();
    let all_gets: BTreeSet<GetUid> = GetUid::ALL.into_iter().collect();
    ensure(creates == all_creates, || format!("create UIDs reached: {creates:?}"))?;
    ensure(gets == all_gets, || format!("get UIDs reached: {gets:?}"))?;
    Ok("create UIDs 0-8 and get UIDs 0-5 all reached (3, 6 via injected faults)".into())
}

// ---------------------------------------------------------------- 4

fn script_request(name: &str, script: &str) -> CreatePodRequest {
    let (pod, configmaps) = test_pod(name, &["bash", "/work/run.sh"], Some(script));
    CreatePodRequest { uid: 1, pod, configmaps }
}

fn live_members(pgid: i32) -> usize {
    jiriaf_agent::procfs::group_members(pgid).map(|m| m.len()).unwrap_or(0)
}

async fn walltime() -> Verdict {
    const WALLTIME_S: u64 = 10;
    const WINDOW: (f64, f64) = (10.0, 12.0);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = AgentConfig::new("vk-wall");
    cfg.kubelet_port = 0;
    cfg.work_root = dir.path().to_path_buf();
    cfg.walltime_s = WALLTIME_S;
    cfg.grace_period = Duration::from_secs(1);
    let agent = start_node(cfg, Arc::new(RealProcessApi)).await.map_err(|e| e.to_string())?;
    let status = agent
        .supervisor()
        .create(script_request("stress", "sleep 60 &\nsleep 60\n"))
        .await
        .map_err(|e| e.to_string())?;
    let pgid = status.containers[0].pgid.ok_or("no pgid")?;
    tokio::time::sleep(Duration::from_millis(300)).await;
    ensure(live_members(pgid) >= 2, || "pod processes not running".into())?;
    ensure(agent.node().status() == NodeStatus::Ready, || "agent not Ready".into())?;
    let node = agent.node().clone();
    let exit = agent.wait().await;
    ensure(exit.reason == ExitReason::Walltime, || format!("exit reason {:?}", exit.reason))?;
    let after = exit.not_ready_after_s;
    ensure((WINDOW.0..=WINDOW.1).contains(&after), || format!("NotReady after {after:.2} s"))?;
    ensure(node.status() == NodeStatus::NotReady, || "node still Ready".into())?;
    let live = live_members(pgid);
    ensure(live == 0, || format!("{live} pod processes survive"))?;
    let offset = agent_walltime(300);
    ensure(offset == 240, || format!("agent walltime for a 300 s job is {offset}"))?;
    Ok(format!("NotReady after {after:.2} s, 0 live processes; 300 s job -> 240 s agent"))
}

// ---------------------------------------------------------------- 5

fn agent_cfg(name: &str, cp: &ControlPlaneHandle, root: &Path) -> AgentConfig {
    let mut cfg = AgentConfig::new(name);
    cfg.control_plane = Some(cp.addr().to_string());
    cfg.kubelet_port = 0;
    cfg.work_root = root.join(name);
    cfg.heartbeat_interval = Duration::from_millis(300);
    cfg.sample_interval = Duration::from_millis(500);
    cfg.grace_period = Duration::from_secs(1);
    cfg
}

async fn start_agent(cfg: AgentConfig) -> Result<AgentHandle, String> {
    std::fs::create_dir_all(&cfg.work_root).map_err(|e| e.to_string())?;
    start_node(cfg, Arc::new(RealProcessApi)).await.map_err(|e| e.to_string())
}

async fn apply(client: &reqwest::Client, cp: &ControlPlaneHandle, manifest: &str) -> Result<(), String> {
    let resp = client
        .post(format!("http://{}/apply", cp.addr()))
        .body(manifest.to_string())
        .send()
        .await
        .map_err(|e| e.to_string())?;
    ensure(resp.status().is_success(), || format!("apply answered {}", resp.status()))
}

fn load_manifest(flag: &Path) -> String {
    format!(
        r#"kind: ConfigMap
metadata:
  name: load
data:
  load.sh: |
    while :; do
      if [ -e "$FLAG" ]; then
        i=0
        while [ $i -lt 20000 ]; do i=$((i + 1)); done
      else
        sleep 0.2
      fi
    done
---
kind: Deployment
metadata:
  name: load
spec:
  replicas: 1
  selector:
    matchLabels:
      app: load
  template:
    metadata:
      labels:
        app: load
    spec:
      containers:
        - name: main
          command: ["bash", "/scripts/load.sh"]
          env:
            - name: FLAG
              value: "{}"
          volumeMounts:
            - name: scripts
              mountPath: /scripts
      volumes:
        - name: scripts
          configMap:
            name: load
      nodeSelector:
        kubernetes.io/role: agent
      tolerations:
        - key: "virtual-kubelet.io/provider"
          value: "mock"
          effect: "NoSchedule"
---
kind: HorizontalPodAutoscaler
metadata:
  name: load-hpa
spec:
  scaleTargetRef:
    kind: Deployment
    name: load
  minReplicas: 1
  maxReplicas: 3
  metrics:
  - type: Resource
    resource:
      name: cpu
      target:
        type: Utilization
        averageUtilization: 30
"#,
        flag.display()
    )
}

async fn autoscaling() -> Verdict {
    const WINDOW_S: i64 = 10;
    const UP_WITHIN_TICKS: usize = 3;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let flag = dir.path().join("load");
    let cfg = ControlPlaneConfig {
        listen: "127.0.0.1:0".into(),
        reconcile_interval: Duration::from_millis(300),
        hpa_interval: Duration::from_secs(2),
        scrape_interval_s: 1,
        agent_timeout: Duration::from_secs(5),
        gate: ReadinessGateConfig {
            cpu_initialization_period_s: 2,
            delay_of_initial_readiness_s: 1,
            metric_window_s: 1,
        },
        stabilization_window_s: WINDOW_S as u64,
        ..Default::default()
    };
    let cp = start_control_plane(cfg).await.map_err(|e| e.to_string())?;
    let mut agents = Vec::new();
    for i in 1..=3 {
        agents.push(start_agent(agent_cfg(&format!("vk-as-{i:02}"), &cp, dir.path())).await?);
    }
    let client = reqwest::Client::new();
    apply(&client, &cp, &load_manifest(&flag)).await?;
    let replicas = |cp: &ControlPlaneHandle| cp.state().deployments.get("load").map(|d| d.replicas).unwrap_or(0);

    let idle = eventually(Duration::from_secs(30), async || {
        cp.decisions()
            .into_iter()
            .rev()
            .find(|d| d.deployment == "load" && d.metric.is_some())
    })
    .await
    .ok_or("no decision with a metric while idle")?;
    ensure(replicas(&cp) == 1, || format!("idle replicas {}", replicas(&cp)))?;

    std::fs::write(&flag, "").map_err(|e| e.to_string())?;
    let loaded_at = Utc::now();
    let after = |since: DateTime<Utc>| {
        cp.decisions()
            .into_iter()
            .filter(move |d| d.deployment == "load" && d.time > since)
            .collect::<Vec<_>>()
    };
    let ups = eventually(Duration::from_secs(20), async || {
        let ds = after(loaded_at);
        (ds.len() >= UP_WITHIN_TICKS || ds.iter().any(|d| d.applied && d.desired >= 2)).then_some(ds)
    })
    .await
    .ok_or("too few decisions under load")?;
    let up = ups
        .iter()
        .take(UP_WITHIN_TICKS)
        .position(|d| d.applied && d.desired >= 2)
        .ok_or_else(|| format!("no scale-up within {UP_WITHIN_TICKS} ticks: {ups:?}"))?;
    let peak = ups[up].desired;

    // Hold the load a little so the new replicas are busy too.
    tokio::time::sleep(Duration::from_secs(4)).await;
    std::fs::remove_file(&flag).map_err(|e| e.to_string())?;
    let idle_at = Utc::now();
    let down = eventually(Duration::from_secs(60), async || {
        after(idle_at).into_iter().find(|d| d.applied && d.desired < d.current)
    })
    .await
    .ok_or_else(|| format!("no downscale after load removal; replicas {}", replicas(&cp)))?;

    let history: Vec<_> = cp.decisions().into_iter().filter(|d| d.deployment == "load").collect();
    let mut last_change: Option<DateTime<Utc>> = None;
    let mut held = 0;
    for d in &history {
        if matches!(d.reason, DecisionReason::Stabilizing { .. }) {
            held += 1;
        }
        if !d.applied {
            continue;
        }
        if d.desired < d.current {
            if let Some(prev) = last_change {
                let gap = (d.time - prev).num_milliseconds() as f64 / 1000.0;
                ensure(gap >= WINDOW_S as f64, || format!("downscale {gap:.1} s after the previous change"))?;
            }
        }
        last_change = Some(d.time);
    }
    ensure(held > 0, || "no downscale was ever held by the window".into())?;

    for a in agents {
        a.shutdown().await;
    }
    cp.shutdown().await;
    Ok(format!(
        "idle metric {:.1}%; 1->{peak} on tick {} under load; {}->{} after the window ({held} held decisions)",
        idle.metric.unwrap_or(0.0),
        up + 1,
        down.current,
        down.desired
    ))
}

// ---------------------------------------------------------------- 6

/// Minimal HTTP exporter serving `requests_total`, counting its own
/// scrapes and scaled by `step`.
async fn exporter(step: u64) -> Result<String, String> {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(async move {
        let mut hits = 0u64;
        while let Ok((mut sock, _)) = listener.accept().await {
            let mut buf = [0u8; 4096];
            let _ = sock.read(&mut buf).await;
            hits += 1;
            let body = format!("requests_total {}\n", hits * step);
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = sock.write_all(resp.as_bytes()).await;
            let _ = sock.shutdown().await;
        }
    });
    Ok(addr.to_string())
}

async fn shared_ip() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ControlPlaneConfig {
        listen: "127.0.0.1:0".into(),
        reconcile_interval: Duration::from_millis(200),
        scrape_interval_s: 1,
        ..Default::default()
    };
    let cp = start_control_plane(cfg).await.map_err(|e| e.to_string())?;
    let agent = start_agent(agent_cfg("vk-ip", &cp, dir.path())).await?;
    let client = reqwest::Client::new();
    let base = format!("http://{}", cp.addr());
    eventually(Duration::from_secs(5), async || {
        let nodes: serde_json::Value = client.get(format!("{base}/nodes")).send().await.ok()?.json().await.ok()?;
        (nodes.as_array()?.len() == 1).then_some(())
    })
    .await
    .ok_or("agent never registered")?;
    for (pod, step) in [("exp-a", 1), ("exp-b", 1000)] {
        let target = TargetRequest {
            owner: TargetOwner::pod("vk-ip", pod),
            ip: "172.17.0.1".into(),
            port: 2221,
            route: exporter(step).await?,
            path: "/metrics".into(),
        };
        let resp = client
            .post(format!("{base}/metrics/targets"))
            .json(&target)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        ensure(resp.status().is_success(), || format!("target registration answered {}", resp.status()))?;
    }
    let series = async || -> Option<Vec<(String, String, f64)>> {
        let s: Vec<MetricSample> = client
            .get(format!("{base}/metrics/query?metric=requests_total"))
            .send()
            .await
            .ok()?
            .json()
            .await
            .ok()?;
        let mut v: Vec<_> = s
            .into_iter()
            .map(|m| {
                (
                    m.series.label("pod").unwrap_or("").to_string(),
                    m.series.label("instance").unwrap_or("").to_string(),
                    m.value.unwrap_or(f64::NAN),
                )
            })
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        Some(v)
    };
    let first = eventually(Duration::from_secs(5), async || series().await.filter(|s| s.len() == 2))
        .await
        .ok_or("two series never appeared")?;
    ensure(first[0].0 == "exp-a" && first[1].0 == "exp-b", || format!("series {first:?}"))?;
    ensure(first[0].1 != first[1].1, || format!("instances collide: {first:?}"))?;
    ensure(first[0].2 < 1000.0 && first[1].2 >= 1000.0, || format!("values mixed: {first:?}"))?;
    let next = eventually(Duration::from_secs(5), async || {
        series()
            .await
            .filter(|s| s.len() == 2 && s[0].2 > first[0].2 && s[1].2 > first[1].2)
    })
    .await
    .ok_or("series did not both advance")?;
    agent.shutdown().await;
    cp.shutdown().await;
    Ok(format!(
        "instances {} and {}; a {} -> {}, b {} -> {}",
        first[0].1, first[1].1, first[0].2, next[0].2, first[1].2, next[1].2
    ))
}

// ---------------------------------------------------------------- 7

fn twin_math() -> Verdict {
    const TOL: f64 = 0.02;
    const DISCREPANCY: f64 = 1.0;
    let rows = [(162.0, 1.96), (163.0, 2.02), (164.0, 2.08), (165.0, 2.14), (166.0, 2.21)];
    let mut got = Vec::new();
    for (lambda, want) in rows {
        let lq = calc_lq(lambda, 222.0).map_err(|e| e.to_string())?;
        ensure((lq - want).abs() <= TOL, || format!("calc_lq({lambda}, 222) = {lq:.4}, table {want}"))?;
        got.push(format!("{lq:.3}"));
    }
    let lq16 = calc_lq(162.0, 167.0).map_err(|e| e.to_string())?;
    let table16 = TwinTables::builtin().rows(Control::Threads16)[0].calc_lq;
    ensure((lq16 - table16).abs() > DISCREPANCY, || {
        format!("16-thread state 0: formula {lq16:.3} vs table {table16} no longer disagree")
    })?;
    Ok(format!("32-thread [{}]; 16-thread state 0 formula {lq16:.2} vs table {table16}", got.join(", ")))
}

// ---------------------------------------------------------------- 8

/// Reflected random-walk step written directly from the kernel definition.
fn oracle_predict(prior: &[f64], k: usize, probs: [f64; 3]) -> Vec<f64> {
    let n = prior.len();
    let mut out = vec![0.0; n];
    for (i, w) in prior.iter().enumerate() {
        for (offset, p) in [(-(k as i64), probs[0]), (0, probs[1]), (k as i64, probs[2])] {
            let j = i as i64 + offset;
            let dest = if (0..n as i64).contains(&j) { j as usize } else { i };
            out[dest] += w * p;
        }
    }
    let z: f64 = out.iter().sum();
    out.iter().map(|w| w / z).collect()
}

fn oracle_observe(state: f64, obs_lq: &[f64; 5]) -> f64 {
    if state >= 4.0 {
        return obs_lq[4];
    }
    let lo = state.floor().max(0.0) as usize;
    let frac = state - lo as f64;
    obs_lq[lo] * (1.0 - frac) + obs_lq[lo + 1] * frac
}

fn oracle_correct(prior: &[f64], grid: &[f64], obs: f64, obs_lq: &[f64; 5], sigma: f64) -> Vec<f64> {
    let log_like: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let d = obs.ln() - oracle_observe(s, obs_lq).ln();
            -d * d / (2.0 * sigma * sigma)
        })
        .collect();
    let top = log_like
        .iter()
        .zip(prior)
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = prior.iter().zip(&log_like).map(|(w, l)| w * (l - top).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.iter().map(|w| w / z).collect()
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn twin_filter() -> Verdict {
    const TV_MAX: f64 = 1e-9;
    let cfg = TwinConfig::default();
    let tables = TwinTables::builtin();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let raw: Vec<f64> = (0..grid.len())
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let Ok(belief) = Belief::normalized(raw.clone()) else { continue };
        let control = if rng.random_bool(0.5) { Control::Threads16 } else { Control::Threads32 };
        let obs_lq: [f64; 5] = tables.rows(control).map(|r| r.obs_lq);
        let true_state = rng.random_range(0.0..=4.0);
        let obs = oracle_observe(true_state, &obs_lq) * (0.15 * (rng.random::<f64>() - 0.5)).exp();

        let predicted = predict(&belief, control, &cfg).map_err(|e| e.to_string())?;
        let want_pred = oracle_predict(belief.weights(), 2, [0.25, 0.5, 0.25]);
        let d = tv(predicted.weights(), &want_pred);
        worst = worst.max(d);
        ensure(d < TV_MAX, || format!("case {case}: predict TV {d:e}"))?;

        let posterior = correct(&predicted, obs, control, &cfg, &tables).map_err(|e| e.to_string())?;
        let want_post = oracle_correct(&want_pred, &grid, obs, &obs_lq, 0.1);
        let d = tv(posterior.weights(), &want_post);
        worst = worst.max(d);
        ensure(d < TV_MAX, || format!("case {case}: correct TV {d:e} (obs {obs}, {control})"))?;
        let via_api = posterior.tv_distance(&Belief::from_weights(want_post).map_err(|e| e.to_string())?);
        ensure(via_api < TV_MAX, || format!("case {case}: tv_distance {via_api:e}"))?;
    }
    Ok(format!("100 pairs, worst TV {worst:.1e}"))
}

// ---------------------------------------------------------------- 9

fn twin_experiment() -> Verdict {
    const HIGH_LAG: usize = 5;
    const LOW_LAG: usize = 10;
    const OBS_RANGE: (f64, f64) = (1.56, 241.0);
    let log = run_experiment(&TwinConfig::default()).map_err(|e| e.to_string())?;
    ensure(log.len() == 80, || format!("{} rows", log.len()))?;
    let high = log.state_runs(2, |s| s >= 3.0 - 1e-9);
    let low = log.state_runs(2, |s| s <= 1.0 + 1e-9);
    ensure(!high.is_empty() && !low.is_empty(), || format!("plateaus high {high:?} low {low:?}"))?;
    let mut lags = Vec::new();
    for (runs, target, limit) in [(&high, Control::Threads32, HIGH_LAG), (&low, Control::Threads16, LOW_LAG)] {
        for run in runs {
            let lag = log.settle_lag(run, target);
            ensure(lag.is_some_and(|l| l <= limit), || format!("plateau {run:?}: settle lag {lag:?} > {limit}"))?;
            lags.push(format!("{}@{}..{}:{}", target.threads(), run.start, run.end, lag.unwrap_or(0)));
        }
    }
    for row in &log.rows {
        ensure((OBS_RANGE.0..=OBS_RANGE.1).contains(&row.obs_lq), || {
            format!("t={} obs_lq {} outside the tables", row.t, row.obs_lq)
        })?;
    }
    Ok(format!("lags {}", lags.join(" ")))
}

// ---------------------------------------------------------------- 10

async fn cli(args: &[&str]) -> Result<String, String> {
    let out = tokio::process::Command::new(BIN)
        .args(args)
        .env("JIRIAF_LOG", "warn")
        .env_remove("JIRIAF_SERVER")
        .env_remove("JIRIAF_STORE")
        .output()
        .await
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("jiriaf {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn golden(name: &str) -> Result<String, String> {
    std::fs::read_to_string(golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))
}

/// Drops the CREATED column, which carries wall-clock times.
fn without_created(table: &str) -> String {
    let Some(col) = table.lines().next().and_then(|h| h.find("CREATED")) else {
        return table.to_string();
    };
    table
        .lines()
        .map(|l| format!("{}\n", l.get(..col).unwrap_or(l).trim_end()))
        .collect()
}

async fn persistence() -> Verdict {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cp_cfg = || ControlPlaneConfig {
        listen: "127.0.0.1:0".into(),
        data_dir: Some(data.path().to_path_buf()),
        reconcile_interval: Duration::from_millis(200),
        ..Default::default()
    };

    let cp = start_control_plane(cp_cfg()).await.map_err(|e| e.to_string())?;
    let mut agents = Vec::new();
    for (name, nodetype, site) in [("vk-gold-01", "cpu", "Local"), ("vk-gold-02", "gpu", "nersc")] {
        let mut cfg = agent_cfg(name, &cp, work.path());
        cfg.nodetype = nodetype.into();
        cfg.site = site.into();
        agents.push(start_agent(cfg).await?);
    }
    eventually(Duration::from_secs(5), async || {
        let s = cp.state();
        (s.nodes.len() == 2 && s.node_views().iter().all(|n| n.status == NodeStatus::Ready)).then_some(())
    })
    .await
    .ok_or("agents never registered")?;
    for a in agents {
        a.shutdown().await;
    }
    eventually(Duration::from_secs(5), async || {
        cp.state().node_views().iter().all(|n| n.status == NodeStatus::NotReady).then_some(())
    })
    .await
    .ok_or("agents never went NotReady")?;
    let server = cp.addr().to_string();
    let before = cli(&["--server", &server, "get", "nodes"]).await?;

    // Workflows with a stand-in agent program.
    let store = data.path().join("workflows.jsonl");
    let store_s = store.display().to_string();
    let fake = data.path().join("fake-agent");
    std::fs::write(&fake, "#!/bin/bash\nexec sleep 300\n").map_err(|e| e.to_string())?;
    std::fs::set_permissions(&fake, std::os::unix::fs::PermissionsExt::from_mode(0o755)).map_err(|e| e.to_string())?;
    let env = data.path().join("env.list");
    std::fs::write(&env, "nnodes=2\nnodetype=cpu\nwalltime=00:05:00\nnodename=vk-wf\nsite=Local\n")
        .map_err(|e| e.to_string())?;
    let base = ["--server", server.as_str(), "--store", store_s.as_str()];
    let fake_s = fake.display().to_string();
    let env_s = env.display().to_string();
    let add_args = ["add-wf", "-f", env_s.as_str(), "--agent-bin", fake_s.as_str(), "--stagger-s", "0"];
    cli(&[&base[..], &add_args[..]].concat()).await?;
    cli(&[&base[..], &["add-wf", "-f", &env_s, "--agent-bin", &fake_s, "--stagger-s", "0"]].concat())
        .await
        .err()
        .ok_or("a second workflow reused the node names")?;
    std::fs::write(&env, "nnodes=1\nnodetype=gpu\nwalltime=0\nnodename=vk-wf2\nsite=nersc\n").map_err(|e| e.to_string())?;
    cli(&[&base[..], &add_args[..]].concat()).await?;
    cli(&[&base[..], &["delete-wf", "wf-0002", "--grace-s", "2"]].concat()).await?;
    let wf_before = cli(&[&base[..], &["get-wf"]].concat()).await?;
    cp.shutdown().await;

    let cp = start_control_plane(cp_cfg()).await.map_err(|e| e.to_string())?;
    let server2 = cp.addr().to_string();
    let after = cli(&["--server", &server2, "get", "nodes"]).await?;
    let wf_after = cli(&["--store", &store_s, "get-wf"]).await?;
    cli(&["--store", &store_s, "delete-wf", "wf-0001", "--grace-s", "2"]).await?;
    cp.shutdown().await;

    ensure(after == before, || format!("get nodes changed across restart:\n{before}---\n{after}"))?;
    let want_nodes = golden("get_nodes.txt")?;
    ensure(after == want_nodes, || format!("get nodes differs from golden:\n{after}"))?;
    ensure(wf_after == wf_before, || format!("get-wf changed across reload:\n{wf_before}---\n{wf_after}"))?;
    let want_wf = golden("get_wf.txt")?;
    ensure(without_created(&wf_after) == want_wf, || {
        format!("get-wf differs from golden:\n{}", without_created(&wf_after))
    })?;
    Ok(format!(
        "{} node rows and {} workflow rows identical after replay",
        after.lines().count() - 1,
        wf_after.lines().count() - 1
    ))
}

// ----------------------------------------------------------------

fn main() {
    type Check = Box<dyn FnOnce() -> Verdict>;
    let checks: Vec<(u32, &str, Duration, Check)> = vec![
        (1, "hpa formula", Duration::from_secs(1), Box::new(hpa_formula)),
        (2, "readiness gating", Duration::from_secs(1), Box::new(readiness_gate)),
        (3, "lifecycle conformance", Duration::from_secs(60), Box::new(lifecycle)),
        (4, "walltime", Duration::from_secs(20), Box::new(|| block_on(walltime()))),
        (5, "end-to-end autoscaling", Duration::from_secs(180), Box::new(|| block_on(autoscaling()))),
        (6, "shared-ip metrics", Duration::from_secs(10), Box::new(|| block_on(shared_ip()))),
        (7, "twin math", Duration::from_secs(1), Box::new(twin_math)),
        (8, "twin filtering", Duration::from_secs(5), Box::new(twin_filter)),
        (9, "twin experiment", Duration::from_secs(5), Box::new(twin_experiment)),
        (10, "persistence", Duration::from_secs(10), Box::new(|| block_on(persistence()))),
    ];
    let only: Option<u32> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let verdict = match verdict {
            Ok(_) if elapsed > budget => Err(format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs())),
            v => v,
        };
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {id:>2} {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
