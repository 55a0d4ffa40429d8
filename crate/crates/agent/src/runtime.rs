//! Per-container runtime: directory layout, the create sequence and the
//! monitoring classification.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, Utc};
use jiriaf_core::{ConfigMapSpec, ContainerSpec, ContainerStatus, CreateUid, GetUid, PodSpec};

use crate::process::ProcessApi;

/// `<work_root>/<pod>`.
pub fn pod_dir(work_root: &Path, pod: &str) -> PathBuf {
    work_root.join(pod)
}

/// `<work_root>/<pod>/volumes/<volume>`, where config-map data is staged.
pub fn volume_dir(work_root: &Path, pod: &str, volume: &str) -> PathBuf {
    pod_dir(work_root, pod).join("volumes").join(volume)
}

/// `<work_root>/<pod>/containers/<container>`.
pub fn container_dir(work_root: &Path, pod: &str, container: &str) -> PathBuf {
    pod_dir(work_root, pod).join("containers").join(container)
}

/// Writes each referenced config map's entries into its volume directory.
/// Failures are only logged: the container's create sequence reports them
/// when it reads the directory.
pub fn stage_volumes(work_root: &Path, pod: &PodSpec, configmaps: &BTreeMap<String, ConfigMapSpec>) {
    for vol in &pod.volumes {
        let Some(cm) = configmaps.get(&vol.config_map) else { continue };
        let dir = volume_dir(work_root, &pod.name, &vol.name);
        let staged = fs::create_dir_all(&dir).and_then(|_| {
            for (key, data) in &cm.data {
                fs::write(dir.join(key), data)?;
            }
            Ok(())
        });
        if let Err(e) = staged {
            tracing::warn!(pod = %pod.name, volume = %vol.name, error = %e, "staging volume failed");
        }
    }
}

/// Live state of one container on this node.
#[derive(Debug)]
pub struct ContainerRuntime {
    pub name: String,
    pub create_uid: CreateUid,
    pub pgid: Option<i32>,
    pub started_at: Option<DateTime<Utc>>,
    pub detail: Option<String>,
    pub dir: PathBuf,
    /// Set once the stderr pipe has hit end-of-file and every byte is in
    /// the stderr file.
    stderr_drained: Arc<AtomicBool>,
    /// Once stderr has content the container stays failed.
    stderr_seen: bool,
    last_get: Option<GetUid>,
}

impl ContainerRuntime {
    fn failed(name: &str, dir: PathBuf, uid: CreateUid, err: impl ToString) -> Self {
        ContainerRuntime {
            name: name.to_string(),
            create_uid: uid,
            pgid: None,
            started_at: None,
            detail: Some(err.to_string()),
            dir,
            stderr_drained: Arc::new(AtomicBool::new(true)),
            stderr_seen: false,
            last_get: None,
        }
    }

    pub fn stdout_path(&self) -> PathBuf {
        self.dir.join("stdout")
    }

    pub fn stderr_path(&self) -> PathBuf {
        self.dir.join("stderr")
    }

    pub fn pgid_path(&self) -> PathBuf {
        self.dir.join("pgid")
    }

    pub fn status(&self) -> ContainerStatus {
        ContainerStatus {
            name: self.name.clone(),
            create_uid: self.create_uid,
            get_uid: self.last_get,
            pgid: self.pgid,
            started_at: self.started_at,
            detail: self.detail.clone(),
        }
    }

    /// Classifies the container. Precedence: unreadable pgid file or
    /// process table, then unstatable stderr, then nonempty stderr, then
    /// completed or running.
    pub fn poll(&mut self, api: &dyn ProcessApi) -> GetUid {
        let uid = if !self.create_uid.is_started() {
            GetUid::Create
        } else {
            self.classify(api)
        };
        self.last_get = Some(uid);
        uid
    }

    fn classify(&mut self, api: &dyn ProcessApi) -> GetUid {
        // Read the drain flag first: if it is set, the stderr file already
        // holds everything the group will ever write to it.
        let drained = self.stderr_drained.load(Ordering::Acquire);
        let members = read_pgid(&self.pgid_path()).and_then(|pgid| api.group_members(pgid));
        let members = match members {
            Ok(m) => m,
            Err(e) => {
                self.detail = Some(format!("listing processes: {e}"));
                return GetUid::GetPidsError;
            }
        };
        let size = match fs::metadata(self.stderr_path()) {
            Ok(meta) => meta.len(),
            Err(e) => {
                self.detail = Some(format!("stat stderr: {e}"));
                return GetUid::GetStderrFileInfoError;
            }
        };
        if size > 0 || self.stderr_seen {
            self.stderr_seen = true;
            return GetUid::StderrNotEmpty;
        }
        if members.is_empty() && drained {
            GetUid::Completed
        } else {
            GetUid::Running
        }
    }
}

fn read_pgid(path: &Path) -> io::Result<i32> {
    let text = fs::read_to_string(path)?;
    match text.trim().parse::<i32>() {
        Ok(p) if p > 0 => Ok(p),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad pgid file content {text:?}"))),
    }
}

/// Rewrites an argument that names a path under one of the container's
/// mount points (`/stress/stress.sh`) to the relocated copy under the
/// container directory.
fn relocate(arg: &str, mounts: &[&str], dir: &Path) -> String {
    for m in mounts {
        let root = format!("/{m}");
        if arg == root {
            return dir.join(m).display().to_string();
        }
        if let Some(rest) = arg.strip_prefix(&format!("{root}/")) {
            return dir.join(m).join(rest).display().to_string();
        }
    }
    arg.to_string()
}

fn kill_and_reap(api: &dyn ProcessApi, mut child: Child) {
    let _ = api.signal_group(child.id() as i32, libc::SIGKILL);
    let _ = child.kill();
    let _ = thread::Builder::new().name("reap-failed".into()).spawn(move || {
        let _ = child.wait();
    });
}

fn pump(mut from: impl Read + Send + 'static, mut to: File, done: Option<Arc<AtomicBool>>) -> io::Result<()> {
    thread::Builder::new().name("pipe-copy".into()).spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match from.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if to.write_all(&buf[..n]).is_err() {
                        break;
                    }
                }
            }
        }
        let _ = to.flush();
        if let Some(flag) = done {
            flag.store(true, Ordering::Release);
        }
    })?;
    Ok(())
}

/// Runs the create sequence for one container. Each step that fails leaves
/// the container at that step's UID; a process that was already started is
/// killed.
pub fn create_container(api: &dyn ProcessApi, work_root: &Path, pod: &PodSpec, spec: &ContainerSpec) -> ContainerRuntime {
    let dir = container_dir(work_root, &pod.name, &spec.name);
    let fail = |uid, err: String| ContainerRuntime::failed(&spec.name, dir.clone(), uid, err);

    // Volume directories.
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(CreateUid::ReadDefaultVolDirError, format!("{}: {e}", dir.display()));
    }
    let mut copies = Vec::new();
    for m in &spec.volume_mounts {
        let src_dir = volume_dir(work_root, &pod.name, &m.volume_name);
        let entries = match fs::read_dir(&src_dir) {
            Ok(e) => e,
            Err(e) => return fail(CreateUid::ReadDefaultVolDirError, format!("{}: {e}", src_dir.display())),
        };
        for entry in entries {
            match entry {
                Ok(entry) => copies.push((entry.path(), dir.join(&m.mount_path).join(entry.file_name()))),
                Err(e) => return fail(CreateUid::ReadDefaultVolDirError, format!("{}: {e}", src_dir.display())),
            }
        }
    }

    // Script files.
    for (src, dst) in &copies {
        let copied = dst
            .parent()
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| fs::copy(src, dst))
            .and_then(|_| fs::set_permissions(dst, fs::Permissions::from_mode(0o755)));
        if let Err(e) = copied {
            return fail(CreateUid::CopyFileError, format!("{} -> {}: {e}", src.display(), dst.display()));
        }
    }

    // Launch in a fresh process group.
    let mounts: Vec<&str> = spec.volume_mounts.iter().map(|m| m.mount_path.as_str()).collect();
    let argv: Vec<String> = spec
        .command
        .iter()
        .chain(&spec.args)
        .map(|a| relocate(a, &mounts, &dir))
        .collect();
    let Some((program, rest)) = argv.split_first() else {
        return fail(CreateUid::CmdStartError, "empty command".into());
    };
    let mut cmd = Command::new(program);
    cmd.args(rest)
        .current_dir(&dir)
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let started_at = Utc::now();
    let mut child = match api.spawn(&mut cmd) {
        Ok(c) => c,
        Err(e) => return fail(CreateUid::CmdStartError, format!("{program}: {e}")),
    };

    let pgid = match api.getpgid(child.id()) {
        Ok(p) => p,
        Err(e) => {
            kill_and_reap(api, child);
            return fail(CreateUid::GetPgidError, e.to_string());
        }
    };

    let stdout_file = match File::create(dir.join("stdout")) {
        Ok(f) => f,
        Err(e) => {
            kill_and_reap(api, child);
            return fail(CreateUid::CreateStdoutFileError, e.to_string());
        }
    };
    let stderr_file = match File::create(dir.join("stderr")) {
        Ok(f) => f,
        Err(e) => {
            kill_and_reap(api, child);
            return fail(CreateUid::CreateStderrFileError, e.to_string());
        }
    };

    let drained = Arc::new(AtomicBool::new(false));
    let out_pipe = child.stdout.take();
    let err_pipe = child.stderr.take();
    let pumps = out_pipe
        .map_or(Ok(()), |p| pump(p, stdout_file, None))
        .and_then(|_| err_pipe.map_or(Ok(()), |p| pump(p, stderr_file, Some(drained.clone()))));
    if let Err(e) = pumps {
        kill_and_reap(api, child);
        return fail(CreateUid::CmdWaitError, e.to_string());
    }
    if let Err((e, child)) = api.start_waiter(child) {
        kill_and_reap(api, child);
        return fail(CreateUid::CmdWaitError, e.to_string());
    }

    if let Err(e) = fs::write(dir.join("pgid"), format!("{pgid}\n")) {
        let _ = api.signal_group(pgid, libc::SIGKILL);
        return fail(CreateUid::WritePgidError, e.to_string());
    }

    ContainerRuntime {
        name: spec.name.clone(),
        create_uid: CreateUid::ContainerStarted,
        pgid: Some(pgid),
        started_at: Some(started_at),
        detail: None,
        dir,
        stderr_drained: drained,
        stderr_seen: false,
        last_get: None,
    }
}
