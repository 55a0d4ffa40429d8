#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub const BIN: &str = env!("CARGO_BIN_EXE_jiriaf");

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// A `jiriaf control-plane` child process on an ephemeral port.
pub struct ControlPlane {
    child: Child,
    pub addr: String,
}

impl ControlPlane {
    pub fn start(data_dir: Option<&Path>, extra: &[&str]) -> Self {
        let mut cmd = Command::new(BIN);
        cmd.args(["control-plane", "--listen", "127.0.0.1:0", "--reconcile-interval-s", "0.2"])
            .args(["--heartbeat-timeout-factor", "3"])
            .args(extra)
            .env("JIRIAF_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(d) = data_dir {
            cmd.arg("--data-dir").arg(d);
        }
        let mut child = cmd.spawn().expect("spawn control plane");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .expect("read listen line");
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_string();
        ControlPlane { child, addr }
    }

    /// SIGTERM, then wait for exit.
    pub fn stop(mut self) {
        self.terminate();
    }

    fn terminate(&mut self) {
        unsafe {
            libc::kill(self.child.id() as i32, libc::SIGTERM);
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ControlPlane {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.terminate();
        }
    }
}

/// Runs `jiriaf` with `args` and `envs` and captures the result.
pub fn jiriaf(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env("JIRIAF_LOG", "warn").env_remove("JIRIAF_SERVER").env_remove("JIRIAF_STORE");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run jiriaf")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Polls `f` every 200 ms until it returns `Some` or `timeout` passes.
pub fn eventually<T>(timeout: Duration, mut f: impl FnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(v) = f() {
            return Some(v);
        }
        if Instant::now() >= deadline {
            return None;
        }
        std::thread::sleep(Duration::from_millis(200));
    }
}

/// Rows of a table with the header dropped, split on whitespace.
pub fn rows(table: &str) -> Vec<Vec<String>> {
    table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

pub fn write_exec(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
}

/// A `stress` stand-in: prints the real tool's banner, then runs `--cpu`
/// busy loops for `--timeout` seconds.
pub fn install_fake_stress(bin_dir: &Path) {
    std::fs::create_dir_all(bin_dir).unwrap();
    write_exec(
        &bin_dir.join("stress"),
        r#"#!/bin/bash
timeout=0; cpu=1
while [ $# -gt 0 ]; do
  case "$1" in
    --timeout) timeout=$2; shift 2 ;;
    --cpu) cpu=$2; shift 2 ;;
    *) shift ;;
  esac
done
echo "stress: info: [$$] dispatching hogs: $cpu cpu, 0 io, 0 vm, 0 hdd"
end=$((SECONDS + timeout))
for _ in $(seq "$cpu"); do
  ( while [ $SECONDS -lt $end ]; do :; done ) &
done
wait
echo "stress: info: [$$] successful run completed in ${timeout}s"
"#,
    );
}

/// PATH with `dir` in front.
pub fn path_with(dir: &Path) -> String {
    format!("{}:{}", dir.display(), std::env::var("PATH").unwrap_or_default())
}
