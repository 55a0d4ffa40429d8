//! The `jiriaf` command. Client verbs are stateless: each invocation reads
//! from the control plane or the workflow store and prints the result.

pub mod args;
pub mod client;
pub mod daemon;
pub mod render;

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use args::{Cli, Command, LaunchArgs, Output, TwinCommand};
use client::{escape, Client};
use jiriaf_core::api::{ApplyOutcome, ApplyResult, DeploymentView, NodeView, PodView, POD_CPU_METRIC};
use jiriaf_core::parse_manifest;
use jiriaf_launcher::{
    default_store_path, render_workflows, AgentCommand, DeleteOutcome, Launcher, LauncherConfig, LauncherError,
    WorkflowSpec, WorkflowState,
};
use jiriaf_metrics::MetricSample;
use jiriaf_twin::{run_experiment, Control, TwinConfig, TwinTables};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or unparsable input; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// The server rejected or failed the request; exit code 1.
    #[error("{0}")]
    Server(String),
    /// A local failure; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Server(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<LauncherError> for CliError {
    fn from(e: LauncherError) -> Self {
        match e {
            LauncherError::SpecParse { .. } | LauncherError::MissingField(_) | LauncherError::InvalidSpec(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(out: &mut dyn Write, v: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Runs one parsed invocation, writing its output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Apply { file } => apply(&cli.server, &file, out),
        Command::Get { kind } => get(&cli.server, cli.format, cli.store.as_deref(), &kind, out),
        Command::Delete { kind, name } => delete(&cli.server, &kind, &name, out),
        Command::Logs { pod, container, stderr } => logs(&cli.server, &pod, container.as_deref(), stderr, out),
        Command::Top { kind } => top(&cli.server, cli.format, &kind, out),
        Command::AddWf { file, launch } => add_wf(&cli.server, cli.store.as_deref(), &file, &launch, out),
        Command::GetWf => get_wf(cli.format, cli.store.as_deref(), out),
        Command::DeleteWf { id, grace_s } => delete_wf(cli.store.as_deref(), &id, grace_s, out),
        Command::Twin { command } => twin(command, out),
        Command::Agent => daemon::run_agent(),
        Command::ControlPlane(args) => daemon::run_control_plane(&args),
    }
}

/// Parses locally first so syntax errors and invalid specs never reach
/// the server.
fn apply(server: &str, file: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_file(file)?;
    let manifests = parse_manifest(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let mut problems = Vec::new();
    for m in &manifests {
        for v in m.validate() {
            problems.push(format!("{}/{}: {v}", m.kind_str(), m.name()));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Usage(problems.join("\n")));
    }
    let results: Vec<ApplyResult> = Client::new(server)?.post_text("/apply", text)?;
    let mut rejected = 0;
    for r in &results {
        writeln!(out, "{r}")?;
        if matches!(r.outcome, ApplyOutcome::Invalid(_)) {
            rejected += 1;
        }
    }
    if rejected > 0 {
        return Err(CliError::Server(format!("{rejected} object(s) rejected")));
    }
    Ok(())
}

fn canonical_kind(kind: &str) -> Option<&'static str> {
    Some(match kind.to_ascii_lowercase().as_str() {
        "node" | "nodes" | "no" => "nodes",
        "pod" | "pods" | "po" => "pods",
        "deployment" | "deployments" | "deploy" => "deployments",
        "workflow" | "workflows" | "wf" => "workflows",
        "hpa" | "horizontalpodautoscaler" | "horizontalpodautoscalers" | "autoscaler" | "autoscalers" => "autoscalers",
        "configmap" | "configmaps" | "cm" => "configmaps",
        _ => return None,
    })
}

fn unknown_kind(kind: &str) -> CliError {
    CliError::Usage(format!("unknown kind {kind:?}"))
}

fn get(server: &str, output: Output, store: Option<&Path>, kind: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let kind = canonical_kind(kind).ok_or_else(|| unknown_kind(kind))?;
    if kind == "workflows" {
        return get_wf(output, store, out);
    }
    let client = Client::new(server)?;
    match (kind, output) {
        ("nodes", Output::Table) => write!(out, "{}", render::nodes(&client.get::<Vec<NodeView>>("/nodes")?))?,
        ("nodes", Output::Json) => json(out, &client.get::<Vec<NodeView>>("/nodes")?)?,
        ("pods", Output::Table) => write!(out, "{}", render::pods(&client.get::<Vec<PodView>>("/pods")?))?,
        ("pods", Output::Json) => json(out, &client.get::<Vec<PodView>>("/pods")?)?,
        ("deployments", Output::Table) => {
            write!(out, "{}", render::deployments(&client.get::<Vec<DeploymentView>>("/deployments")?))?
        }
        ("deployments", Output::Json) => json(out, &client.get::<Vec<DeploymentView>>("/deployments")?)?,
        ("autoscalers", _) => json(out, &client.get::<serde_json::Value>("/autoscalers")?)?,
        _ => return Err(CliError::Usage(format!("cannot list {kind}"))),
    }
    Ok(())
}

fn delete(server: &str, kind: &str, name: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let (path, label) = match canonical_kind(kind).ok_or_else(|| unknown_kind(kind))? {
        "pods" => ("pods", "pod"),
        "deployments" => ("deployments", "deployment"),
        "autoscalers" => ("autoscalers", "horizontalpodautoscaler"),
        "configmaps" => ("configmaps", "configmap"),
        other => return Err(CliError::Usage(format!("cannot delete {other} here"))),
    };
    Client::new(server)?.delete(&format!("/{path}/{}", escape(name)))?;
    writeln!(out, "{label}/{name} deleted")?;
    Ok(())
}

fn logs(server: &str, pod: &str, container: Option<&str>, stderr: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut path = format!("/pods/{}/logs?stream={}", escape(pod), if stderr { "stderr" } else { "stdout" });
    if let Some(c) = container {
        path.push_str(&format!("&container={}", escape(c)));
    }
    let body = Client::new(server)?.get_text(&path)?;
    out.write_all(body.as_bytes())?;
    Ok(())
}

fn top(server: &str, output: Output, kind: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if canonical_kind(kind) != Some("pods") {
        return Err(CliError::Usage(format!("top supports pods, not {kind:?}")));
    }
    let client = Client::new(server)?;
    let pods: Vec<PodView> = client.get("/pods")?;
    let samples: Vec<MetricSample> = client.get(&format!("/metrics/query?metric={POD_CPU_METRIC}"))?;
    match output {
        Output::Table => write!(out, "{}", render::top_pods(&pods, &samples))?,
        Output::Json => json(out, &samples)?,
    }
    Ok(())
}

fn store_path(store: Option<&Path>) -> std::path::PathBuf {
    store
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_store_path(|k| std::env::var(k).ok()))
}

fn launcher(store: Option<&Path>, launch: Option<&LaunchArgs>) -> Result<Launcher, CliError> {
    let agent = match launch.and_then(|l| l.agent_bin.clone()) {
        Some(program) => AgentCommand { program, args: vec![] },
        None => AgentCommand {
            program: std::env::current_exe()?,
            args: vec!["agent".into()],
        },
    };
    let mut cfg = LauncherConfig::new(store_path(store), agent);
    if let Some(l) = launch {
        cfg.work_root = l.work_root.clone();
        cfg.stagger = seconds(l.stagger_s, "stagger")?;
    }
    Ok(Launcher::new(cfg))
}

fn seconds(v: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v).map_err(|_| CliError::Usage(format!("{what} must be a non-negative number of seconds")))
}

fn add_wf(server: &str, store: Option<&Path>, file: &Path, launch: &LaunchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_file(file)?;
    let default_cp = server.trim_start_matches("http://").trim_end_matches('/');
    let spec = WorkflowSpec::from_env_list(&text, Some(default_cp))
        .map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let rec = launcher(store, Some(launch))?.add_wf(spec)?;
    writeln!(out, "workflow/{} {} ({} agents)", rec.id, rec.state.as_str(), rec.processes().len())?;
    if rec.state == WorkflowState::Failed {
        for a in rec.agents.iter().filter(|a| a.error.is_some()) {
            writeln!(out, "  {}: {}", a.nodename, a.error.as_deref().unwrap_or_default())?;
        }
        return Err(CliError::Runtime(format!("workflow {} failed to start", rec.id)));
    }
    Ok(())
}

fn get_wf(output: Output, store: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let records = launcher(store, None)?.get_wf()?;
    match output {
        Output::Table => write!(out, "{}", render_workflows(&records))?,
        Output::Json => json(out, &records)?,
    }
    Ok(())
}

fn delete_wf(store: Option<&Path>, id: &str, grace_s: f64, out: &mut dyn Write) -> Result<(), CliError> {
    let mut l = launcher(store, None)?;
    let mut cfg = l.config().clone();
    cfg.terminate_grace = seconds(grace_s, "grace")?;
    l = Launcher::new(cfg);
    match l.delete_wf(id)? {
        DeleteOutcome::Deleted { agents, killed } => {
            write!(out, "workflow/{id} deleted ({agents} agents stopped")?;
            if killed > 0 {
                write!(out, ", {killed} killed")?;
            }
            writeln!(out, ")")?;
        }
        DeleteOutcome::AlreadyFinished(state) => writeln!(out, "workflow/{id} already {}", state.as_str())?,
    }
    Ok(())
}

fn twin_config(path: Option<&Path>) -> Result<TwinConfig, CliError> {
    let cfg = match path {
        Some(p) => TwinConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => TwinConfig::default(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn twin(cmd: TwinCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        TwinCommand::Run { config, horizon, output } => {
            let mut cfg = twin_config(config.as_deref())?;
            if let Some(h) = horizon {
                cfg.horizon_t = h;
            }
            let log = run_experiment(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            let csv = log.to_csv_string().map_err(|e| CliError::Runtime(e.to_string()))?;
            match output {
                Some(p) => std::fs::write(&p, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
                None => out.write_all(csv.as_bytes())?,
            }
        }
        TwinCommand::Tables { config } => {
            twin_config(config.as_deref())?;
            write!(out, "{}", tables_csv(&TwinTables::builtin()))?;
        }
    }
    Ok(())
}

/// Both calibration tables as one CSV, 16-thread rows first.
pub fn tables_csv(tables: &TwinTables) -> String {
    let mut s = String::from("threads,state,lambda_hz,mu_hz,proc_units,obs_lq,calc_lq\n");
    for control in [Control::Threads16, Control::Threads32] {
        for r in tables.rows(control) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                control.threads(),
                r.state,
                r.lambda_hz,
                r.mu_hz,
                r.proc_units,
                r.obs_lq,
                r.calc_lq
            ));
        }
    }
    s
}
