//! Long-running commands: the node agent and the control plane. Both stop
//! cleanly on SIGINT or SIGTERM.

use std::sync::Arc;
use std::time::Duration;

use jiriaf_agent::{start_node, AgentConfig, ExitReason, RealProcessApi};
use jiriaf_autoscaler::ReadinessGateConfig;
use jiriaf_control_plane::{start_control_plane, ControlPlaneConfig};
use tokio::signal::unix::{signal, SignalKind};

use crate::args::ControlPlaneArgs;
use crate::CliError;

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

async fn stop_signal() -> Result<(), CliError> {
    let mut term = signal(SignalKind::terminate())?;
    let mut int = signal(SignalKind::interrupt())?;
    tokio::select! {
        _ = term.recv() => {}
        _ = int.recv() => {}
    }
    Ok(())
}

pub fn run_agent() -> Result<(), CliError> {
    let cfg = AgentConfig::from_env().map_err(|e| CliError::Usage(e.to_string()))?;
    runtime()?.block_on(async move {
        let name = cfg.nodename.clone();
        let handle = start_node(cfg, Arc::new(RealProcessApi))
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        tracing::info!(node = %name, addr = %handle.addr(), "agent running");
        let stop = stop_signal();
        tokio::pin!(stop);
        loop {
            tokio::select! {
                r = &mut stop => {
                    r?;
                    handle.request_shutdown();
                    break;
                }
                _ = tokio::time::sleep(Duration::from_millis(200)) => {
                    if handle.is_finished() {
                        break;
                    }
                }
            }
        }
        let exit = handle.wait().await;
        match exit.reason {
            ExitReason::Walltime => tracing::info!(node = %name, after_s = exit.not_ready_after_s, "walltime reached"),
            ExitReason::Shutdown => tracing::info!(node = %name, "stopped"),
        }
        Ok(())
    })
}

pub fn control_plane_config(args: &ControlPlaneArgs) -> Result<ControlPlaneConfig, CliError> {
    let secs = |v: f64, what: &str| {
        Duration::try_from_secs_f64(v).map_err(|_| CliError::Usage(format!("{what} must be a non-negative number of seconds")))
    };
    let cfg = ControlPlaneConfig {
        listen: args.listen.clone(),
        data_dir: args.data_dir.clone(),
        reconcile_interval: secs(args.reconcile_interval_s, "reconcile interval")?,
        hpa_interval: secs(args.hpa_interval_s, "autoscaler interval")?,
        heartbeat_timeout_factor: args.heartbeat_timeout_factor,
        gate: ReadinessGateConfig {
            cpu_initialization_period_s: args.cpu_initialization_period_s,
            delay_of_initial_readiness_s: args.delay_of_initial_readiness_s,
            metric_window_s: args.metric_window_s,
        },
        stabilization_window_s: args.stabilization_window_s,
        scrape_interval_s: args.scrape_interval_s,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run_control_plane(args: &ControlPlaneArgs) -> Result<(), CliError> {
    let cfg = control_plane_config(args)?;
    runtime()?.block_on(async move {
        let handle = start_control_plane(cfg)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        // Printed once so scripts can find an ephemeral port.
        println!("listening on {}", handle.addr());
        stop_signal().await?;
        handle.shutdown().await;
        Ok(())
    })
}
