use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use seal_server::{serve, AppState, ServiceArgs};

#[derive(Debug, Parser)]
#[command(
    name = "seal-server",
    about = "Serve conversational question answering over a knowledge graph"
)]
struct Args {
    #[command(flatten)]
    service: ServiceArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let cfg = args.service.to_config()?;
    let state = AppState::from_config(&cfg).context("building service state")?;
    let listener = tokio::net::TcpListener::bind(args.bind)
        .await
        .with_context(|| format!("binding {}", args.bind))?;
    tracing::info!(addr = %listener.local_addr()?, gateway = %state.gateway_name, "listening");
    tokio::select! {
        r = serve(listener, Arc::new(state)) => r?,
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}
