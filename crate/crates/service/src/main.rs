//! Standalone server binary: load a graph per the config file and flags,
//! then serve the JSON API.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;

use kgqa_core::config::{Config, ConfigLayer};

#[derive(Debug, Parser)]
#[command(name = "kgqa-service", about = "HTTP service for the KGQA engine")]
struct Args {
    /// Address to bind, e.g. 127.0.0.1:8080 (port 0 picks one).
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// TOML config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph triples TSV.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Entity labels TSV.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Entity aliases TSV.
    #[arg(long)]
    aliases: Option<PathBuf>,
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    let file = match &args.config {
        Some(p) => match std::fs::read_to_string(p).map_err(kgqa_core::Error::from) {
            Ok(text) => match ConfigLayer::from_toml(&text) {
                Ok(layer) => Some(layer),
                Err(e) => exit_with(e),
            },
            Err(e) => exit_with(e),
        },
        None => None,
    };
    let overrides = ConfigLayer {
        graph: args.graph,
        labels: args.labels,
        aliases: args.aliases,
        ..ConfigLayer::default()
    };
    let config = Config::resolve(file.as_ref(), &overrides);
    let state = match kgqa_service::load_state(config) {
        Ok(s) => Arc::new(s),
        Err(e) => exit_with(e),
    };
    let (addr, handle) = match kgqa_service::spawn(state, &args.addr).await {
        Ok(v) => v,
        Err(e) => exit_with(e),
    };
    println!("listening on {addr}");
    let _ = handle.await;
}

fn exit_with(e: kgqa_core::Error) -> ! {
    eprintln!("error: {e}");
    std::process::exit(2);
}
