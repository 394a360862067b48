//! Serves a simulated asset over the gateway protocol until killed.

use std::collections::BTreeMap;

use anyhow::{anyhow, Result};
use clap::Parser;

use twin_core::gateway::sim::{build_model, AssetServer};

#[derive(Parser)]
#[command(
    name = "twin-asset",
    version,
    about = "Simulated asset for the twin runtime"
)]
struct Args {
    /// Address to listen on; port 0 picks a free one.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Asset model.
    #[arg(long, default_value = "tank")]
    model: String,
    /// Simulated time per step, in milliseconds.
    #[arg(long, default_value_t = 100)]
    step_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model parameter, e.g. `inflow=2.5`. Repeatable.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
    /// Advance only on `step` requests instead of in real time.
    #[arg(long)]
    manual: bool,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut params = BTreeMap::new();
    for p in &args.params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| anyhow!("--param {p:?} is not K=V"))?;
        params.insert(k.to_owned(), v.to_owned());
    }
    let model = build_model(&args.model, &params, args.seed).map_err(|e| anyhow!(e))?;
    let mut server = AssetServer::spawn(&args.listen, model, args.step_ms)?;
    if !args.manual {
        server.start_clock();
    }
    println!("{}", server.endpoint());
    log::info!("serving {} asset on {}", args.model, server.addr());
    loop {
        std::thread::park();
    }
}
