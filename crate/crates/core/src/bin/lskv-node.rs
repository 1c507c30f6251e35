use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lskv::api::{KeyMaterial, NodeConfig, NodeServer};

#[derive(Parser)]
#[command(name = "lskv-node", version, about = "Run one lskv replica")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    http_addr: Option<SocketAddr>,
    #[arg(long)]
    peer_addr: Option<SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    signature_interval_ms: Option<i64>,
    #[arg(long)]
    worker_threads: Option<usize>,
    /// Forget the stored term and vote. Only for bootstrapping a whole new
    /// cluster in an old data directory; a lone restarted node must keep them.
    #[arg(long)]
    fresh: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    let run = || -> lskv::Result<()> {
        let mut cfg = NodeConfig::load(&cli.config)?;
        cfg.apply_env()?;
        if let Some(a) = cli.http_addr {
            cfg.http_addr = a;
        }
        if let Some(a) = cli.peer_addr {
            cfg.peer_addr = a;
        }
        if let Some(d) = &cli.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(s) = cli.signature_interval_ms {
            cfg.signature_interval_ms = s;
        }
        if let Some(w) = cli.worker_threads {
            cfg.worker_threads = w;
        }
        cfg.validate()?;
        if cli.fresh {
            let hard = cfg.data_dir.join("hard_state.json");
            if hard.exists() {
                std::fs::remove_file(hard)?;
            }
        }
        let keys = KeyMaterial::load(&cfg)?;
        NodeServer::start(&cfg, keys)?.run_until_interrupted();
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "node failed");
            ExitCode::from(2)
        }
    }
}
