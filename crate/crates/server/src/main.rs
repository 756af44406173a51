use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use npds_server::{serve, spawn_scheduler, Pds, PdsConfig};

/// Personal EEG data store.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let result = async {
        let config = PdsConfig::from_file(&args.config)?;
        let listen = config.listen;
        let pds = Pds::open(config)?;
        let listener = tokio::net::TcpListener::bind(listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        let _scheduler = spawn_scheduler(pds.clone());
        serve(listener, pds, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok::<_, Box<dyn std::error::Error>>(())
    }
    .await;
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("npds-server: {e}");
            ExitCode::FAILURE
        }
    }
}
