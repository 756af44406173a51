//! Personal data store service: keeps raw EEG recordings on the owner's
//! side and serves consented, scoped answers over HTTP.

pub mod audit;
pub mod clock;
pub mod config;
pub mod error;
pub mod grants;
pub mod http;
pub mod service;
pub mod store;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

pub use config::PdsConfig;
pub use error::{ApiError, ErrorBody, ErrorCode};
pub use http::router;
pub use service::Pds;

/// Runs a sweep every `schedule_tick_seconds`. Returns `None` when the
/// scheduler is disabled.
pub fn spawn_scheduler(pds: Arc<Pds>) -> Option<tokio::task::JoinHandle<()>> {
    let tick = pds.config().schedule_tick_seconds;
    if tick == 0 {
        return None;
    }
    Some(tokio::spawn(async move {
        let mut interval = tokio::time::interval(Duration::from_secs(tick));
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let pds = pds.clone();
            let report = tokio::task::spawn_blocking(move || pds.run_compute()).await;
            match report {
                Ok(r) if r.failed > 0 => eprintln!("sweep: {} jobs, {} failed", r.jobs, r.failed),
                Ok(_) => {}
                Err(e) => eprintln!("sweep panicked: {e}"),
            }
        }
    }))
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    pds: Arc<Pds>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(pds)).with_graceful_shutdown(shutdown).await
}
