//! HTTP service for live comparative-judgement studies.
//!
//! State is a fold over an append-only JSON-lines event log; restarting the
//! service replays the log.

pub mod api;
pub mod app;
pub mod error;
pub mod events;
pub mod fit;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use app::{App, CreateStudy, ServiceConfig};
pub use error::{Result, ServiceError};
pub use events::Event;
pub use state::ServiceState;

/// Opens the data directory, resumes unfinished fits and serves until
/// `shutdown` resolves.
pub async fn serve(
    config: ServiceConfig,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let app = App::open(config)?;
    for job in app.pending_jobs() {
        log::info!("resuming fit {}", job.fit);
        app.spawn_job(job);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::clone(&app)))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
