//! Headless scripted clients for exercising a hub without any phones.

mod client;
mod live;
mod report;
mod scenario;
mod sim;

use std::path::Path;

use thiserror::Error;

pub use client::{ClientLog, ClientModel, SentRecord, SubChange, SubOp};
pub use live::{connect, run_real, ClientSocket, Endpoint, Io};
pub use report::{
    build_report, without_playhead, CapabilityFailure, Convergence, DeliveryRow, HubErrorRecord,
    HubSide, RttStats, RunOutcome, RunReport, UnitReport,
};
pub use scenario::{
    load_scenario, parse_scenario, profile, Action, ClientSpec, HubSettings, Mode, PublishKind,
    Scenario, ScenarioError, Step, TlsSettings, PROFILES,
};
pub use sim::run_virtual;

use crate::server::ServerError;
use crate::tls::TlsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("hub unreachable: {0}")]
    Unreachable(String),
    #[error("bad hub URL {0:?}")]
    BadUrl(String),
    #[error("a wss hub needs a pinned certificate (hub.pin_cert)")]
    MissingPin,
    #[error("TLS: {0}")]
    Tls(String),
    #[error(transparent)]
    Certificate(#[from] TlsError),
    #[error(transparent)]
    Hub(#[from] ServerError),
    #[error("client task failed: {0}")]
    Client(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs a parsed scenario in its own mode. Real-mode runs start a private
/// tokio runtime, so call this outside of one (or use [`run_real`]).
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, HarnessError> {
    match scenario.mode {
        Mode::Virtual => Ok(run_virtual(scenario)),
        Mode::Real => tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?
            .block_on(run_real(scenario)),
    }
}

/// Loads and runs a scenario file, optionally overriding its seed.
pub fn simulate(path: &Path, seed: Option<u64>) -> Result<RunReport, HarnessError> {
    let mut scenario = load_scenario(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    Ok(run_scenario(&scenario)?.report)
}
