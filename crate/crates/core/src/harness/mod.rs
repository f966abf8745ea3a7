//! Scenario files, the seeded end-to-end event loop, reports and the
//! replication of the published cost tables.

mod replicate;
mod report;
mod run;
mod scenario;

pub use replicate::{replicate_tables, Replication, ReplicationRow, REPLICATION_COMMAND, REPLICATION_SCALES};
pub use report::*;
pub use run::{read_receipts, recompute_totals, run_scenario, RunLogs, RunOutput};
pub use scenario::*;

use thiserror::Error;

use crate::codec::CodecError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}
