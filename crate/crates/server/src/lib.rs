//! Engine plumbing shared by the `cream` CLI and the `/v1` HTTP service:
//! layered configuration, the append-only run log, request handlers and the
//! router.

pub mod config;
pub mod engine;
pub mod http;
pub mod runlog;

pub use config::{ConfigOverrides, EngineConfig};
pub use engine::{ApiError, Engine, LoadedScorer};
pub use runlog::{RunKind, RunLog, RunRecord, RunStatus};
