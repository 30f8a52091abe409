//! Gateway queue-management simulator with two interchangeable AQM
//! policies: classic RED, which smooths the queue length with an EWMA, and
//! mRED, which takes its average queue size from a birth-death master
//! equation solved on every packet arrival.

pub mod aqm;
pub mod config;
pub mod error;
pub mod kernel;
pub mod report;
pub mod sim;

pub use aqm::{Gateway, MarkingParams, RedParams, Verdict};
pub use config::{parse_config, RunManifest};
pub use error::{Error, Result};
pub use kernel::{KernelSettings, MasterEquation, ProbabilityVector, RateTable};
pub use sim::{run, GatewayKind, SimConfig, SimStats, StepRecord};
