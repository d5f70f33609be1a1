//! Cell-level discrete-event simulation of TCP over ATM ABR and UBR.

pub mod aal;
pub mod abr;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod metrics;
pub mod network;
pub mod tcp;
pub mod topology;
pub mod ubr;

pub use error::{Result, SimError};
pub use kernel::SimTime;
pub use metrics::RunMetrics;
pub use network::simulate;
pub use topology::NSourceConfig;
