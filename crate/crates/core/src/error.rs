use thiserror::Error;

use crate::kernel::SimTime;

/// Faults raised while building or running a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, requested={at}")]
    ScheduleInPast { now: SimTime, at: SimTime },

    #[error("{component}: {message}")]
    Fault { component: String, message: String },

    #[error("run aborted at t={at}s: {source}")]
    Aborted {
        at: SimTime,
        #[source]
        source: Box<SimError>,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
}

impl SimError {
    pub fn fault(component: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Fault {
            component: component.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
