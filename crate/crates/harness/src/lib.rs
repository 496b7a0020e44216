//! Scenario runner, telemetry export, serial loopback and UI service for
//! the microrobot bench twin.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod protocol;
pub mod scenario;
pub mod service;
pub mod sim;
pub mod telemetry;

use std::path::Path;

use microtwin_core::coil_model::CoilError;
use microtwin_core::control::ControlError;
use microtwin_core::dynamics::DynamicsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("telemetry: {0}")]
    Telemetry(String),
    #[error("service: {0}")]
    Service(String),
    #[error(transparent)]
    Coil(#[from] CoilError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
