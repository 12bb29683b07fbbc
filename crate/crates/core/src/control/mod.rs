//! Control plane: wire messages, routing with blinding, and the WebSocket server that
//! ties the sensor, the audio client and the experimenter console together.

mod client;
mod message;
mod server;
mod session;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::ControlClient;
pub use message::{Body, ClientEffect, EpisodeReveal, Message};
pub use server::{bind, serve, ServerOptions};
pub use session::{ConnId, ControlSession, Delivery, SessionConfig, SessionDescriptor};

/// Connection role declared in `hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Audio client that plays the perturbations.
    Client,
    Sensor,
    Console,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "client",
            Role::Sensor => "sensor",
            Role::Console => "console",
        })
    }
}

impl FromStr for Role {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "client" => Ok(Role::Client),
            "sensor" => Ok(Role::Sensor),
            "console" => Ok(Role::Console),
            other => Err(ControlError::Protocol(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("websocket error: {0}")]
    WebSocket(Box<tungstenite::Error>),
    #[error(transparent)]
    Scheduler(#[from] crate::scheduler::SchedulerError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<tungstenite::Error> for ControlError {
    fn from(e: tungstenite::Error) -> Self {
        ControlError::WebSocket(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, ControlError>;
