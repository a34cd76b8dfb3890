//! Networked two-player quiz sessions.
//!
//! [`session::GameSession`] is the synchronous core (also used by the CLI's
//! local mode); [`service::Service`] runs one per session behind a command
//! queue, and [`http`] exposes it over HTTP and WebSocket.

pub mod http;
pub mod service;
pub mod session;
pub mod wire;

pub use service::{Connection, Service, ServiceConfig, ServiceError, SessionRequest};
pub use session::{
    GameSession, HostLine, Outgoing, Recipient, SessionError, SessionSettings, Shared,
};
pub use wire::{ClientMessage, ErrorCode, ServerBody, ServerMessage, Snapshot};
