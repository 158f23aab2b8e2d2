//! HTTP annotation service for a live feedback-propagation session.
//!
//! A [`Session`] owns the annotation log, the current propagated score
//! snapshot and the cycle state of the ablation protocol; [`router`] exposes
//! it over HTTP/JSON. The log is append-only JSONL and is replayed on start,
//! so restarting with the same graph, seed and log restores the session.

pub mod api;
pub mod session;

pub use api::{router, serve, API_VERSION};
pub use session::{LogRecord, Session, SessionError, SessionOptions};
