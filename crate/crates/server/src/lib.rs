//! HTTP/JSON API over a crowdsearch snapshot, and the command-line tool.

pub mod api;
pub mod cli;
pub mod config;
pub mod polygon;
pub mod state;

pub use api::router;
pub use state::{AppState, Served};
