//! HTTP service, event-log storage and command-line tools for the adaptive
//! practice engine in `adapt-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod store;

pub use api::{router, Service, ServiceConfig};
pub use error::ApiError;
