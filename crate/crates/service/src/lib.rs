//! HTTP session service over the personaflow engine.

pub mod api;
pub mod store;

pub use api::{router, AppState};
pub use store::{SessionStore, StoreError};
