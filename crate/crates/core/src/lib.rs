//! Adaptive persona dialogue engine.
//!
//! Per user turn the engine detects new user persona attributes, matches each
//! one to a compatible agent attribute, periodically refines the whole agent
//! persona, and generates a reply grounded on the adapted persona. Agent
//! attributes that surface in a reply become inadaptable.
//!
//! Around the engine live the dataset builder (preference/SFT data), the
//! evaluation metrics and a self-play simulation harness.

pub mod adapter;
pub mod dataset;
pub mod detection;
pub mod embed_index;
pub mod engine;
pub mod events;
pub mod gateway;
pub mod golden;
pub mod metrics;
pub mod persona;
pub mod prompts;
pub mod refiner;
pub mod sim;

pub use gateway::{Gateway, GatewayError};
pub use persona::{AttrId, Persona, PersonaAttribute, PersonaCategory, Role};
