//! PersonaFlow engine: generates user personas from a repository's
//! documentation through a staged prompt chain, maps the repository's issues
//! onto those personas, and reports coverage.
//!
//! The crate is synchronous. Long-running work goes through [`jobs`], which
//! runs it on a worker pool and exposes polling snapshots.

pub mod analytics;
pub mod connector;
pub mod corpus;
pub mod error;
pub mod fixture;
pub mod http;
pub mod jobs;
pub mod mapping;
pub mod model;
pub mod parse;
pub mod personas;
pub mod prompts;
pub mod provider;
pub mod service;
pub mod store;

pub use error::{Error, ErrorClass, Result};
