//! Command-line workflows and the /v1 HTTP service around `sceneformer-core`.

pub mod api;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod service;
