//! Indoor scene synthesis with chained autoregressive transformers.
//!
//! Scenes are turned into eight quantized token sequences (category,
//! location, orientation and dimensions). Four property models predict those
//! tokens one object at a time, optionally conditioned on a floor-plan mask or
//! a text description, and an assembly stage places catalog boxes without
//! collisions.

pub mod assembly;
pub mod codec;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod scene;
pub mod text;

pub use error::{Error, Result};
