#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use tower::ServiceExt;

use sceneformer_cli::service::{router, AppState, Models, ServiceConfig};
use sceneformer_core::assembly::Catalog;
use sceneformer_core::model::set::ModelSet;
use sceneformer_core::model::{Conditioning, TransformerConfig};
use sceneformer_core::scene::{make_synthetic_dataset, Dataset, SyntheticConfig};
use sceneformer_core::text::{description_vocabulary, EmbeddingTable, Templates};

pub const TEXT_DIM: usize = 8;

pub fn dataset(n: usize, seed: u64) -> Dataset {
    make_synthetic_dataset(&SyntheticConfig::default(), n, seed).unwrap()
}

/// Untrained models small enough for request-level tests.
pub fn tiny_set(mode: Conditioning, seed: u64) -> ModelSet {
    let table = fixture().table;
    let n = table.len();
    ModelSet::init(table, 6.0, seed, |k| TransformerConfig {
        embed_dim: 16,
        ffn_dim: 16,
        n_heads: 2,
        n_blocks: 1,
        floor_resolution: 32,
        encoder_channels: [4, 8, 16],
        text_dim: TEXT_DIM,
        max_text_len: 12,
        ..TransformerConfig::desk(k, n, mode)
    })
    .unwrap()
}

pub fn embeddings() -> EmbeddingTable {
    let table = fixture().table;
    EmbeddingTable::synthetic(&description_vocabulary(&table, Templates::bundled()), TEXT_DIM, 7).unwrap()
}

pub fn state(sets: Vec<ModelSet>, workers: usize) -> Arc<AppState> {
    let models = Models::new(sets, Some(embeddings()), Catalog::bundled()).unwrap();
    AppState::new(models, ServiceConfig { workers, ..ServiceConfig::default() })
}

pub async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub fn app(state: Arc<AppState>) -> Router {
    router(state)
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

/// The dataset whose category table the tiny sets use.
pub fn fixture() -> Dataset {
    dataset(8, 3)
}
