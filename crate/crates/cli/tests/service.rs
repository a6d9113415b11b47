mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use serde_json::json;
use tower::ServiceExt;

use common::*;
use sceneformer_cli::api::{CompleteResponse, FloorFile, GenerateResponse, HealthResponse, Mode, RasterizeResponse};
use sceneformer_cli::service::{AppState, Models, ServiceConfig};
use sceneformer_core::assembly::Catalog;
use sceneformer_core::model::Conditioning;
use sceneformer_core::scene::io::SceneFile;

fn scene_file(i: usize) -> SceneFile {
    let d = fixture();
    SceneFile::from_scene(&d.scenes[i], &d.table)
}

fn floor_json(i: usize) -> serde_json::Value {
    serde_json::to_value(FloorFile::from_scene_file(&scene_file(i))).unwrap()
}

fn shape_and_text() -> Vec<sceneformer_core::model::set::ModelSet> {
    vec![tiny_set(Conditioning::Shape, 1), tiny_set(Conditioning::Text, 2)]
}

#[tokio::test]
async fn health_lists_loaded_modes() {
    let app = app(state(shape_and_text(), 2));
    let (status, body) = call(&app, "GET", "/v1/health", "").await;
    assert_eq!(status, StatusCode::OK);
    let h: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.loaded_modes, vec![Mode::Shape, Mode::Text]);
}

#[tokio::test]
async fn generate_is_byte_identical_for_a_seed() {
    let app = app(state(shape_and_text(), 2));
    let body = json!({"mode": "shape", "floor": floor_json(0), "seed": 42}).to_string();
    let (s1, b1) = call(&app, "POST", "/v1/generate", &body).await;
    let (s2, b2) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(s1, StatusCode::OK, "{}", String::from_utf8_lossy(&b1));
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(b1, b2);
    let r: GenerateResponse = serde_json::from_slice(&b1).unwrap();
    assert_eq!(r.seed, 42);
    let (_, b3) = call(&app, "POST", "/v1/generate", &json!({"mode": "shape", "floor": floor_json(0), "seed": 43}).to_string()).await;
    assert_ne!(b1, b3);
}

#[tokio::test]
async fn missing_seed_is_drawn_and_reported() {
    let app = app(state(shape_and_text(), 2));
    let (status, body) = call(&app, "POST", "/v1/generate", &json!({"mode": "shape", "floor": floor_json(1)}).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let r: GenerateResponse = serde_json::from_slice(&body).unwrap();
    let again = json!({"mode": "shape", "floor": floor_json(1), "seed": r.seed}).to_string();
    let (_, replay) = call(&app, "POST", "/v1/generate", &again).await;
    assert_eq!(body, replay);
}

#[tokio::test]
async fn text_generation_uses_the_embedding_table() {
    let app = app(state(shape_and_text(), 2));
    let body = json!({"mode": "text", "text": "there is a bed and a stand in the room.", "seed": 5}).to_string();
    let (status, b) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let r: GenerateResponse = serde_json::from_slice(&b).unwrap();
    assert!(r.scene.objects.len() >= r.placed_objects.len());
}

#[tokio::test]
async fn complete_with_zero_new_objects_is_identity() {
    let app = app(state(shape_and_text(), 2));
    let scene = scene_file(2);
    let body = json!({"scene": scene, "mode": "shape", "max_new": 0, "seed": 9}).to_string();
    let (status, b) = call(&app, "POST", "/v1/complete", &body).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let r: CompleteResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(r.scene, scene);
    assert!(r.added_indices.is_empty());
}

#[tokio::test]
async fn complete_marks_added_objects() {
    let app = app(state(shape_and_text(), 2));
    let scene = scene_file(3);
    let given = scene.objects.len();
    let body = json!({"scene": scene, "mode": "shape", "max_new": 2, "seed": 1}).to_string();
    let (status, b) = call(&app, "POST", "/v1/complete", &body).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let r: CompleteResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(&r.scene.objects[..given], &scene.objects[..]);
    assert!(r.added_indices.len() <= 2);
    assert_eq!(r.added_indices, (given..r.scene.objects.len()).collect::<Vec<_>>());
}

#[tokio::test]
async fn concurrent_requests_match_sequential_ones() {
    let app = app(state(shape_and_text(), 8));
    let bodies: Vec<String> =
        (0..8).map(|i| json!({"mode": "shape", "floor": floor_json(i % 4), "seed": 100 + i}).to_string()).collect();
    let mut expected = Vec::new();
    for b in &bodies {
        expected.push(call(&app, "POST", "/v1/generate", b).await);
    }
    let handles: Vec<_> = bodies
        .iter()
        .cloned()
        .map(|b| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/v1/generate", &b).await })
        })
        .collect();
    for (h, want) in handles.into_iter().zip(expected) {
        let got = h.await.unwrap();
        assert_eq!(got.0, StatusCode::OK);
        assert_eq!(got, want);
    }
}

#[tokio::test]
async fn schema_errors_name_the_field() {
    let app = app(state(shape_and_text(), 2));
    let (status, b) = call(&app, "POST", "/v1/generate", r#"{"mode": "shape", "floor": {"polygon": [[0, 0]], "colour": 1}}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let e = json(&b);
    assert_eq!(e["kind"], "schema");
    assert!(e["path"].as_str().unwrap().starts_with("floor"), "{e}");

    let (status, b) = call(&app, "POST", "/v1/generate", r#"{"mode": "sideways"}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json(&b)["path"], "mode");

    let (status, _) = call(&app, "POST", "/v1/generate", "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unloaded_mode_is_a_conflict() {
    let app = app(state(vec![tiny_set(Conditioning::Shape, 1)], 2));
    let (status, b) = call(&app, "POST", "/v1/generate", &json!({"mode": "text", "text": "a bed."}).to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json(&b)["kind"], "mode_mismatch");
    let (status, _) = call(&app, "POST", "/v1/generate", &json!({"mode": "unconditional"}).to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn text_condition_in_shape_mode_is_a_conflict() {
    let app = app(state(shape_and_text(), 2));
    let body = json!({"scene": scene_file(0), "mode": "shape", "condition": {"text": "a bed."}, "max_new": 1}).to_string();
    let (status, _) = call(&app, "POST", "/v1/complete", &body).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn text_mode_without_embeddings_is_a_conflict() {
    let models = Models::new(vec![tiny_set(Conditioning::Text, 1)], None, Catalog::bundled()).unwrap();
    let app = app(AppState::new(models, ServiceConfig::default()));
    let (status, _) = call(&app, "POST", "/v1/generate", &json!({"mode": "text", "text": "a bed.", "seed": 1}).to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn bad_geometry_is_unprocessable() {
    let app = app(state(shape_and_text(), 2));
    let line = json!({"polygon": [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]});
    let (status, b) = call(&app, "POST", "/v1/generate", &json!({"mode": "shape", "floor": line, "seed": 1}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&b)["kind"], "degenerate_polygon");

    let (status, _) = call(&app, "POST", "/v1/rasterize", &line.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut unknown = floor_json(0);
    unknown["openings"] = json!([{"category": "hammock", "center": [1.0, 1.0, 0.0], "theta": 0.0, "dims": [1.0, 1.0, 1.0]}]);
    let (status, b) = call(&app, "POST", "/v1/generate", &json!({"mode": "shape", "floor": unknown, "seed": 1}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&b)["kind"], "unknown_category");

    let (status, _) = call(&app, "POST", "/v1/generate", &json!({"mode": "shape", "seed": 1}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unsorted_partial_scene_is_unprocessable() {
    let app = app(state(shape_and_text(), 2));
    let mut scene = scene_file(0);
    scene.objects.reverse();
    let (status, b) = call(&app, "POST", "/v1/complete", &json!({"scene": scene, "mode": "shape", "seed": 1}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&b)["kind"], "unsorted");
}

#[tokio::test]
async fn saturated_workers_answer_503() {
    let st = state(shape_and_text(), 1);
    let app = app(st.clone());
    let held = st.reserve_worker().expect("a free worker");
    let body = json!({"mode": "shape", "floor": floor_json(0), "seed": 1}).to_string();
    let (status, b) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(json(&b)["kind"], "busy");
    drop(held);
    let (status, _) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn rasterize_fills_the_polygon() {
    let app = app(state(shape_and_text(), 2));
    let square = json!({"polygon": [[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [0.0, 3.0]], "resolution": 32});
    let (status, b) = call(&app, "POST", "/v1/rasterize", &square.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let r: RasterizeResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(r.resolution, 32);
    let mask = base64::engine::general_purpose::STANDARD.decode(r.mask_base64).unwrap();
    assert_eq!(mask.len(), 32 * 32);
    // A 3 m square in a 6 m extent covers the lower-left quarter.
    for (i, &p) in mask.iter().enumerate() {
        let (row, col) = (i / 32, i % 32);
        assert_eq!(p == 255, row < 16 && col < 16, "pixel ({row}, {col})");
    }
    let (status, _) = call(&app, "POST", "/v1/rasterize", &json!({"polygon": square["polygon"], "resolution": 0}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn describe_returns_sentences_and_mentions() {
    let app = app(state(shape_and_text(), 2));
    let (status, b) = call(&app, "POST", "/v1/describe", &json!({"scene": scene_file(0), "seed": 3}).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let r = json(&b);
    assert_eq!(r["seed"], 3);
    assert!(!r["sentences"].as_array().unwrap().is_empty());
    assert!(!r["mentioned"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let app = app(state(shape_and_text(), 2));
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/v1/generate")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn reload_swaps_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let shape_dir = dir.path().join("shape");
    tiny_set(Conditioning::Shape, 1).save(&shape_dir, false).unwrap();
    let cfg = ServiceConfig { checkpoints: vec![shape_dir.clone()], ..ServiceConfig::default() };
    let st = AppState::new(Models::load(&cfg).unwrap(), cfg);
    let app = app(st);
    let body = json!({"mode": "shape", "floor": floor_json(0), "seed": 7}).to_string();
    let (_, before) = call(&app, "POST", "/v1/generate", &body).await;

    tiny_set(Conditioning::Shape, 99).save(&shape_dir, false).unwrap();
    let (_, unchanged) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(before, unchanged);
    let (status, b) = call(&app, "POST", "/v1/reload", "").await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let (_, after) = call(&app, "POST", "/v1/generate", &body).await;
    assert_ne!(before, after);

    tiny_set(Conditioning::Text, 1).save(&shape_dir, false).unwrap();
    std::fs::remove_file(shape_dir.join("location.ckpt")).unwrap();
    let (status, _) = call(&app, "POST", "/v1/reload", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, still) = call(&app, "POST", "/v1/generate", &body).await;
    assert_eq!(after, still);
}

#[tokio::test]
async fn reload_without_directories_is_a_conflict() {
    let app = app(state(shape_and_text(), 2));
    let (status, _) = call(&app, "POST", "/v1/reload", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
}
