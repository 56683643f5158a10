use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use http_body_util::BodyExt;
use resincarve_core::imaging::{decode_png, encode_png, mask_from_image, save_mask, BackgroundModel, BinaryMask, RasterImage};
use resincarve_core::pipeline::PipelineConfig;
use resincarve_core::prompts::PromptGridConfig;
use resincarve_core::segmentation::{BackendConfig, Connectivity, ThresholdMode};
use resincarve_service::{router, AppState, ServiceConfig, SessionStore};
use serde_json::{json, Value};
use tower::ServiceExt;

const WOOD: [u8; 3] = [210, 190, 150];
const RESIN: [u8; 3] = [40, 30, 20];

fn app() -> Router {
    router(Arc::new(AppState { store: SessionStore::in_memory(), config: ServiceConfig::default() }))
}

fn in_blob_a(x: u32, y: u32) -> bool {
    (24..36).contains(&x) && (14..26).contains(&y)
}

fn in_blob_b(x: u32, y: u32) -> bool {
    (4..12).contains(&x) && (4..12).contains(&y)
}

/// Two equal dark blobs on wood; a 1x1 grid seeds only blob A.
fn two_blobs() -> RasterImage {
    RasterImage::from_fn(60, 40, |x, y| if in_blob_a(x, y) || in_blob_b(x, y) { RESIN } else { WOOD })
}

fn region_grow_config() -> PipelineConfig {
    PipelineConfig {
        background: BackgroundModel::chroma_key([0, 0, 255], 5.0),
        grid: PromptGridConfig { rows: 1, cols: 1, ..Default::default() },
        backend: BackendConfig::RegionGrow { color_tol: 30.0, connectivity: Connectivity::Four },
        ..Default::default()
    }
}

fn multipart(image: &[u8], config: Option<&PipelineConfig>) -> Request<Body> {
    let boundary = "XBOUNDARYX";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"in.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    if let Some(cfg) = config {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"config\"\r\n\r\n{}\r\n", serde_json::to_string(cfg).unwrap())
                .as_bytes(),
        );
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

fn json_req(method: &str, uri: &str, body: Value) -> Request<Body> {
    Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn empty_req(method: &str, uri: &str) -> Request<Body> {
    Request::builder().method(method).uri(uri).body(Body::empty()).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn send_json(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn create(app: &Router, img: &RasterImage, cfg: &PipelineConfig) -> Value {
    let (status, body) = send_json(app, multipart(&encode_png(img).unwrap(), Some(cfg))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

fn decode_mask(b64: &Value) -> BinaryMask {
    mask_from_image(&decode_png(&BASE64.decode(b64.as_str().unwrap()).unwrap()).unwrap())
}

#[tokio::test]
async fn health_check() {
    let (status, body) = send_json(&app(), empty_req("GET", "/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn threshold_session_returns_blob_mask() {
    let app = app();
    let img = RasterImage::from_fn(30, 20, |x, y| if in_blob_b(x, y) { RESIN } else { WOOD });
    let cfg = PipelineConfig {
        background: BackgroundModel::chroma_key([0, 0, 255], 5.0),
        backend: BackendConfig::Threshold { mode: ThresholdMode::Fixed(128) },
        ..Default::default()
    };
    let body = create(&app, &img, &cfg).await;
    assert_eq!(body["proposals"].as_array().unwrap().len(), 1);
    assert_eq!(body["proposals"][0]["confidence"], 1.0);
    assert_eq!(decode_mask(&body["mask_png_b64"]), BinaryMask::from_fn(30, 20, in_blob_b));

    let id = body["id"].as_str().unwrap();
    let (status, png) = send(&app, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(BASE64.encode(&png), body["mask_png_b64"].as_str().unwrap());
}

#[tokio::test]
async fn green_screen_only_gives_empty_mask() {
    let app = app();
    let cfg = PipelineConfig { background: BackgroundModel::chroma_key([0, 200, 0], 10.0), ..Default::default() };
    let body = create(&app, &RasterImage::filled(16, 16, [0, 200, 0]), &cfg).await;
    assert_eq!(body["retained_pixels"], 0);
    assert!(decode_mask(&body["mask_png_b64"]).is_empty());
}

#[tokio::test]
async fn malformed_png_is_a_client_error() {
    let (status, body) = send_json(&app(), multipart(b"definitely not a png", None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "decode_error");
    assert!(body["message"].as_str().unwrap().len() > 3);
}

#[tokio::test]
async fn missing_image_field_is_rejected() {
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, "multipart/form-data; boundary=B")
        .body(Body::from("--B\r\nContent-Disposition: form-data; name=\"config\"\r\n\r\n{}\r\n--B--\r\n"))
        .unwrap();
    let (status, body) = send_json(&app(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "missing_field");
}

#[tokio::test]
async fn unknown_session_is_404_json() {
    let app = app();
    for req in [
        empty_req("GET", "/sessions/nope/mask.png"),
        json_req("POST", "/sessions/nope/prompts", json!({"x": 0, "y": 0, "label": "fg"})),
        empty_req("DELETE", "/sessions/nope/prompts/0"),
        json_req("POST", "/sessions/nope/gcode", json!({"mm_per_pixel": 1.0})),
    ] {
        let (status, body) = send_json(&app, req).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["code"], "unknown_session");
    }
}

async fn iou_vs(app: &Router, id: &str, truth_path: &std::path::Path) -> f64 {
    let uri = format!("/sessions/{id}/evaluation?truth={}", truth_path.display());
    let (status, body) = send_json(app, empty_req("GET", &uri)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["rows"][0]["iou"]["ratio"].as_f64().unwrap()
}

#[tokio::test]
async fn foreground_click_adds_second_blob_and_undo_restores() {
    let app = app();
    let body = create(&app, &two_blobs(), &region_grow_config()).await;
    let id = body["id"].as_str().unwrap().to_string();
    assert_eq!(decode_mask(&body["mask_png_b64"]), BinaryMask::from_fn(60, 40, in_blob_a));

    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.png");
    save_mask(&BinaryMask::from_fn(60, 40, |x, y| in_blob_a(x, y) || in_blob_b(x, y)), &truth).unwrap();
    let iou_before = iou_vs(&app, &id, &truth).await;
    let (_, before_png) = send(&app, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await;

    let (status, resp) =
        send_json(&app, json_req("POST", &format!("/sessions/{id}/prompts"), json!({"x": 8, "y": 8, "label": "fg"}))).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    assert_eq!(resp["delta"], 64);
    assert_eq!(resp["prompts"].as_array().unwrap().len(), 1);
    let iou_after = iou_vs(&app, &id, &truth).await;
    assert!(iou_after > iou_before, "{iou_before} -> {iou_after}");
    assert_eq!(iou_after, 1.0);

    let (status, resp) = send_json(&app, empty_req("DELETE", &format!("/sessions/{id}/prompts/0"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["delta"], -64);
    let (_, after_png) = send(&app, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await;
    assert_eq!(before_png, after_png);

    let (status, resp) = send_json(&app, empty_req("DELETE", &format!("/sessions/{id}/prompts/0"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(resp["code"], "unknown_prompt");
}

#[tokio::test]
async fn foreground_click_inside_retained_region_changes_nothing() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let (_, resp) =
        send_json(&app, json_req("POST", &format!("/sessions/{id}/prompts"), json!({"x": 26, "y": 16, "label": "fg"}))).await;
    assert_eq!(resp["delta"], 0);
    assert_eq!(decode_mask(&resp["mask_png_b64"]), BinaryMask::from_fn(60, 40, in_blob_a));
}

#[tokio::test]
async fn background_click_shrinks_mask() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/prompts");
    let (_, grown) = send_json(&app, json_req("POST", &uri, json!({"x": 8, "y": 8, "label": "fg"}))).await;
    assert_eq!(grown["retained_pixels"], 144 + 64);
    let (_, shrunk) = send_json(&app, json_req("POST", &uri, json!({"x": 30, "y": 20, "label": "bg"}))).await;
    assert_eq!(shrunk["delta"], -144);
    assert_eq!(decode_mask(&shrunk["mask_png_b64"]), BinaryMask::from_fn(60, 40, in_blob_b));
}

#[tokio::test]
async fn out_of_bounds_prompt_is_rejected() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let (status, body) =
        send_json(&app, json_req("POST", &format!("/sessions/{id}/prompts"), json!({"x": 60, "y": 0, "label": "fg"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "out_of_bounds");
    let (_, view) = send_json(&app, empty_req("GET", &format!("/sessions/{id}"))).await;
    assert!(view["prompts"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn replaying_prompt_history_is_deterministic() {
    let app = app();
    let clicks = [json!({"x": 8, "y": 8, "label": "fg"}), json!({"x": 50, "y": 30, "label": "bg"}), json!({"x": 30, "y": 20, "label": "fg"})];
    let mut masks = Vec::new();
    for _ in 0..2 {
        let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
        for c in &clicks {
            send_json(&app, json_req("POST", &format!("/sessions/{id}/prompts"), c.clone())).await;
        }
        masks.push(send(&app, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await.1);
    }
    assert_eq!(masks[0], masks[1]);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let b = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    assert_ne!(a, b);
    send_json(&app, json_req("POST", &format!("/sessions/{a}/prompts"), json!({"x": 8, "y": 8, "label": "fg"}))).await;
    let (_, view) = send_json(&app, empty_req("GET", &format!("/sessions/{b}"))).await;
    assert_eq!(view["retained_pixels"], 144);
    assert!(view["prompts"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn gcode_export_for_three_pixel_run() {
    let app = app();
    // all wood, nothing darker than T=0: the whole 3x1 strip is removed
    let cfg = PipelineConfig {
        background: BackgroundModel::chroma_key([0, 200, 0], 10.0),
        backend: BackendConfig::Threshold { mode: ThresholdMode::Fixed(0) },
        ..Default::default()
    };
    let id = create(&app, &RasterImage::filled(3, 1, WOOD), &cfg).await["id"].as_str().unwrap().to_string();
    let (status, body) =
        send_json(&app, json_req("POST", &format!("/sessions/{id}/gcode"), json!({"mm_per_pixel": 1.0}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let gcode = body["gcode"].as_str().unwrap();
    assert!(gcode.lines().any(|l| l == "G1 X2.000 Y0.000 F300"), "{gcode}");
    assert_eq!(body["removed_cells"], 3);
    assert_eq!(body["expected_cells"], 3);
    assert_eq!(body["verified"], true);
    assert_eq!(body["cut_mm"], 2.0);
}

#[tokio::test]
async fn gcode_export_never_carves_background() {
    let app = app();
    let cfg = PipelineConfig { background: BackgroundModel::chroma_key([0, 200, 0], 10.0), ..Default::default() };
    let id = create(&app, &RasterImage::filled(4, 3, [0, 200, 0]), &cfg).await["id"].as_str().unwrap().to_string();
    let (_, body) = send_json(&app, json_req("POST", &format!("/sessions/{id}/gcode"), json!({"mm_per_pixel": 0.5}))).await;
    assert_eq!(body["gcode"], "G21\nG90\nM3 S10000\nG0 Z5.000\nG0 X0.000 Y0.000\nM5\n");
    assert_eq!(body["removed_cells"], 0);
}

#[tokio::test]
async fn gcode_export_for_fully_retained_mask_is_header_footer() {
    let app = app();
    let cfg = PipelineConfig {
        background: BackgroundModel::chroma_key([0, 0, 255], 5.0),
        backend: BackendConfig::Threshold { mode: ThresholdMode::Fixed(255) },
        ..Default::default()
    };
    let id = create(&app, &RasterImage::filled(5, 4, RESIN), &cfg).await["id"].as_str().unwrap().to_string();
    let (_, body) = send_json(&app, json_req("POST", &format!("/sessions/{id}/gcode"), json!({"mm_per_pixel": 0.5}))).await;
    assert_eq!(body["gcode"], "G21\nG90\nM3 S10000\nG0 Z5.000\nG0 X0.000 Y0.000\nM5\n");
    assert_eq!(body["removed_cells"], 0);
}

#[tokio::test]
async fn gcode_removed_cells_track_the_simulator() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    for optimize in [false, true] {
        let req = json!({"mm_per_pixel": 0.25, "feed_rate": 600, "optimize": optimize});
        let (status, body) = send_json(&app, json_req("POST", &format!("/sessions/{id}/gcode"), req)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["removed_cells"], 60 * 40 - 144);
        assert_eq!(body["verified"], true);
    }
}

#[tokio::test]
async fn invalid_machine_config_is_rejected() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let (status, body) =
        send_json(&app, json_req("POST", &format!("/sessions/{id}/gcode"), json!({"mm_per_pixel": 0.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_config");
}

#[tokio::test]
async fn evaluation_accepts_uploaded_truth() {
    let app = app();
    let id = create(&app, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    let truth = encode_png(&resincarve_core::segmentation::binarize(&BinaryMask::from_fn(60, 40, |x, y| {
        in_blob_a(x, y) || in_blob_b(x, y)
    })))
    .unwrap();
    let req = Request::post(format!("/sessions/{id}/evaluation")).body(Body::from(truth)).unwrap();
    let (status, body) = send_json(&app, req).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["rows"][0]["iou_percent"], 69.2);
    assert_eq!(body["rows"][0]["class"], "Good");
    assert_eq!(body["grade"], "A");
}

#[tokio::test]
async fn unavailable_external_worker_is_a_gateway_error() {
    let app = app();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        backend: serde_json::from_value(json!({
            "kind": "external",
            "exchange_dir": dir.path().join("x"),
            "command": dir.path().join("missing-worker"),
            "timeout_secs": 2.0
        }))
        .unwrap(),
        ..region_grow_config()
    };
    let (status, body) = send_json(&app, multipart(&encode_png(&two_blobs()).unwrap(), Some(&cfg))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["code"], "backend_error");
    assert_eq!(body["stage"], "segment");
}

#[tokio::test]
async fn persistent_sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = SessionStore::open(dir.path()).unwrap();
    let app1 = router(Arc::new(AppState { store, config: ServiceConfig::default() }));
    let id = create(&app1, &two_blobs(), &region_grow_config()).await["id"].as_str().unwrap().to_string();
    send_json(&app1, json_req("POST", &format!("/sessions/{id}/prompts"), json!({"x": 8, "y": 8, "label": "fg"}))).await;
    let (_, png1) = send(&app1, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await;

    let (store, skipped) = SessionStore::open(dir.path()).unwrap();
    assert!(skipped.is_empty());
    let app2 = router(Arc::new(AppState { store, config: ServiceConfig::default() }));
    let (status, png2) = send(&app2, empty_req("GET", &format!("/sessions/{id}/mask.png"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(png1, png2);
}
