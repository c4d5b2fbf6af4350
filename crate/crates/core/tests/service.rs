use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use boxedit::app::EditContext;
use boxedit::denoiser::{Model, ModelConfig};
use boxedit::geometry::{project_box_rect, Box3D};
use boxedit::scene::{generate_dataset, ClipRules, Dataset, DatasetConfig, SceneGenConfig, Split};
use boxedit::service::router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn context() -> EditContext {
    let cfg = DatasetConfig {
        scene: SceneGenConfig {
            height: 32,
            width: 64,
            num_frames: 4,
            ..SceneGenConfig::default()
        },
        rules: ClipRules {
            clip_len: 2,
            ..ClipRules::default()
        },
        train_clips: 4,
        inpaint_clips: 0,
        val_clips: 2,
        max_scenes: 400,
    };
    let (scenes, clips) = generate_dataset(&cfg, 3).unwrap();
    let dataset = Dataset {
        root: PathBuf::new(),
        scenes: scenes.into_iter().map(|s| (s.id.clone(), s)).collect(),
        clips,
    };
    EditContext::new(dataset, Model::new(ModelConfig::tiny(), 0).unwrap(), 2, 0).unwrap()
}

struct Client {
    app: Router,
    ctx_scene: String,
    ctx_object: usize,
    ctx_start: usize,
}

impl Client {
    fn new() -> Self {
        let ctx = context();
        let rec = ctx.dataset.clips.iter().find(|c| c.split == Split::Val).unwrap().clone();
        Self {
            app: router(Arc::new(ctx), None),
            ctx_scene: rec.scene_id,
            ctx_object: rec.object_id.unwrap(),
            ctx_start: rec.start,
        }
    }

    async fn raw(&self, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Option<String>, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let ct = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, ct, bytes)
    }

    async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, _, b) = self.raw(method, uri, body.map(|v| v.to_string())).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    fn delete_spec(&self) -> Value {
        json!({"task": "delete", "scene_id": self.ctx_scene, "object_id": self.ctx_object, "start": self.ctx_start})
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scenes_and_frames() {
    let c = Client::new();
    let (s, v) = c.json("GET", "/scenes", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!v.as_array().unwrap().is_empty());
    let (s, v) = c.json("GET", &format!("/scenes/{}/meta", c.ctx_scene), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["id"], json!(c.ctx_scene));
    let (s, v) = c.json("GET", "/scenes/missing/meta", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "UnknownScene");
    let (s, ct, bytes) = c.raw("GET", &format!("/scenes/{}/frames/0", c.ctx_scene), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/png"));
    assert_eq!(&bytes[1..4], b"PNG");
    let (s, _, _) = c.raw("GET", &format!("/scenes/{}/frames/99", c.ctx_scene), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn object_bank_filters() {
    let c = Client::new();
    let (s, all) = c.json("GET", "/objects", None).await;
    assert_eq!(s, StatusCode::OK);
    let all = all.as_array().unwrap().clone();
    assert!(!all.is_empty());
    assert!(all.iter().all(|e| !e["thumbnail"].as_str().unwrap().is_empty()));
    let (_, near) = c.json("GET", "/objects?max_dist=12", None).await;
    assert!(near.as_array().unwrap().iter().all(|e| e["distance"].as_f64().unwrap() <= 12.0));
    let cat = all[0]["category"].as_str().unwrap().to_string();
    let (_, same) = c.json("GET", &format!("/objects?category={cat}"), None).await;
    assert!(same.as_array().unwrap().iter().all(|e| e["category"] == json!(cat)));
    let (s, v) = c.json("GET", "/objects?category=plane", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "ValidationError");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn projection_matches_library() {
    let c = Client::new();
    let bx = Box3D::from_center_size_yaw([1.0, 0.7, 12.0], [4.5, 1.9, 1.6], 0.4);
    let (s, v) = c
        .json("POST", "/project", Some(json!({"scene_id": c.ctx_scene, "frame": 0, "box": bx})))
        .await;
    assert_eq!(s, StatusCode::OK);
    let k = boxedit::geometry::CameraIntrinsics::centered(64, 32, 0.5);
    let want = project_box_rect(&bx, &k).unwrap().corners();
    let got: Vec<[f64; 2]> = serde_json::from_value(v["corners"].clone()).unwrap();
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
    }
    assert_eq!(v["vertices"].as_array().unwrap().len(), 8);
    assert_eq!(v["mask_outline"].as_array().unwrap().len(), 4);

    let behind = Box3D::from_center_size_yaw([0.0, 0.7, -10.0], [4.5, 1.9, 1.6], 0.0);
    let (s, v) = c
        .json("POST", "/project", Some(json!({"scene_id": c.ctx_scene, "frame": 0, "box": behind})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "EmptyProjection");

    let (s, _) = c.json("POST", "/project", Some(json!({"scene_id": c.ctx_scene, "frame": 0}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = c
        .json("POST", "/project", Some(json!({"scene_id": "missing", "frame": 0, "box": bx})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn edit_job_lifecycle() {
    let c = Client::new();
    let spec = c.delete_spec();
    let (s, v) = c.json("POST", "/edits", Some(spec.clone())).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 64);

    let (s, dup) = c.json("POST", "/edits", Some(spec)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(dup["job_id"], json!(id));

    let mut job = Value::Null;
    for _ in 0..600 {
        let (s, v) = c.json("GET", &format!("/edits/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        job = v;
        if job["status"] == "done" || job["status"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["history"], json!(["queued", "running", "done"]));
    assert_eq!(job["progress"], json!(1.0));
    assert_eq!(job["frames"].as_array().unwrap().len(), 2);
    assert_eq!(job["report"]["job_id"], json!(id));

    let (s, _) = c.json("GET", "/edits/unknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn edit_submission_errors() {
    let c = Client::new();
    let (s, v) = c
        .json("POST", "/edits", Some(json!({"task": "replace", "scene_id": c.ctx_scene, "object_id": c.ctx_object})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "MissingReference");
    let (s, v) = c
        .json("POST", "/edits", Some(json!({"task": "delete", "scene_id": c.ctx_scene, "object_id": c.ctx_object, "preset": "forward"})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "preset");
    let (s, _) = c.json("POST", "/edits", Some(json!({"task": "teleport", "scene_id": "x"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = c
        .json("POST", "/edits", Some(json!({"task": "delete", "scene_id": "missing", "object_id": 0})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "UnknownScene");
    let (s, v) = c
        .json(
            "POST",
            "/edits",
            Some(json!({"task": "replace", "scene_id": c.ctx_scene, "object_id": c.ctx_object, "reference": {"bank_id": "nope:0"}})),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "UnknownBankEntry");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn schema_lists_endpoints() {
    let c = Client::new();
    let (s, v) = c.json("GET", "/schema", None).await;
    assert_eq!(s, StatusCode::OK);
    for p in ["/scenes", "/project", "/edits", "/edits/{id}", "/objects"] {
        assert!(v["paths"].get(p).is_some(), "{p}");
    }
    assert!(v["components"]["schemas"]["EditSpec"]["properties"]["task"].is_object());
}
