use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use magec::dataset::SAMPLE_CSV;
use magec::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(config: ServiceConfig) -> Router {
    router(AppState::new(ServiceConfig { log_requests: false, ..config }))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> Reply {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

async fn upload_raw(app: &Router, csv: &str) -> Reply {
    let req = Request::post("/api/datasets?name=table")
        .header(header::CONTENT_TYPE, "text/csv")
        .body(Body::from(csv.to_string()))
        .unwrap();
    send(app, req).await
}

fn multipart(boundary: &str, file_name: &str, content: &str) -> String {
    format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{file_name}\"\r\n\
         Content-Type: text/csv\r\n\r\n{content}\r\n--{boundary}--\r\n"
    )
}

fn quick_mcmc() -> Value {
    json!({ "n_chains": 3, "n_iter": 3000, "burn_in": 1000, "thin": 2, "seed": 5, "target_acceptance": 0.44 })
}

async fn wait_done(app: &Router, run_id: &str) -> Value {
    for _ in 0..600 {
        let status = get(app, &format!("/api/runs/{run_id}")).await.json();
        match status["status"].as_str().unwrap() {
            "done" | "failed" => return status,
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("run {run_id} did not finish");
}

async fn start_run(app: &Router, body: Value) -> String {
    let r = post_json(app, "/api/runs", body).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text());
    let id = r.json()["run_id"].as_str().unwrap().to_string();
    assert_eq!(r.headers[header::LOCATION], format!("/api/runs/{id}"));
    id
}

#[tokio::test]
async fn health_and_placeholder_ui() {
    let app = app();
    assert_eq!(get(&app, "/healthz").await.text(), "ok");
    let root = get(&app, "/").await;
    assert_eq!(root.status, StatusCode::OK);
    assert!(root.text().contains("/api"));
    assert_eq!(get(&app, "/missing.js").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_files_stay_inside_the_ui_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>ui</p>").unwrap();
    std::fs::write(dir.path().join("app.js"), "1;").unwrap();
    let app = app_with(ServiceConfig { ui_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() });
    assert_eq!(get(&app, "/").await.text(), "<p>ui</p>");
    let js = get(&app, "/app.js").await;
    assert_eq!(js.headers[header::CONTENT_TYPE], "text/javascript; charset=utf-8");
    assert_eq!(get(&app, "/../etc/passwd").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/%2e%2e/secret").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn upload_reports_classes_and_flags() {
    let app = app();
    let r = upload_raw(&app, SAMPLE_CSV).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let doc = r.json();
    assert_eq!(doc["n_studies"], 15);
    assert_eq!(doc["classes"], json!({ "observed": 9, "exact_zero": 4, "censored": 2 }));
    assert_eq!(doc["valid"], true);
    let studies = doc["studies"].as_array().unwrap();
    assert_eq!(studies.iter().filter(|s| s["unreported"] == true).count(), 6);
    assert_eq!(studies.iter().filter(|s| s["censored"] == true).count(), 2);

    let id = doc["dataset_id"].as_str().unwrap();
    let again = get(&app, &format!("/api/datasets/{id}")).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["n_studies"], 15);
    assert_eq!(get(&app, "/api/datasets/nope").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn multipart_uploads() {
    let app = app();
    let body = multipart("XyZ", "trial.csv", SAMPLE_CSV);
    let req = Request::post("/api/datasets")
        .header(header::CONTENT_TYPE, "multipart/form-data; boundary=XyZ")
        .body(Body::from(body))
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["name"], "trial");

    let req = Request::post("/api/datasets")
        .header(header::CONTENT_TYPE, "multipart/form-data; boundary=XyZ")
        .body(Body::from("this is not multipart"))
        .unwrap();
    assert_eq!(send(&app, req).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn upload_rejections() {
    let app = app();
    let r = upload_raw(&app, "study,cutoff,Y\na,1,\n").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains('N'));

    let r = upload_raw(&app, "study,N,cutoff,Y\na,10,1,12\nb,10,1,1\n").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let doc = r.json();
    assert_eq!(doc["valid"], false);
    assert_eq!(doc["violations"][0]["row"], 2);

    let small = app_with(ServiceConfig { max_upload_bytes: 1024, ..ServiceConfig::default() });
    let big = format!("study,N,cutoff,Y\n{}", "a,10,1,1\n".repeat(20_000));
    assert_eq!(upload_raw(&small, &big).await.status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn run_request_validation() {
    let app = app();
    let ds = post_json(&app, "/api/datasets/sample", json!({})).await.json();
    let id = ds["dataset_id"].as_str().unwrap();

    let r = post_json(&app, "/api/runs", json!({ "dataset_id": "missing" })).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let mut bad = quick_mcmc();
    bad["burn_in"] = json!(3000);
    let r = post_json(&app, "/api/runs", json!({ "dataset_id": id, "mcmc": bad })).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains("burn_in"));
    let r = post_json(&app, "/api/runs", json!({ "dataset_id": id, "model": { "prior_scale_a": 0.0 } })).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = post_json(&app, "/api/runs", json!({ "nonsense": true })).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let mut huge = quick_mcmc();
    huge["n_iter"] = json!(50_000_000u64);
    let r = post_json(&app, "/api/runs", json!({ "dataset_id": id, "mcmc": huge })).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, "/api/runs/nope").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/runs/nope/results").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_run_lifecycle() {
    let app = app();
    let ds = post_json(&app, "/api/datasets/sample", json!({})).await.json();
    let dataset_id = ds["dataset_id"].as_str().unwrap();
    let run_id = start_run(&app, json!({ "dataset_id": dataset_id, "mcmc": quick_mcmc() })).await;

    let early = get(&app, &format!("/api/runs/{run_id}/results")).await;
    if early.status != StatusCode::OK {
        assert_eq!(early.status, StatusCode::CONFLICT);
    }

    let status = wait_done(&app, &run_id).await;
    assert_eq!(status["status"], "done", "{status}");
    assert_eq!(status["fraction"], 1.0);
    assert_eq!(status["dataset_id"], dataset_id);
    assert_eq!(status["config"]["mcmc"]["n_iter"], 3000);
    assert!(status["progress"]["magec"].is_array());
    assert!(status["progress"]["complete_case"].is_array());
    assert_eq!(status["links"]["forest_cc"], format!("/api/runs/{run_id}/forest/cc.svg"));

    let results = get(&app, &format!("/api/runs/{run_id}/results")).await;
    assert_eq!(results.status, StatusCode::OK);
    assert_eq!(results.headers[header::CONTENT_TYPE], "application/json");
    let doc = results.json();
    let median = doc["magec"]["overall"]["median"].as_f64().unwrap();
    assert!(median > 0.0 && median < 0.02);
    assert_eq!(doc["magec"]["studies"].as_array().unwrap().len(), 15);

    let etag = results.headers[header::ETAG].to_str().unwrap().to_string();
    let req = Request::get(format!("/api/runs/{run_id}/results"))
        .header(header::IF_NONE_MATCH, &etag)
        .body(Body::empty())
        .unwrap();
    let cached = send(&app, req).await;
    assert_eq!(cached.status, StatusCode::NOT_MODIFIED);
    assert!(cached.body.is_empty());

    let svg = get(&app, &format!("/api/runs/{run_id}/forest/magec.svg")).await;
    assert_eq!(svg.headers[header::CONTENT_TYPE], "image/svg+xml");
    assert!(svg.text().starts_with("<svg"));
    let resorted = get(&app, &format!("/api/runs/{run_id}/forest/magec.svg?decimals=3&sort=estimate")).await;
    assert_eq!(resorted.status, StatusCode::OK);
    assert_ne!(resorted.body, svg.body);
    assert_ne!(resorted.headers[header::ETAG], svg.headers[header::ETAG]);
    let again = get(&app, &format!("/api/runs/{run_id}/forest/magec.svg?decimals=3&sort=estimate")).await;
    assert_eq!(again.body, resorted.body);
    assert_eq!(get(&app, &format!("/api/runs/{run_id}/forest/magec.svg?decimals=9")).await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, &format!("/api/runs/{run_id}/forest/other.svg")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/api/runs/{run_id}/forest/cc.svg")).await.status, StatusCode::OK);

    let report = get(&app, &format!("/api/runs/{run_id}/report.html")).await;
    assert!(report.text().contains("<section id=\"methods\">"));
    assert!(report.text().contains(&svg.text()));
    let csv = get(&app, &format!("/api/runs/{run_id}/summary.csv")).await;
    assert!(csv.text().starts_with("model,quantity"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn skipped_complete_case_has_no_cc_plot() {
    let app = app();
    let ds = post_json(&app, "/api/datasets/sample", json!({})).await.json();
    let run_id = start_run(
        &app,
        json!({ "dataset_id": ds["dataset_id"], "mcmc": quick_mcmc(), "run_complete_case": false }),
    )
    .await;
    let status = wait_done(&app, &run_id).await;
    assert_eq!(status["status"], "done");
    assert!(status["links"]["forest_cc"].is_null());
    assert!(status["progress"]["complete_case"].is_null());
    assert_eq!(get(&app, &format!("/api/runs/{run_id}/forest/cc.svg")).await.status, StatusCode::NOT_FOUND);
    assert!(get(&app, &format!("/api/runs/{run_id}/results")).await.json()["complete_case"].is_null());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn equal_requests_give_equal_bytes() {
    let app = app();
    let ds = post_json(&app, "/api/datasets/sample", json!({})).await.json();
    let body = json!({ "dataset_id": ds["dataset_id"], "mcmc": quick_mcmc() });
    let a = start_run(&app, body.clone()).await;
    let b = start_run(&app, body).await;
    wait_done(&app, &a).await;
    wait_done(&app, &b).await;
    for tail in ["results", "forest/magec.svg", "forest/cc.svg", "summary.csv"] {
        let ra = get(&app, &format!("/api/runs/{a}/{tail}")).await;
        let rb = get(&app, &format!("/api/runs/{b}/{tail}")).await;
        assert_eq!(ra.body, rb.body, "{tail}");
        assert_eq!(ra.headers[header::ETAG], rb.headers[header::ETAG]);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn finished_runs_survive_a_restart_through_the_spool() {
    let spool = tempfile::tempdir().unwrap();
    let config = ServiceConfig { spool_dir: Some(spool.path().to_path_buf()), log_requests: false, ..ServiceConfig::default() };
    let first = app_with(config.clone());
    let ds = post_json(&first, "/api/datasets/sample", json!({})).await.json();
    let run_id = start_run(&first, json!({ "dataset_id": ds["dataset_id"], "mcmc": quick_mcmc() })).await;
    wait_done(&first, &run_id).await;
    let before = get(&first, &format!("/api/runs/{run_id}/results")).await.body;

    let state = AppState::new(config);
    assert_eq!(state.restore_from_spool().unwrap(), 1);
    let second = router(state);
    let status = get(&second, &format!("/api/runs/{run_id}")).await.json();
    assert_eq!(status["status"], "done");
    assert_eq!(get(&second, &format!("/api/runs/{run_id}/results")).await.body, before);
}
