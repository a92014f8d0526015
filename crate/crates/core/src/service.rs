//! HTTP service: dataset upload, asynchronous runs and rendered artefacts.
//!
//! Runs wait in FIFO order for one of `workers` permits and execute on the
//! blocking pool. Finished artefacts are rendered once and served verbatim,
//! so repeated requests return identical bytes and a stable ETag.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::analysis::{run_analysis, AnalysisRequest, AnalysisResult, ModelKind};
use crate::dataset::{
    is_valid, parse_csv, validate_dataset, ClassCounts, Dataset, Severity, StudyClass, Violation,
};
use crate::model::ModelConfig;
use crate::render::{render_artifacts, render_forest_plot_svg, Artifacts, ForestPlotSpec, SortOrder, PERCENT_DP};
use crate::sampler::{Execution, McmcConfig, RunProgress};

pub const MAX_UPLOAD_BYTES: usize = 5 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub workers: usize,
    /// Datasets and runs older than this are dropped.
    pub retention: Duration,
    pub spool_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub max_iterations: u64,
    pub max_chains: usize,
    pub json_logs: bool,
    pub log_requests: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            workers: 2,
            retention: Duration::from_secs(24 * 3600),
            spool_dir: None,
            ui_dir: None,
            max_upload_bytes: MAX_UPLOAD_BYTES,
            max_iterations: 2_000_000,
            max_chains: 16,
            json_logs: true,
            log_requests: true,
        }
    }
}

struct StoredDataset {
    dataset: Dataset,
    created: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Per-chain iteration counters, written by sampler threads.
struct ProgressBoard {
    total: u64,
    magec: Vec<AtomicU64>,
    cc: Vec<AtomicU64>,
}

impl ProgressBoard {
    fn new(chains: usize, total: u64, with_cc: bool) -> Self {
        let counters = |n: usize| (0..n).map(|_| AtomicU64::new(0)).collect();
        Self {
            total,
            magec: counters(chains),
            cc: counters(if with_cc { chains } else { 0 }),
        }
    }

    fn record(&self, model: ModelKind, p: RunProgress) {
        let slots = match model {
            ModelKind::Magec => &self.magec,
            ModelKind::CompleteCase => &self.cc,
        };
        if let Some(slot) = slots.get(p.chain) {
            slot.store(p.completed, Ordering::Relaxed);
        }
    }

    fn snapshot(slots: &[AtomicU64], total: u64) -> Vec<serde_json::Value> {
        slots
            .iter()
            .enumerate()
            .map(|(chain, c)| {
                let done = c.load(Ordering::Relaxed);
                json!({ "chain": chain, "completed": done, "total": total, "fraction": done as f64 / total as f64 })
            })
            .collect()
    }

    fn fraction(&self) -> f64 {
        let all: Vec<u64> = self.magec.iter().chain(&self.cc).map(|c| c.load(Ordering::Relaxed)).collect();
        all.iter().sum::<u64>() as f64 / (all.len() as u64 * self.total).max(1) as f64
    }
}

/// Rendered output plus its ETag.
struct Served {
    body: Bytes,
    etag: String,
}

impl Served {
    fn new(body: String) -> Self {
        let etag = format!("\"{:x}\"", Sha256::digest(body.as_bytes()));
        Self { body: Bytes::from(body), etag }
    }
}

struct Finished {
    result: AnalysisResult,
    results_json: Served,
    forest_magec: Served,
    forest_cc: Option<Served>,
    report_html: Served,
    summary_csv: Served,
}

struct JobState {
    status: JobStatus,
    error: Option<String>,
    started: Option<Instant>,
    elapsed: Option<f64>,
    finished: Option<Arc<Finished>>,
}

struct Job {
    id: String,
    dataset_id: String,
    created: Instant,
    request: AnalysisRequest,
    progress: Arc<ProgressBoard>,
    state: Mutex<JobState>,
}

impl Job {
    fn lock(&self) -> std::sync::MutexGuard<'_, JobState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Inner {
    config: ServiceConfig,
    datasets: Mutex<HashMap<String, StoredDataset>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    permits: Semaphore,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let permits = Semaphore::new(config.workers.max(1));
        Self(Arc::new(Inner {
            config,
            datasets: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            permits,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    fn datasets(&self) -> std::sync::MutexGuard<'_, HashMap<String, StoredDataset>> {
        self.0.datasets.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn jobs(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<Job>>> {
        self.0.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs().get(id).cloned()
    }

    /// Drops datasets and finished runs created before `now - retention`.
    /// Returns how many entries were removed.
    pub fn sweep(&self, now: Instant) -> usize {
        let retention = self.0.config.retention;
        let expired = |created: Instant| now.saturating_duration_since(created) >= retention;
        let mut removed = 0;
        {
            let mut datasets = self.datasets();
            let before = datasets.len();
            datasets.retain(|_, d| !expired(d.created));
            removed += before - datasets.len();
        }
        let mut dropped = Vec::new();
        self.jobs().retain(|id, j| {
            let active = matches!(j.lock().status, JobStatus::Queued | JobStatus::Running);
            let keep = active || !expired(j.created);
            if !keep {
                dropped.push(id.clone());
            }
            keep
        });
        if let Some(dir) = &self.0.config.spool_dir {
            for id in &dropped {
                let _ = std::fs::remove_dir_all(dir.join(id));
            }
        }
        removed + dropped.len()
    }

    fn log(&self, fields: serde_json::Value) {
        if !self.0.config.log_requests {
            return;
        }
        if self.0.config.json_logs {
            eprintln!("{fields}");
        } else if let serde_json::Value::Object(m) = fields {
            let parts: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
            eprintln!("{}", parts.join(" "));
        }
    }
}

fn restore_run(run_dir: &Path) -> Result<Job, String> {
    let read = |name: &str| std::fs::read_to_string(run_dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let meta: SpoolMeta = serde_json::from_str(&read("meta.json")?).map_err(|e| e.to_string())?;
    let dataset = parse_csv(read("dataset.csv")?.as_bytes(), &meta.dataset_name).map_err(|e| e.to_string())?;
    let results_json = read("results.json")?;
    let result: AnalysisResult = serde_json::from_str(&results_json).map_err(|e| e.to_string())?;
    let forest_cc = match result.complete_case {
        Some(_) => Some(Served::new(read("forest_cc.svg")?)),
        None => None,
    };
    let mut request = AnalysisRequest::new(dataset);
    request.model = result.config.model;
    request.mcmc = result.config.mcmc;
    request.run_complete_case = result.config.run_complete_case;
    let board = ProgressBoard::new(request.mcmc.n_chains, request.mcmc.n_iter, result.complete_case.is_some());
    for slot in board.magec.iter().chain(&board.cc) {
        slot.store(request.mcmc.n_iter, Ordering::Relaxed);
    }
    let finished = Finished {
        results_json: Served::new(results_json),
        forest_magec: Served::new(read("forest_magec.svg")?),
        forest_cc,
        report_html: Served::new(read("report.html")?),
        summary_csv: Served::new(read("summary.csv")?),
        result,
    };
    Ok(Job {
        id: meta.run_id,
        dataset_id: meta.dataset_id,
        created: Instant::now(),
        request,
        progress: Arc::new(board),
        state: Mutex::new(JobState {
            status: JobStatus::Done,
            error: None,
            started: None,
            elapsed: None,
            finished: Some(Arc::new(finished)),
        }),
    })
}

impl AppState {
    /// Reloads finished runs from the spool directory, if one is configured.
    /// Unreadable entries are logged and skipped. Returns the number restored.
    pub fn restore_from_spool(&self) -> std::io::Result<usize> {
        let Some(dir) = self.config().spool_dir.clone() else {
            return Ok(0);
        };
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        let mut restored = 0;
        for run_dir in entries {
            match restore_run(&run_dir) {
                Ok(job) => {
                    self.jobs().insert(job.id.clone(), Arc::new(job));
                    restored += 1;
                }
                Err(e) => self.log(json!({
                    "level": "warn",
                    "message": "skipping spooled run",
                    "path": run_dir.display().to_string(),
                    "error": e,
                })),
            }
        }
        Ok(restored)
    }
}

/// Builds the router over the given state.
pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/datasets", post(upload_dataset))
        .route("/api/datasets/sample", post(load_sample))
        .route("/api/datasets/{id}", get(get_dataset))
        .route("/api/runs", post(create_run))
        .route("/api/runs/{id}", get(run_status))
        .route("/api/runs/{id}/results", get(run_results))
        .route("/api/runs/{id}/forest/{file}", get(run_forest))
        .route("/api/runs/{id}/report.html", get(run_report))
        .route("/api/runs/{id}/summary.csv", get(run_summary_csv))
        .fallback(get(static_files))
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::from_fn_with_state(state.clone(), log_requests))
        .with_state(state)
}

/// Binds, serves until Ctrl-C and sweeps expired entries in the background.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad bind address: {e}")))?;
    if let Some(dir) = &config.spool_dir {
        std::fs::create_dir_all(dir)?;
    }
    let state = AppState::new(config);
    let restored = state.restore_from_spool()?;
    if restored > 0 {
        state.log(json!({ "level": "info", "message": "restored spooled runs", "count": restored }));
    }
    let sweeper = state.clone();
    let period = (sweeper.config().retention / 4).clamp(Duration::from_secs(1), Duration::from_secs(600));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            sweeper.sweep(Instant::now());
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    state.log(json!({ "level": "info", "message": "listening", "addr": listener.local_addr()?.to_string() }));
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn log_requests(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let response = next.run(req).await;
    state.log(json!({
        "level": "info",
        "message": "request",
        "method": method.as_str(),
        "path": path,
        "status": response.status().as_u16(),
        "elapsed_ms": (started.elapsed().as_secs_f64() * 1e3 * 100.0).round() / 100.0,
    }));
    response
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn violation_json(v: &Violation) -> serde_json::Value {
    json!({
        "row": v.row,
        "study": v.study_id,
        "field": v.field,
        "message": v.message,
        "severity": match v.severity { Severity::Error => "error", Severity::Warning => "warning" },
        "text": v.to_string(),
    })
}

fn class_json(c: ClassCounts) -> serde_json::Value {
    json!({ "observed": c.observed, "exact_zero": c.exact_zero, "censored": c.censored })
}

fn dataset_overview(id: &str, dataset: &Dataset, violations: &[Violation]) -> serde_json::Value {
    let studies: Vec<_> = dataset
        .studies()
        .iter()
        .map(|s| {
            json!({
                "study": s.study_id,
                "n_treated": s.n_treated,
                "cutoff": s.cutoff,
                "observed_count": s.observed_count,
                "class": s.class(),
                "censored": matches!(s.class(), StudyClass::Censored(_)),
                "unreported": s.observed_count.is_none(),
            })
        })
        .collect();
    json!({
        "dataset_id": id,
        "name": dataset.name(),
        "n_studies": dataset.len(),
        "classes": class_json(dataset.class_counts()),
        "studies": studies,
        "violations": violations.iter().map(violation_json).collect::<Vec<_>>(),
        "warnings": dataset.warnings(),
        "valid": is_valid(violations),
    })
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    name: Option<String>,
}

fn stem(file_name: &str) -> String {
    Path::new(file_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "dataset".into())
}

async fn read_upload(state: &AppState, req: Request) -> Result<(Vec<u8>, Option<String>), Response> {
    let limit = state.config().max_upload_bytes;
    let too_large = || error(StatusCode::PAYLOAD_TOO_LARGE, format!("upload exceeds {limit} bytes"));
    if let Some(len) = req.headers().get(header::CONTENT_LENGTH).and_then(|v| v.to_str().ok()?.parse::<usize>().ok()) {
        if len > limit + 64 * 1024 {
            return Err(too_large());
        }
    }
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.to_ascii_lowercase().starts_with("multipart/form-data"));
    if is_multipart {
        let mut multipart = Multipart::from_request(req, state)
            .await
            .map_err(|e| error(StatusCode::BAD_REQUEST, e.body_text()))?;
        loop {
            let field = multipart.next_field().await.map_err(|e| match e.status() {
                StatusCode::PAYLOAD_TOO_LARGE => too_large(),
                _ => error(StatusCode::BAD_REQUEST, format!("malformed multipart body: {}", e.body_text())),
            })?;
            let Some(field) = field else {
                return Err(error(StatusCode::BAD_REQUEST, "multipart body has no file field"));
            };
            let file_name = field.file_name().map(stem);
            if field.name() == Some("file") || file_name.is_some() {
                let data = field.bytes().await.map_err(|e| match e.status() {
                    StatusCode::PAYLOAD_TOO_LARGE => too_large(),
                    _ => error(StatusCode::BAD_REQUEST, format!("malformed multipart body: {}", e.body_text())),
                })?;
                if data.len() > limit {
                    return Err(too_large());
                }
                return Ok((data.to_vec(), file_name));
            }
        }
    }
    let body = Bytes::from_request(req, state).await.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large()
        } else {
            error(e.status(), e.body_text())
        }
    })?;
    if body.len() > limit {
        return Err(too_large());
    }
    Ok((body.to_vec(), None))
}

fn store_dataset(state: &AppState, dataset: Dataset) -> Response {
    let violations = validate_dataset(&dataset);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let overview = dataset_overview(&id, &dataset, &violations);
    if !is_valid(&violations) {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(overview)).into_response();
    }
    state.datasets().insert(
        id,
        StoredDataset {
            dataset,
            created: Instant::now(),
        },
    );
    (StatusCode::OK, Json(overview)).into_response()
}

async fn upload_dataset(State(state): State<AppState>, Query(q): Query<UploadQuery>, req: Request) -> Response {
    let (bytes, file_name) = match read_upload(&state, req).await {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let name = q.name.or(file_name).unwrap_or_else(|| "dataset".into());
    match parse_csv(&bytes, &name) {
        Ok(dataset) => store_dataset(&state, dataset),
        Err(e) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "error": e.to_string(), "valid": false, "violations": [{ "message": e.to_string(), "severity": "error", "text": e.to_string() }] })),
        )
            .into_response(),
    }
}

async fn load_sample(State(state): State<AppState>) -> Response {
    store_dataset(&state, Dataset::sample())
}

async fn get_dataset(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let datasets = state.datasets();
    match datasets.get(&id) {
        Some(d) => Json(dataset_overview(&id, &d.dataset, &validate_dataset(&d.dataset))).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown dataset {id}")),
    }
}

/// Body of `POST /api/runs`. Omitted settings take their defaults.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default = "yes")]
    pub run_complete_case: bool,
}

fn yes() -> bool {
    true
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Response {
    let req: RunRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid run request: {e}")),
    };
    let dataset = match state.datasets().get(&req.dataset_id) {
        Some(d) => d.dataset.clone(),
        None => return error(StatusCode::NOT_FOUND, format!("unknown dataset {}", req.dataset_id)),
    };
    if let Err(e) = req.model.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    if let Err(e) = req.mcmc.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    let cfg = state.config();
    if req.mcmc.n_iter > cfg.max_iterations || req.mcmc.n_chains > cfg.max_chains {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!(
                "this server accepts at most {} iterations and {} chains",
                cfg.max_iterations, cfg.max_chains
            ),
        );
    }

    let mut request = AnalysisRequest::new(dataset);
    request.model = req.model;
    request.mcmc = req.mcmc;
    request.run_complete_case = req.run_complete_case;
    request.execution = Execution::Concurrent;
    let job = Arc::new(Job {
        id: uuid::Uuid::new_v4().simple().to_string(),
        dataset_id: req.dataset_id,
        created: Instant::now(),
        progress: Arc::new(ProgressBoard::new(req.mcmc.n_chains, req.mcmc.n_iter, req.run_complete_case)),
        request,
        state: Mutex::new(JobState {
            status: JobStatus::Queued,
            error: None,
            started: None,
            elapsed: None,
            finished: None,
        }),
    });
    state.jobs().insert(job.id.clone(), job.clone());
    let id = job.id.clone();
    tokio::spawn(execute(state.clone(), job));
    (
        StatusCode::ACCEPTED,
        [(header::LOCATION, format!("/api/runs/{id}"))],
        Json(json!({ "run_id": id, "status": JobStatus::Queued, "status_url": format!("/api/runs/{id}") })),
    )
        .into_response()
}

async fn execute(state: AppState, job: Arc<Job>) {
    let Ok(_permit) = state.0.permits.acquire().await else {
        return;
    };
    {
        let mut s = job.lock();
        s.status = JobStatus::Running;
        s.started = Some(Instant::now());
    }
    let worker_job = job.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let board = worker_job.progress.clone();
        let progress = move |m: ModelKind, p: RunProgress| board.record(m, p);
        run_analysis(&worker_job.request, &progress).map(|result| {
            let art = render_artifacts(&result, &worker_job.request.dataset);
            (result, art)
        })
    })
    .await;

    let mut s = job.lock();
    s.elapsed = s.started.map(|t| t.elapsed().as_secs_f64());
    match outcome {
        Ok(Ok((result, art))) => {
            if let Some(dir) = &state.config().spool_dir {
                if let Err(e) = spool(dir, &job, &art) {
                    state.log(json!({ "level": "warn", "message": "spool write failed", "run_id": job.id, "error": e.to_string() }));
                }
            }
            s.finished = Some(Arc::new(Finished {
                result,
                results_json: Served::new(art.results_json),
                forest_magec: Served::new(art.forest_magec),
                forest_cc: art.forest_cc.map(Served::new),
                report_html: Served::new(art.report_html),
                summary_csv: Served::new(art.summary_csv),
            }));
            s.status = JobStatus::Done;
        }
        Ok(Err(e)) => {
            s.error = Some(e.to_string());
            s.status = JobStatus::Failed;
        }
        Err(e) => {
            s.error = Some(format!("analysis worker crashed: {e}"));
            s.status = JobStatus::Failed;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SpoolMeta {
    run_id: String,
    dataset_id: String,
    dataset_name: String,
}

fn spool(dir: &Path, job: &Job, art: &Artifacts) -> std::io::Result<()> {
    let run_dir = dir.join(&job.id);
    std::fs::create_dir_all(&run_dir)?;
    let meta = SpoolMeta {
        run_id: job.id.clone(),
        dataset_id: job.dataset_id.clone(),
        dataset_name: job.request.dataset.name().to_string(),
    };
    std::fs::write(run_dir.join("meta.json"), serde_json::to_string(&meta)?)?;
    std::fs::write(run_dir.join("dataset.csv"), job.request.dataset.to_csv())?;
    std::fs::write(run_dir.join("results.json"), &art.results_json)?;
    std::fs::write(run_dir.join("forest_magec.svg"), &art.forest_magec)?;
    if let Some(svg) = &art.forest_cc {
        std::fs::write(run_dir.join("forest_cc.svg"), svg)?;
    }
    std::fs::write(run_dir.join("report.html"), &art.report_html)?;
    std::fs::write(run_dir.join("summary.csv"), &art.summary_csv)
}

async fn run_status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(job) = state.job(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown run {id}"));
    };
    let s = job.lock();
    let board = &job.progress;
    let mut progress = json!({ "magec": ProgressBoard::snapshot(&board.magec, board.total) });
    if job.request.run_complete_case {
        progress["complete_case"] = json!(ProgressBoard::snapshot(&board.cc, board.total));
    }
    let fraction = match s.status {
        JobStatus::Done => 1.0,
        _ => board.fraction(),
    };
    let elapsed = s.elapsed.or_else(|| s.started.map(|t| t.elapsed().as_secs_f64()));
    let mut doc = json!({
        "run_id": job.id,
        "dataset_id": job.dataset_id,
        "status": s.status,
        "fraction": fraction,
        "progress": progress,
        "elapsed_seconds": elapsed,
        "error": s.error,
        "config": {
            "model": job.request.model,
            "mcmc": job.request.mcmc,
            "run_complete_case": job.request.run_complete_case,
        },
    });
    if let Some(f) = &s.finished {
        let base = format!("/api/runs/{}", job.id);
        let mut links = json!({
            "results": format!("{base}/results"),
            "forest_magec": format!("{base}/forest/magec.svg"),
            "report": format!("{base}/report.html"),
            "summary_csv": format!("{base}/summary.csv"),
        });
        if f.forest_cc.is_some() {
            links["forest_cc"] = json!(format!("{base}/forest/cc.svg"));
        }
        doc["links"] = links;
        doc["warnings"] = json!(f.result.warnings);
    }
    Json(doc).into_response()
}

fn finished(state: &AppState, id: &str) -> Result<Arc<Finished>, Response> {
    let job = state
        .job(id)
        .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown run {id}")))?;
    let s = job.lock();
    match (&s.finished, s.status) {
        (Some(f), _) => Ok(f.clone()),
        (None, JobStatus::Failed) => Err(error(
            StatusCode::CONFLICT,
            format!("run failed: {}", s.error.as_deref().unwrap_or("unknown error")),
        )),
        (None, status) => Err((
            StatusCode::CONFLICT,
            Json(json!({ "error": "run has not finished", "status": status })),
        )
            .into_response()),
    }
}

fn serve_bytes(headers: &HeaderMap, body: Bytes, etag: &str, content_type: &'static str) -> Response {
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"));
    let mut resp = if matches {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        Response::new(Body::from(body))
    };
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    if let Ok(v) = HeaderValue::from_str(etag) {
        h.insert(header::ETAG, v);
    }
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    resp
}

fn serve_stored(headers: &HeaderMap, s: &Served, content_type: &'static str) -> Response {
    serve_bytes(headers, s.body.clone(), &s.etag, content_type)
}

async fn run_results(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    match finished(&state, &id) {
        Ok(f) => serve_stored(&headers, &f.results_json, "application/json"),
        Err(resp) => resp,
    }
}

async fn run_report(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    match finished(&state, &id) {
        Ok(f) => serve_stored(&headers, &f.report_html, "text/html; charset=utf-8"),
        Err(resp) => resp,
    }
}

async fn run_summary_csv(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    match finished(&state, &id) {
        Ok(f) => serve_stored(&headers, &f.summary_csv, "text/csv; charset=utf-8"),
        Err(resp) => resp,
    }
}

/// Optional re-rendering options for forest plots.
#[derive(Debug, Default, Deserialize)]
pub struct ForestQuery {
    pub decimals: Option<usize>,
    pub sort: Option<SortOrder>,
}

const SVG: &str = "image/svg+xml";

async fn run_forest(
    State(state): State<AppState>,
    UrlPath((id, file)): UrlPath<(String, String)>,
    Query(q): Query<ForestQuery>,
    headers: HeaderMap,
) -> Response {
    let kind = match file.as_str() {
        "magec.svg" => ModelKind::Magec,
        "cc.svg" => ModelKind::CompleteCase,
        _ => return error(StatusCode::NOT_FOUND, format!("unknown plot {file}")),
    };
    let f = match finished(&state, &id) {
        Ok(f) => f,
        Err(resp) => return resp,
    };
    let Some(fit) = f.result.fit(kind) else {
        return error(StatusCode::NOT_FOUND, "the complete-case model was not run");
    };
    let decimals = q.decimals.unwrap_or(PERCENT_DP);
    let order = q.sort.unwrap_or_default();
    if decimals > 6 {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "decimals must be between 0 and 6");
    }
    if decimals == PERCENT_DP && order == SortOrder::Dataset {
        let stored = match kind {
            ModelKind::Magec => &f.forest_magec,
            ModelKind::CompleteCase => f.forest_cc.as_ref().expect("fit present implies plot"),
        };
        return serve_stored(&headers, stored, SVG);
    }
    match render_forest_plot_svg(&ForestPlotSpec::from_fit(fit, decimals, order)) {
        Ok(svg) => {
            let served = Served::new(svg);
            serve_stored(&headers, &served, SVG)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

const PLACEHOLDER_UI: &str = "<!DOCTYPE html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><title>magec</title></head>\n\
<body>\n<h1>magec service</h1>\n<p>No front end is installed. Start the server with <code>--ui-dir</code> \
to serve one, or use the JSON API under <code>/api</code>.</p>\n</body>\n</html>\n";

fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("svg") => SVG,
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    }
}

async fn static_files(State(state): State<AppState>, method: Method, req: Request) -> Response {
    if method != Method::GET {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    let rel = req.uri().path().trim_start_matches('/');
    let Some(root) = state.config().ui_dir.clone() else {
        return if rel.is_empty() {
            ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], PLACEHOLDER_UI).into_response()
        } else {
            error(StatusCode::NOT_FOUND, "not found")
        };
    };
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel_path = Path::new(rel);
    if !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    let path = root.join(rel_path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type_for(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}
