//! Start the HTTP service on an ephemeral port, upload the sample data,
//! run a short analysis through the API and fetch the results.
//!
//! ```bash
//! cargo run --release --example serve
//! ```

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use magec::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};

/// Minimal blocking HTTP/1.1 client, enough for the demo.
fn request(addr: &str, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut stream = TcpStream::connect(addr)?;
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes())?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw)?;
    let status = raw.split(' ').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let payload = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Ok((status, payload))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let addr = listener.local_addr()?.to_string();
    let state = AppState::new(ServiceConfig { log_requests: false, ..ServiceConfig::default() });
    runtime.spawn(async move { axum::serve(listener, router(state)).await });
    println!("listening on http://{addr}");

    let (_, body) = request(&addr, "POST", "/api/datasets/sample", None)?;
    let dataset: Value = serde_json::from_str(&body)?;
    println!("dataset {} with {} studies", dataset["dataset_id"], dataset["n_studies"]);

    let run = json!({
        "dataset_id": dataset["dataset_id"],
        "mcmc": { "n_iter": 20000, "burn_in": 10000, "thin": 5, "seed": 1 }
    });
    let (status, body) = request(&addr, "POST", "/api/runs", Some(&run.to_string()))?;
    let run_id = serde_json::from_str::<Value>(&body)?["run_id"].as_str().unwrap_or_default().to_string();
    println!("run {run_id} accepted ({status})");

    loop {
        let (_, body) = request(&addr, "GET", &format!("/api/runs/{run_id}"), None)?;
        let doc: Value = serde_json::from_str(&body)?;
        println!("status {} at {:.0}%", doc["status"], 100.0 * doc["fraction"].as_f64().unwrap_or(0.0));
        if doc["status"] == "done" || doc["status"] == "failed" {
            break;
        }
        std::thread::sleep(Duration::from_millis(200));
    }

    let (_, body) = request(&addr, "GET", &format!("/api/runs/{run_id}/results"), None)?;
    let results: Value = serde_json::from_str(&body)?;
    let median = results["magec"]["overall"]["median"].as_f64().unwrap_or(f64::NAN);
    println!("overall incidence median: {:.3}%", 100.0 * median);
    Ok(())
}
