//! Server and CLI drivers shared by the app tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Output;
use std::time::{Duration, Instant};

use dragforge::config::Config;
use dragforge::pipeline::Artifact;
use dragforge::service::{router, AppState};
use serde_json::Value;

pub fn scenario_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn cli(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_dragforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs the CLI on a config and returns its artifacts by name.
pub fn cli_artifacts(config: &Path, out: &Path) -> BTreeMap<String, Vec<u8>> {
    let o = cli(&["run", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    Artifact::ALL
        .iter()
        .map(|a| (a.name().to_string(), std::fs::read(out.join(a.file_name())).unwrap()))
        .collect()
}

pub struct Server {
    pub base: String,
    pub client: reqwest::Client,
    _root: tempfile::TempDir,
}

pub async fn start_server() -> Server {
    let root = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let app = router(AppState::new(root.path()));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        _root: root,
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn post(&self, path: &str, body: impl Into<reqwest::Body>) -> (u16, Value) {
        let r = self.client.post(self.url(path)).body(body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn put(&self, path: &str, body: Vec<u8>) -> (u16, Value) {
        let r = self.client.put(self.url(path)).body(body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    pub async fn get_json(&self, path: &str) -> (u16, Value) {
        let (s, b) = self.get_bytes(path).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    /// Creates a session from config text and uploads its inputs from `base`.
    pub async fn create_and_upload(&self, config_text: &str, base: &Path) -> String {
        let (status, rec) = self.post("/sessions", config_text.to_string()).await;
        assert_eq!(status, 201, "{rec}");
        let id = rec["id"].as_str().unwrap().to_string();
        let config = Config::from_json(config_text).unwrap();
        for (name, path) in config.inputs() {
            let (s, rec) = self
                .put(&format!("/sessions/{id}/inputs/{}", name.as_str()), std::fs::read(base.join(path)).unwrap())
                .await;
            assert_eq!(s, 200, "{rec}");
        }
        id
    }

    pub async fn wait_done(&self, id: &str) -> Value {
        let start = Instant::now();
        loop {
            let (_, rec) = self.get_json(&format!("/sessions/{id}")).await;
            if rec["status"] == "done" || rec["status"] == "failed" {
                return rec;
            }
            assert!(start.elapsed() < Duration::from_secs(60), "session {id} stuck: {rec}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Runs every stage with empty bodies and downloads every artifact.
    pub async fn run_all(&self, config_text: &str, base: &Path) -> (String, BTreeMap<String, Vec<u8>>) {
        let id = self.create_and_upload(config_text, base).await;
        for stage in ["segment", "mask"] {
            let (s, rec) = self.post(&format!("/sessions/{id}/{stage}"), "").await;
            assert_eq!(s, 200, "{stage}: {rec}");
        }
        let (s, rec) = self.post(&format!("/sessions/{id}/drag"), "").await;
        assert_eq!(s, 202, "{rec}");
        let rec = self.wait_done(&id).await;
        assert_eq!(rec["status"], "done", "{rec}");
        let mut out = BTreeMap::new();
        for a in Artifact::ALL {
            let (s, bytes) = self.get_bytes(&format!("/sessions/{id}/artifacts/{}", a.name())).await;
            assert_eq!(s, 200, "{}", a.name());
            out.insert(a.name().to_string(), bytes);
        }
        (id, out)
    }
}
