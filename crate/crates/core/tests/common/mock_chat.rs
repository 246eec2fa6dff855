//! A local OpenAI-compatible chat-completions server for tests.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// Maps (request index, request body) to (status, response body).
pub type Handler = Arc<dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync>;

#[derive(Clone)]
struct Shared {
    handler: Handler,
    log: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

pub struct MockChat {
    pub endpoint: String,
    log: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockChat {
    pub fn start(handler: impl Fn(usize, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let shared = Shared { handler: Arc::new(handler), log: Arc::default(), auth: Arc::default() };
        let (log, auth) = (shared.log.clone(), shared.auth.clone());
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
                addr_tx.send(listener.local_addr().expect("addr")).expect("send addr");
                let app = Router::new()
                    .route("/v1/chat/completions", post(chat))
                    .with_state(shared);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .expect("serve");
            });
        });
        let addr = addr_rx.recv().expect("server address");
        Self {
            endpoint: format!("http://{addr}/v1"),
            log,
            auth,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.log.lock().unwrap().clone()
    }

    /// `Authorization` header of every request, in arrival order.
    pub fn authorizations(&self) -> Vec<Option<String>> {
        self.auth.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Drop for MockChat {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn chat(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let authorization = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(String::from);
    s.auth.lock().unwrap().push(authorization);
    let index = {
        let mut log = s.log.lock().unwrap();
        log.push(body.clone());
        log.len() - 1
    };
    let (status, reply) = (s.handler)(index, &body);
    (StatusCode::from_u16(status).expect("status"), Json(reply))
}

pub fn completion(content: &str) -> Value {
    completion_with(content, "stop")
}

pub fn completion_with(content: &str, finish_reason: &str) -> Value {
    json!({
        "id": "cmpl-test",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": content },
            "finish_reason": finish_reason,
        }],
    })
}

/// Text of the last user message in a request.
pub fn last_user_text(body: &Value) -> String {
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let Some(last) = messages.iter().rev().find(|m| m["role"] == "user") else {
        return String::new();
    };
    match &last["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

pub fn is_evaluation(body: &Value) -> bool {
    let text = last_user_text(body);
    text.contains("Step to check") || text.contains("Score:")
}

/// A cooperative model: generation answers with a fixed two-step derivation,
/// evaluation approves every step.
pub fn oracle_handler(answer: &'static str) -> impl Fn(usize, &Value) -> (u16, Value) + Send + Sync {
    move |_, body| {
        if is_evaluation(body) {
            (200, completion("The step is sound.\nScore: 1"))
        } else {
            let text = format!(
                "### Step 1: Multiply the two factors.\n### Step 2: Six times seven is {answer}.\n### Final Answer: {answer}"
            );
            (200, completion(&text))
        }
    }
}
