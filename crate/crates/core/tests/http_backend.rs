#[path = "common/mock_chat.rs"]
mod mock_chat;

use std::sync::Arc;

use comcts_core::backend::HttpChatBackend;
use comcts_core::{
    evaluate_node, generate_continuation, BackendError, Engine, Ensemble, PolicyDescriptor,
    PromptSet, QuestionRecord, SearchConfig, Step,
};
use mock_chat::{completion, completion_with, oracle_handler, MockChat};
use serde_json::json;

fn question(image: Option<&str>) -> QuestionRecord {
    QuestionRecord {
        id: "q1".into(),
        text: "What is 6 * 7?".into(),
        image: image.map(String::from),
        ground_truth: "42".into(),
        topic: None,
    }
}

fn backend(server: &MockChat, name: &str) -> HttpChatBackend {
    let mut desc = PolicyDescriptor::http(name, &server.endpoint, "mock-model");
    desc.retry_base_ms = 5;
    HttpChatBackend::new(&desc, PromptSet::default()).unwrap()
}

#[test]
fn generation_request_and_parse() {
    let server = MockChat::start(|_, _| (200, completion("### Step 1: a\n### Final Answer: 42")));
    let b = backend(&server, "gen");
    let out = generate_continuation(&b, &question(None), &[Step::new("given", false)], 0).unwrap();
    assert_eq!(out.steps, vec![Step::new("a", false), Step::new("42", true)]);
    assert!(!out.truncated);

    let req = &server.requests()[0];
    assert_eq!(req["model"], "mock-model");
    assert_eq!(req["temperature"], 1.0);
    assert_eq!(req["max_tokens"], 1024);
    assert_eq!(req["messages"][0]["role"], "system");
    let user = req["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("What is 6 * 7?"));
    assert!(user.contains("### Step 1: given"));
}

#[test]
fn image_questions_send_content_parts() {
    let server = MockChat::start(|_, _| (200, completion("### Final Answer: 42")));
    let b = backend(&server, "img");
    generate_continuation(&b, &question(Some("https://x/img.png")), &[], 0).unwrap();
    let content = &server.requests()[0]["messages"][1]["content"];
    assert_eq!(content[0]["type"], "text");
    assert_eq!(content[1], json!({"type": "image_url", "image_url": {"url": "https://x/img.png"}}));
}

#[test]
fn length_cut_generation_is_not_terminal() {
    let server = MockChat::start(|_, _| {
        (200, completion_with("### Step 1: a\n### Final Answer: 4", "length"))
    });
    let b = backend(&server, "cut");
    let out = generate_continuation(&b, &question(None), &[], 0).unwrap();
    assert!(out.truncated);
    assert!(!out.steps.last().unwrap().terminal);
}

#[test]
fn throttling_is_retried() {
    let server = MockChat::start(|i, _| {
        if i == 0 {
            (429, json!({"error": "slow down"}))
        } else {
            (200, completion("Score: 0.5"))
        }
    });
    let b = backend(&server, "retry");
    let score = evaluate_node(&b, &question(None), &[], &Step::new("a", false)).unwrap();
    assert_eq!(score, 0.5);
    assert_eq!(server.request_count(), 2);
}

#[test]
fn server_errors_exhaust_attempts() {
    let server = MockChat::start(|_, _| (503, json!({"error": "down"})));
    let b = backend(&server, "down");
    let err = generate_continuation(&b, &question(None), &[], 0).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 503, .. }), "{err}");
    assert_eq!(server.request_count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockChat::start(|_, _| (400, json!({"error": "bad request"})));
    let b = backend(&server, "bad");
    let err = generate_continuation(&b, &question(None), &[], 0).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn malformed_score_reprompts_once() {
    let server = MockChat::start(|_, _| (200, completion("looks fine to me")));
    let b = backend(&server, "vague");
    let err = evaluate_node(&b, &question(None), &[], &Step::new("a", false)).unwrap_err();
    assert!(matches!(err, BackendError::UnparseableScore(_)));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    let retry = reqs[1]["messages"].as_array().unwrap();
    assert_eq!(retry.len(), 4);
    assert_eq!(retry[2]["role"], "assistant");
    assert_eq!(reqs[1]["temperature"], 0.0);
}

#[test]
fn reprompt_can_recover() {
    let server = MockChat::start(|i, _| {
        (200, completion(if i == 0 { "hmm" } else { "Score: -0.25" }))
    });
    let b = backend(&server, "recover");
    let score = evaluate_node(&b, &question(None), &[], &Step::new("a", false)).unwrap();
    assert_eq!(score, -0.25);
}

#[test]
fn unreachable_endpoint() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut desc = PolicyDescriptor::http("gone", format!("http://127.0.0.1:{port}/v1"), "m");
    desc.retry_base_ms = 1;
    desc.max_attempts = 2;
    let b = HttpChatBackend::new(&desc, PromptSet::default()).unwrap();
    let err = generate_continuation(&b, &question(None), &[], 0).unwrap_err();
    assert!(matches!(err, BackendError::Unreachable(_)));
}

#[test]
fn bearer_token_from_environment() {
    std::env::set_var("COMCTS_API_KEY_AUTHED", "sekrit");
    let server = MockChat::start(|_, _| (200, completion("Score: 1")));
    evaluate_node(&backend(&server, "authed"), &question(None), &[], &Step::new("a", false)).unwrap();
    evaluate_node(&backend(&server, "anonymous"), &question(None), &[], &Step::new("a", false)).unwrap();
    assert_eq!(server.authorizations(), vec![Some("Bearer sekrit".to_string()), None]);
    assert!(!server.requests()[0].to_string().contains("sekrit"));
}

#[test]
fn end_to_end_search() {
    let server = MockChat::start(oracle_handler("42"));
    let members: Vec<Arc<dyn comcts_core::PolicyBackend>> =
        vec![Arc::new(backend(&server, "a")), Arc::new(backend(&server, "b"))];
    let engine = Engine::new(Ensemble::concurrent(members, 4).unwrap(), SearchConfig::default()).unwrap();
    let outcome = engine.search(&question(None)).unwrap();
    assert!(outcome.succeeded);
    assert_eq!(outcome.iterations_used, 1);
    let path = outcome.effective_path.unwrap();
    assert_eq!(path.len(), 3);
    // 2 generations + 6 nodes x 2 voters
    assert_eq!(server.request_count(), 14);
}
