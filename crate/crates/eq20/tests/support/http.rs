//! In-process HTTP helpers shared by the API and acceptance tests.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use eq20::api::{router, Service, ServiceConfig};
use eq20_core::kb::starter_kb;

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Value,
}

pub fn app_with(cfg: ServiceConfig) -> (Router, Arc<Service>) {
    let svc = Arc::new(Service::new(cfg).expect("service starts"));
    (router(svc.clone()), svc)
}

pub fn app() -> Router {
    app_with(ServiceConfig::new(starter_kb())).0
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    raw(app, req).await
}

pub async fn raw(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.expect("infallible router");
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply { status, headers, body }
}

pub fn error_code(r: &Reply) -> &str {
    r.body["error"]["code"].as_str().unwrap_or("")
}

/// Plays the phishing case study over HTTP, answering scripted questions
/// from the dialogue and anything else with phishing's reference options.
/// Returns every response with the session id removed.
pub async fn phishing_game(app: &Router) -> Vec<Value> {
    let kb = starter_kb();
    let phishing = kb.concept_index("phishing").unwrap();
    let scripted: &[(&str, &[&str])] = &[
        ("av-delivery", &["a"]),
        ("av-goal", &["a"]),
        ("av-trusted-sender", &["yes"]),
        ("av-suspicious-url", &["yes"]),
        ("av-link-attachment", &["yes"]),
        ("av-entered-credentials", &["no"]),
        ("av-unusual-activity", &["no"]),
        ("av-emails-published", &["yes"]),
    ];
    let start = call(
        app,
        Method::POST,
        "/api/v1/sessions",
        Some(
            json!({"description": "I received an email asking me to verify my account.", "category": "attack-vectors"}),
        ),
    )
    .await;
    assert_eq!(start.status, StatusCode::CREATED, "{}", start.body);
    let id = start.body["session_id"].as_str().unwrap().to_string();
    let mut transcript = vec![strip(start.body.clone())];
    let mut question = start.body["question"].clone();
    loop {
        let qid = question["id"].as_str().unwrap().to_string();
        let options: Vec<String> = match scripted.iter().find(|(q, _)| *q == qid) {
            Some((_, a)) => a.iter().map(|s| s.to_string()).collect(),
            None => {
                let n = kb.question_index(&qid).unwrap();
                let cell = kb.cell(phishing, n).unwrap();
                cell.reference
                    .iter()
                    .map(|&l| kb.question(n).options[l].id.clone())
                    .collect()
            }
        };
        let r = call(
            app,
            Method::POST,
            &format!("/api/v1/sessions/{id}/answers"),
            Some(json!({"question_id": qid, "option_ids": options})),
        )
        .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        transcript.push(r.body.clone());
        if r.body.get("result").is_some() {
            break;
        }
        question = r.body["question"].clone();
    }
    let explanation = call(app, Method::GET, &format!("/api/v1/sessions/{id}/explanation"), None).await;
    assert_eq!(explanation.status, StatusCode::OK);
    transcript.push(explanation.body);
    let snapshot = call(app, Method::GET, &format!("/api/v1/sessions/{id}"), None).await;
    assert_eq!(snapshot.status, StatusCode::OK);
    transcript.push(strip(snapshot.body));
    transcript
}

fn strip(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("session_id");
    }
    v
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares against a checked-in golden file. Set `EQ20_BLESS=1` to rewrite it.
pub fn assert_golden(name: &str, actual: &Value) {
    let path = golden_path(name);
    let rendered = serde_json::to_string_pretty(actual).unwrap() + "\n";
    if std::env::var_os("EQ20_BLESS").is_some() {
        std::fs::write(&path, &rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let expected: Value = serde_json::from_str(&expected).unwrap();
    assert_eq!(&expected, actual, "golden mismatch for {name}");
}
