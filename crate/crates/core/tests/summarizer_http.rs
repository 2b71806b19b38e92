//! The HTTP client against a local mock chat-completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mmsurv::summarizer::{
    summarize_batch, BatchOptions, ChatEndpoint, DecodingParams, EndpointError, HttpEndpoint,
    Report,
};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    body: String,
}

/// Serves until the test process exits; `respond` maps a request body to
/// `(status, body)`.
fn serve(
    respond: impl Fn(&str) -> (u16, String) + Send + Sync + 'static,
) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let respond = Arc::new(respond);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let log = Arc::clone(&log);
            let respond = Arc::clone(&respond);
            thread::spawn(move || handle(stream, &*respond, &log));
        }
    });
    (url, seen)
}

fn handle(stream: TcpStream, respond: &dyn Fn(&str) -> (u16, String), log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let (mut length, mut auth) = (0usize, None);
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (name, value) = line.split_once(':').unwrap();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap(),
                "authorization" => auth = Some(value.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let body = String::from_utf8(body).unwrap();
        let (status, reply) = respond(&body);
        log.lock().unwrap().push(Seen { auth, body });
        let mut out = &stream;
        write!(
            out,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{reply}",
            reply.len()
        )
        .unwrap();
        out.flush().unwrap();
    }
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

fn user_text(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    v["messages"][2]["content"].as_str().unwrap().to_string()
}

fn options() -> BatchOptions {
    let mut o = BatchOptions::new("test-model", DecodingParams::new(3));
    o.retry.base_delay = Duration::from_millis(1);
    o
}

fn reports(n: usize) -> Vec<Report> {
    (0..n)
        .map(|i| Report {
            case_id: format!("TCGA-{i:02}"),
            text: format!("report {i}"),
        })
        .collect()
}

#[test]
fn fixed_reply_for_every_case() {
    let (url, seen) = serve(|_| (200, completion("SUMMARY")));
    let endpoint = HttpEndpoint::new(url, Some("secret".into()), Duration::from_secs(10)).unwrap();
    let result = summarize_batch(&reports(12), &endpoint, &options()).unwrap();
    assert!(result.failures.is_empty());
    assert_eq!(result.summaries.len(), 12);
    assert!(result.summaries.iter().all(|s| s.summary == "SUMMARY"));
    let ids: Vec<_> = result.summaries.iter().map(|s| s.case_id.clone()).collect();
    let expected: Vec<_> = reports(12).into_iter().map(|r| r.case_id).collect();
    assert_eq!(ids, expected);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 12);
    assert!(seen
        .iter()
        .all(|s| s.auth.as_deref() == Some("Bearer secret")));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    let keys: Vec<&str> = body
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys.len(), 5);
    for k in ["model", "messages", "temperature", "max_tokens", "seed"] {
        assert!(keys.contains(&k));
    }
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 1024);
}

#[test]
fn persistent_500_is_isolated() {
    let (url, seen) = serve(|body| {
        if user_text(body) == "report 3" {
            (500, "{\"error\":\"overloaded\"}".into())
        } else {
            (200, completion(&user_text(body).to_uppercase()))
        }
    });
    let endpoint = HttpEndpoint::new(url, None, Duration::from_secs(10)).unwrap();
    let result = summarize_batch(&reports(6), &endpoint, &options()).unwrap();
    assert_eq!(result.summaries.len(), 5);
    assert_eq!(result.failures.len(), 1);
    assert_eq!(result.failures[0].case_id, "TCGA-03");
    assert_eq!(result.failures[0].attempts, 3);
    assert!(result.failures[0].error.contains("500"));
    assert_eq!(result.summaries[3].summary, "REPORT 4");
    let attempts = seen
        .lock()
        .unwrap()
        .iter()
        .filter(|s| user_text(&s.body) == "report 3")
        .count();
    assert_eq!(attempts, 3);
    assert!(seen.lock().unwrap().iter().all(|s| s.auth.is_none()));
}

#[test]
fn malformed_reply_fails_without_retry() {
    let (url, seen) = serve(|_| (200, "{\"choices\": []}".into()));
    let endpoint = HttpEndpoint::new(url, None, Duration::from_secs(10)).unwrap();
    let result = summarize_batch(&reports(2), &endpoint, &options()).unwrap();
    assert_eq!(result.failures.len(), 2);
    assert!(result.failures.iter().all(|f| f.attempts == 1));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let endpoint = HttpEndpoint::new(url, None, Duration::from_secs(2)).unwrap();
    assert!(matches!(
        endpoint.complete("{}"),
        Err(EndpointError::Transport(_))
    ));
}
