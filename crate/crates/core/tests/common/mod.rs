#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

pub enum Reply {
    Json(Value),
    Status(u16),
    /// Close the connection without answering.
    Hangup,
}

type Handler = dyn Fn(&Value) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server answering chat-completion posts from a closure.
pub struct MockServer {
    pub addr: String,
    pub requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let stop = stop.clone();
            let requests = requests.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let handler = handler.clone();
                    let requests = requests.clone();
                    thread::spawn(move || serve(conn, &*handler, &requests));
                }
            });
        }
        MockServer { addr, requests, stop }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
    }
}

fn serve(mut conn: TcpStream, handler: &Handler, requests: &AtomicUsize) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    requests.fetch_add(1, Ordering::SeqCst);
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, payload) = match handler(&request) {
        Reply::Hangup => return,
        Reply::Status(code) => (code, json!({"error": "injected"}).to_string()),
        Reply::Json(v) => (200, v.to_string()),
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let _ = write!(
        conn,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = conn.flush();
}

/// Chat-completions body whose logprobs replay `positions`, each a sampled
/// token plus its top alternatives.
pub fn chat_response(positions: &[(&str, f64, &[(&str, f64)])]) -> Value {
    let content: Vec<Value> = positions
        .iter()
        .map(|(tok, lp, top)| {
            json!({
                "token": tok,
                "logprob": lp,
                "top_logprobs": top.iter().map(|(t, l)| json!({"token": t, "logprob": l})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let text: String = positions.iter().map(|p| p.0).collect();
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "logprobs": {"content": content},
            "finish_reason": "stop",
        }],
    })
}

/// User message of a chat request.
pub fn user_text(request: &Value) -> String {
    request["messages"][1]["content"].as_str().unwrap_or_default().to_string()
}
