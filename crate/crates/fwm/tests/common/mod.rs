//! Minimal chat-completions stub on a local socket.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use fwm::llm::Endpoint;

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

pub fn chat(content: &str) -> Reply {
    let body = serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]});
    Reply { status: 200, body: body.to_string() }
}

pub fn status(code: u16) -> Reply {
    Reply { status: code, body: "{\"error\":\"stub\"}".into() }
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

pub struct Stub {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl Stub {
    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn endpoint(&self) -> Endpoint {
        endpoint(&self.url)
    }
}

pub fn endpoint(url: &str) -> Endpoint {
    Endpoint {
        url: url.into(),
        model: "stub-model".into(),
        api_key: None,
        max_retries: 3,
        timeout: Duration::from_secs(10),
        backoff: Duration::ZERO,
    }
}

/// Serves `replies` in order, repeating the last one once exhausted.
pub fn spawn(replies: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let reply = replies[i.min(replies.len() - 1)].clone();
            if let Some(rec) = serve(stream, &reply) {
                log.lock().unwrap().push(rec);
            }
        }
    });
    Stub { url, requests }
}

fn serve(mut stream: TcpStream, reply: &Reply) -> Option<Recorded> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().ok()?,
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let response = format!(
        "HTTP/1.1 {} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    stream.write_all(response.as_bytes()).ok()?;
    stream.flush().ok()?;
    Some(Recorded { authorization, body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null) })
}

/// An address nothing listens on.
pub fn refused_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1/chat/completions")
}
