//! Scripted HTTP server for exercising the client without a real provider.
//!
//! Responses are served in script order, then the fallback repeats. The
//! server counts requests, tracks peak concurrency and records arrival
//! times so tests can check admission limits from the server side.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
    pub headers: Vec<(String, String)>,
    pub delay: Duration,
}

impl MockResponse {
    /// 200 with a chat-completion body carrying `text`.
    pub fn completion(text: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
        });
        Self::status(200, &body.to_string())
    }

    pub fn status(status: u16, body: &str) -> Self {
        MockResponse {
            status,
            body: body.to_string(),
            headers: Vec::new(),
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }
}

#[derive(Debug, Default)]
pub struct MockStats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    arrivals: Mutex<Vec<Instant>>,
    bodies: Mutex<Vec<String>>,
    auth: Mutex<Vec<Option<String>>>,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn arrivals(&self) -> Vec<Instant> {
        self.arrivals.lock().expect("stats lock").clone()
    }

    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().expect("stats lock").clone()
    }

    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.auth.lock().expect("stats lock").clone()
    }

    /// Largest number of arrivals inside any window of length `window`.
    pub fn max_in_window(&self, window: Duration) -> usize {
        let mut t = self.arrivals();
        t.sort();
        let mut best = 0;
        let mut lo = 0;
        for hi in 0..t.len() {
            while t[hi].duration_since(t[lo]) >= window {
                lo += 1;
            }
            best = best.max(hi - lo + 1);
        }
        best
    }
}

pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

struct Script {
    queue: Mutex<VecDeque<MockResponse>>,
    fallback: MockResponse,
}

impl MockServer {
    pub fn start(script: Vec<MockResponse>, fallback: MockResponse) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(MockStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let script = Arc::new(Script {
            queue: Mutex::new(script.into()),
            fallback,
        });
        let handle = {
            let (stats, stop) = (stats.clone(), stop.clone());
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let (stats, script) = (stats.clone(), script.clone());
                    thread::spawn(move || {
                        let _ = serve(conn, &stats, &script);
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            stats,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn serve(conn: TcpStream, stats: &MockStats, script: &Script) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().unwrap_or(0);
            } else if name.eq_ignore_ascii_case("authorization") {
                auth = Some(value.to_string());
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    stats.arrivals.lock().expect("stats lock").push(Instant::now());
    stats.bodies.lock().expect("stats lock").push(String::from_utf8_lossy(&body).into_owned());
    stats.auth.lock().expect("stats lock").push(auth);

    let resp = script
        .queue
        .lock()
        .expect("script lock")
        .pop_front()
        .unwrap_or_else(|| script.fallback.clone());
    thread::sleep(resp.delay);
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut out = conn;
    let mut head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        resp.status,
        reason(resp.status),
        resp.body.len()
    );
    for (k, v) in &resp.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    out.write_all(head.as_bytes())?;
    out.write_all(resp.body.as_bytes())?;
    out.flush()
}
