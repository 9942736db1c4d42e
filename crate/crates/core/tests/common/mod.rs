#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use serde_json::Value;

pub struct Request {
    pub method: String,
    pub path: String,
    pub body: Value,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay_ms: u64,
}

impl Reply {
    pub fn json(body: Value) -> Reply {
        Reply { status: 200, body: body.to_string(), delay_ms: 0 }
    }

    pub fn status(status: u16) -> Reply {
        Reply { status, body: "{\"error\":\"injected\"}".into(), delay_ms: 0 }
    }

    pub fn after(mut self, delay_ms: u64) -> Reply {
        self.delay_ms = delay_ms;
        self
    }
}

type Handler = dyn Fn(&Request, usize) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server on a loopback port. Every request gets its own
/// thread; the handler sees the request and the 0-based call index.
pub struct Stub {
    pub url: String,
    calls: Arc<AtomicUsize>,
    active: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<Request>>>,
}

impl Stub {
    pub fn start(handler: impl Fn(&Request, usize) -> Reply + Send + Sync + 'static) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let stub = Stub {
            url,
            calls: Arc::default(),
            active: Arc::default(),
            peak: Arc::default(),
            log: Arc::default(),
        };
        let handler: Arc<Handler> = Arc::new(handler);
        let (calls, active, peak, log) = (stub.calls.clone(), stub.active.clone(), stub.peak.clone(), stub.log.clone());
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let (handler, calls, active, peak, log) =
                    (handler.clone(), calls.clone(), active.clone(), peak.clone(), log.clone());
                std::thread::spawn(move || {
                    let Some(req) = read_request(&conn) else { return };
                    let n = calls.fetch_add(1, Ordering::SeqCst);
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let reply = handler(&req, n);
                    if reply.delay_ms > 0 {
                        std::thread::sleep(std::time::Duration::from_millis(reply.delay_ms));
                    }
                    active.fetch_sub(1, Ordering::SeqCst);
                    log.lock().unwrap().push(req);
                    let _ = write_reply(conn, &reply);
                });
            }
        });
        stub
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn bodies(&self, path: &str) -> Vec<Value> {
        self.log.lock().unwrap().iter().filter(|r| r.path == path).map(|r| r.body.clone()).collect()
    }
}

fn read_request(conn: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(conn);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_owned();
    let path = parts.next()?.to_owned();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    let body = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).ok()? };
    Some(Request { method, path, body })
}

fn write_reply(mut conn: TcpStream, reply: &Reply) -> std::io::Result<()> {
    let head = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reply.body.len()
    );
    conn.write_all(head.as_bytes())?;
    conn.write_all(reply.body.as_bytes())?;
    conn.flush()
}

pub fn png(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    driftline::backend::image_io::encode_png(&RgbImage::from_pixel(width, height, Rgb(rgb))).unwrap()
}

pub fn b64(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn fixture_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn fixture(rel: &str) -> Value {
    serde_json::from_slice(&std::fs::read(fixture_path(rel)).unwrap()).unwrap()
}
