#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use chrono::NaiveDate;
use newscycle::config::RunConfig;
use newscycle::corpus::{Category, EventSpec};
use newscycle::synth::{generate, write_corpus, SynthPlan};

pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Response {
            status,
            body: body.into(),
        }
    }
}

/// A one-request-per-connection HTTP/1.1 server on a random local port.
pub struct MockServer {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &Request) -> Response + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handler = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let mut parts = line.split_whitespace();
                    let method = parts.next().unwrap_or("").to_string();
                    let path = parts.next().unwrap_or("").to_string();
                    let mut headers = Vec::new();
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        let h = h.trim_end();
                        if h.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
                        }
                    }
                    let len = headers
                        .iter()
                        .find(|(k, _)| k == "content-length")
                        .and_then(|(_, v)| v.parse().ok())
                        .unwrap_or(0);
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let resp = handler(
                        n,
                        &Request {
                            method,
                            path,
                            headers,
                            body,
                        },
                    );
                    let head = format!(
                        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        resp.status,
                        resp.body.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(&resp.body);
                    let _ = stream.flush();
                });
            }
        });
        MockServer { addr, hits }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

pub fn keywords(prefix: &str) -> Vec<String> {
    (0..10).map(|i| format!("{prefix}kw{i}")).collect()
}

pub fn event(id: &str, category: Category, onset: (i32, u32, u32)) -> EventSpec {
    EventSpec {
        event_id: id.to_string(),
        name: id.to_string(),
        onset_date: NaiveDate::from_ymd_opt(onset.0, onset.1, onset.2).unwrap(),
        category,
        keywords: keywords(&id.replace('-', "")),
        location_query: None,
    }
}

/// Writes each event's synthetic corpus and returns a config pointing at
/// `root/corpus` and `root/out`.
pub fn synthetic_setup(root: &Path, events: &[(EventSpec, SynthPlan)]) -> RunConfig {
    let corpus = root.join("corpus");
    for (ev, plan) in events {
        let (c, m) = generate(plan, ev).expect("generate");
        write_corpus(&c, &m, &corpus).expect("write corpus");
    }
    let mut cfg = RunConfig::default();
    cfg.paths.corpus_dir = corpus;
    cfg.paths.output_dir = root.join("out");
    cfg.events = events.iter().map(|(e, _)| e.clone()).collect();
    cfg
}
