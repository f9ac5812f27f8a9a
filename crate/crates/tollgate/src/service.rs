//! JSON-over-HTTP routing service on the standard library's TcpListener:
//! POST /route, GET /health, GET /version. The decision path is pure over
//! immutable artifacts, so concurrent requests need no locking.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::estimator::EstimatorParameters;
use crate::registry::Registry;
use crate::router::{route, RouterConfig, RoutingDecision};

pub const WIRE_SCHEMA_VERSION: u32 = 1;

const MAX_BODY_BYTES: usize = 1 << 20;
const IDLE_POLL: Duration = Duration::from_millis(200);

/// Immutable artifacts the service answers from.
pub struct ServiceState {
    pub params: EstimatorParameters,
    pub encoder: Encoder,
    pub registry: Registry,
    pub router: RouterConfig,
}

/// One routing request. Tolerance defaults to 0: maximum quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub prompt: String,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Must match the loaded estimator family when present.
    #[serde(default)]
    pub family: Option<String>,
    /// Restrict routing to these candidates; default is the whole family.
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
    #[serde(default)]
    pub prompt_id: Option<String>,
    #[serde(default)]
    pub request_id: Option<String>,
}

/// Decision document plus measured decision latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub schema_version: u32,
    pub decision: RoutingDecision,
    pub latency_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub code: u16,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthDoc {
    pub status: String,
    pub estimator_version: String,
    pub registry_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionDoc {
    pub schema_version: u32,
    pub service: String,
    pub family: String,
    pub estimator_version: String,
    pub registry_version: u64,
    pub encoder_id: String,
}

/// Run one request through encode, predict, route, timing exactly that
/// span. The CLI calls this too, which is what keeps the two surfaces
/// byte-identical.
pub fn decide(state: &ServiceState, request: &RouteRequest) -> Result<RouteResponse> {
    if request.prompt.trim().is_empty() {
        return Err(Error::EmptyInput("prompt"));
    }
    if let Some(family) = &request.family {
        if *family != state.params.family {
            return Err(Error::UnknownFamily(family.clone()));
        }
    }
    let ids = match &request.candidates {
        Some(ids) if ids.is_empty() => return Err(Error::EmptyCandidateSet),
        Some(ids) => ids.clone(),
        None => state.params.candidate_ids(),
    };
    let tolerance = request.tolerance.unwrap_or(0.0);
    let prompt_id = request.prompt_id.clone().unwrap_or_default();

    let start = Instant::now();
    let embedding = state.encoder.encode(&prompt_id, &request.prompt)?;
    let estimates = state.params.predict_all(&embedding, &ids)?;
    let decision = route(&estimates, tolerance, &state.router, &state.registry)?;
    let latency_us = start.elapsed().as_micros() as u64;

    Ok(RouteResponse {
        schema_version: WIRE_SCHEMA_VERSION,
        decision,
        latency_us,
        request_id: request.request_id.clone(),
    })
}

/// Faults in client-supplied values are 4xx; artifact trouble is 5xx.
fn status_for(err: &Error) -> u16 {
    match err {
        Error::InvalidTolerance(_)
        | Error::EmptyInput(_)
        | Error::EmptyCandidateSet
        | Error::UnknownCandidate(_)
        | Error::UnknownFamily(_)
        | Error::Json(_) => 400,
        _ => 500,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub addr: String,
    /// Worker thread count; also the concurrent connection limit.
    pub concurrency: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: "127.0.0.1:0".into(),
            concurrency: 4,
        }
    }
}

/// A running service; dropping it shuts down gracefully.
pub struct Service {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
}

impl Service {
    pub fn start(config: &ServiceConfig, state: ServiceState) -> Result<Service> {
        state.router.validate()?;
        state.params.check_encoder(&state.encoder)?;
        let listener = TcpListener::bind(&config.addr)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let state = Arc::new(state);
        let (tx, rx) = mpsc::channel::<TcpStream>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..config.concurrency.max(1))
            .map(|_| {
                let rx = Arc::clone(&rx);
                let state = Arc::clone(&state);
                let shutdown = Arc::clone(&shutdown);
                std::thread::spawn(move || loop {
                    let next = rx.lock().expect("worker queue").recv();
                    match next {
                        Ok(stream) => handle_connection(stream, &state, &shutdown),
                        Err(_) => break,
                    }
                })
            })
            .collect();
        let acceptor = {
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        if tx.send(stream).is_err() {
                            break;
                        }
                    }
                }
            })
        };
        Ok(Service {
            addr,
            shutdown,
            acceptor: Some(acceptor),
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting, then join the workers so in-flight requests drain.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the acceptor; it re-checks the flag before handing off.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
        for handle in self.workers.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

struct HttpRequest {
    method: String,
    path: String,
    body: Vec<u8>,
    keep_alive: bool,
}

enum ReadOutcome {
    Request(HttpRequest),
    /// Clean EOF before any bytes.
    Closed,
    /// Nothing arrived within the poll window.
    Idle,
    /// Unrecoverable framing problem; respond if possible and close.
    Malformed(&'static str),
}

fn read_request(reader: &mut BufReader<TcpStream>) -> ReadOutcome {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) => return ReadOutcome::Closed,
        Ok(_) => {}
        Err(e)
            if line.is_empty()
                && matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
        {
            return ReadOutcome::Idle;
        }
        Err(_) => return ReadOutcome::Malformed("unreadable request line"),
    }
    let mut parts = line.split_whitespace();
    let (method, path) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(p), Some(v)) if v.starts_with("HTTP/1.") => {
            (m.to_owned(), p.to_owned())
        }
        _ => return ReadOutcome::Malformed("bad request line"),
    };
    let mut content_length = 0usize;
    let mut keep_alive = true;
    for _ in 0..100 {
        let mut header = String::new();
        match reader.read_line(&mut header) {
            Ok(0) => return ReadOutcome::Malformed("connection closed mid-headers"),
            Ok(_) => {}
            Err(_) => return ReadOutcome::Malformed("unreadable header"),
        }
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        let Some((name, value)) = header.split_once(':') else {
            return ReadOutcome::Malformed("header without colon");
        };
        let name = name.trim().to_ascii_lowercase();
        let value = value.trim();
        if name == "content-length" {
            match value.parse::<usize>() {
                Ok(n) if n <= MAX_BODY_BYTES => content_length = n,
                _ => return ReadOutcome::Malformed("bad content-length"),
            }
        } else if name == "connection" {
            keep_alive = !value.eq_ignore_ascii_case("close");
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return ReadOutcome::Malformed("truncated body");
    }
    ReadOutcome::Request(HttpRequest {
        method,
        path,
        body,
        keep_alive,
    })
}

fn status_text(code: u16) -> &'static str {
    match code {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    }
}

fn write_response(stream: &mut TcpStream, code: u16, body: &str, keep_alive: bool) -> bool {
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: {}\r\n\r\n",
        code,
        status_text(code),
        body.len(),
        if keep_alive { "keep-alive" } else { "close" }
    );
    stream.write_all(head.as_bytes()).is_ok()
        && stream.write_all(body.as_bytes()).is_ok()
        && stream.flush().is_ok()
}

fn error_body(code: u16, reason: impl Into<String>, request_id: Option<String>) -> String {
    serde_json::to_string(&ErrorDoc {
        code,
        reason: reason.into(),
        request_id,
    })
    .expect("error doc serializes")
}

fn handle_request(state: &ServiceState, request: &HttpRequest) -> (u16, String) {
    match (request.method.as_str(), request.path.as_str()) {
        ("POST", "/route") => match serde_json::from_slice::<RouteRequest>(&request.body) {
            Err(e) => (400, error_body(400, format!("invalid request body: {e}"), None)),
            Ok(route_request) => match decide(state, &route_request) {
                Ok(response) => (
                    200,
                    serde_json::to_string(&response).expect("response serializes"),
                ),
                Err(e) => {
                    let code = status_for(&e);
                    (code, error_body(code, e.to_string(), route_request.request_id))
                }
            },
        },
        ("GET", "/health") => (
            200,
            serde_json::to_string(&HealthDoc {
                status: "ok".into(),
                estimator_version: state.params.version.clone(),
                registry_version: state.registry.version(),
            })
            .expect("health doc serializes"),
        ),
        ("GET", "/version") => (
            200,
            serde_json::to_string(&VersionDoc {
                schema_version: WIRE_SCHEMA_VERSION,
                service: env!("CARGO_PKG_VERSION").into(),
                family: state.params.family.clone(),
                estimator_version: state.params.version.clone(),
                registry_version: state.registry.version(),
                encoder_id: state.encoder.id(),
            })
            .expect("version doc serializes"),
        ),
        (_, "/route") | (_, "/health") | (_, "/version") => {
            (405, error_body(405, "method not allowed", None))
        }
        _ => (404, error_body(404, "unknown path", None)),
    }
}

fn handle_connection(stream: TcpStream, state: &ServiceState, shutdown: &AtomicBool) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    if read_half.set_read_timeout(Some(IDLE_POLL)).is_err() {
        return;
    }
    let mut reader = BufReader::new(read_half);
    let mut writer = stream;
    loop {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        match read_request(&mut reader) {
            ReadOutcome::Request(request) => {
                let (code, body) = handle_request(state, &request);
                let keep = request.keep_alive && !shutdown.load(Ordering::SeqCst);
                if !write_response(&mut writer, code, &body, keep) || !keep {
                    break;
                }
            }
            ReadOutcome::Idle => continue,
            ReadOutcome::Closed => break,
            ReadOutcome::Malformed(reason) => {
                write_response(&mut writer, 400, &error_body(400, reason, None), false);
                break;
            }
        }
    }
}
