//! Client and reference server for the remote policy wire protocol.
//!
//! Frames are single-line JSON objects. Over `tcp://` each request and
//! response is one line on a connection kept for the whole episode. Over
//! `http://` each request is a `POST /act` with the same JSON body.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::{parse_response, response_to_json, Observation, Policy, PolicyResponse, WireRequest};
use crate::error::PolicyError;
use crate::geometry::Point2;
use crate::sim::ACTION_LEN;
use crate::tokenizer::ActionTokens;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port` of a newline-delimited JSON stream.
    Tcp(String),
    /// Full URL of the `/act` route.
    Http(String),
}

impl FromStr for Endpoint {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.trim_end_matches('/').to_string()));
        }
        if let Some(rest) = s.strip_prefix("http://") {
            let (host, path) = rest.split_once('/').unwrap_or((rest, ""));
            let path = if path.is_empty() { "act" } else { path };
            return Ok(Endpoint::Http(format!("http://{host}/{path}")));
        }
        Err(PolicyError::Transport(format!(
            "unsupported endpoint `{s}` (expected tcp://host:port or http://host:port)"
        )))
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

pub struct RemoteClient {
    endpoint: Endpoint,
    timeout: Duration,
    stream: Option<BufReader<TcpStream>>,
    agent: Option<ureq::Agent>,
    last_latency_ms: Option<f64>,
}

impl RemoteClient {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        let agent = match endpoint {
            Endpoint::Http(_) => Some(
                ureq::Agent::config_builder()
                    .timeout_global(Some(timeout))
                    .http_status_as_error(false)
                    .build()
                    .into(),
            ),
            Endpoint::Tcp(_) => None,
        };
        Self {
            endpoint,
            timeout,
            stream: None,
            agent,
            last_latency_ms: None,
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn last_latency_ms(&self) -> Option<f64> {
        self.last_latency_ms
    }

    fn connect(&mut self, addr: &str) -> Result<&mut BufReader<TcpStream>, PolicyError> {
        if self.stream.is_none() {
            let sock: SocketAddr = addr
                .to_socket_addrs()
                .map_err(|e| PolicyError::Transport(format!("{addr}: {e}")))?
                .next()
                .ok_or_else(|| PolicyError::Transport(format!("{addr}: no address")))?;
            let stream = TcpStream::connect_timeout(&sock, self.timeout).map_err(|e| {
                if is_timeout(&e) {
                    PolicyError::Timeout(self.timeout.as_secs_f64())
                } else {
                    PolicyError::Transport(format!("{addr}: {e}"))
                }
            })?;
            let _ = stream.set_nodelay(true);
            self.stream = Some(BufReader::new(stream));
        }
        Ok(self.stream.as_mut().expect("just connected"))
    }

    fn call_tcp(&mut self, addr: &str, body: &str) -> Result<String, PolicyError> {
        let timeout = self.timeout;
        let secs = timeout.as_secs_f64();
        let reader = self.connect(addr)?;
        let stream = reader.get_mut();
        stream
            .set_write_timeout(Some(timeout))
            .and_then(|_| stream.set_read_timeout(Some(timeout)))
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let io_err = |e: io::Error| if is_timeout(&e) { PolicyError::Timeout(secs) } else { PolicyError::Transport(e.to_string()) };
        stream.write_all(body.as_bytes()).map_err(io_err)?;
        stream.write_all(b"\n").map_err(io_err)?;
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(io_err)?;
        if n == 0 {
            return Err(PolicyError::Transport("connection closed by policy server".into()));
        }
        Ok(line)
    }

    fn call_http(&mut self, url: &str, body: &str) -> Result<String, PolicyError> {
        let secs = self.timeout.as_secs_f64();
        let agent = self.agent.as_ref().expect("http endpoint has an agent");
        let map = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => PolicyError::Timeout(secs),
            ureq::Error::Io(io) if is_timeout(&io) => PolicyError::Timeout(secs),
            other => PolicyError::Transport(other.to_string()),
        };
        let mut resp = agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(map)?;
        resp.body_mut().read_to_string().map_err(map)
    }

    /// Sends one request frame and validates the reply shape. Any failure
    /// drops the stream so the next call starts on a fresh connection.
    pub fn call(&mut self, req: &WireRequest) -> Result<PolicyResponse, PolicyError> {
        let body = serde_json::to_string(req).expect("request serializes");
        let start = Instant::now();
        let raw = match self.endpoint.clone() {
            Endpoint::Tcp(addr) => self.call_tcp(&addr, &body),
            Endpoint::Http(url) => self.call_http(&url, &body),
        };
        self.last_latency_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        let parsed = raw.and_then(|line| parse_response(&line));
        if parsed.is_err() {
            self.stream = None;
        }
        parsed
    }
}

/// [`Policy`] that forwards rendered observations to a remote server.
pub struct RemotePolicy {
    client: RemoteClient,
    codebook_k: usize,
}

impl RemotePolicy {
    pub fn new(endpoint: Endpoint, timeout: Duration, codebook_k: usize) -> Self {
        Self {
            client: RemoteClient::new(endpoint, timeout),
            codebook_k,
        }
    }
}

impl Policy for RemotePolicy {
    fn name(&self) -> String {
        match self.client.endpoint() {
            Endpoint::Tcp(a) => format!("remote:tcp://{a}"),
            Endpoint::Http(u) => format!("remote:{u}"),
        }
    }

    fn wants_images(&self) -> bool {
        true
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<PolicyResponse, PolicyError> {
        let (front, canvas) = obs
            .images
            .ok_or_else(|| PolicyError::Protocol("remote policies need rendered observations".into()))?;
        let req = WireRequest::new(obs.tick, obs.language, front, canvas, self.codebook_k);
        self.client.call(&req)
    }

    fn last_latency_ms(&self) -> Option<f64> {
        self.client.last_latency_ms()
    }
}

/// Behaviour of the reference server.
#[derive(Debug, Clone, PartialEq)]
pub enum EchoMode {
    Tokens(ActionTokens),
    Waypoints([Point2; ACTION_LEN]),
    /// A truncated JSON frame.
    Malformed,
    /// Three tokens instead of four.
    ShortTokens,
    /// Sleeps before answering with tokens `[0; 4]`.
    Slow(Duration),
    Error(String),
}

impl EchoMode {
    fn reply(&self, request: &str) -> String {
        if let Err(e) = serde_json::from_str::<WireRequest>(request.trim()) {
            return json!({ "error": format!("bad request: {e}") }).to_string();
        }
        match self {
            EchoMode::Tokens(t) => response_to_json(&PolicyResponse::Tokens(*t)).to_string(),
            EchoMode::Waypoints(w) => response_to_json(&PolicyResponse::Waypoints(*w)).to_string(),
            EchoMode::Malformed => "{\"tokens\": [0, 0".to_string(),
            EchoMode::ShortTokens => json!({ "tokens": [0, 0, 0] }).to_string(),
            EchoMode::Slow(d) => {
                thread::sleep(*d);
                json!({ "tokens": [0, 0, 0, 0] }).to_string()
            }
            EchoMode::Error(msg) => json!({ "error": msg }).to_string(),
        }
    }
}

impl FromStr for EchoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "tokens" => {
                let ids: Vec<usize> = if arg.is_empty() {
                    vec![0; ACTION_LEN]
                } else {
                    arg.split(',').map(|t| t.trim().parse().map_err(|_| format!("bad token `{t}`"))).collect::<Result<_, _>>()?
                };
                let arr: ActionTokens = ids.try_into().map_err(|_| format!("need {ACTION_LEN} tokens"))?;
                Ok(EchoMode::Tokens(arr))
            }
            "waypoints" => Ok(EchoMode::Waypoints([0.5, 1.0, 1.5, 2.0].map(|x| Point2::new(x, 0.0)))),
            "malformed" => Ok(EchoMode::Malformed),
            "short" => Ok(EchoMode::ShortTokens),
            "slow" => {
                let secs: f64 = if arg.is_empty() { 5.0 } else { arg.parse().map_err(|_| format!("bad delay `{arg}`"))? };
                Ok(EchoMode::Slow(Duration::from_secs_f64(secs)))
            }
            "error" => Ok(EchoMode::Error(if arg.is_empty() { "policy failure".into() } else { arg.into() })),
            _ => Err(format!("unknown echo mode `{s}`")),
        }
    }
}

fn handle_http(first_line: &str, reader: &mut BufReader<TcpStream>, mode: &EchoMode) -> io::Result<()> {
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let (status, payload) = if first_line.split_whitespace().nth(1) == Some("/act") {
        ("200 OK", mode.reply(&String::from_utf8_lossy(&body)))
    } else {
        ("404 Not Found", json!({ "error": "not found" }).to_string())
    };
    let out = reader.get_mut();
    write!(
        out,
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

fn handle_connection(stream: TcpStream, mode: EchoMode) -> io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    if line.starts_with("POST ") || line.starts_with("GET ") {
        return handle_http(&line, &mut reader, &mode);
    }
    loop {
        let mut reply = mode.reply(&line);
        reply.push('\n');
        reader.get_mut().write_all(reply.as_bytes())?;
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
    }
}

/// Test double for a learned policy. Serves both transports on one port:
/// connections starting with an HTTP request line get HTTP, anything else
/// is treated as a newline-delimited stream. Stops when dropped.
pub struct ReferenceServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
}

impl ReferenceServer {
    pub fn spawn(mode: EchoMode) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", mode)
    }

    pub fn bind(addr: &str, mode: EchoMode) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let mode = mode.clone();
                        thread::spawn(move || {
                            if let Err(e) = handle_connection(stream, mode) {
                                log::debug!("reference server connection ended: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::warn!("reference server accept failed: {e}");
                        break;
                    }
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn tcp_endpoint(&self) -> Endpoint {
        Endpoint::Tcp(self.addr.to_string())
    }

    pub fn http_endpoint(&self) -> Endpoint {
        Endpoint::Http(format!("http://{}/act", self.addr))
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ReferenceServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
