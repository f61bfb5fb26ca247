//! Request/response transport with record and replay fixture backends.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upstream API a request is addressed to; also the fixture sub-directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Service {
    Billboard,
    SpotifySearch,
    SpotifyFeatures,
}

impl Service {
    pub fn dir_name(self) -> &'static str {
        match self {
            Service::Billboard => "billboard",
            Service::SpotifySearch => "spotify-search",
            Service::SpotifyFeatures => "spotify-features",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub service: Service,
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
}

impl Request {
    pub fn get(service: Service, path: &str, query: &[(&str, &str)]) -> Self {
        Request {
            service,
            method: "GET".into(),
            path: path.to_string(),
            query: query.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// `METHOD path?k=v&...` with query keys sorted.
    pub fn canonical(&self) -> String {
        let query: Vec<String> = self.query.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{} {}?{}", self.method, self.path, query.join("&"))
    }

    /// Hex SHA-256 of the canonical form.
    pub fn fixture_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

impl fmt::Display for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.service.dir_name(), self.canonical())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    pub fn ok(body: Value) -> Self {
        Response { status: 200, body }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &Request) -> Result<Response>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, request: &Request) -> Result<Response> {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, request: &Request) -> Result<Response> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    #[default]
    Replay,
    Record,
    Live,
}

impl FromStr for FixtureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replay" => Ok(FixtureMode::Replay),
            "record" => Ok(FixtureMode::Record),
            "live" => Ok(FixtureMode::Live),
            other => Err(Error::Config(format!("unknown fixture mode `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FixtureFile {
    request: Request,
    status: u16,
    body: Value,
}

/// Directory of recorded responses: `<root>/<service>/<sha256>.json`.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    pub root: PathBuf,
    pub mode: FixtureMode,
}

impl FixtureStore {
    pub fn new(root: impl Into<PathBuf>, mode: FixtureMode) -> Self {
        FixtureStore {
            root: root.into(),
            mode,
        }
    }

    pub fn path_for(&self, request: &Request) -> PathBuf {
        self.root
            .join(request.service.dir_name())
            .join(format!("{}.json", request.fixture_key()))
    }

    pub fn load(&self, request: &Request) -> Result<Response> {
        let path = self.path_for(request);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FixtureMiss(request.to_string()))
            }
            Err(e) => return Err(Error::path(&path, e)),
        };
        let file: FixtureFile =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if file.request != *request {
            return Err(Error::Format(format!(
                "{} records `{}`, not `{}`",
                path.display(),
                file.request.canonical(),
                request.canonical()
            )));
        }
        Ok(Response {
            status: file.status,
            body: file.body,
        })
    }

    pub fn save(&self, request: &Request, response: &Response) -> Result<()> {
        let path = self.path_for(request);
        let dir = path.parent().expect("fixture path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
        let file = FixtureFile {
            request: request.clone(),
            status: response.status,
            body: response.body.clone(),
        };
        let text = serde_json::to_string_pretty(&file)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::path(&path, e))
    }

    pub fn exists(&self) -> bool {
        self.root.is_dir()
    }
}

/// Serves every request from a [`FixtureStore`]; a missing file is an error.
pub struct ReplayTransport {
    store: FixtureStore,
}

impl ReplayTransport {
    pub fn new(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::path(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
            ));
        }
        Ok(ReplayTransport {
            store: FixtureStore::new(root, FixtureMode::Replay),
        })
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &Request) -> Result<Response> {
        self.store.load(request)
    }
}

/// Forwards to an inner transport and writes every successful exchange as a fixture.
pub struct RecordingTransport<T> {
    inner: T,
    store: FixtureStore,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, root: impl Into<PathBuf>) -> Self {
        RecordingTransport {
            inner,
            store: FixtureStore::new(root, FixtureMode::Record),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &Request) -> Result<Response> {
        let response = self.inner.send(request)?;
        if response.status == 200 {
            self.store.save(request, &response)?;
        }
        Ok(response)
    }
}

/// Token bucket: `rate` tokens per second, holding at most `capacity`.
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate: f64, capacity: f64) -> Self {
        RateLimiter {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Take one token, returning how long the caller must wait before using it.
    pub fn reserve(&self, now: Instant) -> Duration {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let (tokens, last) = *state;
        let refilled = (tokens + now.saturating_duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
        let remaining = refilled - 1.0;
        *state = (remaining, now.max(last));
        if remaining >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-remaining / self.rate)
        }
    }

    pub fn acquire(&self) {
        let wait = self.reserve(Instant::now());
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Exponential backoff delays: `base · 2^attempt`, capped.
pub fn backoff_delay(base: Duration, attempt: u32, cap: Duration) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16)).min(cap)
}

/// Retry `op` on retryable transport errors, sleeping with exponential backoff.
pub fn with_retries<T>(max_retries: u32, base: Duration, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(Error::Transport { retryable: true, message }) if attempt < max_retries => {
                let delay = backoff_delay(base, attempt, Duration::from_secs(60));
                log::warn!("retrying after {delay:?}: {message}");
                thread::sleep(delay);
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Send all requests with at most `in_flight` outstanding; results come back
/// in request order regardless of completion order.
pub fn send_all<T: Transport + ?Sized>(transport: &T, requests: &[Request], in_flight: usize) -> Vec<Result<Response>> {
    let workers = in_flight.max(1).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Response>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let result = transport.send(&requests[i]);
                *slots[i].lock().expect("slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot poisoned").expect("every slot filled"))
        .collect()
}

/// In-memory transport for tests: canned responses keyed by canonical request.
#[derive(Default)]
pub struct MapTransport {
    responses: BTreeMap<String, Result<Response, String>>,
    pub calls: AtomicUsize,
}

impl MapTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &Request, body: Value) {
        self.responses.insert(request.canonical(), Ok(Response::ok(body)));
    }

    /// Make a request fail with a retryable transport error.
    pub fn fail(&mut self, request: &Request, message: &str) {
        self.responses.insert(request.canonical(), Err(message.to_string()));
    }
}

impl Transport for MapTransport {
    fn send(&self, request: &Request) -> Result<Response> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match self.responses.get(&request.canonical()) {
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(m)) => Err(Error::Transport {
                message: m.clone(),
                retryable: true,
            }),
            None => Err(Error::FixtureMiss(request.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form_sorts_query() {
        let a = Request::get(Service::SpotifySearch, "/v1/search", &[("q", "ab"), ("limit", "50"), ("type", "track")]);
        let b = Request::get(Service::SpotifySearch, "/v1/search", &[("type", "track"), ("q", "ab"), ("limit", "50")]);
        assert_eq!(a.canonical(), "GET /v1/search?limit=50&q=ab&type=track");
        assert_eq!(a.fixture_key(), b.fixture_key());
        assert_eq!(a.fixture_key().len(), 64);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let req = Request::get(Service::Billboard, "/charts/hot-100-year-end", &[("year", "2015")]);
        let mut map = MapTransport::new();
        map.insert(&req, json!({"year": 2015, "entries": []}));
        let recorder = RecordingTransport::new(map, dir.path());
        let live = recorder.send(&req).unwrap();
        let path = dir.path().join("billboard").join(format!("{}.json", req.fixture_key()));
        assert!(path.is_file());

        let replay = ReplayTransport::new(dir.path()).unwrap();
        assert_eq!(replay.send(&req).unwrap(), live);
        let other = Request::get(Service::Billboard, "/charts/hot-100-year-end", &[("year", "2016")]);
        let err = replay.send(&other).unwrap_err();
        assert!(matches!(&err, Error::FixtureMiss(m) if m.contains("year=2016")), "{err}");
    }

    #[test]
    fn replay_requires_directory() {
        let err = ReplayTransport::new("/nonexistent/fixtures").err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/fixtures"));
    }

    #[test]
    fn token_bucket_spacing() {
        let limiter = RateLimiter::new(10.0, 2.0);
        let t0 = Instant::now();
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        let wait = limiter.reserve(t0);
        assert!((wait.as_secs_f64() - 0.1).abs() < 1e-9);
        let wait = limiter.reserve(t0);
        assert!((wait.as_secs_f64() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn backoff_doubles_until_cap() {
        let base = Duration::from_millis(100);
        let cap = Duration::from_secs(1);
        let delays: Vec<u128> = (0..6).map(|a| backoff_delay(base, a, cap).as_millis()).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1000, 1000]);
    }

    #[test]
    fn retries_only_retryable_errors() {
        let mut calls = 0;
        let out = with_retries(3, Duration::ZERO, || {
            calls += 1;
            if calls < 3 {
                Err(Error::Transport { message: "429".into(), retryable: true })
            } else {
                Ok(calls)
            }
        });
        assert_eq!(out.unwrap(), 3);
        let mut calls = 0;
        let out: Result<()> = with_retries(3, Duration::ZERO, || {
            calls += 1;
            Err(Error::Format("bad".into()))
        });
        assert!(out.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn send_all_preserves_order() {
        let mut map = MapTransport::new();
        let requests: Vec<Request> = (0..40)
            .map(|i| Request::get(Service::SpotifySearch, "/v1/search", &[("q", &i.to_string())]))
            .collect();
        for (i, r) in requests.iter().enumerate() {
            map.insert(r, json!(i));
        }
        let results = send_all(&map, &requests, 8);
        let bodies: Vec<Value> = results.into_iter().map(|r| r.unwrap().body).collect();
        assert_eq!(bodies, (0..40).map(|i| json!(i)).collect::<Vec<_>>());
    }
}
