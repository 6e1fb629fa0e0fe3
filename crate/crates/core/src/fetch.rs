//! HTTP fetching over a pluggable [`Transport`].
//!
//! A transport performs exactly one request/response exchange. [`Fetcher::get`]
//! layers the crawler's policy on top: redirect following with
//! re-canonicalization, retry of connection failures with backoff, the
//! `Retry-After` courtesy retry, gzip decoding and the body size cap.
//!
//! `get` is policy-free with respect to robots and scheme rules for redirect
//! targets beyond the http/https whitelist; callers that need robots checks on
//! every hop fetch with `follow_redirects = false` and route `Location`
//! targets back through their own pipeline.

use std::io::{self, Read};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use flate2::read::GzDecoder;
use rand::Rng;

use crate::url::{CanonicalUrl, UrlError};

pub const DEFAULT_PAGE_MAX_BODY: usize = 8 * 1024 * 1024;
pub const DEFAULT_IMAGE_MAX_BODY: usize = 32 * 1024 * 1024;
pub const MAX_REDIRECTS: u32 = 5;
pub const DEFAULT_USER_AGENT: &str = "imageharvest/1.0 (+https://github.com/imageharvest/imageharvest)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Page,
    Image,
}

impl Accept {
    fn header(self) -> &'static str {
        match self {
            Accept::Page => "text/html,application/xhtml+xml;q=0.9,*/*;q=0.5",
            Accept::Image => "image/jpeg,image/png,image/gif,image/bmp,image/tiff,*/*;q=0.5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Head,
}

#[derive(Debug, Clone)]
pub struct FetchRequest {
    pub url: CanonicalUrl,
    pub max_body: usize,
    pub timeout: Duration,
    pub accept: Accept,
    pub follow_redirects: bool,
}

impl FetchRequest {
    pub fn page(url: CanonicalUrl) -> Self {
        Self {
            url,
            max_body: DEFAULT_PAGE_MAX_BODY,
            timeout: Duration::from_secs(30),
            accept: Accept::Page,
            follow_redirects: true,
        }
    }

    pub fn image(url: CanonicalUrl) -> Self {
        Self {
            max_body: DEFAULT_IMAGE_MAX_BODY,
            accept: Accept::Image,
            ..Self::page(url)
        }
    }

    pub fn max_body(mut self, limit: usize) -> Self {
        self.max_body = limit;
        self
    }

    pub fn follow_redirects(mut self, follow: bool) -> Self {
        self.follow_redirects = follow;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchResponse {
    pub status: u16,
    pub final_url: CanonicalUrl,
    pub content_type: Option<String>,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Wall-clock access time, recorded when the final response arrived.
    pub fetched_at: DateTime<Utc>,
    pub elapsed: Duration,
    pub redirect_hops: u32,
}

impl FetchResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_redirect(&self) -> bool {
        is_redirect(self.status)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("connection failed: {0}")]
    ConnectFailed(String),
    #[error("request timed out")]
    Timeout,
    #[error("more than {MAX_REDIRECTS} redirects")]
    TooManyRedirects,
    /// The body exceeded the cap; `partial` holds the first `max_body` bytes.
    #[error("body larger than {limit} bytes")]
    BodyTooLarge {
        limit: usize,
        partial: Box<FetchResponse>,
    },
    #[error("redirect to blocked scheme: {0}")]
    RedirectToBlockedScheme(String),
    #[error("invalid redirect target: {0}")]
    InvalidRedirect(UrlError),
}

/// Failure of a single exchange, before any HTTP response was received.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    ConnectFailed(String),
    #[error("timed out")]
    Timeout,
}

#[derive(Debug, Clone)]
pub struct HopRequest {
    pub url: CanonicalUrl,
    pub method: Method,
    pub headers: Vec<(String, String)>,
    pub timeout: Duration,
}

pub struct HopResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Box<dyn Read + Send>,
}

impl HopResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }
}

impl std::fmt::Debug for HopResponse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HopResponse")
            .field("status", &self.status)
            .field("headers", &self.headers)
            .finish_non_exhaustive()
    }
}

/// One request/response exchange. Implementations must be shareable across
/// fetch workers.
pub trait Transport: Send + Sync {
    fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError> {
        (**self).execute(req)
    }
}

/// A transport with no network: every request is refused.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullTransport;

impl Transport for NullTransport {
    fn execute(&self, _req: &HopRequest) -> Result<HopResponse, TransportError> {
        Err(TransportError::ConnectFailed("connection refused (null transport)".into()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt for connection-level failures.
    pub max_retries: u32,
    /// Base backoff for the first retry; doubles on each further retry.
    pub base_backoff: Duration,
    /// Extra random delay, as a fraction of the base, added to each backoff.
    pub jitter: f64,
    /// Longest `Retry-After` honored for a 429/503 courtesy retry.
    pub max_retry_after: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_backoff: Duration::from_millis(500),
            jitter: 0.5,
            max_retry_after: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let base = self.base_backoff * 2u32.saturating_pow(retry);
        let extra = if self.jitter > 0.0 {
            base.mul_f64(rand::thread_rng().gen_range(0.0..self.jitter))
        } else {
            Duration::ZERO
        };
        base + extra
    }
}

#[derive(Clone)]
pub struct Fetcher {
    transport: Arc<dyn Transport>,
    user_agent: String,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_user_agent(mut self, ua: impl Into<String>) -> Self {
        self.user_agent = ua.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn user_agent(&self) -> &str {
        &self.user_agent
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn get(&self, req: &FetchRequest) -> Result<FetchResponse, FetchError> {
        self.fetch(req, Method::Get)
    }

    fn fetch(&self, req: &FetchRequest, method: Method) -> Result<FetchResponse, FetchError> {
        let started = Instant::now();
        let mut url = req.url.clone();
        let mut hops = 0;
        loop {
            let hop = HopRequest {
                url: url.clone(),
                method,
                headers: vec![
                    ("User-Agent".into(), self.user_agent.clone()),
                    ("Accept".into(), req.accept.header().into()),
                    ("Accept-Encoding".into(), "gzip".into()),
                ],
                timeout: req.timeout,
            };
            let resp = self.execute_with_retry(&hop)?;

            if req.follow_redirects && is_redirect(resp.status) {
                if let Some(location) = resp.header("location") {
                    let next = url.resolve(location).map_err(|e| match e {
                        UrlError::NotHttpScheme(s) => FetchError::RedirectToBlockedScheme(s),
                        other => FetchError::InvalidRedirect(other),
                    })?;
                    hops += 1;
                    if hops > MAX_REDIRECTS {
                        return Err(FetchError::TooManyRedirects);
                    }
                    url = next;
                    continue;
                }
            }

            let gzip = resp
                .header("content-encoding")
                .is_some_and(|v| v.trim().eq_ignore_ascii_case("gzip"));
            let headers: Vec<(String, String)> = resp
                .headers
                .iter()
                .filter(|(k, _)| !(gzip && k.eq_ignore_ascii_case("content-encoding")))
                .cloned()
                .collect();
            let content_type = find_header(&headers, "content-type").map(str::to_string);
            let status = resp.status;

            let (body, truncated) = if method == Method::Head {
                (Vec::new(), false)
            } else if gzip {
                read_capped(GzDecoder::new(resp.body), req.max_body)?
            } else {
                read_capped(resp.body, req.max_body)?
            };

            let response = FetchResponse {
                status,
                final_url: url,
                content_type,
                headers,
                body,
                fetched_at: Utc::now(),
                elapsed: started.elapsed(),
                redirect_hops: hops,
            };
            if truncated {
                return Err(FetchError::BodyTooLarge {
                    limit: req.max_body,
                    partial: Box::new(response),
                });
            }
            return Ok(response);
        }
    }

    fn execute_with_retry(&self, hop: &HopRequest) -> Result<HopResponse, FetchError> {
        let mut retries = 0;
        let mut courtesy_used = false;
        loop {
            match self.transport.execute(hop) {
                Ok(resp) => {
                    if !courtesy_used && matches!(resp.status, 429 | 503) {
                        if let Some(wait) = retry_after(&resp, self.retry.max_retry_after) {
                            courtesy_used = true;
                            self.sleeper.sleep(wait);
                            continue;
                        }
                    }
                    return Ok(resp);
                }
                Err(TransportError::Timeout) => return Err(FetchError::Timeout),
                Err(TransportError::ConnectFailed(msg)) => {
                    if retries >= self.retry.max_retries {
                        return Err(FetchError::ConnectFailed(msg));
                    }
                    self.sleeper.sleep(self.retry.backoff(retries));
                    retries += 1;
                }
            }
        }
    }
}

/// Fetches with the default policy.
pub fn get(req: &FetchRequest, transport: Arc<dyn Transport>) -> Result<FetchResponse, FetchError> {
    Fetcher::new(transport).get(req)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Connectivity {
    Online,
    Offline(FetchError),
}

/// Reachability is a transport-level property: any HTTP response, including
/// an error status, means the network works.
pub fn probe_connectivity(fetcher: &Fetcher, probe_url: &CanonicalUrl) -> Connectivity {
    let req = FetchRequest::page(probe_url.clone())
        .max_body(64 * 1024)
        .follow_redirects(false)
        .timeout(Duration::from_secs(10));
    match fetcher.fetch(&req, Method::Head) {
        Ok(_) | Err(FetchError::BodyTooLarge { .. }) => Connectivity::Online,
        Err(e @ (FetchError::ConnectFailed(_) | FetchError::Timeout)) => Connectivity::Offline(e),
        Err(_) => Connectivity::Online,
    }
}

fn retry_after(resp: &HopResponse, max: Duration) -> Option<Duration> {
    let secs: u64 = resp.header("retry-after")?.trim().parse().ok()?;
    let wait = Duration::from_secs(secs);
    (wait <= max).then_some(wait)
}

fn is_redirect(status: u16) -> bool {
    matches!(status, 301 | 302 | 303 | 307 | 308)
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Reads at most `limit` bytes; the flag reports whether more were available.
fn read_capped(reader: impl Read, limit: usize) -> Result<(Vec<u8>, bool), FetchError> {
    let mut body = Vec::new();
    let mut limited = reader.take(limit as u64 + 1);
    limited.read_to_end(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => FetchError::Timeout,
        _ => FetchError::ConnectFailed(format!("reading body: {e}")),
    })?;
    let truncated = body.len() > limit;
    body.truncate(limit);
    Ok((body, truncated))
}

/// The live network, via reqwest's blocking client. Redirects and
/// decompression are left to [`Fetcher`].
pub struct LiveTransport {
    client: reqwest::blocking::Client,
}

impl LiveTransport {
    pub fn new() -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| FetchError::ConnectFailed(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for LiveTransport {
    fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError> {
        let builder = match req.method {
            Method::Get => self.client.get(req.url.as_str()),
            Method::Head => self.client.head(req.url.as_str()),
        };
        let builder = req
            .headers
            .iter()
            .fold(builder, |b, (k, v)| b.header(k.as_str(), v.as_str()))
            .timeout(req.timeout);
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::ConnectFailed(e.to_string())
            }
        })?;
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        Ok(HopResponse {
            status: resp.status().as_u16(),
            headers,
            body: Box::new(resp),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::io::Write;
    use std::sync::Mutex;

    /// Scripted transport: URL → (status, headers, body). Counts calls.
    #[derive(Default)]
    struct Script {
        routes: HashMap<String, (u16, Vec<(String, String)>, Vec<u8>)>,
        calls: Mutex<Vec<String>>,
    }

    impl Script {
        fn route(mut self, url: &str, status: u16, headers: &[(&str, &str)], body: &[u8]) -> Self {
            let headers = headers.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            self.routes.insert(url.into(), (status, headers, body.to_vec()));
            self
        }
        fn calls(&self) -> Vec<String> {
            self.calls.lock().unwrap().clone()
        }
    }

    impl Transport for Script {
        fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError> {
            self.calls.lock().unwrap().push(req.url.to_string());
            let (status, headers, body) = self
                .routes
                .get(req.url.as_str())
                .cloned()
                .unwrap_or((404, vec![], b"nope".to_vec()));
            Ok(HopResponse {
                status,
                headers,
                body: Box::new(io::Cursor::new(body)),
            })
        }
    }

    #[derive(Default)]
    struct RecordingSleeper(Mutex<Vec<Duration>>);

    impl Sleeper for RecordingSleeper {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    fn url(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    fn fetcher(t: Arc<dyn Transport>) -> (Fetcher, Arc<RecordingSleeper>) {
        let sleeper = Arc::new(RecordingSleeper::default());
        (Fetcher::new(t).with_sleeper(sleeper.clone()), sleeper)
    }

    #[test]
    fn plain_200() {
        let t = Arc::new(Script::default().route("http://a.com/", 200, &[("Content-Type", "text/html")], &[b'x'; 1024]));
        let (f, _) = fetcher(t);
        let r = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(r.body.len(), 1024);
        assert_eq!(r.content_type.as_deref(), Some("text/html"));
        assert_eq!(r.redirect_hops, 0);
    }

    #[test]
    fn redirect_chain() {
        let t = Arc::new(
            Script::default()
                .route("http://a.com/0", 301, &[("Location", "/1")], b"")
                .route("http://a.com/1", 302, &[("Location", "http://b.com/2#x")], b"")
                .route("http://b.com/2", 200, &[], b"done"),
        );
        let (f, _) = fetcher(t);
        let r = f.get(&FetchRequest::page(url("http://a.com/0"))).unwrap();
        assert_eq!(r.final_url.as_str(), "http://b.com/2");
        assert_eq!(r.redirect_hops, 2);
        assert_eq!(r.body, b"done");
    }

    #[test]
    fn redirects_not_followed_on_request() {
        let t = Arc::new(Script::default().route("http://a.com/0", 301, &[("Location", "/1")], b""));
        let (f, _) = fetcher(t.clone());
        let r = f
            .get(&FetchRequest::page(url("http://a.com/0")).follow_redirects(false))
            .unwrap();
        assert_eq!(r.status, 301);
        assert_eq!(r.header("location"), Some("/1"));
        assert_eq!(t.calls().len(), 1);
    }

    #[test]
    fn redirect_loop_terminates() {
        let t = Arc::new(
            Script::default()
                .route("http://a.com/a", 302, &[("Location", "/b")], b"")
                .route("http://a.com/b", 302, &[("Location", "/a")], b""),
        );
        let (f, _) = fetcher(t.clone());
        let err = f.get(&FetchRequest::page(url("http://a.com/a"))).unwrap_err();
        assert_eq!(err, FetchError::TooManyRedirects);
        assert_eq!(t.calls().len(), MAX_REDIRECTS as usize + 1);
    }

    #[test]
    fn redirect_to_blocked_scheme() {
        let t = Arc::new(Script::default().route("http://a.com/", 302, &[("Location", "ftp://a.com/x")], b""));
        let (f, _) = fetcher(t);
        let err = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap_err();
        assert_eq!(err, FetchError::RedirectToBlockedScheme("ftp".into()));
    }

    #[test]
    fn body_cap_truncates() {
        let t = Arc::new(Script::default().route("http://a.com/", 200, &[], &[7u8; 5000]));
        let (f, _) = fetcher(t);
        let err = f
            .get(&FetchRequest::page(url("http://a.com/")).max_body(4096))
            .unwrap_err();
        match err {
            FetchError::BodyTooLarge { limit, partial } => {
                assert_eq!(limit, 4096);
                assert_eq!(partial.body.len(), 4096);
            }
            other => panic!("{other:?}"),
        }
        // Exactly at the cap is fine.
        let t = Arc::new(Script::default().route("http://a.com/", 200, &[], &[7u8; 4096]));
        let (f, _) = fetcher(t);
        assert!(f.get(&FetchRequest::page(url("http://a.com/")).max_body(4096)).is_ok());
    }

    #[test]
    fn gzip_is_decoded_and_capped_after_decoding() {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&[b'a'; 10_000]).unwrap();
        let gz = enc.finish().unwrap();
        assert!(gz.len() < 1000);
        let t = Arc::new(Script::default().route("http://a.com/", 200, &[("Content-Encoding", "gzip")], &gz));
        let (f, _) = fetcher(t);
        let r = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap();
        assert_eq!(r.body.len(), 10_000);
        assert!(r.header("content-encoding").is_none());
        let err = f
            .get(&FetchRequest::page(url("http://a.com/")).max_body(5000))
            .unwrap_err();
        assert!(matches!(err, FetchError::BodyTooLarge { limit: 5000, .. }));
    }

    struct Refuser(Mutex<u32>);

    impl Transport for Refuser {
        fn execute(&self, _req: &HopRequest) -> Result<HopResponse, TransportError> {
            *self.0.lock().unwrap() += 1;
            Err(TransportError::ConnectFailed("refused".into()))
        }
    }

    #[test]
    fn connect_failures_retry_twice_with_backoff() {
        let t = Arc::new(Refuser(Mutex::new(0)));
        let (f, sleeper) = fetcher(t.clone());
        let err = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap_err();
        assert!(matches!(err, FetchError::ConnectFailed(_)));
        assert_eq!(*t.0.lock().unwrap(), 3);
        let sleeps = sleeper.0.lock().unwrap().clone();
        assert_eq!(sleeps.len(), 2);
        assert!(sleeps[0] >= Duration::from_millis(500) && sleeps[0] < Duration::from_millis(750));
        assert!(sleeps[1] >= Duration::from_millis(1000) && sleeps[1] < Duration::from_millis(1500));
        assert!(sleeps.iter().sum::<Duration>() >= Duration::from_millis(1500));
    }

    #[test]
    fn connect_failures_real_clock() {
        let t = Arc::new(Refuser(Mutex::new(0)));
        let started = Instant::now();
        let err = get(&FetchRequest::page(url("http://a.com/")), t.clone()).unwrap_err();
        assert!(matches!(err, FetchError::ConnectFailed(_)));
        assert_eq!(*t.0.lock().unwrap(), 3);
        assert!(started.elapsed() >= Duration::from_millis(1500));
    }

    #[test]
    fn status_errors_are_returned_not_retried() {
        let t = Arc::new(Script::default().route("http://a.com/", 500, &[], b"boom"));
        let (f, sleeper) = fetcher(t.clone());
        let r = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap();
        assert_eq!(r.status, 500);
        assert_eq!(t.calls().len(), 1);
        assert!(sleeper.0.lock().unwrap().is_empty());
    }

    #[test]
    fn retry_after_courtesy_retry_once() {
        let t = Arc::new(Script::default().route("http://a.com/", 503, &[("Retry-After", "3")], b""));
        let (f, sleeper) = fetcher(t.clone());
        let r = f.get(&FetchRequest::page(url("http://a.com/"))).unwrap();
        assert_eq!(r.status, 503);
        assert_eq!(t.calls().len(), 2);
        assert_eq!(*sleeper.0.lock().unwrap(), vec![Duration::from_secs(3)]);

        let t = Arc::new(Script::default().route("http://a.com/", 429, &[("Retry-After", "31")], b""));
        let (f, _) = fetcher(t.clone());
        assert_eq!(f.get(&FetchRequest::page(url("http://a.com/"))).unwrap().status, 429);
        assert_eq!(t.calls().len(), 1);
    }

    #[test]
    fn probe_outcomes() {
        let (f, _) = fetcher(Arc::new(Script::default().route("http://a.com/", 500, &[], b"")));
        assert_eq!(probe_connectivity(&f, &url("http://a.com/")), Connectivity::Online);
        let (f, _) = fetcher(Arc::new(NullTransport));
        assert!(matches!(
            probe_connectivity(&f, &url("http://a.com/")),
            Connectivity::Offline(FetchError::ConnectFailed(_))
        ));
    }

    #[test]
    fn sends_user_agent_and_accept() {
        struct Capture(Mutex<Vec<(String, String)>>);
        impl Transport for Capture {
            fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError> {
                *self.0.lock().unwrap() = req.headers.clone();
                Ok(HopResponse { status: 200, headers: vec![], body: Box::new(io::empty()) })
            }
        }
        let t = Arc::new(Capture(Mutex::new(vec![])));
        let f = Fetcher::new(t.clone()).with_user_agent("testbot/2");
        f.get(&FetchRequest::image(url("http://a.com/x.jpg"))).unwrap();
        let headers = t.0.lock().unwrap().clone();
        assert_eq!(find_header(&headers, "user-agent"), Some("testbot/2"));
        assert!(find_header(&headers, "accept").unwrap().starts_with("image/"));
    }
}
