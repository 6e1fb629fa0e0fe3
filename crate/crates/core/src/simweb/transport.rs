use std::io::{Cursor, Write};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::SiteGraph;
use crate::fetch::{HopRequest, HopResponse, Method, Transport, TransportError};

/// One served request. Entries are appended under a lock and stamped while
/// holding it, so the log is ordered by `at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FetchLogEntry {
    pub url: String,
    pub host: String,
    pub path: String,
    pub method: &'static str,
    pub status: u16,
    #[serde(skip)]
    pub at: Instant,
    /// Microseconds since the transport was created.
    pub offset_us: u128,
}

/// Serves a [`SiteGraph`] at epoch 1 or 2 and logs every call.
pub struct SimTransport {
    graph: Arc<SiteGraph>,
    epoch: u8,
    latency: Duration,
    started: Instant,
    log: Mutex<Vec<FetchLogEntry>>,
}

/// `epoch` other than 2 serves epoch-1 bytes.
pub fn as_transport(graph: Arc<SiteGraph>, epoch: u8) -> SimTransport {
    SimTransport::new(graph, epoch)
}

impl SimTransport {
    pub fn new(graph: Arc<SiteGraph>, epoch: u8) -> Self {
        Self {
            graph,
            epoch: if epoch == 2 { 2 } else { 1 },
            latency: Duration::ZERO,
            started: Instant::now(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn epoch(&self) -> u8 {
        self.epoch
    }

    pub fn log(&self) -> Vec<FetchLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// The log as JSON lines.
    pub fn write_log(&self, mut out: impl Write) -> std::io::Result<()> {
        for entry in self.log() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl Transport for SimTransport {
    fn execute(&self, req: &HopRequest) -> Result<HopResponse, TransportError> {
        let resource = self.graph.get(req.url.as_str());
        let status = resource.map_or(404, |r| r.status);
        {
            let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
            let at = Instant::now();
            log.push(FetchLogEntry {
                url: req.url.as_str().to_string(),
                host: req.url.host().to_string(),
                path: req.url.path().to_string(),
                method: match req.method {
                    Method::Get => "GET",
                    Method::Head => "HEAD",
                },
                status,
                at,
                offset_us: at.duration_since(self.started).as_micros(),
            });
        }
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }

        let Some(resource) = resource else {
            let body = b"<html><body>not found</body></html>".to_vec();
            return Ok(HopResponse {
                status: 404,
                headers: vec![("Content-Type".into(), "text/html".into())],
                body: Box::new(Cursor::new(if req.method == Method::Head { Vec::new() } else { body })),
            });
        };
        let body = resource.body_at(self.epoch);
        let mut headers = vec![("Content-Length".to_string(), body.len().to_string())];
        if let Some(ct) = &resource.content_type {
            headers.push(("Content-Type".into(), ct.clone()));
        }
        if let Some(loc) = &resource.location {
            headers.push(("Location".into(), loc.clone()));
        }
        let body = if req.method == Method::Head { Vec::new() } else { body.to_vec() };
        Ok(HopResponse { status, headers, body: Box::new(Cursor::new(body)) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetch::{FetchRequest, Fetcher};
    use crate::imagestore::content_hash;
    use crate::simweb::{generate, SimWebSpec};
    use crate::url::CanonicalUrl;

    fn setup(epoch: u8) -> (Arc<SimTransport>, Fetcher, crate::simweb::GroundTruth) {
        let spec = SimWebSpec { mutation_set: 0.5, redirects: 1, crawl_delay: Some(0.5), ..Default::default() };
        let (graph, truth) = generate(&spec).unwrap();
        let t = Arc::new(as_transport(Arc::new(graph), epoch));
        let f = Fetcher::new(t.clone());
        (t, f, truth)
    }

    fn url(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    #[test]
    fn serves_pages_robots_and_404() {
        let (t, f, truth) = setup(1);
        let page = f.get(&FetchRequest::page(url(&truth.seeds[0]))).unwrap();
        assert_eq!(page.status, 200);
        assert!(page.content_type.as_deref().unwrap().starts_with("text/html"));
        let robots = f.get(&FetchRequest::page(url("http://site1.simweb.test/robots.txt"))).unwrap();
        assert_eq!(robots.body, b"User-agent: *\nCrawl-delay: 0.5\n");
        assert_eq!(f.get(&FetchRequest::page(url("http://site1.simweb.test/nope"))).unwrap().status, 404);
        let log = t.log();
        assert_eq!(log.len(), 3);
        assert!(log.windows(2).all(|w| w[0].at <= w[1].at));
        assert_eq!(log[2].status, 404);
    }

    #[test]
    fn redirects_are_followed_by_the_fetcher() {
        let (t, f, truth) = setup(1);
        let (from, to) = truth.redirects.iter().next().unwrap();
        let resp = f.get(&FetchRequest::page(url(from))).unwrap();
        assert_eq!(resp.final_url.as_str(), to);
        assert_eq!(t.log().len(), 2);
        let hop = f.get(&FetchRequest::page(url(from)).follow_redirects(false)).unwrap();
        assert_eq!(hop.status, 301);
    }

    #[test]
    fn epochs_serve_their_bytes() {
        for epoch in [1, 2] {
            let (_, f, truth) = setup(epoch);
            for (u, img) in &truth.images {
                let resp = f.get(&FetchRequest::image(url(u))).unwrap();
                let want = if epoch == 2 { &img.hash_epoch2 } else { &img.hash_epoch1 };
                assert_eq!(&content_hash(&resp.body).to_hex(), want);
            }
        }
    }
}
