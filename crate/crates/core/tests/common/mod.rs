#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use imageharvest::crawl::{crawl, refresh, CrawlConfig, CrawlReport};
use imageharvest::fetch::Fetcher;
use imageharvest::imagestore::Repository;
use imageharvest::seeds::FixtureAdapter;
use imageharvest::simweb::{as_transport, generate, FetchLogEntry, GroundTruth, SimTransport, SimWebSpec, SiteGraph};

pub struct World {
    pub spec: SimWebSpec,
    pub graph: Arc<SiteGraph>,
    pub truth: GroundTruth,
}

impl World {
    pub fn new(spec: SimWebSpec) -> Self {
        let (graph, truth) = generate(&spec).expect("feasible spec");
        Self { spec, graph: Arc::new(graph), truth }
    }

    pub fn load(path: &str) -> Self {
        let full = Path::new(env!("CARGO_MANIFEST_DIR")).join(path);
        Self::new(SimWebSpec::load(full).expect("spec loads"))
    }

    pub fn transport(&self, epoch: u8) -> Arc<SimTransport> {
        Arc::new(as_transport(self.graph.clone(), epoch).with_latency(Duration::from_millis(self.spec.latency_ms)))
    }

    pub fn config(&self, delay_secs: f64) -> CrawlConfig {
        CrawlConfig {
            keyword: self.spec.keyword.clone(),
            delay: Duration::from_secs_f64(delay_secs),
            ..CrawlConfig::default()
        }
    }

    pub fn crawl(&self, config: &CrawlConfig, repo: &mut Repository, epoch: u8) -> (CrawlReport, Arc<SimTransport>) {
        let transport = self.transport(epoch);
        let fetcher = Fetcher::new(transport.clone());
        let seeds = FixtureAdapter::from_json(&self.truth.seed_fixture_json()).unwrap();
        let report = crawl(config, &seeds, &fetcher, repo, None, &AtomicBool::new(false)).expect("crawl runs");
        (report, transport)
    }

    pub fn refresh(&self, config: &CrawlConfig, repo: &mut Repository, epoch: u8) -> (CrawlReport, Arc<SimTransport>) {
        let transport = self.transport(epoch);
        let fetcher = Fetcher::new(transport.clone());
        let report = refresh(config, &fetcher, repo, None, &AtomicBool::new(false)).expect("refresh runs");
        (report, transport)
    }
}

pub fn stored_urls(repo: &Repository) -> BTreeSet<String> {
    repo.records().iter().map(|r| r.image_url.as_str().to_string()).collect()
}

/// Smallest gap between consecutive requests to one host, per host.
pub fn min_gaps(log: &[FetchLogEntry]) -> BTreeMap<String, Duration> {
    let mut last: BTreeMap<&str, std::time::Instant> = BTreeMap::new();
    let mut gaps: BTreeMap<String, Duration> = BTreeMap::new();
    for e in log {
        if let Some(prev) = last.insert(&e.host, e.at) {
            let gap = e.at.duration_since(prev);
            let g = gaps.entry(e.host.clone()).or_insert(gap);
            *g = (*g).min(gap);
        }
    }
    gaps
}

pub fn disallowed_requests<'a>(log: &'a [FetchLogEntry], truth: &GroundTruth) -> Vec<&'a FetchLogEntry> {
    log.iter()
        .filter(|e| e.path != "/robots.txt" && truth.disallowed_pages.contains(&e.url))
        .collect()
}
