//! The crawl loop: connectivity probe, seeding, then fetch/extract/store
//! until the frontier drains or enough images are stored.
//!
//! One orchestrating thread owns the frontier and the repository. Workers
//! only fetch and parse; they receive jobs and return results over bounded
//! channels, and the orchestrator never has more jobs out than workers, so
//! neither side can block the other indefinitely.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::Serialize;

use crate::bloom::BloomParams;
use crate::extract::{extract_page, filename_of, relevance, tokenize, ImageCandidate, PageExtract};
use crate::fetch::{
    probe_connectivity, Connectivity, FetchError, FetchRequest, FetchResponse, Fetcher, DEFAULT_IMAGE_MAX_BODY,
    DEFAULT_PAGE_MAX_BODY, DEFAULT_USER_AGENT,
};
use crate::frontier::{CrawlTask, Frontier, FrontierConfig, ImageLead, Offer, Ready, TaskKind};
use crate::imagestore::{sniff_format, ImageFormat, NewImage, PutOutcome, RefreshCommit, RepoError, Repository};
use crate::robots::{RobotsCache, RobotsPolicy, DEFAULT_TTL, MAX_ROBOTS_BYTES};
use crate::seeds::{seed_all, SeedAdapter, SeedError};
use crate::url::CanonicalUrl;

/// Longest the orchestrator sleeps before re-checking the cancel flag.
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq)]
pub struct CrawlConfig {
    pub keyword: String,
    /// Search result pages to request from the seed adapter.
    pub seed_pages: u32,
    pub max_depth: u32,
    /// `None` means unbounded.
    pub max_images: Option<u64>,
    pub max_tasks: usize,
    pub workers: usize,
    pub delay: Duration,
    /// Candidates scoring below this are not fetched; `None` disables the filter.
    pub min_relevance: Option<f64>,
    pub user_agent: String,
    pub page_max_body: usize,
    pub image_max_body: usize,
    pub request_timeout: Duration,
    /// Images smaller than this are skipped (tracking pixels).
    pub min_image_bytes: usize,
    pub robots_ttl: Duration,
    pub dump_frontier: bool,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            keyword: String::new(),
            seed_pages: 10,
            max_depth: 3,
            max_images: Some(1000),
            max_tasks: 100_000,
            workers: 4,
            delay: Duration::from_secs(1),
            min_relevance: Some(0.1),
            user_agent: DEFAULT_USER_AGENT.into(),
            page_max_body: DEFAULT_PAGE_MAX_BODY,
            image_max_body: DEFAULT_IMAGE_MAX_BODY,
            request_timeout: Duration::from_secs(30),
            min_image_bytes: 1024,
            robots_ttl: DEFAULT_TTL,
            dump_frontier: false,
        }
    }
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<(), CrawlError> {
        let bad = |m: &str| Err(CrawlError::Config(m.into()));
        if tokenize(&self.keyword).is_empty() {
            return bad("keyword must contain a letter or digit");
        }
        if self.max_images == Some(0) {
            return bad("max_images must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.max_tasks == 0 {
            return bad("max_tasks must be at least 1");
        }
        if self.seed_pages == 0 {
            return bad("max_pages must be at least 1");
        }
        if self.min_relevance.is_some_and(|m| !m.is_finite()) {
            return bad("min_relevance must be a number");
        }
        if self.robots_ttl.is_zero() {
            return bad("robots ttl must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CrawlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no Internet connection: {0}")]
    Offline(FetchError),
    #[error("seeding failed: {0}")]
    Seeds(SeedError),
    #[error("repository: {0}")]
    Repo(#[from] RepoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The frontier drained.
    #[default]
    Exhausted,
    MaxImages,
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Crawl,
    Refresh,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CrawlReport {
    pub mode: Mode,
    pub keyword: String,
    pub seeds: u64,
    pub pages_fetched: u64,
    /// New manifest records, content duplicates included.
    pub images_stored: u64,
    pub duplicate_urls: u64,
    pub duplicate_contents: u64,
    pub rejected_formats: u64,
    pub robots_denials: u64,
    pub fetch_errors: u64,
    pub http_errors: u64,
    pub too_small: u64,
    pub irrelevant_skipped: u64,
    pub variants_skipped: u64,
    pub redirects: u64,
    pub frontier_duplicates: u64,
    pub depth_exceeded: u64,
    pub capacity_exceeded: u64,
    pub robots_fetches: u64,
    pub changed: u64,
    pub unchanged: u64,
    pub elapsed_secs: f64,
    /// Requests sent to each host, robots.txt included.
    pub per_host: BTreeMap<String, u64>,
    pub stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontier_dump: Option<Vec<String>>,
    /// Ids of the records this run appended.
    #[serde(skip)]
    pub new_record_ids: Vec<u64>,
}

impl fmt::Display for CrawlReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let title = match self.mode {
            Mode::Crawl => "crawl",
            Mode::Refresh => "refresh",
        };
        writeln!(f, "{title} report for keyword {:?}", self.keyword)?;
        let mut rows = vec![
            ("seeds", self.seeds),
            ("pages fetched", self.pages_fetched),
            ("images stored", self.images_stored),
            ("duplicate urls", self.duplicate_urls),
            ("duplicate contents", self.duplicate_contents),
            ("rejected formats", self.rejected_formats),
            ("robots denials", self.robots_denials),
            ("fetch errors", self.fetch_errors),
            ("http errors", self.http_errors),
            ("too small", self.too_small),
            ("irrelevant skipped", self.irrelevant_skipped),
            ("redirects", self.redirects),
        ];
        if self.mode == Mode::Refresh {
            rows.push(("changed", self.changed));
            rows.push(("unchanged", self.unchanged));
        }
        for (label, n) in rows {
            writeln!(f, "  {label:<20}{n:>8}")?;
        }
        writeln!(f, "  {:<20}{:>8.2}s", "elapsed", self.elapsed_secs)?;
        let stop = match self.stop_reason {
            StopReason::Exhausted => "frontier exhausted",
            StopReason::MaxImages => "image limit reached",
            StopReason::Interrupted => "interrupted",
        };
        writeln!(f, "  {:<20}{stop:>8}", "stopped")?;
        if !self.per_host.is_empty() {
            writeln!(f, "requests per host")?;
            for (host, n) in &self.per_host {
                writeln!(f, "  {host:<36}{n:>8}")?;
            }
        }
        if let Some(notice) = &self.notice {
            writeln!(f, "note: {notice}")?;
        }
        Ok(())
    }
}

/// Probe, seed and crawl. With `probe` set, an unreachable network aborts
/// before anything else is attempted.
pub fn crawl(
    config: &CrawlConfig,
    adapter: &dyn SeedAdapter,
    fetcher: &Fetcher,
    repo: &mut Repository,
    probe: Option<&CanonicalUrl>,
    cancel: &AtomicBool,
) -> Result<CrawlReport, CrawlError> {
    config.validate()?;
    check_online(fetcher, probe)?;
    let seeds = seed_all(adapter, &config.keyword, config.seed_pages).map_err(CrawlError::Seeds)?;
    let started = Instant::now();
    let mut engine = Engine::new(config, repo, Mode::Crawl, config.max_tasks);
    for url in seeds {
        engine.report.seeds += 1;
        let verdict = engine.frontier.offer(CrawlTask::seed(url, &config.keyword, started));
        engine.tally(verdict, false);
    }
    if engine.report.seeds == 0 {
        engine.report.notice = Some("the seed adapter returned no URLs".into());
    }
    engine.run(fetcher, cancel, started)
}

/// Re-fetches the newest version of every stored image and records a new
/// version for each whose bytes changed.
pub fn refresh(
    config: &CrawlConfig,
    fetcher: &Fetcher,
    repo: &mut Repository,
    probe: Option<&CanonicalUrl>,
    cancel: &AtomicBool,
) -> Result<CrawlReport, CrawlError> {
    check_online(fetcher, probe)?;
    let started = Instant::now();
    let targets: Vec<(CanonicalUrl, u64, String)> = repo
        .latest_records()
        .into_iter()
        .map(|r| (r.image_url.clone(), r.id, r.keyword.clone()))
        .collect();
    let mut engine = Engine::new(config, repo, Mode::Refresh, config.max_tasks.max(targets.len()));
    engine.report.keyword = config.keyword.clone();
    if targets.is_empty() {
        engine.report.notice = Some("the repository is empty; nothing to refresh".into());
    }
    for (url, record_id, keyword) in targets {
        let mut task = CrawlTask::seed(url, &keyword, started);
        task.kind = TaskKind::Refresh { record_id };
        let verdict = engine.frontier.offer(task);
        engine.tally(verdict, true);
    }
    engine.run(fetcher, cancel, started)
}

fn check_online(fetcher: &Fetcher, probe: Option<&CanonicalUrl>) -> Result<(), CrawlError> {
    match probe.map(|u| probe_connectivity(fetcher, u)) {
        Some(Connectivity::Offline(e)) => Err(CrawlError::Offline(e)),
        _ => Ok(()),
    }
}

enum Job {
    Fetch(CrawlTask),
    Robots(CrawlTask),
}

enum Done {
    Fetched {
        task: CrawlTask,
        result: Result<FetchResponse, FetchError>,
        page: Option<PageExtract>,
    },
    Robots {
        task: CrawlTask,
        policy: Arc<RobotsPolicy>,
    },
}

fn is_html(content_type: Option<&str>) -> bool {
    content_type.is_none_or(|ct| {
        let ct = ct.to_ascii_lowercase();
        ct.starts_with("text/html") || ct.starts_with("application/xhtml")
    })
}

fn work(job: Job, fetcher: &Fetcher, robots: &RobotsCache, config: &CrawlConfig) -> Done {
    match job {
        Job::Robots(task) => {
            let fetch = |url: &CanonicalUrl| {
                let req = FetchRequest::page(url.clone())
                    .max_body(MAX_ROBOTS_BYTES)
                    .timeout(config.request_timeout)
                    .follow_redirects(false);
                fetcher.get(&req)
            };
            let policy = robots.policy_for(&task.url.host_key(), fetch, Instant::now());
            Done::Robots { task, policy }
        }
        Job::Fetch(task) => {
            let req = match task.kind {
                TaskKind::Page => FetchRequest::page(task.url.clone()).max_body(config.page_max_body),
                TaskKind::Image(_) | TaskKind::Refresh { .. } => {
                    FetchRequest::image(task.url.clone()).max_body(config.image_max_body)
                }
            }
            .timeout(config.request_timeout)
            .follow_redirects(false);
            let mut result = fetcher.get(&req);
            let mut page = None;
            if matches!(task.kind, TaskKind::Page) {
                // A truncated page is still worth mining.
                if let Err(FetchError::BodyTooLarge { partial, .. }) = result {
                    log::info!("{}: page truncated at {} bytes", task.url, config.page_max_body);
                    result = Ok(*partial);
                }
                if let Ok(resp) = &result {
                    if resp.is_success()
                        && sniff_format(&resp.body) == ImageFormat::Unknown
                        && is_html(resp.content_type.as_deref())
                    {
                        page = Some(extract_page(&resp.body, resp.content_type.as_deref(), &resp.final_url));
                    }
                }
            }
            Done::Fetched { task, result, page }
        }
    }
}

struct Engine<'a> {
    config: &'a CrawlConfig,
    repo: &'a mut Repository,
    frontier: Frontier,
    robots: Arc<RobotsCache>,
    report: CrawlReport,
    stop: bool,
}

impl<'a> Engine<'a> {
    fn new(config: &'a CrawlConfig, repo: &'a mut Repository, mode: Mode, max_tasks: usize) -> Self {
        let frontier = Frontier::new(FrontierConfig {
            max_depth: config.max_depth,
            max_tasks,
            default_politeness_delay: config.delay,
            bloom: BloomParams::new(max_tasks.max(1) as u64, 0.01).unwrap_or_default(),
            allowed_hosts: None,
        });
        Self {
            config,
            repo,
            frontier,
            robots: Arc::new(RobotsCache::with_ttl(config.user_agent.clone(), config.robots_ttl)),
            report: CrawlReport { mode, keyword: config.keyword.clone(), ..Default::default() },
            stop: false,
        }
    }

    fn run(mut self, fetcher: &Fetcher, cancel: &AtomicBool, started: Instant) -> Result<CrawlReport, CrawlError> {
        let workers = self.config.workers;
        let config = self.config;
        let outcome = std::thread::scope(|s| {
            let (job_tx, job_rx) = crossbeam_channel::bounded::<Job>(workers);
            let (done_tx, done_rx) = crossbeam_channel::bounded::<Done>(workers);
            for _ in 0..workers {
                let robots = self.robots.clone();
                let job_rx = job_rx.clone();
                let done_tx = done_tx.clone();
                s.spawn(move || {
                    for job in job_rx {
                        if done_tx.send(work(job, fetcher, &robots, config)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop((job_rx, done_tx));
            let outcome = self.orchestrate(&job_tx, &done_rx, cancel);
            // Closing both ends releases workers still holding a job.
            drop((job_tx, done_rx));
            outcome
        });
        self.report.elapsed_secs = started.elapsed().as_secs_f64();
        if self.config.dump_frontier {
            self.report.frontier_dump = Some(self.frontier.dump());
        }
        outcome.map(|()| self.report)
    }

    fn orchestrate(&mut self, jobs: &Sender<Job>, done: &Receiver<Done>, cancel: &AtomicBool) -> Result<(), CrawlError> {
        let mut outstanding = 0usize;
        loop {
            if cancel.load(Ordering::Relaxed) {
                self.report.stop_reason = StopReason::Interrupted;
                return Ok(());
            }
            let mut wake = None;
            while !self.stop && outstanding < self.config.workers {
                let now = Instant::now();
                match self.frontier.next_ready(now) {
                    Ready::Task(task) => {
                        if let Some(job) = self.release(task, now) {
                            jobs.send(job).expect("workers outlive the orchestrator");
                            outstanding += 1;
                        }
                    }
                    Ready::NothingReadyUntil(t) => {
                        wake = Some(t);
                        break;
                    }
                    Ready::AwaitingCompletion | Ready::Empty => break,
                }
            }
            if outstanding == 0 && (self.stop || wake.is_none()) {
                return Ok(());
            }
            let wait = wake.map_or(POLL, |t| t.saturating_duration_since(Instant::now()).min(POLL));
            match done.recv_timeout(wait) {
                Ok(result) => {
                    outstanding -= 1;
                    self.handle(result)?;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => panic!("all crawl workers exited"),
            }
        }
    }

    /// Robots gate for a released task: a job to run, or `None` if denied.
    fn release(&mut self, task: CrawlTask, now: Instant) -> Option<Job> {
        match self.robots.cached(&task.url.host_key(), now) {
            None => Some(Job::Robots(task)),
            Some(policy) if policy.is_allowed(&task.url.path_and_query()) => Some(Job::Fetch(task)),
            Some(_) => {
                log::debug!("robots.txt forbids {}", task.url);
                self.report.robots_denials += 1;
                self.frontier.abandon(&task).expect("released task is in flight");
                None
            }
        }
    }

    fn count_request(&mut self, url: &CanonicalUrl) {
        *self.report.per_host.entry(url.host().to_string()).or_default() += 1;
    }

    fn handle(&mut self, done: Done) -> Result<(), CrawlError> {
        let now = Instant::now();
        match done {
            Done::Robots { task, policy } => {
                self.report.robots_fetches += 1;
                self.count_request(&task.url);
                self.frontier
                    .defer(task, now, policy.crawl_delay)
                    .expect("released task is in flight");
                Ok(())
            }
            Done::Fetched { task, result, page } => {
                let crawl_delay = self.robots.cached(&task.url.host_key(), now).and_then(|p| p.crawl_delay);
                self.frontier
                    .complete(&task, now, crawl_delay)
                    .expect("released task is in flight");
                self.count_request(&task.url);
                match result {
                    Err(e) => {
                        log::info!("{}: {e}", task.url);
                        self.report.fetch_errors += 1;
                        Ok(())
                    }
                    Ok(resp) if resp.is_redirect() => {
                        self.follow(&task, &resp, now);
                        Ok(())
                    }
                    Ok(resp) if !resp.is_success() => {
                        log::info!("{}: HTTP {}", task.url, resp.status);
                        self.report.http_errors += 1;
                        Ok(())
                    }
                    Ok(resp) => match &task.kind {
                        TaskKind::Page => self.on_page(&task, resp, page, now),
                        TaskKind::Image(lead) => self.store(&task, lead, resp),
                        TaskKind::Refresh { record_id } => self.on_refresh(*record_id, resp),
                    },
                }
            }
        }
    }

    /// Redirect targets re-enter the frontier at the same depth and kind, so
    /// dedup and robots apply to them like any other URL.
    fn follow(&mut self, task: &CrawlTask, resp: &FetchResponse, now: Instant) {
        if matches!(task.kind, TaskKind::Refresh { .. }) {
            log::info!("{}: moved (HTTP {}) since it was stored", task.url, resp.status);
            self.report.http_errors += 1;
            return;
        }
        self.report.redirects += 1;
        let target = resp.header("location").map(|loc| task.url.resolve(loc));
        match target {
            Some(Ok(url)) => {
                let is_image = matches!(task.kind, TaskKind::Image(_));
                let child = task.child(url, task.depth, task.kind.clone(), now);
                let verdict = self.frontier.offer(child);
                self.tally(verdict, is_image);
            }
            Some(Err(e)) => {
                log::info!("{}: bad redirect target: {e}", task.url);
                self.report.fetch_errors += 1;
            }
            None => {
                log::info!("{}: redirect without Location", task.url);
                self.report.fetch_errors += 1;
            }
        }
    }

    fn tally(&mut self, verdict: Offer, is_image: bool) {
        match verdict {
            Offer::Accepted => {}
            Offer::DuplicateUrl if is_image => self.report.duplicate_urls += 1,
            Offer::DuplicateUrl => self.report.frontier_duplicates += 1,
            Offer::DepthExceeded => self.report.depth_exceeded += 1,
            Offer::CapacityExceeded | Offer::HostExcluded => self.report.capacity_exceeded += 1,
        }
    }

    fn score(&self, candidate: &ImageCandidate) -> f64 {
        relevance(candidate, &self.config.keyword).map_or(0.0, |s| s.value)
    }

    fn on_page(
        &mut self,
        task: &CrawlTask,
        resp: FetchResponse,
        page: Option<PageExtract>,
        now: Instant,
    ) -> Result<(), CrawlError> {
        self.report.pages_fetched += 1;
        let Some(page) = page else {
            // Seed adapters may hand out direct image URLs.
            if sniff_format(&resp.body) != ImageFormat::Unknown {
                let candidate = ImageCandidate {
                    image_url: task.url.clone(),
                    source_page: task.parent.clone().unwrap_or_else(|| task.url.clone()),
                    alt_text: String::new(),
                    caption: String::new(),
                    filename: filename_of(&task.url),
                    page_title: String::new(),
                    variant_of: None,
                };
                let relevance = self.score(&candidate);
                if self.config.min_relevance.is_some_and(|m| relevance < m) {
                    self.report.irrelevant_skipped += 1;
                    return Ok(());
                }
                return self.store(task, &ImageLead { candidate, relevance }, resp);
            }
            return Ok(());
        };

        for link in page.links {
            let verdict = self.frontier.offer(task.child(link, task.depth + 1, TaskKind::Page, now));
            self.tally(verdict, false);
        }
        for candidate in page.images {
            if candidate.variant_of.is_some() {
                self.report.variants_skipped += 1;
                continue;
            }
            if self.repo.contains_url(&candidate.image_url) {
                self.report.duplicate_urls += 1;
                continue;
            }
            let relevance = self.score(&candidate);
            if self.config.min_relevance.is_some_and(|m| relevance < m) {
                self.report.irrelevant_skipped += 1;
                continue;
            }
            let url = candidate.image_url.clone();
            let lead = TaskKind::Image(Box::new(ImageLead { candidate, relevance }));
            let verdict = self.frontier.offer(task.child(url, task.depth, lead, now));
            self.tally(verdict, true);
        }
        Ok(())
    }

    fn store(&mut self, task: &CrawlTask, lead: &ImageLead, resp: FetchResponse) -> Result<(), CrawlError> {
        if self.stop {
            return Ok(());
        }
        if sniff_format(&resp.body) == ImageFormat::Unknown {
            log::info!("{}: not an accepted image format", task.url);
            self.report.rejected_formats += 1;
            return Ok(());
        }
        if resp.body.len() < self.config.min_image_bytes {
            self.report.too_small += 1;
            return Ok(());
        }
        let c = &lead.candidate;
        let image = NewImage {
            filename: if c.image_url == task.url { c.filename.clone() } else { filename_of(&task.url) },
            image_url: task.url.clone(),
            source_page: c.source_page.clone(),
            keyword: self.config.keyword.clone(),
            alt_text: c.alt_text.clone(),
            caption: c.caption.clone(),
            relevance: lead.relevance,
            fetched_at: resp.fetched_at,
            last_modified: resp.header("last-modified").map(str::to_string),
        };
        match self.repo.put(image, &resp.body)? {
            PutOutcome::Stored(id) => {
                self.report.images_stored += 1;
                self.report.new_record_ids.push(id);
            }
            PutOutcome::DuplicateContent { id, .. } => {
                self.report.images_stored += 1;
                self.report.duplicate_contents += 1;
                self.report.new_record_ids.push(id);
            }
            PutOutcome::DuplicateUrl(_) => self.report.duplicate_urls += 1,
            PutOutcome::RejectedFormat => self.report.rejected_formats += 1,
        }
        if self.config.max_images.is_some_and(|m| self.report.images_stored >= m) {
            self.stop = true;
            self.report.stop_reason = StopReason::MaxImages;
        }
        Ok(())
    }

    fn on_refresh(&mut self, record_id: u64, resp: FetchResponse) -> Result<(), CrawlError> {
        let last_modified = resp.header("last-modified").map(str::to_string);
        match self.repo.commit_refresh(record_id, &resp.body, resp.fetched_at, last_modified)? {
            RefreshCommit::Committed(id) => {
                self.report.changed += 1;
                self.report.new_record_ids.push(id);
            }
            RefreshCommit::Unchanged => self.report.unchanged += 1,
            RefreshCommit::RejectedFormat => self.report.rejected_formats += 1,
        }
        Ok(())
    }
}
