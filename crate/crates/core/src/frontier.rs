//! The crawl queue.
//!
//! URLs are deduplicated with a Bloom filter backed by an exact set: a Bloom
//! miss is trusted (no false negatives), a Bloom hit is confirmed against the
//! exact set so a unique URL is never dropped. Accepted tasks are queued per
//! [`HostKey`] and released no faster than the host's politeness delay, with
//! at most one task in flight per host.

use std::collections::{HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use crate::bloom::{BloomFilter, BloomParams};
use crate::extract::ImageCandidate;
use crate::url::{CanonicalUrl, HostKey};

/// What a task fetches and what the crawler does with the response.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// An HTML page to mine for images and links.
    Page,
    /// An image candidate found on a page.
    Image(Box<ImageLead>),
    /// Re-fetch of a stored image for the freshness check.
    Refresh { record_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageLead {
    pub candidate: ImageCandidate,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrawlTask {
    pub url: CanonicalUrl,
    pub depth: u32,
    pub parent: Option<CanonicalUrl>,
    pub keyword: String,
    pub enqueued_at: Instant,
    pub kind: TaskKind,
}

impl CrawlTask {
    pub fn seed(url: CanonicalUrl, keyword: &str, now: Instant) -> Self {
        Self {
            url,
            depth: 0,
            parent: None,
            keyword: keyword.to_string(),
            enqueued_at: now,
            kind: TaskKind::Page,
        }
    }

    /// A task discovered on `self`'s page at the given depth.
    pub fn child(&self, url: CanonicalUrl, depth: u32, kind: TaskKind, now: Instant) -> Self {
        Self {
            url,
            depth,
            parent: Some(self.url.clone()),
            keyword: self.keyword.clone(),
            enqueued_at: now,
            kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrontierConfig {
    pub max_depth: u32,
    pub max_tasks: usize,
    pub default_politeness_delay: Duration,
    pub bloom: BloomParams,
    pub allowed_hosts: Option<HashSet<String>>,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            max_tasks: 100_000,
            default_politeness_delay: Duration::from_secs(1),
            bloom: BloomParams::default(),
            allowed_hosts: None,
        }
    }
}

/// Verdict of [`Frontier::offer`]; rejections are checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Accepted,
    DuplicateUrl,
    DepthExceeded,
    CapacityExceeded,
    HostExcluded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ready {
    Task(CrawlTask),
    /// Queued work exists but no host may be served before this instant.
    NothingReadyUntil(Instant),
    /// Every host with queued work has a task in flight; its release time is
    /// unknown until that task completes.
    AwaitingCompletion,
    /// All queues are drained. Tasks may still be in flight.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrontierError {
    #[error("task {0} is not in flight")]
    UnknownTask(String),
}

#[derive(Debug)]
struct HostQueue {
    key: HostKey,
    queue: VecDeque<CrawlTask>,
    next_allowed: Option<Instant>,
    /// Serve sequence number of the last release; 0 = never served.
    last_served: u64,
    in_flight: Option<CanonicalUrl>,
}

#[derive(Debug)]
pub struct Frontier {
    config: FrontierConfig,
    bloom: BloomFilter,
    seen: HashSet<String>,
    hosts: Vec<HostQueue>,
    host_index: HashMap<HostKey, usize>,
    accepted: usize,
    serve_seq: u64,
}

impl Frontier {
    pub fn new(config: FrontierConfig) -> Self {
        Self {
            bloom: BloomFilter::new(config.bloom),
            config,
            seen: HashSet::new(),
            hosts: Vec::new(),
            host_index: HashMap::new(),
            accepted: 0,
            serve_seq: 0,
        }
    }

    pub fn config(&self) -> &FrontierConfig {
        &self.config
    }

    pub fn offer(&mut self, task: CrawlTask) -> Offer {
        if self.is_seen(&task.url) {
            return Offer::DuplicateUrl;
        }
        if task.depth > self.config.max_depth {
            return Offer::DepthExceeded;
        }
        if self.accepted >= self.config.max_tasks {
            return Offer::CapacityExceeded;
        }
        if let Some(allowed) = &self.config.allowed_hosts {
            if !allowed.contains(task.url.host()) {
                return Offer::HostExcluded;
            }
        }

        self.bloom_insert(&task.url);
        self.seen.insert(task.url.as_str().to_string());
        self.accepted += 1;
        let idx = self.host_slot(task.url.host_key());
        self.hosts[idx].queue.push_back(task);
        Offer::Accepted
    }

    fn is_seen(&self, url: &CanonicalUrl) -> bool {
        // A Bloom miss is definitive; a hit must be confirmed.
        self.bloom_may_contain(url) && self.seen.contains(url.as_str())
    }

    fn host_slot(&mut self, key: HostKey) -> usize {
        if let Some(&idx) = self.host_index.get(&key) {
            return idx;
        }
        let idx = self.hosts.len();
        self.host_index.insert(key.clone(), idx);
        self.hosts.push(HostQueue {
            key,
            queue: VecDeque::new(),
            next_allowed: None,
            last_served: 0,
            in_flight: None,
        });
        idx
    }

    /// Releases the next task whose host is free and past its politeness
    /// delay. Among ready hosts the least recently served wins; within a host
    /// tasks leave in FIFO order.
    pub fn next_ready(&mut self, now: Instant) -> Ready {
        let mut best: Option<usize> = None;
        let mut earliest: Option<Instant> = None;
        let mut blocked = false;

        for (idx, host) in self.hosts.iter().enumerate() {
            if host.queue.is_empty() {
                continue;
            }
            if host.in_flight.is_some() {
                blocked = true;
                continue;
            }
            match host.next_allowed {
                Some(t) if t > now => {
                    earliest = Some(earliest.map_or(t, |e| e.min(t)));
                }
                _ => {
                    // Ties (e.g. never served) fall back to creation order.
                    if best.is_none_or(|b| host.last_served < self.hosts[b].last_served) {
                        best = Some(idx);
                    }
                }
            }
        }

        if let Some(idx) = best {
            self.serve_seq += 1;
            let host = &mut self.hosts[idx];
            let task = host.queue.pop_front().expect("ready host has a queued task");
            host.last_served = self.serve_seq;
            host.in_flight = Some(task.url.clone());
            return Ready::Task(task);
        }
        match (earliest, blocked) {
            (Some(t), _) => Ready::NothingReadyUntil(t),
            (None, true) => Ready::AwaitingCompletion,
            (None, false) => Ready::Empty,
        }
    }

    fn in_flight_slot(&mut self, task: &CrawlTask) -> Result<&mut HostQueue, FrontierError> {
        let unknown = || FrontierError::UnknownTask(task.url.to_string());
        let idx = *self.host_index.get(&task.url.host_key()).ok_or_else(unknown)?;
        let host = &mut self.hosts[idx];
        if host.in_flight.as_ref() != Some(&task.url) {
            return Err(unknown());
        }
        Ok(host)
    }

    fn effective_delay(&self, crawl_delay_override: Option<Duration>) -> Duration {
        // A robots crawl-delay may lengthen the configured delay, never shorten it.
        let default = self.config.default_politeness_delay;
        crawl_delay_override.map_or(default, |d| d.max(default))
    }

    /// Marks an in-flight task done; its host may be served again after the
    /// effective delay has elapsed from `now`.
    pub fn complete(
        &mut self,
        task: &CrawlTask,
        now: Instant,
        crawl_delay_override: Option<Duration>,
    ) -> Result<(), FrontierError> {
        let delay = self.effective_delay(crawl_delay_override);
        let host = self.in_flight_slot(task)?;
        host.in_flight = None;
        host.next_allowed = Some(now + delay);
        Ok(())
    }

    /// Returns an in-flight task to the head of its host queue after the host
    /// was contacted on its behalf (the robots.txt fetch). The politeness
    /// delay applies as if the task had completed.
    pub fn defer(
        &mut self,
        task: CrawlTask,
        now: Instant,
        crawl_delay_override: Option<Duration>,
    ) -> Result<(), FrontierError> {
        let delay = self.effective_delay(crawl_delay_override);
        let host = self.in_flight_slot(&task)?;
        host.in_flight = None;
        host.next_allowed = Some(now + delay);
        host.queue.push_front(task);
        Ok(())
    }

    /// Drops an in-flight task that never touched the network (for instance a
    /// robots denial). The host's release time is left unchanged.
    pub fn abandon(&mut self, task: &CrawlTask) -> Result<(), FrontierError> {
        let host = self.in_flight_slot(task)?;
        host.in_flight = None;
        Ok(())
    }

    pub fn bloom_may_contain(&self, url: &CanonicalUrl) -> bool {
        self.bloom.may_contain(url.as_str())
    }

    pub fn bloom_insert(&mut self, url: &CanonicalUrl) {
        self.bloom.insert(url.as_str());
    }

    /// Tasks accepted over the frontier's lifetime.
    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn queued(&self) -> usize {
        self.hosts.iter().map(|h| h.queue.len()).sum()
    }

    pub fn in_flight(&self) -> usize {
        self.hosts.iter().filter(|h| h.in_flight.is_some()).count()
    }

    /// One line per queued URL, grouped by host in first-seen order.
    pub fn dump(&self) -> Vec<String> {
        self.hosts
            .iter()
            .flat_map(|h| {
                h.queue
                    .iter()
                    .map(move |t| format!("{}\tdepth={}\t{}", h.key, t.depth, t.url))
            })
            .collect()
    }
}
