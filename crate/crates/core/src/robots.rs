//! Robots Exclusion Protocol.
//!
//! Matching follows the standardized semantics: the longest matching rule
//! wins, an `Allow` beats a `Disallow` of equal length, `*` matches any run of
//! characters and a trailing `$` anchors the end. The group for our agent is
//! the one whose `User-agent` token is the longest prefix of our product
//! token; groups naming the same agent are merged; `*` is the fallback.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::fetch::{FetchError, FetchResponse};
use crate::url::{CanonicalUrl, HostKey};

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);
/// robots.txt bodies beyond this are truncated before parsing.
pub const MAX_ROBOTS_BYTES: usize = 512 * 1024;
const MAX_LINE_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Allow,
    Disallow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub kind: RuleKind,
    /// Normalized path pattern, possibly with `*` and a trailing `$`.
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Group {
    /// Lowercased agent tokens.
    pub agents: Vec<String>,
    pub rules: Vec<Rule>,
    pub crawl_delay: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Fetched,
    NotFound,
    ServerError,
    FetchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotsPolicy {
    pub host_key: Option<HostKey>,
    /// Every group in file order.
    pub groups: Vec<Group>,
    /// Rules of the group(s) selected for our agent, in file order.
    pub rules: Vec<Rule>,
    pub crawl_delay: Option<Duration>,
    pub fetched_at: Instant,
    pub ttl: Duration,
    pub origin: Origin,
}

impl RobotsPolicy {
    pub fn allow_all(origin: Origin, now: Instant) -> Self {
        Self {
            host_key: None,
            groups: Vec::new(),
            rules: Vec::new(),
            crawl_delay: None,
            fetched_at: now,
            ttl: DEFAULT_TTL,
            origin,
        }
    }

    pub fn is_fresh(&self, now: Instant) -> bool {
        self.fetched_at + self.ttl > now
    }

    pub fn is_allowed(&self, path: &str) -> bool {
        is_allowed(self, path)
    }
}

/// Product token of a user-agent string: `imageharvest/1.0 (...)` → `imageharvest`.
pub fn product_token(user_agent: &str) -> String {
    user_agent
        .trim()
        .split(|c: char| c == '/' || c.is_whitespace())
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase()
}

/// Parses robots.txt bytes, replacing invalid UTF-8.
pub fn parse_robots_bytes(body: &[u8], user_agent: &str) -> RobotsPolicy {
    let body = &body[..body.len().min(MAX_ROBOTS_BYTES)];
    parse_robots(&String::from_utf8_lossy(body), user_agent)
}

/// Parses a robots.txt body and selects the rules that apply to `user_agent`.
/// Total: malformed lines are skipped.
pub fn parse_robots(body: &str, user_agent: &str) -> RobotsPolicy {
    let groups = parse_groups(body.strip_prefix('\u{feff}').unwrap_or(body));
    let token = product_token(user_agent);

    let mut best_len = 0;
    for g in &groups {
        for a in &g.agents {
            if a != "*" && !a.is_empty() && token.starts_with(a.as_str()) {
                best_len = best_len.max(a.len());
            }
        }
    }
    let selected: Vec<&Group> = if best_len > 0 {
        groups
            .iter()
            .filter(|g| g.agents.iter().any(|a| a.len() == best_len && token.starts_with(a.as_str())))
            .collect()
    } else {
        groups.iter().filter(|g| g.agents.iter().any(|a| a == "*")).collect()
    };

    let rules = selected.iter().flat_map(|g| g.rules.iter().cloned()).collect();
    let crawl_delay = selected.iter().find_map(|g| g.crawl_delay);
    RobotsPolicy {
        host_key: None,
        groups,
        rules,
        crawl_delay,
        fetched_at: Instant::now(),
        ttl: DEFAULT_TTL,
        origin: Origin::Fetched,
    }
}

fn parse_groups(body: &str) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    let mut current: Option<Group> = None;
    // Consecutive user-agent lines share a group; any other directive closes
    // the agent list.
    let mut collecting_agents = false;

    for raw_line in body.split(['\n', '\r']) {
        let line = truncate_at_boundary(raw_line, MAX_LINE_BYTES);
        let line = line.split('#').next().unwrap_or_default().trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();

        match key.as_str() {
            "user-agent" => {
                if !collecting_agents {
                    if let Some(g) = current.take() {
                        groups.push(g);
                    }
                    current = Some(Group::default());
                    collecting_agents = true;
                }
                let agent = value.split_whitespace().next().unwrap_or_default().to_ascii_lowercase();
                let agent = product_token(&agent);
                let agent = if agent.starts_with('*') { "*".to_string() } else { agent };
                if let Some(g) = current.as_mut() {
                    g.agents.push(agent);
                }
            }
            "allow" | "disallow" => {
                collecting_agents = false;
                let Some(g) = current.as_mut() else { continue };
                if value.is_empty() {
                    continue;
                }
                let kind = if key == "allow" { RuleKind::Allow } else { RuleKind::Disallow };
                g.rules.push(Rule {
                    kind,
                    pattern: normalize_pattern(value),
                });
            }
            "crawl-delay" => {
                collecting_agents = false;
                let Some(g) = current.as_mut() else { continue };
                if g.crawl_delay.is_none() {
                    if let Ok(secs) = value.parse::<f64>() {
                        if secs.is_finite() && secs >= 0.0 {
                            g.crawl_delay = Duration::try_from_secs_f64(secs).ok();
                        }
                    }
                }
            }
            _ => {
                // Unknown directives (sitemap, host, ...) do not end a group's
                // agent list in practice, so leave `collecting_agents` alone.
            }
        }
    }
    if let Some(g) = current {
        groups.push(g);
    }
    groups
}

fn truncate_at_boundary(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Brings a rule path into the same escape form as canonical URL paths so the
/// two can be compared bytewise.
fn normalize_pattern(value: &str) -> String {
    let value = if value.starts_with('/') || value.starts_with('*') {
        value.to_string()
    } else {
        format!("/{value}")
    };
    let mut out = String::with_capacity(value.len());
    let bytes = value.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'%' && i + 2 < bytes.len() && bytes[i + 1].is_ascii_hexdigit() && bytes[i + 2].is_ascii_hexdigit() {
            let v = u8::from_str_radix(&value[i + 1..i + 3], 16).expect("checked hex digits");
            if v.is_ascii_alphanumeric() || matches!(v, b'-' | b'.' | b'_' | b'~') {
                out.push(v as char);
            } else {
                out.push('%');
                out.push_str(&value[i + 1..i + 3].to_ascii_uppercase());
            }
            i += 3;
        } else if b.is_ascii_graphic() {
            out.push(b as char);
            i += 1;
        } else {
            out.push_str(&format!("%{b:02X}"));
            i += 1;
        }
    }
    out
}

/// Length-weighted glob match: does `pattern` match a prefix of `path`
/// (or all of it when anchored with `$`)?
fn pattern_matches(pattern: &str, path: &str) -> bool {
    let (pattern, anchored) = match pattern.strip_suffix('$') {
        Some(p) => (p, true),
        None => (pattern, false),
    };
    let parts: Vec<&str> = pattern.split('*').collect();
    let first = parts[0];
    if !path.starts_with(first) {
        return false;
    }
    let mut pos = first.len();
    if parts.len() == 1 {
        return !anchored || pos == path.len();
    }
    let last = parts[parts.len() - 1];
    for part in &parts[1..parts.len() - 1] {
        match path[pos..].find(part) {
            Some(i) => pos += i + part.len(),
            None => return false,
        }
    }
    if anchored {
        path.len() >= pos + last.len() && path.ends_with(last)
    } else {
        path[pos..].contains(last)
    }
}

/// Decides whether `path` (canonical path plus query) may be fetched.
pub fn is_allowed(policy: &RobotsPolicy, path: &str) -> bool {
    match policy.origin {
        Origin::ServerError | Origin::FetchFailed => return false,
        Origin::NotFound => return true,
        Origin::Fetched => {}
    }
    if path == "/robots.txt" {
        return true;
    }
    let mut best: Option<(usize, RuleKind)> = None;
    for rule in &policy.rules {
        if !pattern_matches(&rule.pattern, path) {
            continue;
        }
        let len = rule.pattern.len();
        best = match best {
            Some((l, k)) if l > len || (l == len && k == RuleKind::Allow) => Some((l, k)),
            _ => Some((len, rule.kind)),
        };
    }
    !matches!(best, Some((_, RuleKind::Disallow)))
}

/// Turns the outcome of a robots.txt fetch into a policy.
pub fn policy_from_fetch(
    result: Result<FetchResponse, FetchError>,
    user_agent: &str,
    now: Instant,
) -> RobotsPolicy {
    let mut policy = match result {
        Ok(resp) if resp.is_success() => parse_robots_bytes(&resp.body, user_agent),
        Err(FetchError::BodyTooLarge { partial, .. }) if partial.is_success() => {
            parse_robots_bytes(&partial.body, user_agent)
        }
        Ok(resp) if resp.status == 429 || resp.status >= 500 => RobotsPolicy::allow_all(Origin::ServerError, now),
        // 3xx that were not followed and 4xx both mean "no usable file".
        Ok(_) => RobotsPolicy::allow_all(Origin::NotFound, now),
        Err(_) => RobotsPolicy::allow_all(Origin::FetchFailed, now),
    };
    policy.fetched_at = now;
    policy
}

type Slot = Arc<Mutex<Option<Arc<RobotsPolicy>>>>;

/// Shared per-host policy cache. Lookups for one host are single-flight: at
/// most one robots.txt fetch per host per TTL window, however many callers.
pub struct RobotsCache {
    user_agent: String,
    ttl: Duration,
    slots: Mutex<HashMap<HostKey, Slot>>,
}

impl RobotsCache {
    pub fn new(user_agent: impl Into<String>) -> Self {
        Self::with_ttl(user_agent, DEFAULT_TTL)
    }

    pub fn with_ttl(user_agent: impl Into<String>, ttl: Duration) -> Self {
        assert!(!ttl.is_zero(), "robots ttl must be positive");
        Self {
            user_agent: user_agent.into(),
            ttl,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn user_agent(&self) -> &str {
        &self.user_agent
    }

    fn slot(&self, host: &HostKey) -> Slot {
        let mut slots = self.slots.lock().expect("robots cache poisoned");
        slots.entry(host.clone()).or_default().clone()
    }

    /// A fresh cached policy, without fetching.
    pub fn cached(&self, host: &HostKey, now: Instant) -> Option<Arc<RobotsPolicy>> {
        let slot = self.slot(host);
        let guard = slot.lock().expect("robots slot poisoned");
        guard.as_ref().filter(|p| p.is_fresh(now)).cloned()
    }

    /// Returns the cached policy for `host`, fetching `/robots.txt` through
    /// `fetch` when absent or stale. Never fails: fetch problems are encoded
    /// in the policy's origin.
    pub fn policy_for<F>(&self, host: &HostKey, fetch: F, now: Instant) -> Arc<RobotsPolicy>
    where
        F: FnOnce(&CanonicalUrl) -> Result<FetchResponse, FetchError>,
    {
        let slot = self.slot(host);
        let mut guard = slot.lock().expect("robots slot poisoned");
        if let Some(p) = guard.as_ref().filter(|p| p.is_fresh(now)) {
            return p.clone();
        }
        let result = fetch(&host.robots_url());
        let mut policy = policy_from_fetch(result, &self.user_agent, now);
        policy.host_key = Some(host.clone());
        policy.ttl = self.ttl;
        let policy = Arc::new(policy);
        *guard = Some(policy.clone());
        policy
    }
}
