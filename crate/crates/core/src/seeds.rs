//! Keyword → seed page URLs through a pluggable search adapter.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::fetch::{FetchRequest, Fetcher};
use crate::url::CanonicalUrl;

/// Live search adapters never issue requests closer together than this.
pub const LIVE_MIN_INTERVAL: Duration = Duration::from_secs(1);
pub const CSE_KEY_ENV: &str = "IMAGEHARVEST_CSE_KEY";
pub const CSE_ID_ENV: &str = "IMAGEHARVEST_CSE_ID";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedBatch {
    pub keyword: String,
    pub page: u32,
    pub urls: Vec<CanonicalUrl>,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeedError {
    #[error("seed adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("invalid keyword {0:?}")]
    InvalidKeyword(String),
    #[error("seed pages are numbered from 1")]
    InvalidPage,
}

pub trait SeedAdapter {
    fn seed_page(&self, keyword: &str, page: u32) -> Result<SeedBatch, SeedError>;
}

fn check_args(keyword: &str, page: u32) -> Result<(), SeedError> {
    if keyword.trim().is_empty() {
        return Err(SeedError::InvalidKeyword(keyword.to_string()));
    }
    if page == 0 {
        return Err(SeedError::InvalidPage);
    }
    Ok(())
}

/// Canonicalizes and dedups `raw` in order, dropping unparseable entries.
fn canonical_batch<'a>(raw: impl IntoIterator<Item = &'a str>) -> Vec<CanonicalUrl> {
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter_map(|s| match CanonicalUrl::parse(s) {
            Ok(u) => Some(u),
            Err(e) => {
                log::warn!("skipping seed {s:?}: {e}");
                None
            }
        })
        .filter(|u| seen.insert(u.clone()))
        .collect()
}

/// Reads a JSON object mapping keyword → pages → URL strings.
#[derive(Debug, Clone, Default)]
pub struct FixtureAdapter {
    pages: BTreeMap<String, Vec<Vec<String>>>,
}

impl FixtureAdapter {
    pub fn from_json(json: &str) -> Result<Self, SeedError> {
        let pages = serde_json::from_str(json).map_err(|e| SeedError::AdapterUnavailable(format!("bad seed fixture: {e}")))?;
        Ok(Self { pages })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SeedError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeedError::AdapterUnavailable(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl SeedAdapter for FixtureAdapter {
    fn seed_page(&self, keyword: &str, page: u32) -> Result<SeedBatch, SeedError> {
        check_args(keyword, page)?;
        let pages = self.pages.get(keyword).map(Vec::as_slice).unwrap_or_default();
        let idx = page as usize - 1;
        let urls = pages.get(idx).map(|p| canonical_batch(p.iter().map(String::as_str))).unwrap_or_default();
        Ok(SeedBatch {
            keyword: keyword.to_string(),
            page,
            exhausted: idx + 1 >= pages.len(),
            urls,
        })
    }
}

/// Pages `1..=max_pages`, stopping at the first exhausted batch, with
/// cross-page duplicates removed. Only a page-1 failure is an error.
pub fn seed_all(adapter: &dyn SeedAdapter, keyword: &str, max_pages: u32) -> Result<Vec<CanonicalUrl>, SeedError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for page in 1..=max_pages.max(1) {
        let batch = match adapter.seed_page(keyword, page) {
            Ok(b) => b,
            Err(e) if page == 1 => return Err(e),
            Err(e) => {
                log::warn!("seed page {page} failed, keeping pages 1..{}: {e}", page - 1);
                break;
            }
        };
        out.extend(batch.urls.into_iter().filter(|u| seen.insert(u.clone())));
        if batch.exhausted {
            break;
        }
    }
    Ok(out)
}

/// Google Programmable Search (custom search JSON API), 10 results a page.
/// Credentials come from `IMAGEHARVEST_CSE_KEY` and `IMAGEHARVEST_CSE_ID`.
pub struct CustomSearchAdapter {
    fetcher: Fetcher,
    key: String,
    engine_id: String,
    endpoint: String,
    last_request: Mutex<Option<Instant>>,
}

impl CustomSearchAdapter {
    pub fn from_env(fetcher: Fetcher) -> Result<Self, SeedError> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| SeedError::AdapterUnavailable(format!("{name} is not set")))
        };
        Ok(Self::new(fetcher, var(CSE_KEY_ENV)?, var(CSE_ID_ENV)?))
    }

    pub fn new(fetcher: Fetcher, key: String, engine_id: String) -> Self {
        Self {
            fetcher,
            key,
            engine_id,
            endpoint: "https://www.googleapis.com/customsearch/v1".into(),
            last_request: Mutex::new(None),
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    fn wait_turn(&self) {
        let mut last = self.last_request.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < LIVE_MIN_INTERVAL {
                std::thread::sleep(LIVE_MIN_INTERVAL - since);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(serde::Deserialize)]
struct CseResponse {
    #[serde(default)]
    items: Vec<CseItem>,
    #[serde(default)]
    queries: Option<CseQueries>,
}

#[derive(serde::Deserialize)]
struct CseItem {
    link: String,
}

#[derive(serde::Deserialize)]
struct CseQueries {
    #[serde(rename = "nextPage", default)]
    next_page: Vec<serde_json::Value>,
}

impl SeedAdapter for CustomSearchAdapter {
    fn seed_page(&self, keyword: &str, page: u32) -> Result<SeedBatch, SeedError> {
        check_args(keyword, page)?;
        let start = (page - 1) * 10 + 1;
        let mut url = url::Url::parse(&self.endpoint).map_err(|e| SeedError::AdapterUnavailable(e.to_string()))?;
        url.query_pairs_mut()
            .append_pair("key", &self.key)
            .append_pair("cx", &self.engine_id)
            .append_pair("q", keyword)
            .append_pair("start", &start.to_string());
        let url = CanonicalUrl::parse(url.as_str()).map_err(|e| SeedError::AdapterUnavailable(e.to_string()))?;

        self.wait_turn();
        let resp = self
            .fetcher
            .get(&FetchRequest::page(url).max_body(1024 * 1024))
            .map_err(|e| SeedError::AdapterUnavailable(e.to_string()))?;
        if !resp.is_success() {
            return Err(SeedError::AdapterUnavailable(format!("search API returned HTTP {}", resp.status)));
        }
        let parsed: CseResponse =
            serde_json::from_slice(&resp.body).map_err(|e| SeedError::AdapterUnavailable(format!("search API reply: {e}")))?;
        let urls = canonical_batch(parsed.items.iter().map(|i| i.link.as_str()));
        let has_next = parsed.queries.is_some_and(|q| !q.next_page.is_empty());
        Ok(SeedBatch {
            keyword: keyword.to_string(),
            page,
            exhausted: !has_next || urls.is_empty(),
            urls,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> FixtureAdapter {
        let pages: Vec<Vec<String>> = (1..=3)
            .map(|p| (0..10).map(|i| format!("http://site{p}.test/r{i}.html")).collect())
            .collect();
        let json = serde_json::json!({ "tiger": pages, "dup": [["http://a.com/x", "http://a.com/x#f", "http://a.com/y"], ["HTTP://A.COM/y", "http://a.com/z"]] });
        FixtureAdapter::from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn fixture_pages() {
        let f = fixture();
        let p2 = f.seed_page("tiger", 2).unwrap();
        assert_eq!(p2.urls.len(), 10);
        assert_eq!(p2.urls[0].as_str(), "http://site2.test/r0.html");
        assert!(!p2.exhausted);
        assert!(f.seed_page("tiger", 3).unwrap().exhausted);
        let p4 = f.seed_page("tiger", 4).unwrap();
        assert!(p4.exhausted && p4.urls.is_empty());
        let unknown = f.seed_page("zebra", 1).unwrap();
        assert!(unknown.exhausted && unknown.urls.is_empty());
    }

    #[test]
    fn fixture_errors() {
        let f = fixture();
        assert_eq!(f.seed_page("  ", 1), Err(SeedError::InvalidKeyword("  ".into())));
        assert_eq!(f.seed_page("tiger", 0), Err(SeedError::InvalidPage));
    }

    #[test]
    fn batch_is_canonical_and_unique() {
        let p1 = fixture().seed_page("dup", 1).unwrap();
        assert_eq!(p1.urls.iter().map(|u| u.as_str()).collect::<Vec<_>>(), ["http://a.com/x", "http://a.com/y"]);
    }

    #[test]
    fn seed_all_examples() {
        let f = fixture();
        assert_eq!(seed_all(&f, "tiger", 10).unwrap().len(), 30);
        assert_eq!(seed_all(&f, "tiger", 1).unwrap(), f.seed_page("tiger", 1).unwrap().urls);
        let dup = seed_all(&f, "dup", 10).unwrap();
        assert_eq!(dup.iter().map(|u| u.as_str()).collect::<Vec<_>>(), ["http://a.com/x", "http://a.com/y", "http://a.com/z"]);
    }

    struct Flaky {
        fail_from: u32,
    }

    impl SeedAdapter for Flaky {
        fn seed_page(&self, keyword: &str, page: u32) -> Result<SeedBatch, SeedError> {
            if page >= self.fail_from {
                return Err(SeedError::AdapterUnavailable("down".into()));
            }
            Ok(SeedBatch {
                keyword: keyword.into(),
                page,
                urls: vec![CanonicalUrl::parse(&format!("http://a.com/{page}")).unwrap()],
                exhausted: false,
            })
        }
    }

    #[test]
    fn seed_all_failures() {
        assert!(matches!(seed_all(&Flaky { fail_from: 1 }, "k", 5), Err(SeedError::AdapterUnavailable(_))));
        assert_eq!(seed_all(&Flaky { fail_from: 3 }, "k", 5).unwrap().len(), 2);
    }
}
