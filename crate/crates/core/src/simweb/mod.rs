//! Deterministic synthetic web.
//!
//! [`generate`] turns a [`SimWebSpec`] into a [`SiteGraph`] of served
//! resources and a [`GroundTruth`] describing what was planted. Every byte
//! is a function of the `SimWebSpec`, so the truth is an exact oracle for crawls run
//! against [`SimTransport`].
//!
//! Layout of host `i` (`http://site{i}.simweb.test`):
//!
//! * `/` links every page of the host and the next host's index;
//! * `/gallery/{j}.html` or `{disallow_prefix}/{j}.html` content pages with
//!   a few random cross links;
//! * `/go/{j}` redirects (301) to a content page when redirects are planted;
//! * `/img/...` image files, each referenced by one page unless orphaned;
//! * `/robots.txt` when rules or a crawl delay are configured.

mod transport;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::extract::tokenize;
use crate::imagestore::{content_hash, ImageFormat};
use crate::url::CanonicalUrl;

pub use transport::{as_transport, FetchLogEntry, SimTransport};

const TEMPLATE_JPG: &[u8] = include_bytes!("templates/pixel.jpg");
const TEMPLATE_PNG: &[u8] = include_bytes!("templates/pixel.png");
const TEMPLATE_BMP: &[u8] = include_bytes!("templates/pixel.bmp");
const TEMPLATE_TIFF: &[u8] = include_bytes!("templates/pixel.tiff");
const TEMPLATE_GIF: &[u8] = include_bytes!("templates/pixel.gif");

/// Words used for every non-keyword text; a keyword may not reuse them.
const NEUTRAL_WORDS: &[&str] = &[
    "a", "the", "of", "from", "in", "photo", "gallery", "site", "index", "archive", "snapshot", "landscape",
    "picture", "view", "quiet", "misty", "old", "bright", "river", "street", "harbor", "meadow", "window",
    "morning", "evening", "copy", "go", "img", "private", "simweb", "test", "page", "html", "jpg", "png", "bmp",
    "tiff", "gif", "webp", "image", "not", "available", "home", "link", "links", "more", "pictures",
];
const ADJECTIVES: &[&str] = &["quiet", "misty", "old", "bright"];
const NOUNS: &[&str] = &["river", "street", "harbor", "meadow", "window", "landscape", "view"];

/// What a planted image URL serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Jpg,
    Png,
    Bmp,
    Tiff,
    Gif,
    /// RIFF/WebP bytes: a real image, but not an accepted format.
    WebpDecoy,
    /// An HTML error page at a `.jpg` URL, served as `image/jpeg`.
    HtmlDecoy,
}

impl PlantKind {
    pub const ALL: [PlantKind; 7] = [
        PlantKind::Jpg,
        PlantKind::Png,
        PlantKind::Bmp,
        PlantKind::Tiff,
        PlantKind::Gif,
        PlantKind::WebpDecoy,
        PlantKind::HtmlDecoy,
    ];

    pub fn is_decoy(self) -> bool {
        matches!(self, PlantKind::WebpDecoy | PlantKind::HtmlDecoy)
    }

    /// The format sniffing must report for these bytes.
    pub fn format(self) -> ImageFormat {
        match self {
            PlantKind::Jpg => ImageFormat::Jpeg,
            PlantKind::Png => ImageFormat::Png,
            PlantKind::Bmp => ImageFormat::Bmp,
            PlantKind::Tiff => ImageFormat::Tiff,
            PlantKind::Gif => ImageFormat::Gif,
            PlantKind::WebpDecoy | PlantKind::HtmlDecoy => ImageFormat::Unknown,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            PlantKind::Jpg | PlantKind::HtmlDecoy => "jpg",
            PlantKind::Png => "png",
            PlantKind::Bmp => "bmp",
            PlantKind::Tiff => "tiff",
            PlantKind::Gif => "gif",
            PlantKind::WebpDecoy => "webp",
        }
    }

    fn content_type(self) -> &'static str {
        match self {
            PlantKind::Jpg | PlantKind::HtmlDecoy => "image/jpeg",
            PlantKind::Png => "image/png",
            PlantKind::Bmp => "image/bmp",
            PlantKind::Tiff => "image/tiff",
            PlantKind::Gif => "image/gif",
            PlantKind::WebpDecoy => "image/webp",
        }
    }

    fn template(self) -> &'static [u8] {
        match self {
            PlantKind::Jpg => TEMPLATE_JPG,
            PlantKind::Png => TEMPLATE_PNG,
            PlantKind::Bmp => TEMPLATE_BMP,
            PlantKind::Tiff => TEMPLATE_TIFF,
            PlantKind::Gif => TEMPLATE_GIF,
            PlantKind::WebpDecoy | PlantKind::HtmlDecoy => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsRules {
    #[serde(default = "default_prefix")]
    pub disallow_prefix: String,
    /// Share of each host's content pages placed under the prefix.
    pub disallowed_fraction: f64,
}

fn default_prefix() -> String {
    "/private".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimWebSpec {
    pub rng_seed: u64,
    pub hosts: u32,
    pub pages_per_host: u32,
    pub images_total: u32,
    pub relevant_fraction: f64,
    pub keyword: String,
    /// Relative weights; apportioned over `images_total` by largest remainder.
    pub formats_mix: BTreeMap<PlantKind, f64>,
    pub robots_rules: Option<RobotsRules>,
    /// Seconds, advertised as `Crawl-delay` in every robots.txt.
    pub crawl_delay: Option<f64>,
    pub duplicate_url_refs: u32,
    pub duplicate_content_pairs: u32,
    /// Fraction of accepted-format images whose bytes differ in epoch 2.
    pub mutation_set: f64,
    /// Images planted but never referenced; taken out of `images_total`.
    pub orphan_images: u32,
    /// Index links routed through a 301 hop.
    pub redirects: u32,
    /// Fixed per-request latency of the transport.
    pub latency_ms: u64,
}

impl Default for SimWebSpec {
    fn default() -> Self {
        Self {
            rng_seed: 1,
            hosts: 2,
            pages_per_host: 10,
            images_total: 50,
            relevant_fraction: 0.5,
            keyword: "tiger".into(),
            formats_mix: [PlantKind::Jpg, PlantKind::Png, PlantKind::Bmp, PlantKind::Tiff, PlantKind::Gif]
                .into_iter()
                .map(|k| (k, 1.0))
                .collect(),
            robots_rules: None,
            crawl_delay: None,
            duplicate_url_refs: 0,
            duplicate_content_pairs: 0,
            mutation_set: 0.0,
            orphan_images: 0,
            redirects: 0,
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimWebError {
    #[error("infeasible simweb spec: {0}")]
    SpecInfeasible(String),
    #[error("reading simweb spec: {0}")]
    Load(String),
}

impl SimWebSpec {
    pub fn from_json(json: &str) -> Result<Self, SimWebError> {
        serde_json::from_str(json).map_err(|e| SimWebError::Load(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SimWebError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimWebError::Load(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn accepted_weight_share(&self) -> BTreeMap<PlantKind, u32> {
        apportion(&self.formats_mix, self.images_total)
    }

    pub fn validate(&self) -> Result<(), SimWebError> {
        let bad = |m: String| Err(SimWebError::SpecInfeasible(m));
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if self.hosts == 0 {
            return bad("hosts must be at least 1".into());
        }
        if self.pages_per_host == 0 && self.images_total > self.orphan_images {
            return bad("images need at least one page per host".into());
        }
        if !unit(self.relevant_fraction) || !unit(self.mutation_set) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if let Some(r) = &self.robots_rules {
            if !unit(r.disallowed_fraction) {
                return bad("disallowed_fraction must lie in [0, 1]".into());
            }
            if !r.disallow_prefix.starts_with('/') || r.disallow_prefix.len() < 2 || r.disallow_prefix.contains(['*', '$', ' ']) {
                return bad(format!("disallow_prefix {:?} must be a plain path", r.disallow_prefix));
            }
            if ["/gallery", "/img", "/go"].iter().any(|p| p.starts_with(r.disallow_prefix.trim_end_matches('/'))) {
                return bad("disallow_prefix would cover generated non-private paths".into());
            }
        }
        if self.crawl_delay.is_some_and(|d| !d.is_finite() || d < 0.0) {
            return bad("crawl_delay must be a non-negative number".into());
        }
        if self.formats_mix.values().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("formats_mix weights must be non-negative".into());
        }
        if self.images_total > 0 && self.formats_mix.values().sum::<f64>() <= 0.0 {
            return bad("formats_mix has no positive weight".into());
        }
        if self.orphan_images > self.images_total {
            return bad("more orphan images than images".into());
        }
        let tokens = tokenize(&self.keyword);
        if tokens.is_empty() {
            return bad("keyword has no alphanumeric tokens".into());
        }
        if let Some(t) = tokens.iter().find(|t| NEUTRAL_WORDS.contains(&t.as_str()) || t.chars().all(|c| c.is_ascii_digit())) {
            return bad(format!("keyword token {t:?} collides with generated filler text"));
        }
        let referenced = self.images_total - self.orphan_images;
        let accepted: u32 = self
            .accepted_weight_share()
            .iter()
            .filter(|(k, _)| !k.is_decoy())
            .map(|(_, n)| n)
            .sum();
        if self.duplicate_content_pairs > accepted.min(referenced) {
            return bad(format!(
                "{} duplicate content pairs but at most {} referenced accepted images",
                self.duplicate_content_pairs,
                accepted.min(referenced)
            ));
        }
        if self.duplicate_url_refs > 0 && referenced == 0 {
            return bad("duplicate_url_refs needs referenced images".into());
        }
        if self.redirects > self.hosts * self.pages_per_host {
            return bad("more redirects than pages".into());
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` over `weights`, ties broken in
/// kind order.
pub fn apportion(weights: &BTreeMap<PlantKind, f64>, total: u32) -> BTreeMap<PlantKind, u32> {
    let sum: f64 = weights.values().filter(|w| w.is_finite() && **w > 0.0).sum();
    let mut out: BTreeMap<PlantKind, u32> = weights.keys().map(|k| (*k, 0)).collect();
    if sum <= 0.0 || total == 0 {
        return out;
    }
    let mut remainders = Vec::new();
    let mut given = 0;
    for (&kind, &w) in weights {
        if !(w.is_finite() && w > 0.0) {
            continue;
        }
        let exact = w / sum * f64::from(total);
        let floor = exact.floor() as u32;
        out.insert(kind, floor);
        given += floor;
        remainders.push((exact - f64::from(floor), kind));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, kind) in remainders.into_iter().take((total - given) as usize) {
        *out.get_mut(&kind).expect("kind present") += 1;
    }
    out
}

/// A served resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resource {
    pub status: u16,
    pub content_type: Option<String>,
    pub location: Option<String>,
    pub body: Vec<u8>,
    /// Epoch-2 bytes, when they differ.
    pub body_epoch2: Option<Vec<u8>>,
}

impl Resource {
    fn ok(content_type: &str, body: Vec<u8>) -> Self {
        Self {
            status: 200,
            content_type: Some(content_type.into()),
            location: None,
            body,
            body_epoch2: None,
        }
    }

    pub fn body_at(&self, epoch: u8) -> &[u8] {
        match (&self.body_epoch2, epoch) {
            (Some(b), 2) => b,
            _ => &self.body,
        }
    }
}

/// Canonical URL string → resource.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SiteGraph {
    pub resources: BTreeMap<String, Resource>,
}

impl SiteGraph {
    pub fn get(&self, url: &str) -> Option<&Resource> {
        self.resources.get(url)
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageTruth {
    pub links: Vec<String>,
    pub images: Vec<String>,
    pub disallowed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub kind: PlantKind,
    pub filename: String,
    pub alt: String,
    pub caption: String,
    pub relevant: bool,
    pub orphan: bool,
    pub mutated: bool,
    /// For a duplicate-content copy, the URL whose bytes it repeats.
    pub duplicate_of: Option<String>,
    pub hash_epoch1: String,
    pub hash_epoch2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub keyword: String,
    pub seeds: Vec<String>,
    pub pages: BTreeMap<String, PageTruth>,
    /// Redirecting URL → target.
    pub redirects: BTreeMap<String, String>,
    pub images: BTreeMap<String, ImageTruth>,
    /// URLs of every page generated under the disallowed prefix.
    pub disallowed_pages: BTreeSet<String>,
}

/// What a crawl of the graph must see.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reach {
    /// Referenced image URLs of accepted formats.
    pub images: BTreeSet<String>,
    /// Referenced decoy URLs.
    pub decoys: BTreeSet<String>,
    /// Page URLs fetched (redirect sources included).
    pub fetched_pages: BTreeSet<String>,
    /// Distinct URLs dropped by robots rules.
    pub robots_denials: usize,
}

impl GroundTruth {
    /// Breadth-first walk from the seeds with the crawler's rules: links go
    /// one level deeper, redirect targets and images stay at their page's
    /// depth, and a URL is considered once.
    pub fn reach(&self, max_depth: u32, respect_robots: bool) -> Reach {
        let mut reach = Reach::default();
        let mut seen: HashSet<&str> = HashSet::new();
        let mut queue: VecDeque<(&str, u32)> = VecDeque::new();
        for s in &self.seeds {
            if seen.insert(s) {
                queue.push_back((s, 0));
            }
        }
        while let Some((url, depth)) = queue.pop_front() {
            if respect_robots && self.disallowed_pages.contains(url) {
                reach.robots_denials += 1;
                continue;
            }
            if let Some(target) = self.redirects.get(url) {
                reach.fetched_pages.insert(url.to_string());
                if seen.insert(target) {
                    queue.push_back((target, depth));
                }
                continue;
            }
            let Some(page) = self.pages.get(url) else { continue };
            reach.fetched_pages.insert(url.to_string());
            for img in &page.images {
                if seen.insert(img) {
                    match self.images.get(img.as_str()) {
                        Some(t) if t.kind.is_decoy() => reach.decoys.insert(img.clone()),
                        Some(_) => reach.images.insert(img.clone()),
                        None => false,
                    };
                }
            }
            if depth < max_depth {
                for link in &page.links {
                    if seen.insert(link) {
                        queue.push_back((link, depth + 1));
                    }
                }
            }
        }
        reach
    }

    pub fn relevant_images(&self) -> BTreeSet<String> {
        self.images.iter().filter(|(_, t)| t.relevant).map(|(u, _)| u.clone()).collect()
    }

    pub fn mutated_images(&self) -> BTreeSet<String> {
        self.images.iter().filter(|(_, t)| t.mutated).map(|(u, _)| u.clone()).collect()
    }

    pub fn decoy_images(&self) -> BTreeSet<String> {
        self.images.iter().filter(|(_, t)| t.kind.is_decoy()).map(|(u, _)| u.clone()).collect()
    }

    /// Seed fixture mapping the keyword to one page holding every seed.
    pub fn seed_fixture_json(&self) -> String {
        serde_json::json!({ &self.keyword: [&self.seeds] }).to_string()
    }
}

struct ImgRef {
    url: String,
    alt: String,
    caption: String,
}

struct PageDraft {
    url: String,
    host: usize,
    path: String,
    title: String,
    links: Vec<String>,
    imgs: Vec<ImgRef>,
    disallowed: bool,
}

fn base(host: usize) -> String {
    format!("http://site{host}.simweb.test")
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn neutral_phrase(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", pick(rng, ADJECTIVES), pick(rng, NOUNS))
}

fn padding(rng: &mut ChaCha8Rng, printable: bool) -> Vec<u8> {
    let len = rng.gen_range(1024..=4096);
    if printable {
        (0..len).map(|_| rng.gen_range(b'a'..=b'z')).collect()
    } else {
        (0..len).map(|_| rng.gen()).collect()
    }
}

fn image_bytes(kind: PlantKind, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match kind {
        PlantKind::WebpDecoy => {
            let pad = padding(rng, false);
            let mut b = b"RIFF".to_vec();
            b.extend(((pad.len() + 8) as u32).to_le_bytes());
            b.extend(b"WEBPVP8 ");
            b.extend(pad);
            b
        }
        PlantKind::HtmlDecoy => {
            let mut b = b"<!DOCTYPE html><html><head><title>404</title></head><body><p>image not available</p><!-- ".to_vec();
            b.extend(padding(rng, true));
            b.extend(b" --></body></html>");
            b
        }
        _ => {
            let mut b = kind.template().to_vec();
            b.extend(padding(rng, false));
            b
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Builds the site graph and its ground truth. Deterministic in `spec`.
pub fn generate(spec: &SimWebSpec) -> Result<(SiteGraph, GroundTruth), SimWebError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let hosts = spec.hosts as usize;
    let per_host = spec.pages_per_host as usize;
    let slug = tokenize(&spec.keyword).join("-");

    // Content pages.
    let mut pages: Vec<PageDraft> = Vec::with_capacity(hosts * per_host);
    let mut disallowed_pages = BTreeSet::new();
    for h in 0..hosts {
        let private: HashSet<usize> = match &spec.robots_rules {
            Some(r) => {
                let n = (r.disallowed_fraction * per_host as f64).round() as usize;
                sample(&mut rng, per_host, n.min(per_host)).into_iter().collect()
            }
            None => HashSet::new(),
        };
        for j in 0..per_host {
            let disallowed = private.contains(&j);
            let path = match (&spec.robots_rules, disallowed) {
                (Some(r), true) => format!("{}/{j}.html", r.disallow_prefix.trim_end_matches('/')),
                _ => format!("/gallery/{j}.html"),
            };
            let url = format!("{}{path}", base(h));
            if disallowed {
                disallowed_pages.insert(url.clone());
            }
            let title = format!("{} {} {j}", pick(&mut rng, &["Photo", "Picture"]), pick(&mut rng, &["gallery", "archive"]));
            pages.push(PageDraft { url, host: h, path, title, links: Vec::new(), imgs: Vec::new(), disallowed });
        }
    }
    let n_pages = pages.len();
    let host_pages = |h: usize| h * per_host..(h + 1) * per_host;

    // Random cross links, to any host.
    if n_pages > 1 {
        for p in 0..n_pages {
            let n_links = rng.gen_range(2..=4).min(n_pages - 1);
            for _ in 0..n_links {
                let mut q = rng.gen_range(0..n_pages - 1);
                if q >= p {
                    q += 1;
                }
                let target = pages[q].url.clone();
                if !pages[p].links.contains(&target) {
                    pages[p].links.push(target);
                }
            }
        }
    }

    // Images.
    let mut kinds: Vec<PlantKind> = spec
        .accepted_weight_share()
        .into_iter()
        .flat_map(|(k, n)| std::iter::repeat_n(k, n as usize))
        .collect();
    kinds.shuffle(&mut rng);
    let total = kinds.len();
    let n_relevant = (spec.relevant_fraction * total as f64).round() as usize;
    let relevant: HashSet<usize> = sample(&mut rng, total, n_relevant.min(total)).into_iter().collect();
    let orphans: HashSet<usize> = sample(&mut rng, total, spec.orphan_images as usize).into_iter().collect();
    let accepted_idx: Vec<usize> = (0..total).filter(|&k| !kinds[k].is_decoy()).collect();
    let n_mutated = (spec.mutation_set * accepted_idx.len() as f64).round() as usize;
    let mutated: HashSet<usize> = sample(&mut rng, accepted_idx.len(), n_mutated.min(accepted_idx.len()))
        .into_iter()
        .map(|i| accepted_idx[i])
        .collect();

    let mut graph = SiteGraph::default();
    let mut images: BTreeMap<String, ImageTruth> = BTreeMap::new();
    let mut primary_page: Vec<Option<usize>> = Vec::with_capacity(total);
    let mut image_urls: Vec<String> = Vec::with_capacity(total);
    for (k, &kind) in kinds.iter().enumerate() {
        let h = k % hosts;
        let is_relevant = relevant.contains(&k);
        // 0: keyword in filename, 1: in alt, 2: both.
        let variant = if is_relevant { rng.gen_range(0..3) } else { 3 };
        let stem = if variant == 0 || variant == 2 { slug.clone() } else { pick(&mut rng, NOUNS).to_string() };
        let filename = format!("{stem}-{k}.{}", kind.extension());
        let alt = if variant == 1 || variant == 2 {
            format!("{} {} {}", pick(&mut rng, ADJECTIVES), spec.keyword, pick(&mut rng, NOUNS))
        } else {
            neutral_phrase(&mut rng)
        };
        let caption = if rng.gen_bool(0.5) { format!("{} {k} from the archive", pick(&mut rng, &["Photo", "Picture"])) } else { String::new() };
        let url = format!("{}/img/{filename}", base(h));
        let bytes1 = image_bytes(kind, &mut rng);
        let bytes2 = mutated.contains(&k).then(|| image_bytes(kind, &mut rng));
        let page = if orphans.contains(&k) { None } else { Some(rng.gen_range(host_pages(h))) };
        if let Some(p) = page {
            pages[p].imgs.push(ImgRef { url: url.clone(), alt: alt.clone(), caption: caption.clone() });
        }
        primary_page.push(page);
        images.insert(
            url.clone(),
            ImageTruth {
                kind,
                filename,
                alt,
                caption,
                relevant: is_relevant,
                orphan: page.is_none(),
                mutated: bytes2.is_some(),
                duplicate_of: None,
                hash_epoch1: content_hash(&bytes1).to_hex(),
                hash_epoch2: content_hash(bytes2.as_deref().unwrap_or(&bytes1)).to_hex(),
            },
        );
        graph.resources.insert(
            url.clone(),
            Resource { body_epoch2: bytes2, ..Resource::ok(kind.content_type(), bytes1) },
        );
        image_urls.push(url);
    }

    // Same bytes at a second URL on the same host.
    let copyable: Vec<usize> = accepted_idx.iter().copied().filter(|k| primary_page[*k].is_some()).collect();
    let copies = sample(&mut rng, copyable.len(), spec.duplicate_content_pairs as usize);
    for (c, i) in copies.into_iter().enumerate() {
        let k = copyable[i];
        let orig_url = &image_urls[k];
        let orig = images[orig_url].clone();
        let h = k % hosts;
        let filename = format!("copy{c}-{}", orig.filename);
        let url = format!("{}/img/{filename}", base(h));
        let p = rng.gen_range(host_pages(h));
        pages[p].imgs.push(ImgRef { url: url.clone(), alt: orig.alt.clone(), caption: orig.caption.clone() });
        let resource = graph.resources[orig_url].clone();
        graph.resources.insert(url.clone(), resource);
        images.insert(url.clone(), ImageTruth { filename, duplicate_of: Some(orig_url.clone()), ..orig });
    }

    // Extra references to already planted URLs.
    let referenced: Vec<usize> = (0..total).filter(|k| primary_page[*k].is_some()).collect();
    for _ in 0..spec.duplicate_url_refs {
        let k = referenced[rng.gen_range(0..referenced.len())];
        let own = primary_page[k].expect("referenced");
        let p = if n_pages > 1 {
            let q = rng.gen_range(0..n_pages - 1);
            if q >= own { q + 1 } else { q }
        } else {
            own
        };
        let t = &images[&image_urls[k]];
        pages[p].imgs.push(ImgRef { url: image_urls[k].clone(), alt: t.alt.clone(), caption: t.caption.clone() });
    }

    // Indexes, with some links routed through redirects.
    let mut truth_pages = BTreeMap::new();
    let mut redirects = BTreeMap::new();
    let mut seeds = Vec::with_capacity(hosts);
    for h in 0..hosts {
        let index_url = format!("{}/", base(h));
        let mut links = Vec::new();
        for p in host_pages(h) {
            if p < spec.redirects as usize {
                let go = format!("{}/go/{p}", base(h));
                graph.resources.insert(
                    go.clone(),
                    Resource {
                        status: 301,
                        content_type: Some("text/html".into()),
                        location: Some(pages[p].path.clone()),
                        body: b"<html><body>moved</body></html>".to_vec(),
                        body_epoch2: None,
                    },
                );
                redirects.insert(go.clone(), pages[p].url.clone());
                links.push(go);
            } else {
                links.push(pages[p].url.clone());
            }
        }
        if hosts > 1 {
            links.push(format!("{}/", base((h + 1) % hosts)));
        }
        let mut html = format!(
            "<!DOCTYPE html>\n<html><head><title>Site {h} index</title></head><body>\n<h1>Site {h}</h1>\n<ul>\n"
        );
        for l in &links {
            let href = l.strip_prefix(&base(h)).unwrap_or(l);
            html.push_str(&format!("<li><a href=\"{}\">more pictures</a></li>\n", escape(href)));
        }
        html.push_str("</ul>\n</body></html>\n");
        graph.resources.insert(index_url.clone(), Resource::ok("text/html; charset=utf-8", html.into_bytes()));
        truth_pages.insert(index_url.clone(), PageTruth { links, images: Vec::new(), disallowed: false });
        seeds.push(index_url);
    }

    // Content pages.
    for page in &pages {
        let own = base(page.host);
        let mut html = format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title></head><body>\n<h1>{}</h1>\n",
            escape(&page.title),
            escape(&page.title)
        );
        for img in &page.imgs {
            let src = match img.url.strip_prefix(&own) {
                Some(path) if rng.gen_bool(0.5) && page.path.starts_with("/gallery/") => format!("..{path}"),
                Some(path) => path.to_string(),
                None => img.url.clone(),
            };
            let tag = format!("<img src=\"{}\" alt=\"{}\">", escape(&src), escape(&img.alt));
            if img.caption.is_empty() {
                html.push_str(&format!("<p>{tag}</p>\n"));
            } else {
                html.push_str(&format!("<figure>{tag}<figcaption>{}</figcaption></figure>\n", escape(&img.caption)));
            }
        }
        html.push_str("<nav>\n");
        for l in &page.links {
            let href = l.strip_prefix(&own).unwrap_or(l);
            html.push_str(&format!("<a href=\"{}\">more links</a>\n", escape(href)));
        }
        html.push_str("<a href=\"/#top\">home</a>\n</nav>\n</body></html>\n");
        graph.resources.insert(page.url.clone(), Resource::ok("text/html; charset=utf-8", html.into_bytes()));
        let mut links = page.links.clone();
        links.push(format!("{own}/"));
        truth_pages.insert(
            page.url.clone(),
            PageTruth {
                links,
                images: page.imgs.iter().map(|i| i.url.clone()).collect(),
                disallowed: page.disallowed,
            },
        );
    }

    // robots.txt
    for h in 0..hosts {
        let mut body = String::new();
        if let Some(r) = &spec.robots_rules {
            body.push_str(&format!("User-agent: *\nDisallow: {}\n", r.disallow_prefix));
        }
        if let Some(d) = spec.crawl_delay {
            if body.is_empty() {
                body.push_str("User-agent: *\n");
            }
            body.push_str(&format!("Crawl-delay: {d}\n"));
        }
        if !body.is_empty() {
            graph.resources.insert(format!("{}/robots.txt", base(h)), Resource::ok("text/plain", body.into_bytes()));
        }
    }

    debug_assert!(graph.resources.keys().all(|u| CanonicalUrl::parse(u).is_ok_and(|c| c.as_str() == u)));
    let truth = GroundTruth {
        keyword: spec.keyword.clone(),
        seeds,
        pages: truth_pages,
        redirects,
        images,
        disallowed_pages,
    };
    Ok((graph, truth))
}
