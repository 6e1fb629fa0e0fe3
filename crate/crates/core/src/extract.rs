//! Image candidates and outbound links from fetched HTML, and keyword
//! relevance scoring of candidates.
//!
//! Extraction never fails: html5ever recovers from any markup, undecodable
//! bytes become U+FFFD, and unresolvable URLs are skipped.

use std::collections::HashSet;
use std::fmt;

use encoding_rs::{Encoding, UTF_16BE, UTF_16LE, UTF_8};
use percent_encoding::percent_decode_str;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};

use crate::url::CanonicalUrl;

/// Path suffixes that mark an anchor as pointing at an image.
pub const IMAGE_EXTENSIONS: &[&str] = &[".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".gif"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCandidate {
    pub image_url: CanonicalUrl,
    pub source_page: CanonicalUrl,
    pub alt_text: String,
    pub caption: String,
    pub filename: String,
    pub page_title: String,
    /// For `srcset` entries after the first: the logical image they are a
    /// variant of. Variants are reported but not fetched.
    pub variant_of: Option<CanonicalUrl>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PageExtract {
    pub title: String,
    pub images: Vec<ImageCandidate>,
    pub links: Vec<CanonicalUrl>,
}

pub fn extract_images(html: &[u8], base: &CanonicalUrl) -> Vec<ImageCandidate> {
    extract_page(html, None, base).images
}

pub fn extract_links(html: &[u8], base: &CanonicalUrl) -> Vec<CanonicalUrl> {
    extract_page(html, None, base).links
}

/// Filename of an image URL: its last path segment, percent-decoded.
pub fn filename_of(url: &CanonicalUrl) -> String {
    percent_decode_str(url.last_segment())
        .decode_utf8_lossy()
        .replace(['/', '\\'], "_")
}

pub fn has_image_extension(url: &CanonicalUrl) -> bool {
    let path = url.path().to_ascii_lowercase();
    IMAGE_EXTENSIONS.iter().any(|ext| path.ends_with(ext))
}

/// Parses a page once and returns its title, image candidates and links.
pub fn extract_page(html: &[u8], content_type: Option<&str>, page: &CanonicalUrl) -> PageExtract {
    let text = decode_html(html, content_type);
    let doc = Html::parse_document(&text);
    let selector = Selector::parse("img, a[href], title, base[href]").expect("static selector");

    let title = doc
        .select(&Selector::parse("title").expect("static selector"))
        .next()
        .map(|t| collapse_ws(&t.text().collect::<String>()))
        .unwrap_or_default();

    let mut base = page.clone();
    let mut base_seen = false;
    let mut images = Vec::new();
    let mut image_urls = HashSet::new();
    let mut links = Vec::new();
    let mut link_urls = HashSet::new();

    let mut push_image = |images: &mut Vec<ImageCandidate>, c: ImageCandidate| {
        if image_urls.insert(c.image_url.as_str().to_string()) {
            images.push(c);
        }
    };

    for el in doc.select(&selector) {
        match el.value().name() {
            "base" if !base_seen => {
                base_seen = true;
                if let Some(b) = el.value().attr("href").and_then(|h| page.resolve(h).ok()) {
                    base = b;
                }
            }
            "img" => {
                let alt = el.value().attr("alt").map(collapse_ws).unwrap_or_default();
                let caption = figure_caption(el).unwrap_or_default();
                let mut sources: Vec<CanonicalUrl> = Vec::new();
                if let Some(u) = el.value().attr("src").and_then(|s| base.resolve(s.trim()).ok()) {
                    sources.push(u);
                }
                if let Some(srcset) = el.value().attr("srcset") {
                    sources.extend(srcset_urls(srcset).iter().filter_map(|s| base.resolve(s).ok()));
                }
                let primary = sources.first().cloned();
                for (i, image_url) in sources.into_iter().enumerate() {
                    let variant_of = if i == 0 { None } else { primary.clone() };
                    push_image(
                        &mut images,
                        ImageCandidate {
                            filename: filename_of(&image_url),
                            image_url,
                            source_page: page.clone(),
                            alt_text: alt.clone(),
                            caption: caption.clone(),
                            page_title: title.clone(),
                            variant_of,
                        },
                    );
                }
            }
            "a" => {
                let Some(target) = el.value().attr("href").and_then(|h| base.resolve(h).ok()) else {
                    continue;
                };
                if has_image_extension(&target) {
                    let caption = figure_caption(el)
                        .unwrap_or_else(|| collapse_ws(&el.text().collect::<String>()));
                    push_image(
                        &mut images,
                        ImageCandidate {
                            filename: filename_of(&target),
                            image_url: target,
                            source_page: page.clone(),
                            alt_text: String::new(),
                            caption,
                            page_title: title.clone(),
                            variant_of: None,
                        },
                    );
                } else if link_urls.insert(target.as_str().to_string()) {
                    links.push(target);
                }
            }
            _ => {}
        }
    }

    PageExtract { title, images, links }
}

/// Text of the `figcaption` belonging to the nearest enclosing `figure`.
fn figure_caption(el: ElementRef<'_>) -> Option<String> {
    let figure = el
        .ancestors()
        .filter_map(ElementRef::wrap)
        .find(|a| a.value().name() == "figure")?;
    let caption = figure
        .children()
        .filter_map(ElementRef::wrap)
        .find(|c| c.value().name() == "figcaption")?;
    Some(collapse_ws(&caption.text().collect::<String>()))
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// URLs listed in a `srcset` attribute, in order, descriptors dropped.
pub fn srcset_urls(srcset: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = srcset;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_ascii_whitespace() || c == ',');
        if rest.is_empty() {
            break;
        }
        let end = rest.find(|c: char| c.is_ascii_whitespace()).unwrap_or(rest.len());
        let (url, after) = rest.split_at(end);
        if let Some(stripped) = url.strip_suffix(',') {
            // "a.jpg,b.jpg" style: the comma ends the candidate, no descriptors.
            let stripped = stripped.trim_end_matches(',');
            if !stripped.is_empty() {
                out.push(stripped.to_string());
            }
            rest = after;
            continue;
        }
        out.push(url.to_string());
        // Skip descriptors up to the next comma outside parentheses.
        let mut depth = 0u32;
        let mut cut = after.len();
        for (i, c) in after.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                ',' if depth == 0 => {
                    cut = i + 1;
                    break;
                }
                _ => {}
            }
        }
        rest = &after[cut..];
    }
    out
}

/// Decodes page bytes using the charset from the Content-Type header, else a
/// `<meta>` declaration in the first 1024 bytes, else UTF-8. A BOM wins over
/// both. Never fails.
pub fn decode_html(bytes: &[u8], content_type: Option<&str>) -> String {
    let declared = content_type
        .and_then(charset_param)
        .and_then(|l| Encoding::for_label(l.as_bytes()))
        .or_else(|| meta_charset(&bytes[..bytes.len().min(1024)]));
    let enc = match declared {
        // A meta tag cannot meaningfully declare UTF-16 in an ASCII-compatible
        // prefix; browsers treat that as UTF-8.
        Some(e) if e == UTF_16LE || e == UTF_16BE => UTF_8,
        Some(e) => e,
        None => UTF_8,
    };
    let (text, _, _) = enc.decode(bytes);
    text.into_owned()
}

fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(['"', '\'']).to_string())
    })
}

fn meta_charset(prefix: &[u8]) -> Option<&'static Encoding> {
    let lower: Vec<u8> = prefix.iter().map(|b| b.to_ascii_lowercase()).collect();
    let needle = b"charset=";
    let at = lower.windows(needle.len()).position(|w| w == needle)? + needle.len();
    let rest = &lower[at..];
    let rest = rest.strip_prefix(b"\"").or_else(|| rest.strip_prefix(b"'")).unwrap_or(rest);
    let end = rest
        .iter()
        .position(|b| !(b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b':' | b'.')))
        .unwrap_or(rest.len());
    Encoding::for_label(&rest[..end])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Filename,
    Alt,
    Caption,
    Title,
}

impl Field {
    /// Weight in tenths; the four weights sum to 10.
    fn weight_tenths(self) -> u32 {
        match self {
            Field::Filename => 4,
            Field::Alt => 3,
            Field::Caption => 2,
            Field::Title => 1,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::Filename => "filename",
            Field::Alt => "alt",
            Field::Caption => "caption",
            Field::Title => "title",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub value: f64,
    pub matched_fields: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RelevanceError {
    #[error("keyword has no alphanumeric tokens")]
    EmptyKeyword,
}

/// Lowercased alphanumeric runs.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores a candidate against a keyword. A field matches when every keyword
/// token occurs among the field's tokens; the score is the sum of matched
/// field weights (filename 0.4, alt 0.3, caption 0.2, title 0.1).
pub fn relevance(candidate: &ImageCandidate, keyword: &str) -> Result<RelevanceScore, RelevanceError> {
    let wanted = tokenize(keyword);
    if wanted.is_empty() {
        return Err(RelevanceError::EmptyKeyword);
    }
    let fields = [
        (Field::Filename, candidate.filename.as_str()),
        (Field::Alt, candidate.alt_text.as_str()),
        (Field::Caption, candidate.caption.as_str()),
        (Field::Title, candidate.page_title.as_str()),
    ];
    let mut matched_fields = Vec::new();
    let mut tenths = 0;
    for (field, text) in fields {
        let have: HashSet<String> = tokenize(text).into_iter().collect();
        if wanted.iter().all(|t| have.contains(t)) {
            matched_fields.push(field);
            tenths += field.weight_tenths();
        }
    }
    Ok(RelevanceScore {
        value: f64::from(tenths) / 10.0,
        matched_fields,
    })
}
