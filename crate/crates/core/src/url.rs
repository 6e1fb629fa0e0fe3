//! Canonical URLs.
//!
//! A [`CanonicalUrl`] is the dedup key for the frontier and the repository,
//! so two spellings of the same resource must serialize to the same bytes.
//! Parsing delegates the WHATWG-level work (IDNA, dot segments, default ports,
//! relative resolution) to the `url` crate and then applies the stricter rules
//! this crawler needs:
//!
//! - only `http` and `https` are accepted;
//! - the fragment is dropped;
//! - percent escapes use uppercase hex, and escapes of unreserved characters
//!   (`ALPHA / DIGIT / "-" / "." / "_" / "~"`) are decoded;
//! - an empty query (`?` with nothing after it) is dropped;
//! - inputs and results longer than [`MAX_URL_LEN`] bytes are rejected.
//!
//! Query parameters keep their original order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;

/// Longest accepted URL, in bytes, both for raw input and canonical output.
pub const MAX_URL_LEN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UrlError {
    #[error("scheme `{0}` is not http or https")]
    NotHttpScheme(String),
    #[error("unparseable url: {0}")]
    Unparseable(String),
    #[error("url is {0} bytes long, the limit is {MAX_URL_LEN}")]
    TooLong(usize),
}

/// A normalized absolute http(s) URL.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalUrl {
    inner: Url,
}

/// The politeness grouping of a URL: scheme, host and effective port.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostKey {
    pub scheme: String,
    pub host: String,
    pub port: u16,
}

impl HostKey {
    /// The `robots.txt` location for this host.
    pub fn robots_url(&self) -> CanonicalUrl {
        let default = default_port(&self.scheme);
        let raw = if Some(self.port) == default {
            format!("{}://{}/robots.txt", self.scheme, self.host)
        } else {
            format!("{}://{}:{}/robots.txt", self.scheme, self.host, self.port)
        };
        CanonicalUrl::parse(&raw).expect("host key always forms a valid url")
    }
}

impl fmt::Display for HostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}:{}", self.scheme, self.host, self.port)
    }
}

fn default_port(scheme: &str) -> Option<u16> {
    match scheme {
        "http" => Some(80),
        "https" => Some(443),
        _ => None,
    }
}

impl CanonicalUrl {
    /// Parses and normalizes an absolute URL.
    pub fn parse(raw: &str) -> Result<Self, UrlError> {
        check_raw(raw)?;
        let url = Url::parse(raw).map_err(|e| UrlError::Unparseable(format!("{raw:?}: {e}")))?;
        Self::finish(url)
    }

    /// Resolves `href` (relative, protocol-relative or absolute) against `self`
    /// and normalizes the result.
    pub fn resolve(&self, href: &str) -> Result<Self, UrlError> {
        check_raw(href)?;
        let url = self
            .inner
            .join(href)
            .map_err(|e| UrlError::Unparseable(format!("{href:?}: {e}")))?;
        Self::finish(url)
    }

    fn finish(mut url: Url) -> Result<Self, UrlError> {
        match url.scheme() {
            "http" | "https" => {}
            other => return Err(UrlError::NotHttpScheme(other.to_string())),
        }
        match url.host_str() {
            Some(h) if !h.is_empty() => {}
            _ => return Err(UrlError::Unparseable(format!("{url}: missing host"))),
        }
        url.set_fragment(None);

        let path = normalize_escapes(url.path());
        if path != url.path() {
            url.set_path(&path);
        }
        match url.query().map(normalize_escapes) {
            Some(q) if q.is_empty() => url.set_query(None),
            Some(q) if Some(q.as_str()) != url.query() => url.set_query(Some(&q)),
            _ => {}
        }

        let len = url.as_str().len();
        if len > MAX_URL_LEN {
            return Err(UrlError::TooLong(len));
        }
        Ok(Self { inner: url })
    }

    pub fn as_str(&self) -> &str {
        self.inner.as_str()
    }

    pub fn scheme(&self) -> &str {
        self.inner.scheme()
    }

    pub fn host(&self) -> &str {
        self.inner.host_str().unwrap_or_default()
    }

    /// Explicit port, absent when it is the scheme default.
    pub fn port(&self) -> Option<u16> {
        self.inner.port()
    }

    pub fn path(&self) -> &str {
        self.inner.path()
    }

    pub fn query(&self) -> Option<&str> {
        self.inner.query()
    }

    /// Path plus `?query`, the form robots rules are matched against.
    pub fn path_and_query(&self) -> String {
        match self.inner.query() {
            Some(q) => format!("{}?{}", self.inner.path(), q),
            None => self.inner.path().to_string(),
        }
    }

    /// Last path segment, still percent-encoded. Empty for directory URLs.
    pub fn last_segment(&self) -> &str {
        self.inner.path().rsplit('/').next().unwrap_or_default()
    }

    pub fn host_key(&self) -> HostKey {
        host_key(self)
    }
}

/// Projects a URL onto its politeness key.
pub fn host_key(url: &CanonicalUrl) -> HostKey {
    let scheme = url.scheme().to_string();
    let port = url
        .inner
        .port_or_known_default()
        .expect("http(s) urls always have a known port");
    HostKey {
        scheme,
        host: url.host().to_string(),
        port,
    }
}

fn check_raw(raw: &str) -> Result<(), UrlError> {
    if raw.len() > MAX_URL_LEN {
        return Err(UrlError::TooLong(raw.len()));
    }
    // Fragments are discarded, so escapes there are not our business.
    let significant = raw.split('#').next().unwrap_or_default().as_bytes();
    let mut i = 0;
    while i < significant.len() {
        if significant[i] == b'%' {
            let ok = significant.len() > i + 2
                && significant[i + 1].is_ascii_hexdigit()
                && significant[i + 2].is_ascii_hexdigit();
            if !ok {
                return Err(UrlError::Unparseable(format!("{raw:?}: bad percent escape")));
            }
            i += 3;
        } else {
            i += 1;
        }
    }
    Ok(())
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

/// Uppercases percent escapes and decodes the ones that encode unreserved
/// characters. Malformed escapes are left untouched.
fn normalize_escapes(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                let b = (hi * 16 + lo) as u8;
                if is_unreserved(b) {
                    out.push(b as char);
                } else {
                    out.push('%');
                    out.push(bytes[i + 1].to_ascii_uppercase() as char);
                    out.push(bytes[i + 2].to_ascii_uppercase() as char);
                }
                i += 3;
                continue;
            }
        }
        // Only ASCII can reach here in practice; the url crate escapes
        // everything else. Copy whole chars to stay UTF-8 safe regardless.
        let ch = s[i..].chars().next().expect("index is on a char boundary");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalUrl({})", self.as_str())
    }
}

impl FromStr for CanonicalUrl {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl AsRef<str> for CanonicalUrl {
    fn as_ref(&self) -> &str {
        self.as_str()
    }
}

impl Serialize for CanonicalUrl {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CanonicalUrl {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        CanonicalUrl::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(raw: &str) -> String {
        CanonicalUrl::parse(raw).unwrap().as_str().to_string()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(canon("HTTP://Example.COM:80/a/../b#frag"), "http://example.com/b");
        assert_eq!(canon("http://example.com"), "http://example.com/");
        assert_eq!(canon("http://example.com/%7euser"), "http://example.com/~user");
        assert_eq!(
            CanonicalUrl::parse("javascript:void(0)"),
            Err(UrlError::NotHttpScheme("javascript".into()))
        );
    }

    #[test]
    fn rejects_other_schemes() {
        for raw in ["ftp://a.com/x", "data:text/plain,hi", "mailto:x@y.com"] {
            assert!(matches!(CanonicalUrl::parse(raw), Err(UrlError::NotHttpScheme(_))), "{raw}");
        }
    }

    #[test]
    fn rejects_unparseable() {
        for raw in ["", "not a url", "/relative/path", "http://a.com/%zz", "http://a.com/%4", "http://"] {
            assert!(matches!(CanonicalUrl::parse(raw), Err(UrlError::Unparseable(_))), "{raw}");
        }
    }

    #[test]
    fn length_limit() {
        let ok = format!("http://a.com/{}", "x".repeat(MAX_URL_LEN - 13));
        assert_eq!(ok.len(), MAX_URL_LEN);
        assert!(CanonicalUrl::parse(&ok).is_ok());
        let long = format!("{ok}y");
        assert_eq!(CanonicalUrl::parse(&long), Err(UrlError::TooLong(MAX_URL_LEN + 1)));
        // Short raw input that grows past the limit once escaped.
        let grows = format!("http://a.com/{}x", "é".repeat(500));
        assert!(matches!(CanonicalUrl::parse(&grows), Err(UrlError::TooLong(_))));
    }

    #[test]
    fn escapes_are_normalized() {
        assert_eq!(canon("http://a.com/%7Efoo/%41b%2fc?q=%7e%2a"), "http://a.com/~foo/Ab%2Fc?q=~%2A");
        assert_eq!(canon("http://a.com/a%2Db%5f"), "http://a.com/a-b_");
        assert_eq!(canon("http://a.com/caf%c3%a9"), "http://a.com/caf%C3%A9");
    }

    #[test]
    fn empty_query_dropped_but_order_kept() {
        assert_eq!(canon("http://a.com/p?"), "http://a.com/p");
        assert_eq!(canon("http://a.com/p?b=2&a=1"), "http://a.com/p?b=2&a=1");
    }

    #[test]
    fn idn_hosts_become_punycode() {
        assert_eq!(canon("http://Bücher.example/"), "http://xn--bcher-kva.example/");
    }

    #[test]
    fn resolve_examples() {
        let base = CanonicalUrl::parse("http://a.com/x/y.html").unwrap();
        assert_eq!(base.resolve("../img/cat.jpg").unwrap().as_str(), "http://a.com/img/cat.jpg");
        let dir = CanonicalUrl::parse("http://a.com/x/").unwrap();
        assert_eq!(dir.resolve("//b.com/p").unwrap().as_str(), "http://b.com/p");
        assert_eq!(dir.resolve("http://c.com/q?z=1").unwrap().as_str(), "http://c.com/q?z=1");
        assert!(matches!(dir.resolve("mailto:x@y"), Err(UrlError::NotHttpScheme(_))));
        assert!(matches!(dir.resolve("%zz"), Err(UrlError::Unparseable(_))));
    }

    #[test]
    fn host_key_examples() {
        let k = |s: &str| CanonicalUrl::parse(s).unwrap().host_key();
        assert_eq!(k("http://a.com/p1"), k("http://a.com/p2?q=1"));
        assert_ne!(k("http://a.com/"), k("https://a.com/"));
        assert_eq!(k("http://a.com:80/"), k("http://a.com/"));
        assert_eq!(k("https://a.com:8443/").port, 8443);
    }

    #[test]
    fn robots_url_keeps_non_default_port() {
        let u = CanonicalUrl::parse("http://a.com:8080/x").unwrap();
        assert_eq!(u.host_key().robots_url().as_str(), "http://a.com:8080/robots.txt");
        let u = CanonicalUrl::parse("https://a.com/x").unwrap();
        assert_eq!(u.host_key().robots_url().as_str(), "https://a.com/robots.txt");
    }

    #[test]
    fn fragment_blind() {
        assert_eq!(canon("http://a.com/p#one"), canon("http://a.com/p#two"));
        assert_eq!(canon("http://a.com/p#%zz"), "http://a.com/p");
    }

    #[test]
    fn serde_round_trip() {
        let u = CanonicalUrl::parse("http://a.com/x?y=1").unwrap();
        let json = serde_json::to_string(&u).unwrap();
        assert_eq!(json, "\"http://a.com/x?y=1\"");
        let back: CanonicalUrl = serde_json::from_str(&json).unwrap();
        assert_eq!(back, u);
    }
}
