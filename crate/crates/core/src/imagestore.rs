//! The image repository.
//!
//! On-disk layout under the repository root:
//!
//! ```text
//! VERSION            "imageharvest-repo/1"
//! manifest.jsonl     one ImageRecord per line, append-only
//! objects/xx/<sha256>.<ext>
//! pending.log        write-ahead list of objects being committed
//! tmp/               staging area for object writes
//! ```
//!
//! An object is staged in `tmp/`, renamed into `objects/`, and only then is
//! its manifest line appended, so a manifest record never points at a
//! missing object. `pending.log` names objects whose commit is in progress;
//! reopening a repository deletes any of them that never reached the
//! manifest, drops a torn trailing manifest line and clears `tmp/`.
//!
//! The repository is single-writer. URL and hash indexes live in memory and
//! are rebuilt from the manifest on open.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::url::CanonicalUrl;

pub const REPO_VERSION: &str = "imageharvest-repo/1";
const MANIFEST: &str = "manifest.jsonl";
const PENDING: &str = "pending.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Jpeg,
    Png,
    Bmp,
    Tiff,
    Gif,
    Unknown,
}

impl ImageFormat {
    pub const ACCEPTED: [ImageFormat; 5] = [
        ImageFormat::Jpeg,
        ImageFormat::Png,
        ImageFormat::Bmp,
        ImageFormat::Tiff,
        ImageFormat::Gif,
    ];

    /// Canonical file extension; `None` for `Unknown`.
    pub fn extension(self) -> Option<&'static str> {
        match self {
            ImageFormat::Jpeg => Some("jpg"),
            ImageFormat::Png => Some("png"),
            ImageFormat::Bmp => Some("bmp"),
            ImageFormat::Tiff => Some("tiff"),
            ImageFormat::Gif => Some("gif"),
            ImageFormat::Unknown => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageFormat::Jpeg => "jpeg",
            ImageFormat::Png => "png",
            ImageFormat::Bmp => "bmp",
            ImageFormat::Tiff => "tiff",
            ImageFormat::Gif => "gif",
            ImageFormat::Unknown => "unknown",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jpeg" | "jpg" => Some(ImageFormat::Jpeg),
            "png" => Some(ImageFormat::Png),
            "bmp" => Some(ImageFormat::Bmp),
            "tiff" | "tif" => Some(ImageFormat::Tiff),
            "gif" => Some(ImageFormat::Gif),
            _ => None,
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies bytes by leading signature only.
pub fn sniff_format(bytes: &[u8]) -> ImageFormat {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        ImageFormat::Jpeg
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]) {
        ImageFormat::Png
    } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        ImageFormat::Gif
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        ImageFormat::Tiff
    } else if bytes.starts_with(b"BM") {
        ImageFormat::Bmp
    } else {
        ImageFormat::Unknown
    }
}

/// SHA-256 digest of image bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses 64 lowercase hex digits.
    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return None;
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex digits"))
    }
}

pub fn content_hash(bytes: &[u8]) -> ContentHash {
    ContentHash(Sha256::digest(bytes).into())
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub image_url: CanonicalUrl,
    pub source_page: CanonicalUrl,
    pub filename: String,
    pub byte_size: u64,
    pub format: ImageFormat,
    pub content_hash: ContentHash,
    #[serde(with = "rfc3339")]
    pub fetched_at: DateTime<Utc>,
    pub keyword: String,
    pub alt_text: String,
    pub caption: String,
    pub relevance: f64,
    pub stored_path: String,
    /// Server `Last-Modified`, verbatim, when one was sent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_modified: Option<String>,
    /// Id of the record this one replaces after a freshness re-fetch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
}

/// Metadata supplied with the bytes on [`Repository::put`].
#[derive(Debug, Clone, PartialEq)]
pub struct NewImage {
    pub image_url: CanonicalUrl,
    pub source_page: CanonicalUrl,
    pub filename: String,
    pub keyword: String,
    pub alt_text: String,
    pub caption: String,
    pub relevance: f64,
    pub fetched_at: DateTime<Utc>,
    pub last_modified: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored(u64),
    DuplicateUrl(u64),
    /// A record `id` was appended sharing the object of `existing_id`.
    DuplicateContent { id: u64, existing_id: u64 },
    RejectedFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Unchanged,
    Changed(ContentHash),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshCommit {
    /// New version recorded under this id.
    Committed(u64),
    Unchanged,
    RejectedFormat,
}

pub fn refresh_check(existing: &ImageRecord, new_bytes: &[u8]) -> Freshness {
    let h = content_hash(new_bytes);
    if h == existing.content_hash {
        Freshness::Unchanged
    } else {
        Freshness::Changed(h)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFilter {
    pub keyword: Option<String>,
    pub format: Option<ImageFormat>,
    pub min_relevance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub missing: Vec<String>,
    pub hash_mismatches: Vec<String>,
    pub orphans: Vec<String>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.hash_mismatches.is_empty() && self.orphans.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("repository version mismatch: found {0:?}")]
    VersionMismatch(String),
    #[error("corrupt manifest at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RepoError {
    let context = context.into();
    move |source| RepoError::Io { context, source }
}

/// Filesystem mutations the repository performs; the seam for fault
/// injection. Every call is one durable step.
pub trait RepoIo: Send {
    fn create_dir_all(&mut self, path: &Path) -> io::Result<()>;
    /// Create or replace `path` with `bytes`, flushed to disk.
    fn write_new(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()>;
    /// Append `bytes` to `path` (created if missing), flushed to disk.
    fn append(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()>;
    fn rename(&mut self, from: &Path, to: &Path) -> io::Result<()>;
    /// Set the length of `path`, creating it if missing.
    fn truncate(&mut self, path: &Path, len: u64) -> io::Result<()>;
    fn remove_file(&mut self, path: &Path) -> io::Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FsIo;

impl RepoIo for FsIo {
    fn create_dir_all(&mut self, path: &Path) -> io::Result<()> {
        fs::create_dir_all(path)
    }

    fn write_new(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(bytes)?;
        f.sync_all()
    }

    fn append(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(bytes)?;
        f.sync_data()
    }

    fn rename(&mut self, from: &Path, to: &Path) -> io::Result<()> {
        fs::rename(from, to)
    }

    fn truncate(&mut self, path: &Path, len: u64) -> io::Result<()> {
        let f = fs::OpenOptions::new().create(true).truncate(false).write(true).open(path)?;
        f.set_len(len)?;
        f.sync_data()
    }

    fn remove_file(&mut self, path: &Path) -> io::Result<()> {
        match fs::remove_file(path) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// The chosen step fails; later steps succeed.
    Error,
    /// The chosen step fails and so does everything after it, as if the
    /// process had died there.
    Crash,
}

/// [`FsIo`] wrapper that fails the `fail_at`-th call (0-based). Failing
/// writes and appends land half their bytes first, like a torn write.
#[derive(Debug)]
pub struct FaultyIo {
    inner: FsIo,
    fail_at: usize,
    mode: FaultMode,
    calls: Arc<AtomicUsize>,
    dead: bool,
}

impl FaultyIo {
    pub fn new(fail_at: usize, mode: FaultMode) -> Self {
        Self {
            inner: FsIo,
            fail_at,
            mode,
            calls: Arc::new(AtomicUsize::new(0)),
            dead: false,
        }
    }

    /// Shared count of calls made so far.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }

    fn gate(&mut self) -> Result<bool, io::Error> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.dead {
            return Err(io::Error::other("injected fault: process is dead"));
        }
        if n == self.fail_at {
            if self.mode == FaultMode::Crash {
                self.dead = true;
            }
            return Ok(true);
        }
        Ok(false)
    }
}

fn injected() -> io::Error {
    io::Error::other("injected fault")
}

impl RepoIo for FaultyIo {
    fn create_dir_all(&mut self, path: &Path) -> io::Result<()> {
        if self.gate()? {
            return Err(injected());
        }
        self.inner.create_dir_all(path)
    }

    fn write_new(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        if self.gate()? {
            let _ = fs::write(path, &bytes[..bytes.len() / 2]);
            return Err(injected());
        }
        self.inner.write_new(path, bytes)
    }

    fn append(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        if self.gate()? {
            let _ = self.inner.append(path, &bytes[..bytes.len() / 2]);
            return Err(injected());
        }
        self.inner.append(path, bytes)
    }

    fn rename(&mut self, from: &Path, to: &Path) -> io::Result<()> {
        if self.gate()? {
            return Err(injected());
        }
        self.inner.rename(from, to)
    }

    fn truncate(&mut self, path: &Path, len: u64) -> io::Result<()> {
        if self.gate()? {
            return Err(injected());
        }
        self.inner.truncate(path, len)
    }

    fn remove_file(&mut self, path: &Path) -> io::Result<()> {
        if self.gate()? {
            return Err(injected());
        }
        self.inner.remove_file(path)
    }
}

pub struct Repository {
    root: PathBuf,
    io: Box<dyn RepoIo>,
    records: Vec<ImageRecord>,
    /// Canonical URL → index of the newest record for it.
    latest_by_url: HashMap<String, usize>,
    /// Hash → index of the first record that stored the object.
    by_hash: HashMap<ContentHash, usize>,
    manifest_len: u64,
    next_id: u64,
}

impl fmt::Debug for Repository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Repository")
            .field("root", &self.root)
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

impl Repository {
    /// Opens (creating if needed) the repository at `root` and recovers from
    /// any interrupted commit.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        Self::open_with_io(root, Box::new(FsIo))
    }

    pub fn open_with_io(root: impl AsRef<Path>, mut io: Box<dyn RepoIo>) -> Result<Self, RepoError> {
        let root = root.as_ref().to_path_buf();
        io.create_dir_all(&root).map_err(io_err(format!("creating {}", root.display())))?;

        let version_path = root.join("VERSION");
        let manifest_path = root.join(MANIFEST);
        match fs::read_to_string(&version_path) {
            Ok(v) if v.trim() == REPO_VERSION => {}
            Ok(v) => return Err(RepoError::VersionMismatch(v.trim().to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                if manifest_path.exists() {
                    return Err(RepoError::VersionMismatch(String::new()));
                }
                io.write_new(&version_path, format!("{REPO_VERSION}\n").as_bytes())
                    .map_err(io_err("writing VERSION"))?;
            }
            Err(e) => return Err(io_err("reading VERSION")(e)),
        }
        io.create_dir_all(&root.join("objects")).map_err(io_err("creating objects/"))?;
        io.create_dir_all(&root.join("tmp")).map_err(io_err("creating tmp/"))?;

        let mut repo = Self {
            root,
            io,
            records: Vec::new(),
            latest_by_url: HashMap::new(),
            by_hash: HashMap::new(),
            manifest_len: 0,
            next_id: 1,
        };
        repo.load_manifest()?;
        repo.recover_pending()?;
        repo.clear_tmp()?;
        Ok(repo)
    }

    fn load_manifest(&mut self) -> Result<(), RepoError> {
        let path = self.root.join(MANIFEST);
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err("reading manifest")(e)),
        };

        let mut good_len = 0usize;
        let mut offset = 0usize;
        let mut line_no = 0;
        let mut torn: Option<String> = None;
        while offset < data.len() {
            line_no += 1;
            let (line, complete) = match data[offset..].iter().position(|&b| b == b'\n') {
                Some(i) => (&data[offset..offset + i], true),
                None => (&data[offset..], false),
            };
            let next = offset + line.len() + usize::from(complete);
            if let Some(reason) = torn.take() {
                // A bad line followed by more data is corruption, not a torn tail.
                return Err(RepoError::Corrupt { line: line_no - 1, reason });
            }
            let parsed = if complete {
                serde_json::from_slice::<ImageRecord>(line).map_err(|e| e.to_string())
            } else {
                Err("unterminated line".to_string())
            };
            match parsed {
                Ok(record) => {
                    self.index(record);
                    good_len = next;
                }
                Err(reason) => torn = Some(reason),
            }
            offset = next;
        }
        if good_len < data.len() {
            self.io
                .truncate(&path, good_len as u64)
                .map_err(io_err("truncating torn manifest tail"))?;
        }
        self.manifest_len = good_len as u64;
        Ok(())
    }

    fn recover_pending(&mut self) -> Result<(), RepoError> {
        let path = self.root.join(PENDING);
        let data = fs::read_to_string(&path).unwrap_or_default();
        for line in data.lines() {
            let Some((hash, stored_path)) = line.split_once(' ') else { continue };
            let committed = ContentHash::from_hex(hash).is_some_and(|h| self.by_hash.contains_key(&h));
            if !committed && is_object_path(stored_path) {
                self.io
                    .remove_file(&self.root.join(stored_path))
                    .map_err(io_err("removing uncommitted object"))?;
            }
        }
        // Doubles as the writability check on open.
        self.io.truncate(&path, 0).map_err(io_err("clearing pending.log"))
    }

    fn clear_tmp(&mut self) -> Result<(), RepoError> {
        let tmp = self.root.join("tmp");
        let entries = fs::read_dir(&tmp).map_err(io_err("listing tmp/"))?;
        for entry in entries.flatten() {
            if entry.file_type().is_ok_and(|t| t.is_file()) {
                self.io.remove_file(&entry.path()).map_err(io_err("clearing tmp/"))?;
            }
        }
        Ok(())
    }

    fn index(&mut self, record: ImageRecord) {
        let idx = self.records.len();
        self.next_id = self.next_id.max(record.id + 1);
        self.latest_by_url.insert(record.image_url.as_str().to_string(), idx);
        self.by_hash.entry(record.content_hash).or_insert(idx);
        self.records.push(record);
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ImageRecord> {
        // Ids are assigned in append order, so binary search works.
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn contains_url(&self, url: &CanonicalUrl) -> bool {
        self.latest_by_url.contains_key(url.as_str())
    }

    /// Newest record for `url`, following refresh versions.
    pub fn latest_for_url(&self, url: &CanonicalUrl) -> Option<&ImageRecord> {
        self.latest_by_url.get(url.as_str()).map(|&i| &self.records[i])
    }

    /// Newest record of every stored URL, in id order.
    pub fn latest_records(&self) -> Vec<&ImageRecord> {
        let mut idx: Vec<usize> = self.latest_by_url.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.records[i]).collect()
    }

    pub fn put(&mut self, image: NewImage, bytes: &[u8]) -> Result<PutOutcome, RepoError> {
        let format = sniff_format(bytes);
        let Some(ext) = format.extension() else {
            return Ok(PutOutcome::RejectedFormat);
        };
        if let Some(&i) = self.latest_by_url.get(image.image_url.as_str()) {
            return Ok(PutOutcome::DuplicateUrl(self.records[i].id));
        }

        let hash = content_hash(bytes);
        let existing = self.by_hash.get(&hash).map(|&i| &self.records[i]);
        let (stored_path, existing_id) = match existing {
            Some(r) => (r.stored_path.clone(), Some(r.id)),
            None => (object_path(&hash, ext), None),
        };
        let record = ImageRecord {
            id: self.next_id,
            image_url: image.image_url,
            source_page: image.source_page,
            filename: image.filename,
            byte_size: bytes.len() as u64,
            format,
            content_hash: hash,
            fetched_at: image.fetched_at,
            keyword: image.keyword,
            alt_text: image.alt_text,
            caption: image.caption,
            relevance: image.relevance,
            stored_path,
            last_modified: image.last_modified,
            supersedes: None,
        };

        let id = record.id;
        match existing_id {
            Some(existing_id) => {
                self.append_record(record, false)?;
                Ok(PutOutcome::DuplicateContent { id, existing_id })
            }
            None => {
                self.write_object(&record, bytes)?;
                self.append_record(record, true)?;
                Ok(PutOutcome::Stored(id))
            }
        }
    }

    /// Records a new version of `existing_id` if `new_bytes` differ from it.
    pub fn commit_refresh(
        &mut self,
        existing_id: u64,
        new_bytes: &[u8],
        fetched_at: DateTime<Utc>,
        last_modified: Option<String>,
    ) -> Result<RefreshCommit, RepoError> {
        let existing = self
            .get(existing_id)
            .cloned()
            .ok_or_else(|| RepoError::Corrupt { line: 0, reason: format!("no record with id {existing_id}") })?;
        let hash = match refresh_check(&existing, new_bytes) {
            Freshness::Unchanged => return Ok(RefreshCommit::Unchanged),
            Freshness::Changed(h) => h,
        };
        let format = sniff_format(new_bytes);
        let Some(ext) = format.extension() else {
            return Ok(RefreshCommit::RejectedFormat);
        };
        let shared = self.by_hash.get(&hash).map(|&i| self.records[i].stored_path.clone());
        let new_object = shared.is_none();
        let record = ImageRecord {
            id: self.next_id,
            byte_size: new_bytes.len() as u64,
            format,
            content_hash: hash,
            fetched_at,
            stored_path: shared.unwrap_or_else(|| object_path(&hash, ext)),
            last_modified,
            supersedes: Some(existing.id),
            ..existing
        };
        let id = record.id;
        if new_object {
            self.write_object(&record, new_bytes)?;
        }
        self.append_record(record, new_object)?;
        Ok(RefreshCommit::Committed(id))
    }

    fn write_object(&mut self, record: &ImageRecord, bytes: &[u8]) -> Result<(), RepoError> {
        let hex = record.content_hash.to_hex();
        let pending = self.root.join(PENDING);
        self.io
            .append(&pending, format!("{hex} {}\n", record.stored_path).as_bytes())
            .map_err(io_err("journaling object"))?;

        let target = self.root.join(&record.stored_path);
        let tmp = self.root.join("tmp").join(format!("{hex}.{}.part", std::process::id()));
        let staged = (|| {
            let dir = target.parent().expect("object paths have a directory");
            self.io.create_dir_all(dir)?;
            self.io.write_new(&tmp, bytes)?;
            self.io.rename(&tmp, &target)
        })();
        if let Err(e) = staged {
            let _ = self.io.remove_file(&tmp);
            let _ = self.io.remove_file(&target);
            let _ = self.io.truncate(&pending, 0);
            return Err(io_err(format!("writing {}", record.stored_path))(e));
        }
        Ok(())
    }

    fn append_record(&mut self, record: ImageRecord, new_object: bool) -> Result<(), RepoError> {
        let mut line = serde_json::to_vec(&record).expect("records always serialize");
        line.push(b'\n');
        let manifest = self.root.join(MANIFEST);
        let pending = self.root.join(PENDING);
        if let Err(e) = self.io.append(&manifest, &line) {
            // Roll back to the last committed state; if this fails too the
            // next open finishes the job from pending.log.
            let _ = self.io.truncate(&manifest, self.manifest_len);
            if new_object {
                let _ = self.io.remove_file(&self.root.join(&record.stored_path));
                let _ = self.io.truncate(&pending, 0);
            }
            return Err(io_err("appending to manifest")(e));
        }
        self.manifest_len += line.len() as u64;
        if new_object {
            if let Err(e) = self.io.truncate(&pending, 0) {
                log::warn!("record {} committed but pending.log not cleared: {e}", record.id);
            }
        }
        self.index(record);
        Ok(())
    }

    /// Records matching every set criterion, in id order.
    pub fn query(&self, filter: &RecordFilter) -> Vec<ImageRecord> {
        self.records
            .iter()
            .filter(|r| {
                filter.keyword.as_ref().is_none_or(|k| r.keyword.eq_ignore_ascii_case(k))
                    && filter.format.is_none_or(|f| r.format == f)
                    && filter.min_relevance.is_none_or(|m| r.relevance >= m)
            })
            .cloned()
            .collect()
    }

    /// Checks every referenced object against its recorded hash and size and
    /// lists object files no record references.
    pub fn verify(&self) -> Result<VerifyReport, RepoError> {
        let mut referenced: BTreeMap<&str, &ImageRecord> = BTreeMap::new();
        for r in &self.records {
            referenced.entry(r.stored_path.as_str()).or_insert(r);
        }
        let mut report = VerifyReport::default();
        for (path, record) in &referenced {
            match fs::read(self.root.join(path)) {
                Ok(bytes) => {
                    if bytes.len() as u64 != record.byte_size || content_hash(&bytes) != record.content_hash {
                        report.hash_mismatches.push(path.to_string());
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => report.missing.push(path.to_string()),
                Err(e) => return Err(io_err(format!("reading {path}"))(e)),
            }
        }
        let objects = self.root.join("objects");
        for dir in fs::read_dir(&objects).map_err(io_err("listing objects/"))?.flatten() {
            if !dir.file_type().is_ok_and(|t| t.is_dir()) {
                report.orphans.push(format!("objects/{}", dir.file_name().to_string_lossy()));
                continue;
            }
            for file in fs::read_dir(dir.path()).map_err(io_err("listing objects/"))?.flatten() {
                let rel = format!(
                    "objects/{}/{}",
                    dir.file_name().to_string_lossy(),
                    file.file_name().to_string_lossy()
                );
                if !referenced.contains_key(rel.as_str()) {
                    report.orphans.push(rel);
                }
            }
        }
        report.orphans.sort();
        Ok(report)
    }

    /// Copies every record's object into `dest` as `<id>_<filename>`.
    pub fn export(&self, dest: impl AsRef<Path>) -> Result<usize, RepoError> {
        let dest = dest.as_ref();
        fs::create_dir_all(dest).map_err(io_err(format!("creating {}", dest.display())))?;
        for r in &self.records {
            let target = dest.join(export_name(r));
            fs::copy(self.root.join(&r.stored_path), &target)
                .map_err(io_err(format!("exporting record {}", r.id)))?;
        }
        Ok(self.records.len())
    }
}

fn object_path(hash: &ContentHash, ext: &str) -> String {
    let hex = hash.to_hex();
    format!("objects/{}/{}.{}", &hex[..2], hex, ext)
}

fn is_object_path(p: &str) -> bool {
    p.starts_with("objects/") && !p.contains("..") && p.split('/').count() == 3
}

/// `<id>_<filename>` with filesystem-unfriendly characters replaced.
pub fn export_name(r: &ImageRecord) -> String {
    let mut name: String = r
        .filename
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if name.trim_matches(['.', '_']).is_empty() {
        name = format!("image.{}", r.format.extension().unwrap_or("bin"));
    }
    format!("{}_{}", r.id, name)
}
