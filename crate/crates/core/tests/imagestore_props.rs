mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use common::World;
use imageharvest::imagestore::{content_hash, sniff_format, ImageFormat, NewImage, PutOutcome, RecordFilter, Repository};
use imageharvest::simweb::SimWebSpec;
use imageharvest::url::CanonicalUrl;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    format: String,
    leading: String,
}

fn fixtures_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/images")
}

/// Leading bytes were recorded from files written by a reference encoder.
#[test]
fn reference_encoder_pixels_sniff_correctly() {
    let dir = fixtures_dir();
    let table: BTreeMap<String, Fixture> = serde_json::from_slice(&fs::read(dir.join("formats.json")).unwrap()).unwrap();
    assert_eq!(table.values().map(|f| f.format.as_str()).collect::<HashSet<_>>().len(), 5);
    for (file, fixture) in table {
        let bytes = fs::read(dir.join(&file)).unwrap();
        assert!(hex::encode(&bytes).starts_with(&fixture.leading), "{file} changed on disk");
        assert_eq!(sniff_format(&bytes).name(), fixture.format, "{file}");
        // Classification ignores names: the same bytes under any extension.
        assert_eq!(sniff_format(&bytes), ImageFormat::from_name(&fixture.format).unwrap());
    }
}

const HEADERS: [&[u8]; 6] = [
    &[0xFF, 0xD8, 0xFF, 0xE0],
    b"\x89PNG\r\n\x1a\n",
    b"BM",
    b"II*\0",
    b"GIF89a",
    b"RIFF\0\0\0\0WEBP",
];

fn bytes_for(header: usize, content: u8) -> Vec<u8> {
    let mut b = HEADERS[header].to_vec();
    b.extend(std::iter::repeat_n(content, 64 + content as usize));
    b
}

fn image(url: u8, keyword: &str) -> NewImage {
    NewImage {
        image_url: CanonicalUrl::parse(&format!("http://s.test/i/{url}.img")).unwrap(),
        source_page: CanonicalUrl::parse("http://s.test/").unwrap(),
        filename: format!("{url}.img"),
        keyword: keyword.into(),
        alt_text: "alt".into(),
        caption: String::new(),
        relevance: f64::from(url % 11) / 10.0,
        fetched_at: chrono::Utc::now(),
        last_modified: None,
    }
}

fn object_files(root: &Path) -> usize {
    fn walk(p: &Path) -> usize {
        fs::read_dir(p)
            .map(|rd| {
                rd.flatten()
                    .map(|e| if e.path().is_dir() { walk(&e.path()) } else { 1 })
                    .sum()
            })
            .unwrap_or(0)
    }
    walk(&root.join("objects"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repository_invariants(puts in prop::collection::vec((0u8..20, 0usize..6, 0u8..8), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = Repository::open(dir.path()).unwrap();
        let mut urls = HashSet::new();
        let mut hashes = HashSet::new();
        for (url, header, content) in puts {
            let bytes = bytes_for(header, content);
            let outcome = repo.put(image(url, "tiger"), &bytes).unwrap();
            let accepted = sniff_format(&bytes) != ImageFormat::Unknown;
            match outcome {
                PutOutcome::RejectedFormat => prop_assert!(!accepted),
                PutOutcome::DuplicateUrl(_) => prop_assert!(urls.contains(&url)),
                PutOutcome::Stored(_) => {
                    prop_assert!(urls.insert(url));
                    prop_assert!(hashes.insert(content_hash(&bytes)));
                }
                PutOutcome::DuplicateContent { .. } => {
                    prop_assert!(urls.insert(url));
                    prop_assert!(hashes.contains(&content_hash(&bytes)));
                }
            }
        }
        prop_assert_eq!(repo.len(), urls.len());
        prop_assert_eq!(object_files(dir.path()), hashes.len());
        prop_assert!(repo.verify().unwrap().is_clean());
        for r in repo.records() {
            let hex = r.content_hash.to_hex();
            let want = format!("objects/{}/{}.{}", &hex[..2], hex, r.format.extension().unwrap());
            prop_assert_eq!(&r.stored_path, &want);
            prop_assert!(r.byte_size > 0 && r.format != ImageFormat::Unknown);
        }

        let before = repo.records().to_vec();
        drop(repo);
        let reopened = Repository::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.records(), &before[..]);
    }
}

#[test]
fn verify_reports_each_kind_of_damage() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    repo.put(image(1, "k"), &bytes_for(0, 1)).unwrap();
    repo.put(image(2, "k"), &bytes_for(1, 2)).unwrap();
    assert!(repo.verify().unwrap().is_clean());

    let first = dir.path().join(&repo.records()[0].stored_path);
    let second = dir.path().join(&repo.records()[1].stored_path);
    fs::remove_file(&first).unwrap();
    let mut bytes = fs::read(&second).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    fs::write(&second, bytes).unwrap();
    fs::write(dir.path().join("objects/zz.jpg"), b"stray").unwrap();

    let report = repo.verify().unwrap();
    assert_eq!((report.missing.len(), report.hash_mismatches.len(), report.orphans.len()), (1, 1, 1));
}

/// Two crawls under different keywords into one repository; the expected
/// counts follow from each world's relevant fraction.
#[test]
fn query_by_keyword_counts_come_from_the_generator() {
    let tiger = World::new(SimWebSpec {
        rng_seed: 60,
        hosts: 2,
        pages_per_host: 6,
        images_total: 100,
        relevant_fraction: 0.6,
        keyword: "tiger".into(),
        ..SimWebSpec::default()
    });
    let sunflower = World::new(SimWebSpec {
        rng_seed: 40,
        hosts: 2,
        pages_per_host: 6,
        images_total: 80,
        relevant_fraction: 0.5,
        keyword: "sunflower".into(),
        ..SimWebSpec::default()
    });
    assert_eq!(tiger.truth.relevant_images().len(), 60);
    assert_eq!(sunflower.truth.relevant_images().len(), 40);

    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    for world in [&tiger, &sunflower] {
        let mut config = world.config(0.0);
        config.max_images = None;
        world.crawl(&config, &mut repo, 1);
    }
    let by = |kw: &str| repo.query(&RecordFilter { keyword: Some(kw.into()), ..RecordFilter::default() }).len();
    assert_eq!(by("tiger"), 60);
    assert_eq!(by("sunflower"), 40);
    assert_eq!(repo.query(&RecordFilter::default()).len(), 100);
    assert!(repo.query(&RecordFilter { min_relevance: Some(1.1), ..RecordFilter::default() }).is_empty());
    let ids: Vec<u64> = repo.query(&RecordFilter::default()).iter().map(|r| r.id).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}
