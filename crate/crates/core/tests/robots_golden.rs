//! Hand-computed verdicts over a corpus of robots.txt files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use imageharvest::robots::parse_robots_bytes;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    user_agent: String,
    cases: BTreeMap<String, Case>,
}

#[derive(Deserialize)]
struct Case {
    allowed: Vec<String>,
    denied: Vec<String>,
    #[serde(default, deserialize_with = "some_delay")]
    crawl_delay: Option<Option<f64>>,
}

// Distinguishes an absent key from an explicit null.
fn some_delay<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

#[test]
fn corpus_verdicts_match() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/robots");
    let expected: Expected = serde_json::from_slice(&fs::read(dir.join("expected.json")).unwrap()).unwrap();
    let on_disk = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "txt"))
        .count();
    assert_eq!(on_disk, expected.cases.len(), "every corpus file needs verdicts");
    assert!(on_disk >= 15);

    let mut failures = Vec::new();
    for (file, case) in &expected.cases {
        let policy = parse_robots_bytes(&fs::read(dir.join(file)).unwrap(), &expected.user_agent);
        for p in &case.allowed {
            if !policy.is_allowed(p) {
                failures.push(format!("{file}: {p} should be allowed"));
            }
        }
        for p in &case.denied {
            if policy.is_allowed(p) {
                failures.push(format!("{file}: {p} should be denied"));
            }
        }
        if let Some(delay) = case.crawl_delay {
            let want = delay.map(Duration::from_secs_f64);
            if policy.crawl_delay != want {
                failures.push(format!("{file}: crawl delay {:?}, expected {want:?}", policy.crawl_delay));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
