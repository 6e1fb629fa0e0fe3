use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imageharvest"))
}

fn spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn sim_crawl(repo: &Path, extra: &[&str]) -> Output {
    let spec = spec();
    let mut args = vec![
        "crawl", "--keyword", "tiger", "--repo", repo.to_str().unwrap(),
        "--simweb-spec", spec.to_str().unwrap(), "--delay", "0", "--json",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simweb_crawl_then_second_run_stores_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let first = sim_crawl(&repo, &[]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let stored = json(&first)["images_stored"].as_u64().unwrap();
    assert!(stored > 0);

    let second = sim_crawl(&repo, &["--workers", "2"]);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    let report = json(&second);
    assert_eq!(report["images_stored"], 0);
    assert_eq!(report["duplicate_urls"].as_u64().unwrap(), stored);

    let summary = run(&["report", "--repo", repo.to_str().unwrap(), "--json"]);
    assert_eq!(code(&summary), 0);
    let s = json(&summary);
    assert_eq!(s["records"].as_u64().unwrap(), stored);
    assert_eq!(s["distinct_urls"].as_u64().unwrap(), stored);
    assert_eq!(s["by_keyword"]["tiger"].as_u64().unwrap(), stored);
}

#[test]
fn human_report_and_fetch_log() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let log = dir.path().join("fetch.jsonl");
    let out = run(&[
        "crawl", "--keyword", "tiger", "--repo", repo.to_str().unwrap(),
        "--simweb-spec", spec().to_str().unwrap(), "--delay", "0", "--fetch-log", log.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("images stored"));
    let lines = fs::read_to_string(&log).unwrap();
    assert!(lines.lines().count() > 0);
    for line in lines.lines() {
        let entry: Value = serde_json::from_str(line).unwrap();
        assert!(entry["status"].is_u64() && entry["url"].is_string());
    }
}

#[test]
fn offline_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let seeds = dir.path().join("seeds.json");
    fs::write(&seeds, r#"{"tiger": [["http://example.com/"]]}"#).unwrap();
    for extra in [&["--null-transport"][..], &["--probe-url", "http://127.0.0.1:9/", "--timeout", "5"][..]] {
        let mut args = vec!["crawl", "--keyword", "tiger", "--repo", repo.to_str().unwrap(), "--seed-fixture", seeds.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 2, "{extra:?}: {}", stderr(&out));
        assert!(stderr(&out).contains("no Internet connection"), "{}", stderr(&out));
    }
}

#[test]
fn refresh_detects_epoch_two_changes() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let r = repo.to_str().unwrap();
    let s = spec();
    let refresh = |epoch: &str| {
        run(&["refresh", "--repo", r, "--simweb-spec", s.to_str().unwrap(), "--epoch", epoch, "--delay", "0", "--json"])
    };

    let empty = refresh("1");
    assert_eq!(code(&empty), 0, "{}", stderr(&empty));
    assert_eq!(json(&empty)["changed"], 0);

    let crawled = sim_crawl(&repo, &["--no-filter"]);
    let stored = json(&crawled)["images_stored"].as_u64().unwrap();
    let same = json(&refresh("1"));
    assert_eq!((same["changed"].as_u64().unwrap(), same["unchanged"].as_u64().unwrap()), (0, stored));
    let later = json(&refresh("2"));
    let changed = later["changed"].as_u64().unwrap();
    assert!(changed > 0);
    assert_eq!(changed + later["unchanged"].as_u64().unwrap(), stored);

    let verify = run(&["verify-repo", "--repo", r]);
    assert_eq!(code(&verify), 0, "{}", String::from_utf8_lossy(&verify.stdout));
}

#[test]
fn report_on_empty_repository_shows_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    assert_eq!(code(&sim_crawl(&repo, &["--max-depth", "0", "--max-images", "1"])), 0);
    let empty = dir.path().join("empty");
    // A refresh on a fresh path creates an empty repository.
    let out = run(&["refresh", "--repo", empty.to_str().unwrap(), "--simweb-spec", spec().to_str().unwrap(), "--no-probe"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = json(&run(&["report", "--repo", empty.to_str().unwrap(), "--json"]));
    assert_eq!((s["records"].as_u64(), s["total_bytes"].as_u64()), (Some(0), Some(0)));
    let text = run(&["report", "--repo", empty.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("records"));
}

#[test]
fn export_writes_one_file_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let stored = json(&sim_crawl(&repo, &["--no-filter"]))["images_stored"].as_u64().unwrap();
    let dest = dir.path().join("out");
    let out = run(&["export", "--repo", repo.to_str().unwrap(), "--dest", dest.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_dir(&dest).unwrap().count() as u64, stored);
}

#[test]
fn corrupted_object_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    assert_eq!(code(&sim_crawl(&repo, &[])), 0);
    let manifest = fs::read_to_string(repo.join("manifest.jsonl")).unwrap();
    let first: Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let object = repo.join(first["stored_path"].as_str().unwrap());
    let mut bytes = fs::read(&object).unwrap();
    bytes[10] ^= 0xFF;
    fs::write(&object, bytes).unwrap();

    let out = run(&["verify-repo", "--repo", repo.to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&out)["hash_mismatches"].as_array().unwrap().len(), 1);
}

#[test]
fn unusable_repository_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, b"not a directory").unwrap();
    let under_file = file.join("repo");
    let out = sim_crawl(&under_file, &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let missing = dir.path().join("nowhere");
    assert_eq!(code(&run(&["verify-repo", "--repo", missing.to_str().unwrap()])), 3);
    assert_eq!(code(&run(&["report", "--repo", missing.to_str().unwrap()])), 3);
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let r = repo.to_str().unwrap();
    let s = spec();
    let s = s.to_str().unwrap();
    for args in [
        &["crawl", "--bogus"][..],
        &["crawl", "--repo", r, "--simweb-spec", s][..],
        &["crawl", "--keyword", "tiger", "--simweb-spec", s][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--simweb-spec", s, "--max-images", "0"][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--simweb-spec", s, "--workers", "0"][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--simweb-spec", s, "--delay", "-1"][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--simweb-spec", s, "--epoch", "3"][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--no-filter", "--min-relevance", "0.5"][..],
        &["crawl", "--keyword", "tiger", "--repo", r, "--null-transport", "--no-probe"][..],
        &["frobnicate"][..],
    ] {
        let out = run(args);
        assert_eq!(code(&out), 64, "{args:?}: {}", stderr(&out));
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        serde_json::json!({
            "keyword": "tiger",
            "repo": repo,
            "simweb_spec": spec(),
            "delay": 0.0,
            "max_images": 2,
            "json": true
        })
        .to_string(),
    )
    .unwrap();
    let c = config.to_str().unwrap();
    let out = run(&["crawl", "--config", c]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out)["images_stored"], 2);

    // The limit applies per run.
    let out = run(&["crawl", "--config", c, "--max-images", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out)["images_stored"], 3);

    fs::write(&config, r#"{"keyword": "tiger", "unknown_option": 1}"#).unwrap();
    assert_eq!(code(&run(&["crawl", "--config", c])), 64);
}
