//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verify-repo found problems, 2 no network,
//! 3 repository unusable, 4 seed adapter failed on its first page,
//! 64 bad usage.

mod args;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use imageharvest::crawl::{self, CrawlConfig, CrawlError, CrawlReport};
use imageharvest::fetch::{Fetcher, LiveTransport, NullTransport, Transport};
use imageharvest::imagestore::{ImageFormat, RecordFilter, Repository};
use imageharvest::seeds::{CustomSearchAdapter, FixtureAdapter, SeedAdapter};
use imageharvest::simweb::{self, SimTransport, SimWebSpec};
use imageharvest::url::CanonicalUrl;
use serde::Serialize;

use args::{Cli, Command, ExportArgs, ReportArgs, RunArgs, VerifyArgs};

static CANCEL: AtomicBool = AtomicBool::new(false);

const EXIT_FINDINGS: u8 = 1;
const EXIT_OFFLINE: u8 = 2;
const EXIT_REPO: u8 = 3;
const EXIT_SEEDS: u8 = 4;
const EXIT_USAGE: u8 = 64;

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<CrawlError> for Failure {
    fn from(e: CrawlError) -> Self {
        let code = match e {
            CrawlError::Config(_) => EXIT_USAGE,
            CrawlError::Offline(_) => EXIT_OFFLINE,
            CrawlError::Seeds(_) => EXIT_SEEDS,
            CrawlError::Repo(_) => EXIT_REPO,
        };
        Self::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst)) {
        log::warn!("interrupt handler not installed: {e}");
    }

    let result = match cli.command {
        Command::Crawl(a) => run(a, true),
        Command::Refresh(a) => run(a, false),
        Command::Report(a) => report(a),
        Command::Export(a) => export(a),
        Command::VerifyRepo(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn open_repo(path: &Path) -> Result<Repository, Failure> {
    Repository::open(path).map_err(|e| Failure::new(EXIT_REPO, format!("cannot use repository {}: {e}", path.display())))
}

/// Opens an existing repository without creating one.
fn open_existing(path: &Path) -> Result<Repository, Failure> {
    if !path.join("VERSION").is_file() {
        return Err(Failure::new(EXIT_REPO, format!("no repository at {}", path.display())));
    }
    open_repo(path)
}

fn emit_json(value: &impl Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

fn run(flags: RunArgs, is_crawl: bool) -> Result<u8, Failure> {
    let args = flags.resolve().map_err(Failure::usage)?;
    let repo_path = args.repo.clone().ok_or_else(|| Failure::usage("--repo is required"))?;
    let config = crawl_config(&args, is_crawl)?;

    // Transport: simulated web, the null network, or the real one.
    let mut sim: Option<(Arc<SimTransport>, simweb::GroundTruth)> = None;
    let transport: Arc<dyn Transport> = if let Some(spec_path) = &args.simweb_spec {
        let spec = SimWebSpec::load(spec_path).map_err(|e| Failure::usage(e.to_string()))?;
        let (graph, truth) = simweb::generate(&spec).map_err(|e| Failure::usage(e.to_string()))?;
        let t = Arc::new(
            simweb::as_transport(Arc::new(graph), args.epoch.unwrap_or(1))
                .with_latency(Duration::from_millis(spec.latency_ms)),
        );
        sim = Some((t.clone(), truth));
        t
    } else if args.null_transport {
        Arc::new(NullTransport)
    } else {
        Arc::new(LiveTransport::new().map_err(|e| Failure::new(EXIT_OFFLINE, format!("connection setup failed: {e}")))?)
    };
    let fetcher = Fetcher::new(transport).with_user_agent(config.user_agent.clone());

    let probe = if args.no_probe {
        None
    } else {
        let raw = args.probe_url.as_deref().unwrap_or("http://example.com/");
        Some(CanonicalUrl::parse(raw).map_err(|e| Failure::usage(format!("--probe-url: {e}")))?)
    };

    let mut repo = open_repo(&repo_path)?;
    let report = if is_crawl {
        let adapter: Box<dyn SeedAdapter> = if let Some(path) = &args.seed_fixture {
            Box::new(FixtureAdapter::load(path).map_err(|e| Failure::new(EXIT_SEEDS, e.to_string()))?)
        } else if args.live {
            Box::new(
                CustomSearchAdapter::from_env(fetcher.clone()).map_err(|e| Failure::new(EXIT_SEEDS, e.to_string()))?,
            )
        } else if let Some((_, truth)) = &sim {
            Box::new(FixtureAdapter::from_json(&truth.seed_fixture_json()).expect("generated fixture parses"))
        } else {
            return Err(Failure::usage("choose a seed source: --seed-fixture FILE or --live"));
        };
        crawl::crawl(&config, adapter.as_ref(), &fetcher, &mut repo, probe.as_ref(), &CANCEL)?
    } else {
        crawl::refresh(&config, &fetcher, &mut repo, probe.as_ref(), &CANCEL)?
    };

    if let (Some(path), Some((t, _))) = (&args.fetch_log, &sim) {
        let file = std::fs::File::create(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        t.write_log(std::io::BufWriter::new(file)).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    print_report(&report, args.json);
    Ok(0)
}

fn crawl_config(args: &RunArgs, is_crawl: bool) -> Result<CrawlConfig, Failure> {
    let defaults = CrawlConfig::default();
    let keyword = args.keyword.clone().unwrap_or_default();
    if is_crawl && keyword.trim().is_empty() {
        return Err(Failure::usage("--keyword is required"));
    }
    let secs = |v: f64, name: &str| {
        Duration::try_from_secs_f64(v).map_err(|_| Failure::usage(format!("{name} must be a non-negative number of seconds")))
    };
    let config = CrawlConfig {
        keyword,
        seed_pages: args.max_pages.unwrap_or(defaults.seed_pages),
        max_depth: args.max_depth.unwrap_or(defaults.max_depth),
        max_images: if args.no_image_limit { None } else { Some(args.max_images.unwrap_or(1000)) },
        max_tasks: args.max_tasks.unwrap_or(defaults.max_tasks),
        workers: args.workers.unwrap_or(defaults.workers),
        delay: args.delay.map(|d| secs(d, "--delay")).transpose()?.unwrap_or(defaults.delay),
        min_relevance: if args.no_filter { None } else { Some(args.min_relevance.unwrap_or(0.1)) },
        user_agent: args.user_agent.clone().unwrap_or(defaults.user_agent),
        request_timeout: args.timeout.map(|d| secs(d, "--timeout")).transpose()?.unwrap_or(defaults.request_timeout),
        dump_frontier: args.dump_frontier,
        ..defaults
    };
    if is_crawl {
        config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    } else if config.workers == 0 {
        return Err(Failure::usage("workers must be at least 1"));
    }
    Ok(config)
}

fn print_report(report: &CrawlReport, json: bool) {
    if let Some(dump) = &report.frontier_dump {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "frontier: {} queued", dump.len());
        for line in dump {
            let _ = writeln!(err, "{line}");
        }
    }
    if json {
        emit_json(report);
    } else {
        print!("{report}");
    }
}

#[derive(Serialize, Default)]
struct Summary {
    records: usize,
    distinct_urls: usize,
    total_bytes: u64,
    by_keyword: std::collections::BTreeMap<String, usize>,
    by_format: std::collections::BTreeMap<String, usize>,
}

fn report(a: ReportArgs) -> Result<u8, Failure> {
    let repo = open_existing(&a.repo)?;
    let format = a
        .format
        .as_deref()
        .map(|f| ImageFormat::from_name(f).ok_or_else(|| Failure::usage(format!("unknown format {f:?}"))))
        .transpose()?;
    let filter = RecordFilter { keyword: a.keyword.clone(), format, min_relevance: a.min_relevance };
    let records = repo.query(&filter);
    let mut s = Summary { records: records.len(), ..Default::default() };
    let mut urls = std::collections::HashSet::new();
    for r in &records {
        urls.insert(r.image_url.as_str());
        s.total_bytes += r.byte_size;
        *s.by_keyword.entry(r.keyword.clone()).or_default() += 1;
        *s.by_format.entry(r.format.to_string()).or_default() += 1;
    }
    s.distinct_urls = urls.len();
    if a.json {
        emit_json(&s);
        return Ok(0);
    }
    println!("repository {}", a.repo.display());
    println!("  {:<20}{:>10}", "records", s.records);
    println!("  {:<20}{:>10}", "distinct urls", s.distinct_urls);
    println!("  {:<20}{:>10}", "total bytes", s.total_bytes);
    println!("by format");
    for f in ImageFormat::ACCEPTED {
        println!("  {:<20}{:>10}", f.name(), s.by_format.get(f.name()).copied().unwrap_or(0));
    }
    if !s.by_keyword.is_empty() {
        println!("by keyword");
        for (k, n) in &s.by_keyword {
            println!("  {k:<20}{n:>10}");
        }
    }
    Ok(0)
}

fn export(a: ExportArgs) -> Result<u8, Failure> {
    let repo = open_existing(&a.repo)?;
    let n = repo
        .export(&a.dest)
        .map_err(|e| Failure::new(EXIT_REPO, format!("export failed: {e}")))?;
    println!("exported {n} files to {}", a.dest.display());
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8, Failure> {
    let repo = open_existing(&a.repo)?;
    let report = repo.verify().map_err(|e| Failure::new(EXIT_REPO, e.to_string()))?;
    if a.json {
        emit_json(&report);
    } else if report.is_clean() {
        println!("repository {} is consistent ({} records)", a.repo.display(), repo.len());
    } else {
        for p in &report.missing {
            println!("missing object: {p}");
        }
        for p in &report.hash_mismatches {
            println!("hash mismatch: {p}");
        }
        for p in &report.orphans {
            println!("orphan object: {p}");
        }
    }
    Ok(if report.is_clean() { 0 } else { EXIT_FINDINGS })
}
