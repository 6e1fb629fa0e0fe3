use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "imageharvest", version, about = "Keyword-driven image crawler")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Seed from a keyword, crawl, and store matching images.
    Crawl(RunArgs),
    /// Re-fetch stored images and record the ones that changed.
    Refresh(RunArgs),
    /// Summarize repository contents.
    Report(ReportArgs),
    /// Copy every stored image into a flat directory as <id>_<filename>.
    Export(ExportArgs),
    /// Check objects against the manifest; exits 1 on any finding.
    VerifyRepo(VerifyArgs),
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Options for crawl and refresh. Every option except --config may also be
/// given in the JSON config file under its snake_case name; flags win.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// JSON file with default values for these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub keyword: Option<String>,
    #[arg(long)]
    pub repo: Option<PathBuf>,
    /// Seed fixture: JSON mapping keyword -> pages -> URLs.
    #[arg(long, conflicts_with = "live")]
    pub seed_fixture: Option<PathBuf>,
    /// Seed from the live search API (credentials from the environment).
    #[arg(long)]
    pub live: bool,
    /// Crawl a generated synthetic web instead of the network.
    #[arg(long)]
    pub simweb_spec: Option<PathBuf>,
    /// Synthetic web epoch (1 or 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub epoch: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_images: Option<u64>,
    /// Keep going until the frontier drains.
    #[arg(long, conflicts_with = "max_images")]
    pub no_image_limit: bool,
    #[arg(long)]
    pub max_depth: Option<u32>,
    /// Seed result pages to request.
    #[arg(long)]
    pub max_pages: Option<u32>,
    #[arg(long)]
    pub max_tasks: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub workers: Option<usize>,
    /// Minimum seconds between requests to one host.
    #[arg(long)]
    pub delay: Option<f64>,
    #[arg(long, conflicts_with = "no_filter")]
    pub min_relevance: Option<f64>,
    /// Fetch every image candidate regardless of relevance.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub json: bool,
    /// Print the remaining frontier to stderr when the run ends.
    #[arg(long)]
    pub dump_frontier: bool,
    /// URL requested before crawling to check connectivity.
    #[arg(long)]
    pub probe_url: Option<String>,
    #[arg(long)]
    pub no_probe: bool,
    /// Write the synthetic web's request log here as JSON lines.
    #[arg(long)]
    pub fetch_log: Option<PathBuf>,
    #[arg(long)]
    pub user_agent: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Use a transport that refuses every connection.
    #[arg(long, hide = true)]
    pub null_transport: bool,
}

impl RunArgs {
    /// Flags layered over the config file, if any.
    pub fn resolve(self) -> Result<RunArgs, String> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let file = load(&path)?;
        Ok(self.over(file))
    }

    fn over(self, file: RunArgs) -> RunArgs {
        RunArgs {
            config: self.config,
            keyword: self.keyword.or(file.keyword),
            repo: self.repo.or(file.repo),
            seed_fixture: self.seed_fixture.or(file.seed_fixture),
            live: self.live || file.live,
            simweb_spec: self.simweb_spec.or(file.simweb_spec),
            epoch: self.epoch.or(file.epoch),
            max_images: self.max_images.or(file.max_images),
            no_image_limit: self.no_image_limit || (file.no_image_limit && self.max_images.is_none()),
            max_depth: self.max_depth.or(file.max_depth),
            max_pages: self.max_pages.or(file.max_pages),
            max_tasks: self.max_tasks.or(file.max_tasks),
            workers: self.workers.or(file.workers),
            delay: self.delay.or(file.delay),
            min_relevance: self.min_relevance.or(file.min_relevance),
            no_filter: self.no_filter || (file.no_filter && self.min_relevance.is_none()),
            json: self.json || file.json,
            dump_frontier: self.dump_frontier || file.dump_frontier,
            probe_url: self.probe_url.or(file.probe_url),
            no_probe: self.no_probe || file.no_probe,
            fetch_log: self.fetch_log.or(file.fetch_log),
            user_agent: self.user_agent.or(file.user_agent),
            timeout: self.timeout.or(file.timeout),
            null_transport: self.null_transport || file.null_transport,
        }
    }
}

fn load(path: &Path) -> Result<RunArgs, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long)]
    pub keyword: Option<String>,
    /// jpeg, png, bmp, tiff or gif.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub min_relevance: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long)]
    pub dest: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long)]
    pub json: bool,
}
