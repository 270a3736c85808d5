use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use webview_core::delivery::{Enrichers, LiveWhois};
use webview_core::probe::live::{CdpDriver, LiveDriverOptions};
use webview_core::probe::{
    ingest_capture, run_campaign, BrowserDriver, CampaignConfig, ReplayDriver, SessionConfig,
};
use webview_core::record::{write_csv, RecordFilter, RecordStore, SessionStatus};
use webview_core::report::{
    aggregate, render, CompareBy, Format, GroupBy, Metric, ReportKind, ReportOptions,
};

#[derive(Parser)]
#[command(name = "webview", version, about = "Web page measurement probe and reporting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a measurement campaign and append every outcome to the store.
    Measure(MeasureArgs),
    /// Analyze pre-captured HAR files into records.
    Ingest(IngestArgs),
    /// Aggregate stored records into a report.
    Report(ReportArgs),
    /// Print stored records matching the filters.
    Query(QueryArgs),
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    config: PathBuf,
    /// `live` or `replay:<dir>`.
    #[arg(long, default_value = "live")]
    driver: String,
    #[arg(long)]
    store: PathBuf,
    /// Enrichment table directory; overrides the config's `fixtures`.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Query WHOIS servers instead of the WHOIS table.
    #[arg(long)]
    live_whois: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// A HAR file, or a directory whose `*.har` files are read in name order.
    #[arg(long)]
    har: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    kind: ReportKind,
    /// `key=value`; repeatable, conjunctive.
    #[arg(long = "filter", value_name = "KEY=VALUE")]
    filters: Vec<String>,
    #[arg(long, default_value = "json")]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    group_by: Option<GroupBy>,
    #[arg(long, default_value = "count")]
    metric: Metric,
    #[arg(long, default_value_t = 1)]
    bucket_days: u32,
    #[arg(long = "compare")]
    compare_by: Option<CompareBy>,
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long = "filter", value_name = "KEY=VALUE")]
    filters: Vec<String>,
    #[arg(long, default_value = "json")]
    format: QueryFormat,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum QueryFormat {
    Json,
    Csv,
}

/// Exit 1: bad invocation or configuration. Exit 2: store or driver failure.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn enrichers(dir: Option<&Path>, live_whois: bool) -> Result<Enrichers, Failure> {
    let mut e = match dir {
        Some(dir) => Enrichers::from_dir(dir)
            .with_context(|| format!("loading enrichment tables from {}", dir.display()))
            .usage()?,
        None => Enrichers::offline_empty(),
    };
    if live_whois {
        e.whois = Arc::new(LiveWhois::default());
    }
    Ok(e)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .with_context(|| format!("writing {}", path.display()))
            .runtime(),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).runtime()
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).runtime()?;
    bytes.push(b'\n');
    write_output(None, &bytes)
}

fn existing_store(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "store {} does not exist",
            path.display()
        )))
    }
}

async fn measure(args: MeasureArgs) -> Result<(), Failure> {
    let config = CampaignConfig::load(&args.config).usage()?;
    let urls = config.urls().usage()?;
    if urls.is_empty() {
        return Err(Failure::Usage(anyhow!(
            "{} lists no websites",
            args.config.display()
        )));
    }
    let fixtures = args.fixtures.or(config.fixtures.clone());
    let enrichers = enrichers(fixtures.as_deref(), args.live_whois)?;

    let mut factory: Box<webview_core::probe::DriverFactory<'_>> = match args.driver.as_str() {
        "live" => Box::new(|_: &str| {
            Ok(Box::new(CdpDriver::new(LiveDriverOptions::default())) as Box<dyn BrowserDriver>)
        }),
        spec => match spec.strip_prefix("replay:") {
            Some(dir) if Path::new(dir).is_dir() => {
                let dir = PathBuf::from(dir);
                Box::new(move |_: &str| Ok(Box::new(ReplayDriver::new(&dir)) as Box<dyn BrowserDriver>))
            }
            Some(dir) => return Err(Failure::Usage(anyhow!("replay directory {dir} does not exist"))),
            None => {
                return Err(Failure::Usage(anyhow!(
                    "--driver must be `live` or `replay:<dir>`, got {spec:?}"
                )))
            }
        },
    };

    let mut store = RecordStore::open(&args.store).runtime()?;
    let summary = run_campaign(&config.session, &urls, factory.as_mut(), &mut store, &enrichers)
        .await
        .runtime()?;
    tracing::info!(
        complete = summary.complete,
        timeout = summary.timeout,
        failed = summary.failed,
        "campaign done"
    );
    print_json(&serde_json::to_value(&summary).runtime()?)
}

fn har_files(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.runtime()?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("har")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// A campaign document, or a bare session configuration without a website
/// list.
fn load_session(path: &Path) -> anyhow::Result<(SessionConfig, Option<PathBuf>)> {
    if let Ok(c) = CampaignConfig::load(path) {
        return Ok((c.session, c.fixtures));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let session: SessionConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    session.validate()?;
    Ok((session, None))
}

fn ingest(args: IngestArgs) -> Result<(), Failure> {
    let (config, config_fixtures) = load_session(&args.config).usage()?;
    let fixtures = args.fixtures.or(config_fixtures);
    let enrichers = enrichers(fixtures.as_deref(), false)?;
    let files = har_files(&args.har)?;
    if files.is_empty() {
        return Err(Failure::Usage(anyhow!("no .har files in {}", args.har.display())));
    }

    let mut store = RecordStore::open(&args.store).runtime()?;
    let (mut complete, mut timeout, mut failed) = (0, 0, 0);
    let mut ids = Vec::new();
    for file in &files {
        tracing::info!(file = %file.display(), "ingesting");
        let record = ingest_capture(file, &config, &enrichers);
        match record.status {
            SessionStatus::Complete => complete += 1,
            SessionStatus::Timeout => timeout += 1,
            SessionStatus::Failed => failed += 1,
        }
        ids.push(store.append(&record).runtime()?);
    }
    print_json(&json!({"complete": complete, "timeout": timeout, "failed": failed, "record_ids": ids}))
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let filters = RecordFilter::from_pairs(&args.filters).usage()?;
    let options = ReportOptions {
        group_by: args.group_by,
        metric: args.metric,
        bucket_days: args.bucket_days,
        compare_by: args.compare_by,
        baseline: args.baseline,
    };
    if args.format == Format::Geojson && args.kind != ReportKind::GeoPanel {
        return Err(Failure::Usage(anyhow!(
            "geojson output is only available for geo_panel reports"
        )));
    }
    existing_store(&args.store)?;
    let records = RecordStore::query(&args.store, &filters).runtime()?;
    let report = aggregate(&records, args.kind, &filters, &options).usage()?;
    let bytes = render(&report, args.format).usage()?;
    write_output(args.out.as_deref(), &bytes)
}

fn query(args: QueryArgs) -> Result<(), Failure> {
    let filters = RecordFilter::from_pairs(&args.filters).usage()?;
    existing_store(&args.store)?;
    let records = RecordStore::query(&args.store, &filters).runtime()?;
    let mut bytes = Vec::new();
    match args.format {
        QueryFormat::Json => {
            serde_json::to_writer_pretty(&mut bytes, &records).runtime()?;
            bytes.push(b'\n');
        }
        QueryFormat::Csv => write_csv(&records, &mut bytes).runtime()?,
    }
    write_output(None, &bytes)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let result = match cli.command {
        Command::Measure(args) => {
            let runtime = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => {
                    eprintln!("error: starting the async runtime: {e}");
                    return ExitCode::from(2);
                }
            };
            runtime.block_on(measure(args))
        }
        Command::Ingest(args) => ingest(args),
        Command::Report(args) => report(args),
        Command::Query(args) => query(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
