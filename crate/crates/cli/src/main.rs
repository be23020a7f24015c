use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use newscycle::aggregate::read_aggregate_csv;
use newscycle::config::{Overrides, ProviderKind, RunConfig};
use newscycle::corpus::write_jsonl;
use newscycle::gdelt::{build_query, fetch_article_list, FetchOptions, UreqTransport};
use newscycle::pipeline::{read_change_points, ChangePointRecord, Pipeline, PipelineReport, Stage, StageStatus};
use newscycle::report::{render_chart, ChartStyle};
use newscycle::synth::{generate, write_corpus, SynthPlan};

#[derive(Parser)]
#[command(name = "newscycle", version, about = "Measure how news coverage of an event evolves over time")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download article metadata for one event from GDELT.
    Fetch(FetchArgs),
    /// Ingest and window-filter the event corpora.
    Ingest(EventStageArgs),
    /// Run through preprocessing, embedding and the event/baseline split.
    Partition(EventStageArgs),
    /// Run through the daily volume, drift and dispersion series.
    Signals(EventStageArgs),
    /// Run through daily term relevance and phase reports.
    Relevance(EventStageArgs),
    /// Run every stage, including the cross-event aggregates.
    Aggregate(StageArgs),
    /// Run the whole pipeline end to end.
    Run(StageArgs),
    /// Generate synthetic corpora for the configured events.
    Synth(SynthArgs),
    /// Re-render charts and the change-point summary from aggregate output.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(short, long, env = "NEWSCYCLE_CONFIG")]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Hash,
    Http,
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long, alias = "corpus_dir")]
    corpus_dir: Option<PathBuf>,
    #[arg(long, alias = "output_dir")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long, alias = "groups_disaster")]
    groups_disaster: Option<PathBuf>,
    #[arg(long, alias = "groups_violence")]
    groups_violence: Option<PathBuf>,
    #[arg(long, alias = "dedup_threshold")]
    dedup_threshold: Option<f64>,
    #[arg(long, alias = "keyword_threshold")]
    keyword_threshold: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    quorum: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, alias = "top_terms")]
    top_terms: Option<usize>,
    #[arg(long, alias = "top_k")]
    top_k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, alias = "batch_size")]
    batch_size: Option<usize>,
    #[arg(long, alias = "max_in_flight")]
    max_in_flight: Option<usize>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            corpus_dir: self.corpus_dir.clone(),
            output_dir: self.output_dir.clone(),
            stoplist: self.stoplist.clone(),
            groups_disaster: self.groups_disaster.clone(),
            groups_violence: self.groups_violence.clone(),
            dedup_threshold: self.dedup_threshold,
            keyword_threshold: self.keyword_threshold,
            k: self.k,
            quorum: self.quorum,
            alpha: self.alpha,
            top_terms: self.top_terms,
            top_k: self.top_k,
            epsilon: self.epsilon,
            workers: self.workers,
            provider: self.provider.map(|p| match p {
                Provider::Hash => ProviderKind::Hash,
                Provider::Http => ProviderKind::Http,
            }),
            dimension: self.dimension,
            seed: self.seed,
            endpoint: self.endpoint.clone(),
            batch_size: self.batch_size,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct EventStageArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Only this event; others keep their previous outputs
    #[arg(long)]
    event: Option<String>,
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    event: String,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Allow network access. Without it the command refuses to run.
    #[arg(long)]
    live: bool,
    #[arg(long)]
    max_records: Option<usize>,
    /// Seconds between requests.
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Synthetic plan (TOML).
    #[arg(long)]
    plan: PathBuf,
    /// Only this event; by default every configured event.
    #[arg(long)]
    event: Option<String>,
    /// Defaults to the configured corpus directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, alias = "output_dir")]
    output_dir: Option<PathBuf>,
    /// Where to write charts; defaults to `<output_dir>/charts`.
    #[arg(long)]
    charts_dir: Option<PathBuf>,
}

fn load_config(arg: &ConfigArg, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&arg.config).with_context(|| format!("loading {}", arg.config.display()))?;
    cfg.apply_overrides(overrides);
    Ok(cfg)
}

fn print_report(report: &PipelineReport, out: &Path) {
    let ran = report.runs.iter().filter(|r| r.status == StageStatus::Ran).count();
    println!(
        "{} stage runs ({} ran, {} up to date) in {:.2}s; output in {}",
        report.runs.len(),
        ran,
        report.runs.len() - ran,
        report.elapsed.as_secs_f64(),
        out.display()
    );
}

fn run_stages(args: &StageArgs, event: Option<&str>, last: Stage) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides.to_overrides())?;
    let mut pipeline = Pipeline::new(cfg)?;
    if let Some(id) = event {
        pipeline = pipeline.only_event(id)?;
    }
    let report = pipeline.run_until(last)?;
    print_report(&report, pipeline.output_dir());
    Ok(())
}

fn fetch(args: &FetchArgs) -> Result<()> {
    if !args.live {
        bail!("fetch contacts the GDELT API; pass --live to allow network access");
    }
    let cfg = load_config(&args.config, &Overrides::default())?;
    let event = cfg.event(&args.event)?;
    let mut query = build_query(event);
    query.max_records = args.max_records.unwrap_or(cfg.gdelt.max_records);
    let opts = FetchOptions {
        endpoint: cfg.gdelt.endpoint.clone(),
        spacing: Duration::from_secs_f64(args.spacing.unwrap_or(cfg.gdelt.spacing_secs).max(0.0)),
        ..FetchOptions::default()
    };
    let outcome = fetch_article_list(&query, &UreqTransport::default(), &opts)?;
    let docs: Vec<_> = outcome.records.iter().map(|r| r.to_document()).collect();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    write_jsonl(&docs, &mut buf)?;
    fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{} articles from {} requests ({} retries, {} skipped, {} duplicate urls) -> {}",
        docs.len(),
        outcome.pages,
        outcome.retries,
        outcome.skipped,
        outcome.duplicates,
        args.out.display()
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = load_config(&args.config, &Overrides::default())?;
    let plan = SynthPlan::load(&args.plan).with_context(|| format!("loading {}", args.plan.display()))?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| cfg.paths.corpus_dir.clone());
    let mut events: Vec<_> = cfg.events.iter().collect();
    events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    let mut generated = 0;
    for (i, event) in events.iter().enumerate() {
        if args.event.as_ref().is_some_and(|id| *id != event.event_id) {
            continue;
        }
        // Each event gets its own stream of draws.
        let event_plan = SynthPlan {
            seed: plan.seed.wrapping_add(i as u64),
            ..plan.clone()
        };
        let (corpus, matrix) = generate(&event_plan, event)?;
        write_corpus(&corpus, &matrix, &out_dir)?;
        println!("{}: {} documents", event.event_id, corpus.documents.len());
        generated += 1;
    }
    if generated == 0 {
        bail!("no matching event in config");
    }
    println!("corpora written to {}", out_dir.display());
    Ok(())
}

fn format_change_point(c: &ChangePointRecord) -> String {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    format!(
        "{:<9} {:<28} {:<9} {:>5} {:>10.4} {:>10} {:>7}",
        c.scope,
        c.id,
        c.category,
        c.peak_day,
        c.peak_value,
        opt(c.baseline_level.map(|b| format!("{b:.4}"))),
        opt(c.return_day.map(|d| d.to_string())),
    )
}

fn report(args: &ReportArgs) -> Result<()> {
    let overrides = Overrides {
        output_dir: args.output_dir.clone(),
        ..Overrides::default()
    };
    let cfg = load_config(&args.config, &overrides)?;
    let out = &cfg.paths.output_dir;
    let agg_path = out.join("aggregate/aggregate.csv");
    let file = fs::File::open(&agg_path)
        .with_context(|| format!("opening {}; run the aggregate stage first", agg_path.display()))?;
    let aggregates = read_aggregate_csv(file)?;
    let charts = args.charts_dir.clone().unwrap_or_else(|| out.join("charts"));
    fs::create_dir_all(&charts)?;
    for agg in &aggregates {
        let path = charts.join(format!("{}_{}.svg", agg.category, agg.signal));
        fs::write(&path, render_chart(agg, &ChartStyle::default()))?;
    }
    let points = read_change_points(out.join("aggregate/change_points.json"))?;
    let mut text = format!(
        "{:<9} {:<28} {:<9} {:>5} {:>10} {:>10} {:>7}\n",
        "scope", "id", "category", "peak", "peak value", "baseline", "return"
    );
    for c in &points {
        text.push_str(&format_change_point(c));
        text.push('\n');
    }
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    println!("{} charts written to {}", aggregates.len(), charts.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Fetch(a) => fetch(a),
        Command::Ingest(a) => run_stages(&a.stage, a.event.as_deref(), Stage::Ingest),
        Command::Partition(a) => run_stages(&a.stage, a.event.as_deref(), Stage::Partition),
        Command::Signals(a) => run_stages(&a.stage, a.event.as_deref(), Stage::Signals),
        Command::Relevance(a) => run_stages(&a.stage, a.event.as_deref(), Stage::Relevance),
        Command::Aggregate(a) | Command::Run(a) => run_stages(a, None, Stage::Aggregate),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    }
}
