use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prisme_core::dataset::BlockMode;
use prisme_core::pipeline::{Pipeline, PipelineConfig, PipelineError, RunOptions, Stage, StageOutcome};
use tracing_subscriber::EnvFilter;

/// Builds multilingual company corpora: crawl, harvest reports, structure,
/// weight sector terms and emit context-block datasets.
#[derive(Debug, Parser)]
#[command(name = "prisme-forge", version)]
struct Cli {
    /// More logging (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// TOML configuration; relative paths inside it follow its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Company registry CSV (name,domain,sector).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Run even if the previous manifest shows nothing changed.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Clone, Default)]
struct OutDir {
    /// Output root; each stage writes `<out>/<stage>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the registry and every configured resource.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
    },
    /// Crawl every registry domain politely.
    Crawl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        delay_ms: Option<u64>,
        #[arg(long)]
        max_pages: Option<usize>,
        #[arg(long)]
        min_pages: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// One exclusion regex per line.
        #[arg(long)]
        filters: Option<PathBuf>,
    },
    /// Find, download and filter annual-report PDFs.
    #[command(name = "harvest-pdf")]
    HarvestPdf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
        /// `company,url` candidates instead of a search backend.
        #[arg(long)]
        report_urls: Option<PathBuf>,
        #[arg(long)]
        min_year: Option<u32>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        delay_ms: Option<u64>,
    },
    /// Extract text, identify languages and collect keyword snippets.
    Structure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
        /// YYYY-MM-DD stamped in the `date_seen` column.
        #[arg(long)]
        date_seen: Option<String>,
        #[arg(long)]
        keywords: Option<PathBuf>,
    },
    /// Weight sector n-grams with TF-IDF.
    Terms {
        #[command(flatten)]
        common: Common,
        /// Directory holding documents.csv (a structure stage output).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated sector labels.
        #[arg(long, value_delimiter = ',')]
        sectors: Vec<String>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        quantile: Option<f64>,
        /// Output CSV; side files and the manifest are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the annotated context-block dataset.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// term,category CSV.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// sentence5 or token500.
        #[arg(long)]
        mode: Option<BlockMode>,
        /// Comma-separated document languages to keep; `all` keeps every one.
        #[arg(long, value_delimiter = ',')]
        languages: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hand the dataset to the configured external vectorizer.
    Vectorize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
    },
    /// Per-language corpus statistics.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Every stage in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: OutDir,
    },
}

fn base_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.rebase(Path::new(""));
            c
        }
    };
    if let Some(r) = &common.registry {
        cfg.paths.registry = Some(r.clone());
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn plan(cmd: Command) -> Result<(Vec<Stage>, PipelineConfig, RunOptions), PipelineError> {
    let mut opts = RunOptions::default();
    let (stages, common, cfg) = match cmd {
        Command::Prepare { common, out } => (vec![Stage::Prepare], common.clone(), with_out(&common, out)?),
        Command::Crawl {
            common,
            out,
            delay_ms,
            max_pages,
            min_pages,
            workers,
            filters,
        } => {
            let mut cfg = with_out(&common, out)?;
            set(&mut cfg.crawl.delay_ms, delay_ms);
            set(&mut cfg.crawl.max_pages, max_pages);
            set(&mut cfg.crawl.min_pages_for_inclusion, min_pages);
            set(&mut cfg.crawl.workers, workers);
            if filters.is_some() {
                cfg.paths.url_filters = filters;
            }
            (vec![Stage::Crawl], common, cfg)
        }
        Command::HarvestPdf {
            common,
            out,
            report_urls,
            min_year,
            min_tokens,
            delay_ms,
        } => {
            let mut cfg = with_out(&common, out)?;
            if report_urls.is_some() {
                cfg.paths.report_urls = report_urls;
            }
            set(&mut cfg.harvest.min_year, min_year);
            set(&mut cfg.harvest.min_tokens, min_tokens);
            set(&mut cfg.harvest.delay_ms, delay_ms);
            (vec![Stage::HarvestPdf], common, cfg)
        }
        Command::Structure {
            common,
            out,
            date_seen,
            keywords,
        } => {
            let mut cfg = with_out(&common, out)?;
            if date_seen.is_some() {
                cfg.structure.date_seen = date_seen;
            }
            if keywords.is_some() {
                cfg.paths.keywords = keywords;
            }
            (vec![Stage::Structure], common, cfg)
        }
        Command::Terms {
            common,
            corpus,
            sectors,
            top_k,
            quantile,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            if !sectors.is_empty() {
                cfg.terms.sectors = sectors.into_iter().map(|s| s.trim().to_string()).collect();
            }
            set(&mut cfg.terms.top_k, top_k);
            set(&mut cfg.terms.tfidf_quantile, quantile);
            opts.corpus = corpus;
            opts.output = out;
            (vec![Stage::Terms], common, cfg)
        }
        Command::Dataset {
            common,
            corpus,
            lexicon,
            mode,
            languages,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            if lexicon.is_some() {
                cfg.paths.category_lexicon = lexicon;
            }
            set(&mut cfg.dataset.mode, mode);
            if !languages.is_empty() {
                cfg.dataset.languages = if languages.iter().any(|l| l == "all") {
                    Vec::new()
                } else {
                    languages
                };
            }
            opts.corpus = corpus;
            opts.output = out;
            (vec![Stage::Dataset], common, cfg)
        }
        Command::Vectorize { common, out } => (vec![Stage::Vectorize], common.clone(), with_out(&common, out)?),
        Command::Report { common, out, corpus } => {
            opts.corpus = corpus;
            (vec![Stage::Report], common.clone(), with_out(&common, out)?)
        }
        Command::Run { common, out } => {
            let cfg = with_out(&common, out)?;
            let stages = Stage::ALL
                .into_iter()
                .filter(|s| *s != Stage::Vectorize || !cfg.vectorize.command.is_empty())
                .collect();
            (stages, common, cfg)
        }
    };
    opts.force = common.force;
    Ok((stages, cfg, opts))
}

fn with_out(common: &Common, out: OutDir) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = base_config(common)?;
    if let Some(o) = out.out {
        cfg.paths.out = o;
    }
    Ok(cfg)
}

fn print_outcome(o: &StageOutcome) {
    let m = &o.manifest;
    let counters: Vec<String> = m.counters.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{} {:?} -> {} [{}]",
        o.stage,
        m.status,
        o.manifest_path.display(),
        counters.join(" ")
    );
    for w in &m.warnings {
        println!("  warning: {w}");
    }
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    let (stages, cfg, opts) = plan(cmd)?;
    let pipeline = Pipeline::new(cfg)?;
    for stage in stages {
        let outcome = pipeline.run(stage, &opts)?;
        print_outcome(&outcome);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
