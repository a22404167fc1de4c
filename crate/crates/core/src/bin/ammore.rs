//! Command-line entry point. Configuration precedence is command-line
//! flags, then the optional TOML config file, then `AMMORE_*`
//! environment variables, then built-in defaults (which mirror the
//! published protocol: temperature 0, 10 runs of 100 items, the default
//! BKT parameters, mastery threshold 0.9).

use ammore::bkt::BktParams;
use ammore::cascade::GradingStrategyId;
use ammore::cli::{
    cmd_bkt, cmd_evaluate, cmd_filter_hard, cmd_grade, cmd_mastery, cmd_reliability,
    cmd_summarize, RunConfig,
};
use ammore::llm::CacheMode;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ammore",
    version,
    about = "Grade open-response math answers and trace the effect on mastery estimates"
)]
struct Cli {
    /// TOML configuration file (flags override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Answer log (.csv, .tsv, or .jsonl).
    #[arg(long)]
    data: Option<PathBuf>,

    /// Parse timestamps day-first instead of month-first.
    #[arg(long)]
    day_first: bool,

    /// Output directory for reports.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Exit nonzero when a report carries degeneracy flags.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Default)]
struct LlmArgs {
    /// Chat-completion endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,

    /// Model name sent with each request.
    #[arg(long)]
    model: Option<String>,

    /// live, record, or replay.
    #[arg(long)]
    cache_mode: Option<CacheMode>,

    /// Replay cache file (or directory for reliability runs).
    #[arg(long)]
    cache: Option<PathBuf>,

    /// Maximum concurrent grading calls.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args, Default)]
struct BktArgs {
    /// Initial knowledge probability P(L0).
    #[arg(long)]
    p_init: Option<f64>,

    /// Learning probability P(T).
    #[arg(long)]
    p_learn: Option<f64>,

    /// Slip probability P(S).
    #[arg(long)]
    p_slip: Option<f64>,

    /// Guess probability P(G).
    #[arg(long)]
    p_guess: Option<f64>,

    /// Mastery threshold on the final knowledge probability.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Count answers, grades, students, lessons, and skills.
    Summarize {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional demographics file to validate and count.
        #[arg(long)]
        demographics: Option<PathBuf>,
    },
    /// Produce the hard-to-grade subset file.
    FilterHard {
        #[command(flatten)]
        common: CommonArgs,
        /// Exclusion list of `lesson_id,question_number` lines.
        #[arg(long)]
        exclusions: Option<PathBuf>,
    },
    /// Grade every row with one strategy.
    Grade {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Grading strategy id.
        #[arg(long)]
        strategy: GradingStrategyId,
    },
    /// Score strategies against human labels (metric table).
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Comma-separated strategy ids.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<GradingStrategyId>,
    },
    /// Rerun an LLM strategy and measure inter-run agreement.
    Reliability {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// LLM strategy id to rerun.
        #[arg(long)]
        strategy: GradingStrategyId,
        /// Number of repeated runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Subset size sampled from the data.
        #[arg(long)]
        sample: Option<usize>,
        /// Seed for subset sampling.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Knowledge tracing: mastery, misclassification, lesson difficulty.
    Bkt {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        llm: LlmArgs,
        #[command(flatten)]
        bkt: BktArgs,
        /// Grading sources, gold last (human, model, or strategy ids).
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        /// Emit per-student scores for this lesson id.
        #[arg(long)]
        lesson: Option<String>,
    },
    /// Percentage-threshold mastery rollup.
    Mastery {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Grading source (human, model, or a strategy id).
        #[arg(long)]
        source: Option<String>,
    },
}

/// Optional TOML file mirroring the flag names.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    demographics: Option<PathBuf>,
    exclusions: Option<PathBuf>,
    day_first: Option<bool>,
    endpoint: Option<String>,
    model: Option<String>,
    cache_mode: Option<String>,
    cache: Option<PathBuf>,
    parallelism: Option<usize>,
    timeout_s: Option<u64>,
    retries: Option<u32>,
    bkt: Option<BktParams>,
    threshold: Option<f64>,
    runs: Option<usize>,
    sample: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    strict: Option<bool>,
    sources: Option<Vec<String>>,
}

struct EnvConfig {
    endpoint: Option<String>,
    model: Option<String>,
    cache: Option<PathBuf>,
    cache_mode: Option<String>,
    out: Option<PathBuf>,
    parallelism: Option<usize>,
}

impl EnvConfig {
    fn read() -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        EnvConfig {
            endpoint: var("AMMORE_ENDPOINT"),
            model: var("AMMORE_MODEL"),
            cache: var("AMMORE_CACHE").map(PathBuf::from),
            cache_mode: var("AMMORE_CACHE_MODE"),
            out: var("AMMORE_OUT").map(PathBuf::from),
            parallelism: var("AMMORE_PARALLELISM").and_then(|v| v.parse().ok()),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, env: Option<T>, default: T) -> T {
    flag.or(file).or(env).unwrap_or(default)
}

fn parse_cache_mode(text: Option<String>) -> Result<Option<CacheMode>> {
    text.map(|t| t.parse::<CacheMode>().map_err(|e| anyhow::anyhow!(e)))
        .transpose()
}

fn resolve(
    common: &CommonArgs,
    llm: Option<&LlmArgs>,
    bkt: Option<&BktArgs>,
    file: FileConfig,
    env: EnvConfig,
) -> Result<RunConfig> {
    let defaults = RunConfig::default();
    let llm_default = LlmArgs::default();
    let llm = llm.unwrap_or(&llm_default);

    let data = common
        .data
        .clone()
        .or(file.data)
        .context("--data is required (or set `data` in the config file)")?;

    let file_cache_mode = parse_cache_mode(file.cache_mode)?;
    let env_cache_mode = parse_cache_mode(env.cache_mode)?;

    let bkt_params = match bkt {
        Some(args) => {
            let base = file.bkt.unwrap_or(defaults.bkt_params);
            BktParams::new(
                args.p_init.unwrap_or(base.p_init),
                args.p_learn.unwrap_or(base.p_learn),
                args.p_slip.unwrap_or(base.p_slip),
                args.p_guess.unwrap_or(base.p_guess),
            )?
        }
        None => file.bkt.unwrap_or(defaults.bkt_params),
    };

    Ok(RunConfig {
        data,
        demographics: file.demographics,
        exclusions: file.exclusions,
        day_first: common.day_first || file.day_first.unwrap_or(false),
        strategies: Vec::new(),
        sources: file.sources.unwrap_or(defaults.sources),
        endpoint: pick(llm.endpoint.clone(), file.endpoint, env.endpoint, defaults.endpoint),
        model: pick(llm.model.clone(), file.model, env.model, defaults.model),
        cache_mode: pick(llm.cache_mode, file_cache_mode, env_cache_mode, defaults.cache_mode),
        cache: llm.cache.clone().or(file.cache).or(env.cache),
        parallelism: pick(llm.parallelism, file.parallelism, env.parallelism, defaults.parallelism),
        timeout_s: file.timeout_s.unwrap_or(defaults.timeout_s),
        retries: file.retries.unwrap_or(defaults.retries),
        bkt_params,
        mastery_threshold: bkt
            .and_then(|b| b.threshold)
            .or(file.threshold)
            .unwrap_or(defaults.mastery_threshold),
        runs: file.runs.unwrap_or(defaults.runs),
        sample_size: file.sample.unwrap_or(defaults.sample_size),
        seed: file.seed.unwrap_or(defaults.seed),
        lesson: None,
        out_dir: pick(common.out.clone(), file.out, env.out, defaults.out_dir),
        strict: common.strict || file.strict.unwrap_or(false),
    })
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
        }
        None => Ok(FileConfig::default()),
    }
}

fn run() -> Result<u8> {
    let cli = Cli::parse();
    let file = load_file_config(cli.config.as_ref())?;
    let env = EnvConfig::read();

    match cli.command {
        Command::Summarize { common, demographics } => {
            let mut config = resolve(&common, None, None, file, env)?;
            if demographics.is_some() {
                config.demographics = demographics;
            }
            let artifacts = cmd_summarize(&config)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.summary)?);
            if artifacts.row_error_count > 0 {
                eprintln!("{} row(s) failed validation", artifacts.row_error_count);
                return Ok(2);
            }
            Ok(0)
        }
        Command::FilterHard { common, exclusions } => {
            let mut config = resolve(&common, None, None, file, env)?;
            if exclusions.is_some() {
                config.exclusions = exclusions;
            }
            let artifacts = cmd_filter_hard(&config)?;
            println!(
                "{} of {} rows kept -> {}",
                artifacts.report.after_exclusions,
                artifacts.report.input,
                artifacts.output.display()
            );
            Ok(0)
        }
        Command::Grade { common, llm, strategy } => {
            let mut config = resolve(&common, Some(&llm), None, file, env)?;
            config.strategies = vec![strategy];
            let artifacts = cmd_grade(&config)?;
            println!(
                "graded {} rows with {} ({} errors) -> {}",
                artifacts.graded_count,
                artifacts.strategy,
                artifacts.error_count,
                artifacts.output.display()
            );
            Ok(0)
        }
        Command::Evaluate { common, llm, strategies } => {
            let strict = common.strict;
            let mut config = resolve(&common, Some(&llm), None, file, env)?;
            if strategies.is_empty() {
                bail!("evaluate requires --strategies");
            }
            config.strategies = strategies;
            let artifacts = cmd_evaluate(&config)?;
            print!("{}", artifacts.report.render_text());
            if strict && artifacts.report.has_degenerate() {
                eprintln!("degenerate metric denominators present");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Reliability { common, llm, strategy, runs, sample, seed } => {
            let mut config = resolve(&common, Some(&llm), None, file, env)?;
            config.strategies = vec![strategy];
            if let Some(runs) = runs {
                config.runs = runs;
            }
            if let Some(sample) = sample {
                config.sample_size = sample;
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let artifacts = cmd_reliability(&config)?;
            print!("{}", artifacts.report.render_text());
            Ok(0)
        }
        Command::Bkt { common, llm, bkt, sources, lesson } => {
            let mut config = resolve(&common, Some(&llm), Some(&bkt), file, env)?;
            if !sources.is_empty() {
                config.sources = sources;
            }
            config.lesson = lesson;
            let artifacts = cmd_bkt(&config)?;
            if let Some(comparison) = &artifacts.comparison {
                println!("{}", serde_json::to_string_pretty(comparison)?);
            } else {
                println!("mastery reports written for {:?}", artifacts.sources);
            }
            Ok(0)
        }
        Command::Mastery { common, llm, source } => {
            let mut config = resolve(&common, Some(&llm), None, file, env)?;
            if let Some(source) = source {
                config.sources = vec![source];
            }
            let artifacts = cmd_mastery(&config)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.rollup)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
