//! Command implementations behind the `ammore` binary: configuration
//! with flag > file > environment > default precedence, provenance
//! headers on every report, and one function per subcommand.
//!
//! Reports never embed timestamps or other ambient state, so a command
//! rerun with identical inputs, configuration, seed, and replay cache
//! produces byte-identical output files.

use crate::bkt::{
    self, default_params, human_labels, lesson_difficulty, mastery_report,
    misclassification_comparison, model_column_labels, simple_mastery_rollup, BktParams,
    MasteryReport, MedianMode, DEFAULT_MASTERY_THRESHOLD,
};
use crate::cascade::{batch_grade, GradedAttempt, GradingEngine, GradingStrategyId};
use crate::dataset::{
    self, build_hard_subset, load_attempts, load_profiles, summarize, AttemptRecord, DateOrder,
    ExclusionList, Grade3,
};
use crate::llm::{
    latency_report, CacheMode, HttpChatClient, LlmEngine, LlmOutcome, ReplayCache,
    DEFAULT_ENDPOINT, DEFAULT_MODEL,
};
use crate::metrics::{
    evaluation_report, gold_labels, reliability_protocol, EvaluationReport, ReliabilityReport,
};
use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

/// Environment variables holding the model credential, in lookup order.
pub const CREDENTIAL_VARS: [&str; 2] = ["AMMORE_API_KEY", "OPENAI_API_KEY"];

/// Fully resolved run configuration. The credential is deliberately not
/// part of this struct: it is read from the environment at client
/// construction and never serialized or hashed.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub demographics: Option<PathBuf>,
    pub exclusions: Option<PathBuf>,
    pub day_first: bool,
    pub strategies: Vec<GradingStrategyId>,
    pub sources: Vec<String>,
    pub endpoint: String,
    pub model: String,
    pub cache_mode: CacheMode,
    pub cache: Option<PathBuf>,
    pub parallelism: usize,
    pub timeout_s: u64,
    pub retries: u32,
    pub bkt_params: BktParams,
    pub mastery_threshold: f64,
    pub runs: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub lesson: Option<String>,
    pub out_dir: PathBuf,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            demographics: None,
            exclusions: None,
            day_first: false,
            strategies: Vec::new(),
            sources: vec!["human".to_string()],
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            cache_mode: CacheMode::Live,
            cache: None,
            parallelism: 4,
            timeout_s: 30,
            retries: 2,
            bkt_params: default_params(),
            mastery_threshold: DEFAULT_MASTERY_THRESHOLD,
            runs: 10,
            sample_size: 100,
            seed: 17,
            lesson: None,
            out_dir: PathBuf::from("out"),
            strict: false,
        }
    }
}

impl RunConfig {
    pub fn date_order(&self) -> DateOrder {
        if self.day_first {
            DateOrder::DayFirst
        } else {
            DateOrder::MonthFirst
        }
    }

    /// Invariants that must hold before any LLM-backed command runs.
    pub fn validate_llm(&self) -> Result<()> {
        match self.cache_mode {
            CacheMode::Replay | CacheMode::Record => {
                if self.cache.is_none() {
                    bail!("cache mode {:?} requires --cache", self.cache_mode);
                }
            }
            CacheMode::Live => {}
        }
        if matches!(self.cache_mode, CacheMode::Live | CacheMode::Record)
            && read_credential().is_none()
        {
            bail!(
                "cache mode {:?} calls the model endpoint; set {} (or {})",
                self.cache_mode,
                CREDENTIAL_VARS[0],
                CREDENTIAL_VARS[1]
            );
        }
        Ok(())
    }
}

fn read_credential() -> Option<String> {
    CREDENTIAL_VARS
        .iter()
        .find_map(|var| std::env::var(var).ok().filter(|v| !v.is_empty()))
}

/// Input hashes attached to every report for auditability.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub dataset_sha256: String,
    pub cache_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut combined = String::new();
        for entry in entries {
            combined.push_str(&entry.file_name().unwrap_or_default().to_string_lossy());
            combined.push(':');
            combined.push_str(&hash_file(&entry)?);
            combined.push('\n');
        }
        Ok(sha256_hex(combined.as_bytes()))
    } else {
        hash_file(path)
    }
}

pub fn provenance(config: &RunConfig) -> Result<Provenance> {
    let config_json = serde_json::to_string(config)?;
    let dataset_sha256 = hash_path(&config.data)?;
    let cache_sha256 = match &config.cache {
        Some(path) if path.exists() => hash_path(path)?,
        _ => "none".to_string(),
    };
    Ok(Provenance {
        config_sha256: sha256_hex(config_json.as_bytes()),
        dataset_sha256,
        cache_sha256,
    })
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: T) -> Result<()> {
    let report = Report { provenance, body };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))
}

fn load_records(config: &RunConfig) -> Result<dataset::LoadOutcome> {
    load_attempts(&config.data, config.date_order())
        .with_context(|| format!("loading {}", config.data.display()))
}

/// Build the LLM backend for the configured cache mode. `cache_path`
/// overrides the configured cache location (used for per-run session
/// files).
pub fn build_llm_engine(config: &RunConfig, cache_path: Option<&Path>) -> Result<LlmEngine> {
    config.validate_llm()?;
    let cache_path = cache_path.or(config.cache.as_deref());
    let client = || -> Result<Arc<HttpChatClient>> {
        Ok(Arc::new(HttpChatClient::with_timeout(
            &config.endpoint,
            read_credential(),
            Duration::from_secs(config.timeout_s),
            config.retries,
        )?))
    };
    match config.cache_mode {
        CacheMode::Live => Ok(LlmEngine::live(client()?, &config.model)),
        CacheMode::Record => {
            let path = cache_path.ok_or_else(|| anyhow!("record mode requires a cache path"))?;
            let cache = Arc::new(ReplayCache::open_record(path)?);
            Ok(LlmEngine::record(client()?, cache, &config.model))
        }
        CacheMode::Replay => {
            let path = cache_path.ok_or_else(|| anyhow!("replay mode requires a cache path"))?;
            let cache = Arc::new(ReplayCache::open_replay(path)?);
            Ok(LlmEngine::replay(cache, &config.model))
        }
    }
}

fn build_engine(config: &RunConfig, needs_llm: bool) -> Result<GradingEngine> {
    if needs_llm {
        Ok(GradingEngine::with_llm(build_llm_engine(config, None)?))
    } else {
        Ok(GradingEngine::rules_only())
    }
}

/// Outcome of `summarize`: the dataset summary plus load diagnostics.
#[derive(Debug, Serialize)]
pub struct SummarizeArtifacts {
    pub summary: dataset::DatasetSummary,
    pub row_error_count: usize,
    pub row_errors: Vec<dataset::RowError>,
    pub warning_count: usize,
    pub demographics_profiles: Option<usize>,
}

pub fn cmd_summarize(config: &RunConfig) -> Result<SummarizeArtifacts> {
    ensure_out_dir(config)?;
    let outcome = load_records(config)?;
    let summary = summarize(&outcome.records);
    let demographics_profiles = match &config.demographics {
        Some(path) => Some(load_profiles(path)?.len()),
        None => None,
    };
    let artifacts = SummarizeArtifacts {
        summary,
        row_error_count: outcome.row_errors.len(),
        row_errors: outcome.row_errors,
        warning_count: outcome.warnings.len(),
        demographics_profiles,
    };
    let prov = provenance(config)?;
    write_json(&config.out_dir.join("summary.json"), &prov, &artifacts)?;
    Ok(artifacts)
}

/// Outcome of `filter-hard`: per-step counts and the output path.
#[derive(Debug, Serialize)]
pub struct FilterArtifacts {
    pub report: dataset::FilterReport,
    pub output: PathBuf,
}

pub fn cmd_filter_hard(config: &RunConfig) -> Result<FilterArtifacts> {
    ensure_out_dir(config)?;
    let outcome = load_records(config)?;
    let exclusions = match &config.exclusions {
        Some(path) => ExclusionList::load(path)?,
        None => ExclusionList::default(),
    };
    let (subset, report) = build_hard_subset(&outcome.records, &exclusions);
    let output = config.out_dir.join("ammore_hard.csv");
    dataset::write_attempts(&output, &subset)?;
    let prov = provenance(config)?;
    write_json(
        &config.out_dir.join("filter_report.json"),
        &prov,
        &report,
    )?;
    Ok(FilterArtifacts { report, output })
}

const GRADED_COLUMNS: [&str; 15] = [
    "lesson",
    "question_number",
    "question_text",
    "expected_answer",
    "student_response",
    "model_grade",
    "human_grade",
    "time",
    "user_id",
    "strategy",
    "predicted_grade",
    "stage_trace",
    "rationale",
    "latency_s",
    "error_flag",
];

fn write_graded(path: &Path, graded: &[GradedAttempt]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(GRADED_COLUMNS)?;
    for g in graded {
        let a = &g.attempt;
        writer.write_record([
            a.lesson.raw.as_str(),
            &a.question_number.to_string(),
            &a.question_text,
            &a.expected_answer,
            &a.student_response,
            &a.model_grade.to_string(),
            &a.human_grade.to_string(),
            &dataset::format_time(&a.time),
            &a.user_id,
            g.strategy.as_str(),
            &g.verdict.label.to_string(),
            &g.stage_trace_text(),
            g.verdict.rationale.as_deref().unwrap_or(""),
            &g.verdict
                .latency_s
                .map(|l| format!("{l}"))
                .unwrap_or_default(),
            if g.error_flag() { "error" } else { "" },
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Outcome of `grade`: the graded file plus latency statistics.
#[derive(Debug, Serialize)]
pub struct GradeArtifacts {
    pub strategy: GradingStrategyId,
    pub graded_count: usize,
    pub error_count: usize,
    pub latency: BTreeMap<String, crate::llm::LatencyStats>,
    pub output: PathBuf,
}

pub fn cmd_grade(config: &RunConfig) -> Result<GradeArtifacts> {
    ensure_out_dir(config)?;
    let strategy = *config
        .strategies
        .first()
        .ok_or_else(|| anyhow!("grade requires a --strategy"))?;
    let outcome = load_records(config)?;
    let engine = build_engine(config, strategy.needs_llm())?;
    let batch = batch_grade(
        strategy,
        &outcome.records,
        config.parallelism,
        &engine,
        None,
    )?;

    let latency_outcomes: Vec<LlmOutcome> = batch
        .graded
        .iter()
        .filter(|g| g.verdict.latency_s.is_some() && !g.error_flag())
        .map(|g| LlmOutcome {
            verdict: g.verdict.clone(),
            raw_completion: String::new(),
            latency_s: g.verdict.latency_s.unwrap_or_default(),
            attempt_count: 1,
            parse_failed: false,
        })
        .collect();

    let output = config
        .out_dir
        .join(format!("graded_{}.csv", strategy.as_str()));
    write_graded(&output, &batch.graded)?;
    let artifacts = GradeArtifacts {
        strategy,
        graded_count: batch.graded.len(),
        error_count: batch.error_count,
        latency: latency_report(&latency_outcomes),
        output,
    };
    let prov = provenance(config)?;
    write_json(&config.out_dir.join("grade_report.json"), &prov, &artifacts)?;
    Ok(artifacts)
}

/// Outcome of `evaluate`: the per-strategy metric table.
#[derive(Debug, Serialize)]
pub struct EvaluateArtifacts {
    pub scored_attempts: usize,
    pub dropped_other: usize,
    pub report: EvaluationReport,
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateArtifacts> {
    ensure_out_dir(config)?;
    if config.strategies.is_empty() {
        bail!("evaluate requires --strategies");
    }
    let outcome = load_records(config)?;
    let total = outcome.records.len();
    // The two-class task scores against binary human labels.
    let records: Vec<AttemptRecord> = outcome
        .records
        .into_iter()
        .filter(|r| r.human_grade != Grade3::Other)
        .collect();
    let dropped_other = total - records.len();
    let gold = gold_labels(&records)?;

    let needs_llm = config.strategies.iter().any(|s| s.needs_llm());
    let engine = build_engine(config, needs_llm)?;

    let mut graded_by_strategy = BTreeMap::new();
    for &strategy in &config.strategies {
        let batch = batch_grade(strategy, &records, config.parallelism, &engine, None)?;
        graded_by_strategy.insert(strategy, batch.graded);
    }
    let report = evaluation_report(&graded_by_strategy, &gold)?;

    let prov = provenance(config)?;
    fs::write(config.out_dir.join("evaluation.txt"), report.render_text())?;
    let artifacts = EvaluateArtifacts {
        scored_attempts: records.len(),
        dropped_other,
        report,
    };
    write_json(&config.out_dir.join("evaluation.json"), &prov, &artifacts)?;
    Ok(artifacts)
}

/// Deterministic sample of `size` records under the configured seed.
/// Human-"other" rows are excluded first (binary gold is required).
pub fn sample_subset(records: &[AttemptRecord], size: usize, seed: u64) -> Vec<AttemptRecord> {
    let mut eligible: Vec<&AttemptRecord> = records
        .iter()
        .filter(|r| r.human_grade != Grade3::Other)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(size);
    eligible.into_iter().cloned().collect()
}

/// Outcome of `reliability`: the per-run and inter-run agreement table.
#[derive(Debug, Serialize)]
pub struct ReliabilityArtifacts {
    pub report: ReliabilityReport,
}

pub fn cmd_reliability(config: &RunConfig) -> Result<ReliabilityArtifacts> {
    ensure_out_dir(config)?;
    if config.runs < 2 {
        bail!("reliability requires --runs of at least 2");
    }
    let strategy = *config
        .strategies
        .first()
        .ok_or_else(|| anyhow!("reliability requires a --strategy"))?;
    if !strategy.needs_llm() {
        bail!("reliability measures repeated model runs; {strategy} is deterministic");
    }
    config.validate_llm()?;

    let outcome = load_records(config)?;
    let subset = sample_subset(&outcome.records, config.sample_size, config.seed);
    if subset.is_empty() {
        bail!("no gradable records to sample");
    }

    // Each run binds to its own session file so recorded runs stay
    // distinguishable; live mode reuses one client.
    let engine_for_run = |run: usize| -> Result<GradingEngine, String> {
        let session_path = config
            .cache
            .as_ref()
            .map(|dir| dir.join(format!("run_{run}.jsonl")));
        let llm = build_llm_engine(config, session_path.as_deref()).map_err(|e| e.to_string())?;
        Ok(GradingEngine::with_llm(llm))
    };

    let report = reliability_protocol(
        strategy,
        &subset,
        config.runs,
        &engine_for_run,
        config.parallelism,
    )?;

    let prov = provenance(config)?;
    fs::write(config.out_dir.join("reliability.txt"), report.render_text())?;
    let artifacts = ReliabilityArtifacts { report };
    write_json(
        &config.out_dir.join("reliability.json"),
        &prov,
        &artifacts,
    )?;
    Ok(artifacts)
}

fn labels_for_source(
    config: &RunConfig,
    source: &str,
    records: &[AttemptRecord],
) -> Result<Vec<bool>> {
    match source {
        "human" => Ok(human_labels(records)),
        "model" => Ok(model_column_labels(records)),
        other => {
            let strategy: GradingStrategyId = other
                .parse()
                .map_err(|e: String| anyhow!("{e} (sources are human, model, or a strategy id)"))?;
            let engine = build_engine(config, strategy.needs_llm())?;
            let batch = batch_grade(strategy, records, config.parallelism, &engine, None)?;
            if batch.error_count > 0 {
                bail!(
                    "{} grading calls failed while labeling with {strategy}",
                    batch.error_count
                );
            }
            Ok(batch
                .graded
                .iter()
                .map(|g| g.verdict.label.is_correct())
                .collect())
        }
    }
}

fn write_mastery_csv(path: &Path, report: &MasteryReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "user_id",
        "lesson_id",
        "grading_source",
        "n_observations",
        "final_score",
        "mastered",
    ])?;
    for entry in &report.entries {
        writer.write_record([
            entry.user_id.as_str(),
            &entry.lesson,
            &entry.source,
            &entry.n_observations.to_string(),
            &format!("{:.6}", entry.final_score),
            if entry.mastered { "true" } else { "false" },
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Table-6-shaped row: one student's final score under each source.
#[derive(Debug, Serialize)]
pub struct LessonScoreRow {
    pub user_id: String,
    pub scores: BTreeMap<String, f64>,
}

/// Outcome of `bkt`: mastery files per source, the misclassification
/// comparison, and lesson difficulty medians.
#[derive(Debug, Serialize)]
pub struct BktArtifacts {
    pub sources: Vec<String>,
    pub comparison: Option<bkt::ComparisonReport>,
    pub lesson_difficulty: Vec<bkt::LessonDifficulty>,
    pub lesson_scores: Option<Vec<LessonScoreRow>>,
}

pub fn cmd_bkt(config: &RunConfig) -> Result<BktArtifacts> {
    ensure_out_dir(config)?;
    if config.sources.is_empty() {
        bail!("bkt requires at least one --sources entry");
    }
    let outcome = load_records(config)?;
    let records = outcome.records;

    let mut reports: Vec<MasteryReport> = Vec::new();
    for source in &config.sources {
        let labels = labels_for_source(config, source, &records)?;
        let report = mastery_report(
            &records,
            &labels,
            source,
            &config.bkt_params,
            config.mastery_threshold,
        )?;
        write_mastery_csv(
            &config.out_dir.join(format!("mastery_{source}.csv")),
            &report,
        )?;
        reports.push(report);
    }

    // The last source is the gold standard; the first two non-gold
    // positions are compared against it.
    let prov = provenance(config)?;
    let comparison = if reports.len() >= 2 {
        let gold = reports.last().expect("non-empty reports");
        let a = &reports[0];
        let b = if reports.len() >= 3 {
            &reports[reports.len() - 2]
        } else {
            &reports[0]
        };
        let comparison = misclassification_comparison(a, b, gold, 1)?;
        write_json(
            &config.out_dir.join("bkt_comparison.json"),
            &prov,
            &comparison,
        )?;
        Some(comparison)
    } else {
        None
    };

    let difficulty = lesson_difficulty(
        &reports.iter().collect::<Vec<_>>(),
        MedianMode::MeanOfMiddle,
    );
    write_json(
        &config.out_dir.join("lesson_difficulty.json"),
        &prov,
        serde_json::json!({ "lessons": &difficulty }),
    )?;

    let lesson_scores = match &config.lesson {
        Some(lesson) => {
            let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
            for report in &reports {
                for entry in report.entries.iter().filter(|e| &e.lesson == lesson) {
                    rows.entry(entry.user_id.clone())
                        .or_default()
                        .insert(entry.source.clone(), entry.final_score);
                }
            }
            let rows: Vec<LessonScoreRow> = rows
                .into_iter()
                .map(|(user_id, scores)| LessonScoreRow { user_id, scores })
                .collect();
            write_json(
                &config.out_dir.join(format!(
                    "lesson_scores_{}.json",
                    lesson.replace('.', "_")
                )),
                &prov,
                serde_json::json!({ "lesson": lesson, "rows": &rows }),
            )?;
            Some(rows)
        }
        None => None,
    };

    Ok(BktArtifacts {
        sources: config.sources.clone(),
        comparison,
        lesson_difficulty: difficulty,
        lesson_scores,
    })
}

/// Outcome of `mastery`: the percentage-threshold rollup.
#[derive(Debug, Serialize)]
pub struct MasteryArtifacts {
    pub rollup: bkt::RollupReport,
}

pub fn cmd_mastery(config: &RunConfig) -> Result<MasteryArtifacts> {
    ensure_out_dir(config)?;
    let source = config
        .sources
        .first()
        .cloned()
        .unwrap_or_else(|| "human".to_string());
    let outcome = load_records(config)?;
    let records = outcome.records;

    let labels: Vec<Option<bool>> = match source.as_str() {
        "human" => records
            .iter()
            .map(|r| match r.human_grade {
                Grade3::Correct => Some(true),
                Grade3::Wrong => Some(false),
                Grade3::Other => None,
            })
            .collect(),
        "model" => records
            .iter()
            .map(|r| match r.model_grade {
                Grade3::Correct => Some(true),
                Grade3::Wrong => Some(false),
                Grade3::Other => None,
            })
            .collect(),
        other => labels_for_source(config, other, &records)?
            .into_iter()
            .map(Some)
            .collect(),
    };

    let rollup = simple_mastery_rollup(&records, &labels, &source)?;
    let prov = provenance(config)?;
    let artifacts = MasteryArtifacts { rollup };
    write_json(
        &config.out_dir.join("mastery_rollup.json"),
        &prov,
        &artifacts,
    )?;
    Ok(artifacts)
}

/// Audit helper: every recorded prompt must be free of the given
/// forbidden substrings (user ids, demographic values).
pub fn audit_prompts_exclude(cache: &ReplayCache, forbidden: &[&str]) -> Result<()> {
    for prompt in cache.prompts() {
        for needle in forbidden {
            if !needle.is_empty() && prompt.contains(needle) {
                bail!("recorded prompt contains forbidden value `{needle}`");
            }
        }
    }
    Ok(())
}
