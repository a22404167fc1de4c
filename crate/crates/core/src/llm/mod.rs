//! LLM-backed grading: prompt construction, completion transport with
//! record/replay, verdict parsing, and latency capture.

mod client;
mod prompts;
mod replay;

pub use client::{
    ChatCompletionClient, CompletionRequest, HttpChatClient, DEFAULT_ENDPOINT, DEFAULT_MODEL,
    DEFAULT_TIMEOUT,
};
pub use prompts::{
    build_prompt, PromptRequest, Strategy, CHAIN_OF_THOUGHT_TEMPLATE, FEW_SHOT_TEMPLATE,
    PROMPT_VERSION, ZERO_SHOT_TEMPLATE,
};
pub use replay::{fingerprint, CacheEntry, CacheMode, ReplayCache};

use crate::dataset::AttemptRecord;
use crate::normalizer::{GradingVerdict, VerdictLabel};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP status {0}")]
    Http(u16),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("replay cache miss for fingerprint {0}")]
    CacheMiss(String),
    #[error("completion could not be parsed as a verdict: `{0}`")]
    UnparseableVerdict(String),
    #[error("no client configured for live or record mode")]
    MissingClient,
    #[error("no replay cache configured for {0:?} mode")]
    MissingCache(CacheMode),
}

/// Result of one LLM grading call.
#[derive(Debug, Clone, Serialize)]
pub struct LlmOutcome {
    pub verdict: GradingVerdict,
    pub raw_completion: String,
    /// Wall-clock seconds for the completion call (recorded latency
    /// when served from a replay cache).
    pub latency_s: f64,
    pub attempt_count: u32,
    /// True when no attempt produced a parseable verdict and the
    /// outcome was recorded as wrong_answer by the fallback rule.
    pub parse_failed: bool,
}

/// Parse a bare yes/no completion from the zero-shot or few-shot
/// prompt. The leading token is matched case-insensitively with
/// trailing punctuation tolerated; anything else is unparseable.
pub fn parse_binary_verdict(completion: &str) -> Result<GradingVerdict, LlmError> {
    let first = completion
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_end_matches(['.', ',', '!', ';', ':'])
        .to_lowercase();
    let label = match first.as_str() {
        "yes" => VerdictLabel::CorrectAnswer,
        "no" => VerdictLabel::WrongAnswer,
        _ => return Err(LlmError::UnparseableVerdict(truncate(completion))),
    };
    Ok(GradingVerdict::new(label, "llm_binary"))
}

/// Parse a chain-of-thought completion: the verdict is the final
/// `correct_answer`/`wrong_answer` token after the last `Answer:`
/// marker (falling back to the last occurrence anywhere), and
/// everything before the marker is kept as the rationale.
pub fn parse_cot_verdict(completion: &str) -> Result<GradingVerdict, LlmError> {
    const MARKER: &str = "Answer:";
    let (rationale_end, region_start) = match completion.rfind(MARKER) {
        Some(pos) => (pos, pos + MARKER.len()),
        None => (0, 0),
    };
    let mut region = &completion[region_start..];
    let mut rationale_cut = rationale_end;
    let label = match last_label_token(region) {
        Some(label) => label,
        None => {
            // Marker present but no label after it: fall back to the
            // whole completion.
            region = completion;
            match last_label_token(region) {
                Some(label) => {
                    rationale_cut = completion.rfind(label_token(label)).unwrap_or(0);
                    label
                }
                None => return Err(LlmError::UnparseableVerdict(truncate(completion))),
            }
        }
    };
    let rationale = completion[..rationale_cut].trim().to_string();
    let mut verdict = GradingVerdict::new(label, "llm_cot");
    if !rationale.is_empty() {
        verdict = verdict.with_rationale(rationale);
    }
    Ok(verdict)
}

fn label_token(label: VerdictLabel) -> &'static str {
    match label {
        VerdictLabel::CorrectAnswer => "correct_answer",
        VerdictLabel::WrongAnswer => "wrong_answer",
    }
}

fn last_label_token(text: &str) -> Option<VerdictLabel> {
    let correct = text.rfind("correct_answer");
    let wrong = text.rfind("wrong_answer");
    // "correct_answer" never contains "wrong_answer" and vice versa,
    // but "incorrect_answer"-style text would match the longer token
    // first; compare positions to pick the later occurrence.
    match (correct, wrong) {
        (Some(c), Some(w)) => Some(if c > w {
            VerdictLabel::CorrectAnswer
        } else {
            VerdictLabel::WrongAnswer
        }),
        (Some(_), None) => Some(VerdictLabel::CorrectAnswer),
        (None, Some(_)) => Some(VerdictLabel::WrongAnswer),
        (None, None) => None,
    }
}

fn truncate(completion: &str) -> String {
    const LIMIT: usize = 120;
    if completion.chars().count() <= LIMIT {
        completion.to_string()
    } else {
        let cut: String = completion.chars().take(LIMIT).collect();
        format!("{cut}...")
    }
}

/// A configured grading backend: a transport, an optional cache, and
/// the mode tying them together.
#[derive(Clone)]
pub struct LlmEngine {
    client: Option<Arc<dyn ChatCompletionClient>>,
    cache: Option<Arc<ReplayCache>>,
    mode: CacheMode,
    model: String,
}

impl LlmEngine {
    pub fn live(client: Arc<dyn ChatCompletionClient>, model: &str) -> Self {
        LlmEngine {
            client: Some(client),
            cache: None,
            mode: CacheMode::Live,
            model: model.to_string(),
        }
    }

    pub fn record(
        client: Arc<dyn ChatCompletionClient>,
        cache: Arc<ReplayCache>,
        model: &str,
    ) -> Self {
        LlmEngine {
            client: Some(client),
            cache: Some(cache),
            mode: CacheMode::Record,
            model: model.to_string(),
        }
    }

    pub fn replay(cache: Arc<ReplayCache>, model: &str) -> Self {
        LlmEngine {
            client: None,
            cache: None,
            mode: CacheMode::Replay,
            model: model.to_string(),
        }
        .with_cache(cache)
    }

    fn with_cache(mut self, cache: Arc<ReplayCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn cache(&self) -> Option<&Arc<ReplayCache>> {
        self.cache.as_ref()
    }

    /// Obtain a completion for a prompt, honouring the cache mode.
    /// Returns the completion text and its latency in seconds.
    fn complete(&self, strategy: Strategy, prompt: &str) -> Result<(String, f64), LlmError> {
        let fp = fingerprint(strategy.as_str(), prompt, &self.model);
        match self.mode {
            CacheMode::Replay => {
                let cache = self.cache.as_ref().ok_or(LlmError::MissingCache(self.mode))?;
                let entry = cache.lookup(&fp).ok_or(LlmError::CacheMiss(fp))?;
                Ok((entry.completion, entry.recorded_latency))
            }
            CacheMode::Record => {
                let cache = self.cache.as_ref().ok_or(LlmError::MissingCache(self.mode))?;
                if let Some(entry) = cache.lookup(&fp) {
                    return Ok((entry.completion, entry.recorded_latency));
                }
                let (completion, latency) = self.call_live(prompt)?;
                cache.insert(CacheEntry {
                    fingerprint: fp,
                    strategy: strategy.as_str().to_string(),
                    prompt: prompt.to_string(),
                    completion: completion.clone(),
                    recorded_latency: latency,
                })?;
                Ok((completion, latency))
            }
            CacheMode::Live => self.call_live(prompt),
        }
    }

    /// Re-request a completion, bypassing any cached entry and
    /// overwriting it with the fresh result. Used by the
    /// retry-on-unparseable path.
    fn complete_fresh(&self, strategy: Strategy, prompt: &str) -> Result<(String, f64), LlmError> {
        let (completion, latency) = self.call_live(prompt)?;
        if self.mode == CacheMode::Record {
            if let Some(cache) = &self.cache {
                cache.insert(CacheEntry {
                    fingerprint: fingerprint(strategy.as_str(), prompt, &self.model),
                    strategy: strategy.as_str().to_string(),
                    prompt: prompt.to_string(),
                    completion: completion.clone(),
                    recorded_latency: latency,
                })?;
            }
        }
        Ok((completion, latency))
    }

    fn call_live(&self, prompt: &str) -> Result<(String, f64), LlmError> {
        let client = self.client.as_ref().ok_or(LlmError::MissingClient)?;
        let started = Instant::now();
        let completion = client.complete(&CompletionRequest {
            model: &self.model,
            prompt,
            temperature: 0.0,
        })?;
        Ok((completion, started.elapsed().as_secs_f64()))
    }
}

fn parse_for_strategy(strategy: Strategy, completion: &str) -> Result<GradingVerdict, LlmError> {
    match strategy {
        Strategy::ZeroShot | Strategy::FewShot => parse_binary_verdict(completion),
        Strategy::ChainOfThought => parse_cot_verdict(completion),
    }
}

/// Grade one attempt with an LLM strategy. An unparseable completion is
/// retried once (live and record modes only; replay is deterministic),
/// after which the outcome is recorded as wrong_answer with the
/// parse-failure flag set so a flaky model cannot inflate correct
/// counts.
pub fn grade_llm(
    strategy: Strategy,
    attempt: &AttemptRecord,
    engine: &LlmEngine,
) -> Result<LlmOutcome, LlmError> {
    let prompt = build_prompt(
        strategy,
        &attempt.question_text,
        &attempt.expected_answer,
        &attempt.student_response,
    );

    let (mut completion, mut latency) = engine.complete(strategy, &prompt)?;
    let mut attempts = 1u32;
    let strategy_id = strategy_verdict_id(strategy);

    loop {
        match parse_for_strategy(strategy, &completion) {
            Ok(mut verdict) => {
                verdict.strategy = strategy_id.to_string();
                verdict.latency_s = Some(latency);
                return Ok(LlmOutcome {
                    verdict,
                    raw_completion: completion,
                    latency_s: latency,
                    attempt_count: attempts,
                    parse_failed: false,
                });
            }
            Err(LlmError::UnparseableVerdict(_)) if attempts < 2 && engine.mode != CacheMode::Replay => {
                let (fresh, fresh_latency) = engine.complete_fresh(strategy, &prompt)?;
                completion = fresh;
                latency = fresh_latency;
                attempts += 1;
            }
            Err(LlmError::UnparseableVerdict(_)) => {
                let mut verdict = GradingVerdict::new(VerdictLabel::WrongAnswer, strategy_id);
                verdict.latency_s = Some(latency);
                verdict.rationale = Some("unparseable completion".to_string());
                return Ok(LlmOutcome {
                    verdict,
                    raw_completion: completion,
                    latency_s: latency,
                    attempt_count: attempts,
                    parse_failed: true,
                });
            }
            Err(other) => return Err(other),
        }
    }
}

fn strategy_verdict_id(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::ZeroShot => "llm_zero_shot",
        Strategy::FewShot => "llm_few_shot",
        Strategy::ChainOfThought => "llm_cot",
    }
}

/// Per-strategy latency statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_s: f64,
    pub max_s: f64,
}

/// Mean and maximum completion latency grouped by the verdict's
/// strategy id. Strategies with no outcomes are simply absent.
pub fn latency_report(outcomes: &[LlmOutcome]) -> BTreeMap<String, LatencyStats> {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for outcome in outcomes {
        grouped
            .entry(outcome.verdict.strategy.clone())
            .or_default()
            .push(outcome.latency_s);
    }
    grouped
        .into_iter()
        .map(|(strategy, latencies)| {
            let count = latencies.len();
            let mean_s = latencies.iter().sum::<f64>() / count as f64;
            let max_s = latencies.iter().cloned().fold(f64::MIN, f64::max);
            (strategy, LatencyStats { count, mean_s, max_s })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Grade3, LessonId};
    use chrono::NaiveDate;

    pub(crate) fn sample_attempt() -> AttemptRecord {
        AttemptRecord {
            lesson: LessonId::parse("G9.N5.2.1.1").unwrap(),
            question_number: 2,
            question_text: "3^2 + 3^1 = __".to_string(),
            expected_answer: "12".to_string(),
            student_response: "=6+6 =12".to_string(),
            model_grade: Grade3::Wrong,
            human_grade: Grade3::Correct,
            time: NaiveDate::from_ymd_opt(2024, 1, 9)
                .unwrap()
                .and_hms_opt(7, 57, 0)
                .unwrap(),
            user_id: "17".to_string(),
        }
    }

    struct ScriptedClient {
        completions: std::sync::Mutex<Vec<String>>,
    }

    impl ScriptedClient {
        fn new(completions: &[&str]) -> Self {
            ScriptedClient {
                completions: std::sync::Mutex::new(
                    completions.iter().rev().map(|s| s.to_string()).collect(),
                ),
            }
        }
    }

    impl ChatCompletionClient for ScriptedClient {
        fn complete(&self, _request: &CompletionRequest<'_>) -> Result<String, LlmError> {
            self.completions
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| LlmError::Transport("script exhausted".to_string()))
        }
    }

    #[test]
    fn binary_verdict_tolerance() {
        assert_eq!(
            parse_binary_verdict("yes").unwrap().label,
            VerdictLabel::CorrectAnswer
        );
        assert_eq!(
            parse_binary_verdict("No.").unwrap().label,
            VerdictLabel::WrongAnswer
        );
        assert_eq!(
            parse_binary_verdict("YES, equivalent").unwrap().label,
            VerdictLabel::CorrectAnswer
        );
        assert!(matches!(
            parse_binary_verdict("the answer is maybe"),
            Err(LlmError::UnparseableVerdict(_))
        ));
        assert!(parse_binary_verdict("").is_err());
    }

    #[test]
    fn cot_verdict_extraction() {
        let completion = "Reasoning: the student's value is wrong.\n\nAnswer: wrong_answer";
        let verdict = parse_cot_verdict(completion).unwrap();
        assert_eq!(verdict.label, VerdictLabel::WrongAnswer);
        assert_eq!(
            verdict.rationale.as_deref(),
            Some("Reasoning: the student's value is wrong.")
        );

        let bare = parse_cot_verdict("Answer: correct_answer").unwrap();
        assert_eq!(bare.label, VerdictLabel::CorrectAnswer);
        assert_eq!(bare.rationale, None);

        // Both tokens present: the last one wins.
        let both = parse_cot_verdict(
            "Answer: correct_answer would be wrong here, so wrong_answer",
        )
        .unwrap();
        assert_eq!(both.label, VerdictLabel::WrongAnswer);

        assert!(parse_cot_verdict("no label at all").is_err());
    }

    #[test]
    fn cot_last_token_positions_match_scan_oracle() {
        // Oracle: scan every index for token starts and take the max.
        let completion = "wrong_answer then correct_answer then wrong_answer";
        let mut last = None;
        for (i, _) in completion.char_indices() {
            if completion[i..].starts_with("correct_answer") {
                last = Some((i, VerdictLabel::CorrectAnswer));
            }
            if completion[i..].starts_with("wrong_answer") {
                last = Some((i, VerdictLabel::WrongAnswer));
            }
        }
        let expected = last.unwrap().1;
        assert_eq!(parse_cot_verdict(completion).unwrap().label, expected);
    }

    #[test]
    fn replay_serves_without_network() {
        let attempt = sample_attempt();
        let prompt = build_prompt(Strategy::ZeroShot, &attempt.question_text, "12", "=6+6 =12");
        let cache = ReplayCache::in_memory();
        cache
            .insert(CacheEntry {
                fingerprint: fingerprint("zero_shot", &prompt, "gpt-4o"),
                strategy: "zero_shot".to_string(),
                prompt,
                completion: "yes".to_string(),
                recorded_latency: 0.25,
            })
            .unwrap();
        let engine = LlmEngine::replay(Arc::new(cache), "gpt-4o");
        let outcome = grade_llm(Strategy::ZeroShot, &attempt, &engine).unwrap();
        assert_eq!(outcome.verdict.label, VerdictLabel::CorrectAnswer);
        assert_eq!(outcome.latency_s, 0.25);
        assert!(!outcome.parse_failed);
    }

    #[test]
    fn replay_miss_is_an_error() {
        let engine = LlmEngine::replay(Arc::new(ReplayCache::in_memory()), "gpt-4o");
        let err = grade_llm(Strategy::ZeroShot, &sample_attempt(), &engine).unwrap_err();
        assert!(matches!(err, LlmError::CacheMiss(_)));
    }

    #[test]
    fn unparseable_retries_once_then_flags() {
        let client = Arc::new(ScriptedClient::new(&["gibberish", "also gibberish"]));
        let engine = LlmEngine::live(client, "gpt-4o");
        let outcome = grade_llm(Strategy::ZeroShot, &sample_attempt(), &engine).unwrap();
        assert!(outcome.parse_failed);
        assert_eq!(outcome.attempt_count, 2);
        assert_eq!(outcome.verdict.label, VerdictLabel::WrongAnswer);

        let client = Arc::new(ScriptedClient::new(&["hmm", "no"]));
        let engine = LlmEngine::live(client, "gpt-4o");
        let outcome = grade_llm(Strategy::ZeroShot, &sample_attempt(), &engine).unwrap();
        assert!(!outcome.parse_failed);
        assert_eq!(outcome.attempt_count, 2);
    }

    #[test]
    fn record_mode_fills_cache_for_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let attempt = sample_attempt();
        {
            let client = Arc::new(ScriptedClient::new(&["yes"]));
            let cache = Arc::new(ReplayCache::open_record(&path).unwrap());
            let engine = LlmEngine::record(client, cache, "gpt-4o");
            let outcome = grade_llm(Strategy::ZeroShot, &attempt, &engine).unwrap();
            assert_eq!(outcome.verdict.label, VerdictLabel::CorrectAnswer);
        }
        let cache = Arc::new(ReplayCache::open_replay(&path).unwrap());
        let engine = LlmEngine::replay(cache, "gpt-4o");
        let outcome = grade_llm(Strategy::ZeroShot, &attempt, &engine).unwrap();
        assert_eq!(outcome.verdict.label, VerdictLabel::CorrectAnswer);
    }

    #[test]
    fn latency_report_means_and_maxima() {
        let mk = |strategy: &str, latency: f64| LlmOutcome {
            verdict: GradingVerdict {
                label: VerdictLabel::CorrectAnswer,
                strategy: strategy.to_string(),
                rationale: None,
                latency_s: Some(latency),
            },
            raw_completion: "yes".to_string(),
            latency_s: latency,
            attempt_count: 1,
            parse_failed: false,
        };
        let outcomes = vec![
            mk("llm_zero_shot", 1.0),
            mk("llm_zero_shot", 2.0),
            mk("llm_zero_shot", 3.0),
            mk("llm_cot", 1.0),
        ];
        let report = latency_report(&outcomes);
        let zs = &report["llm_zero_shot"];
        assert_eq!(zs.mean_s, 2.0);
        assert_eq!(zs.max_s, 3.0);
        let cot = &report["llm_cot"];
        assert_eq!(cot.mean_s, 1.0);
        assert_eq!(cot.max_s, 1.0);
        assert!(!report.contains_key("llm_few_shot"));
    }

    #[test]
    fn prompts_never_contain_profile_fields() {
        let mut attempt = sample_attempt();
        attempt.user_id = "USER-SENTINEL-9912".to_string();
        for strategy in [Strategy::ZeroShot, Strategy::FewShot, Strategy::ChainOfThought] {
            let prompt = build_prompt(
                strategy,
                &attempt.question_text,
                &attempt.expected_answer,
                &attempt.student_response,
            );
            assert!(!prompt.contains("USER-SENTINEL-9912"));
        }
    }
}
