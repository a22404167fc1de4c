//! One interface over all six grading approaches, plus the combined
//! pipeline that short-circuits from cheap rules to an LLM only when
//! the rules say wrong.

use crate::dataset::AttemptRecord;
use crate::llm::{grade_llm, LlmEngine, LlmError, Strategy};
use crate::normalizer::{
    naive_match, text_process_grade_with, GradingVerdict, TextRules, VerdictLabel,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// The six grading approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingStrategyId {
    NaiveString,
    TextProcessing,
    LlmZeroShot,
    LlmFewShot,
    LlmCot,
    CascadeTextZeroShot,
}

impl GradingStrategyId {
    pub const ALL: [GradingStrategyId; 6] = [
        GradingStrategyId::NaiveString,
        GradingStrategyId::TextProcessing,
        GradingStrategyId::LlmZeroShot,
        GradingStrategyId::LlmFewShot,
        GradingStrategyId::LlmCot,
        GradingStrategyId::CascadeTextZeroShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradingStrategyId::NaiveString => "naive_string",
            GradingStrategyId::TextProcessing => "text_processing",
            GradingStrategyId::LlmZeroShot => "llm_zero_shot",
            GradingStrategyId::LlmFewShot => "llm_few_shot",
            GradingStrategyId::LlmCot => "llm_cot",
            GradingStrategyId::CascadeTextZeroShot => "cascade_text_zero_shot",
        }
    }

    pub fn needs_llm(self) -> bool {
        matches!(
            self,
            GradingStrategyId::LlmZeroShot
                | GradingStrategyId::LlmFewShot
                | GradingStrategyId::LlmCot
                | GradingStrategyId::CascadeTextZeroShot
        )
    }
}

impl fmt::Display for GradingStrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradingStrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_string" => Ok(GradingStrategyId::NaiveString),
            "text_processing" => Ok(GradingStrategyId::TextProcessing),
            "llm_zero_shot" => Ok(GradingStrategyId::LlmZeroShot),
            "llm_few_shot" => Ok(GradingStrategyId::LlmFewShot),
            "llm_cot" => Ok(GradingStrategyId::LlmCot),
            "cascade_text_zero_shot" => Ok(GradingStrategyId::CascadeTextZeroShot),
            other => Err(format!("unknown grading strategy `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("strategy {0} requires an LLM client or replay cache")]
    MissingEngine(GradingStrategyId),
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Outcome of one stage inside a cascade run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: GradingStrategyId,
    pub label: VerdictLabel,
}

/// One attempt graded by one strategy.
#[derive(Debug, Clone, Serialize)]
pub struct GradedAttempt {
    pub attempt: AttemptRecord,
    pub strategy: GradingStrategyId,
    pub verdict: GradingVerdict,
    /// Stages executed for cascade runs, in order; empty otherwise.
    pub stage_trace: Vec<StageResult>,
    /// Set when the verdict is a placeholder for a transport failure;
    /// such rows are excluded from accuracy reports.
    pub error: Option<String>,
}

impl GradedAttempt {
    pub fn error_flag(&self) -> bool {
        self.error.is_some()
    }

    /// Compact `stage:label>stage:label` rendering for tabular output.
    pub fn stage_trace_text(&self) -> String {
        self.stage_trace
            .iter()
            .map(|s| format!("{}:{}", s.stage, s.label))
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// Everything a strategy might need: text rules for the rule stages, an
/// optional LLM engine, and the cascade's configurable LLM stage
/// (zero-shot unless explicitly switched).
pub struct GradingEngine {
    pub rules: TextRules,
    pub llm: Option<LlmEngine>,
    pub cascade_llm_stage: Strategy,
}

impl GradingEngine {
    pub fn rules_only() -> Self {
        GradingEngine {
            rules: TextRules::default(),
            llm: None,
            cascade_llm_stage: Strategy::ZeroShot,
        }
    }

    pub fn with_llm(llm: LlmEngine) -> Self {
        GradingEngine {
            rules: TextRules::default(),
            llm: Some(llm),
            cascade_llm_stage: Strategy::ZeroShot,
        }
    }

    pub fn with_cascade_stage(mut self, stage: Strategy) -> Self {
        self.cascade_llm_stage = stage;
        self
    }

    fn llm(&self, strategy: GradingStrategyId) -> Result<&LlmEngine, CascadeError> {
        self.llm.as_ref().ok_or(CascadeError::MissingEngine(strategy))
    }
}

fn llm_stage_id(strategy: Strategy) -> GradingStrategyId {
    match strategy {
        Strategy::ZeroShot => GradingStrategyId::LlmZeroShot,
        Strategy::FewShot => GradingStrategyId::LlmFewShot,
        Strategy::ChainOfThought => GradingStrategyId::LlmCot,
    }
}

/// Grade one attempt with one strategy. Rule-based strategies never
/// fail; LLM-backed ones propagate transport and cache errors.
pub fn grade(
    strategy: GradingStrategyId,
    attempt: &AttemptRecord,
    engine: &GradingEngine,
) -> Result<GradedAttempt, CascadeError> {
    let verdict = match strategy {
        GradingStrategyId::NaiveString => {
            naive_match(&attempt.expected_answer, &attempt.student_response)
        }
        GradingStrategyId::TextProcessing => text_process_grade_with(
            &engine.rules,
            &attempt.question_text,
            &attempt.expected_answer,
            &attempt.student_response,
        ),
        GradingStrategyId::LlmZeroShot => {
            grade_llm(Strategy::ZeroShot, attempt, engine.llm(strategy)?)?.verdict
        }
        GradingStrategyId::LlmFewShot => {
            grade_llm(Strategy::FewShot, attempt, engine.llm(strategy)?)?.verdict
        }
        GradingStrategyId::LlmCot => {
            grade_llm(Strategy::ChainOfThought, attempt, engine.llm(strategy)?)?.verdict
        }
        GradingStrategyId::CascadeTextZeroShot => return cascade_grade(attempt, engine),
    };
    Ok(GradedAttempt {
        attempt: attempt.clone(),
        strategy,
        verdict,
        stage_trace: Vec::new(),
        error: None,
    })
}

/// The combined pipeline: naive matching, then text processing, then an
/// LLM stage, stopping at the first stage that accepts the answer. The
/// LLM is only consulted when both rule stages said wrong.
pub fn cascade_grade(
    attempt: &AttemptRecord,
    engine: &GradingEngine,
) -> Result<GradedAttempt, CascadeError> {
    let mut trace = Vec::new();

    let naive = naive_match(&attempt.expected_answer, &attempt.student_response);
    trace.push(StageResult {
        stage: GradingStrategyId::NaiveString,
        label: naive.label,
    });
    if naive.label.is_correct() {
        return Ok(finish_cascade(attempt, naive, trace));
    }

    let text = text_process_grade_with(
        &engine.rules,
        &attempt.question_text,
        &attempt.expected_answer,
        &attempt.student_response,
    );
    trace.push(StageResult {
        stage: GradingStrategyId::TextProcessing,
        label: text.label,
    });
    if text.label.is_correct() {
        return Ok(finish_cascade(attempt, text, trace));
    }

    let stage = engine.cascade_llm_stage;
    let llm_engine = engine.llm(GradingStrategyId::CascadeTextZeroShot)?;
    let outcome = grade_llm(stage, attempt, llm_engine)?;
    trace.push(StageResult {
        stage: llm_stage_id(stage),
        label: outcome.verdict.label,
    });
    Ok(finish_cascade(attempt, outcome.verdict, trace))
}

fn finish_cascade(
    attempt: &AttemptRecord,
    stage_verdict: GradingVerdict,
    trace: Vec<StageResult>,
) -> GradedAttempt {
    let verdict = GradingVerdict {
        label: stage_verdict.label,
        strategy: GradingStrategyId::CascadeTextZeroShot.as_str().to_string(),
        rationale: stage_verdict.rationale,
        latency_s: stage_verdict.latency_s,
    };
    GradedAttempt {
        attempt: attempt.clone(),
        strategy: GradingStrategyId::CascadeTextZeroShot,
        verdict,
        stage_trace: trace,
        error: None,
    }
}

/// Called with (completed, total) as batch items finish.
pub type ProgressFn<'a> = dyn Fn(usize, usize) + Sync + 'a;

/// Result of grading a batch. Attempts that hit an LLM failure carry a
/// wrong_answer placeholder verdict with the error recorded, so partial
/// outages never abort the batch.
pub struct BatchOutcome {
    pub graded: Vec<GradedAttempt>,
    pub error_count: usize,
}

/// Grade a batch with bounded parallelism. Output order equals input
/// order regardless of the worker count.
pub fn batch_grade(
    strategy: GradingStrategyId,
    attempts: &[AttemptRecord],
    parallelism: usize,
    engine: &GradingEngine,
    progress: Option<&ProgressFn<'_>>,
) -> Result<BatchOutcome, CascadeError> {
    if parallelism == 0 {
        return Err(CascadeError::InvalidParallelism);
    }
    if strategy.needs_llm() && engine.llm.is_none() {
        return Err(CascadeError::MissingEngine(strategy));
    }

    let total = attempts.len();
    let slots: Vec<Mutex<Option<GradedAttempt>>> =
        (0..total).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let workers = parallelism.min(total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= total {
                    break;
                }
                let attempt = &attempts[index];
                let graded = match grade(strategy, attempt, engine) {
                    Ok(g) => g,
                    Err(e) => GradedAttempt {
                        attempt: attempt.clone(),
                        strategy,
                        verdict: GradingVerdict::new(VerdictLabel::WrongAnswer, strategy.as_str()),
                        stage_trace: Vec::new(),
                        error: Some(e.to_string()),
                    },
                };
                *slots[index].lock().unwrap() = Some(graded);
                let done = completed.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(report) = progress {
                    report(done, total);
                }
            });
        }
    });

    let graded: Vec<GradedAttempt> = slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("batch slot filled"))
        .collect();
    let error_count = graded.iter().filter(|g| g.error_flag()).count();
    Ok(BatchOutcome { graded, error_count })
}
