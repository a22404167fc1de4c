//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

use ammore::dataset::{AttemptRecord, DateOrder, Grade3, LessonId};
use ammore::llm::{
    build_prompt, fingerprint, CacheEntry, ChatCompletionClient, CompletionRequest, LlmError,
    ReplayCache, Strategy,
};
use chrono::{NaiveDate, NaiveDateTime};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn resource_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("resources")
        .join(name)
}

pub fn minute(offset: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 9)
        .unwrap()
        .and_hms_opt(7 + offset / 60, offset % 60, 0)
        .unwrap()
}

#[allow(clippy::too_many_arguments)]
pub fn attempt(
    lesson: &str,
    question_number: u32,
    question: &str,
    expected: &str,
    student: &str,
    human: Grade3,
    user: &str,
    time_offset: u32,
) -> AttemptRecord {
    AttemptRecord {
        lesson: LessonId::parse(lesson).unwrap(),
        question_number,
        question_text: question.to_string(),
        expected_answer: expected.to_string(),
        student_response: student.to_string(),
        model_grade: Grade3::Wrong,
        human_grade: human,
        time: minute(time_offset),
        user_id: user.to_string(),
    }
}

/// The item published with a worked-answer response that the CoT grader
/// marks wrong despite the human label.
pub fn worked_answer_item() -> AttemptRecord {
    attempt(
        "G6.N1.2.2.1.7",
        2,
        "3^2 + 3^1 = __",
        "12",
        "=6+6 =12",
        Grade3::Correct,
        "u17",
        0,
    )
}

/// The place-value multiple-choice item where the CoT grader's own
/// arithmetic overrides the expected answer.
pub fn place_value_item() -> AttemptRecord {
    attempt(
        "G6.N1.2.2.1.7",
        7,
        "What is the value of 7 in 4,170,348? A. 7,000,000 B. 7,000 C. 700,000 D. 70,000",
        "D",
        "d",
        Grade3::Correct,
        "u21",
        1,
    )
}

pub const FIXTURE_MODEL: &str = "gpt-4o";

/// Write (or overwrite) a replay session file from scripted entries.
pub fn write_session(
    path: &Path,
    model: &str,
    entries: &[(Strategy, &AttemptRecord, &str, f64)],
) -> ReplayCache {
    if path.exists() {
        std::fs::remove_file(path).unwrap();
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    let cache = ReplayCache::open_record(path).unwrap();
    for (strategy, attempt, completion, latency) in entries {
        let prompt = build_prompt(
            *strategy,
            &attempt.question_text,
            &attempt.expected_answer,
            &attempt.student_response,
        );
        cache
            .insert(CacheEntry {
                fingerprint: fingerprint(strategy.as_str(), &prompt, model),
                strategy: strategy.as_str().to_string(),
                prompt,
                completion: completion.to_string(),
                recorded_latency: *latency,
            })
            .unwrap();
    }
    cache
}

/// In-memory cache from scripted entries, for tests that do not ship a
/// session file.
pub fn memory_session(
    model: &str,
    entries: &[(Strategy, &AttemptRecord, &str, f64)],
) -> ReplayCache {
    let cache = ReplayCache::in_memory();
    for (strategy, attempt, completion, latency) in entries {
        let prompt = build_prompt(
            *strategy,
            &attempt.question_text,
            &attempt.expected_answer,
            &attempt.student_response,
        );
        cache
            .insert(CacheEntry {
                fingerprint: fingerprint(strategy.as_str(), &prompt, model),
                strategy: strategy.as_str().to_string(),
                prompt,
                completion: completion.to_string(),
                recorded_latency: *latency,
            })
            .unwrap();
    }
    cache
}

/// Completion client answering from a prompt -> completion table.
pub struct MockClient {
    completions: HashMap<String, String>,
}

impl MockClient {
    pub fn new(entries: &[(Strategy, &AttemptRecord, &str)]) -> Self {
        let mut completions = HashMap::new();
        for (strategy, attempt, completion) in entries {
            let prompt = build_prompt(
                *strategy,
                &attempt.question_text,
                &attempt.expected_answer,
                &attempt.student_response,
            );
            completions.insert(prompt, completion.to_string());
        }
        MockClient { completions }
    }
}

impl ChatCompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, LlmError> {
        self.completions
            .get(request.prompt)
            .cloned()
            .ok_or_else(|| LlmError::Transport("no scripted completion".to_string()))
    }
}

/// Load the bundled 200-row synthetic answer log.
pub fn load_synthetic() -> Vec<AttemptRecord> {
    let outcome = ammore::dataset::load_attempts(
        &fixture_path("synthetic_attempts.csv"),
        DateOrder::MonthFirst,
    )
    .unwrap();
    assert!(
        outcome.row_errors.is_empty(),
        "synthetic fixture must load cleanly: {:?}",
        outcome.row_errors
    );
    outcome.records
}
