//! Loading, validation, summarization, and filtering of AMMORE-format
//! answer logs.
//!
//! The input schema is one row per answer attempt with the columns
//! `lesson`, `question_number`, `question_text`, `expected_answer`,
//! `student_response`, `model_grade`, `human_grade`, `time`, `user_id`.
//! Both delimiter-separated files and JSON lines are supported.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// The closed three-value grade set used by both the platform classifier
/// and the human reviewers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade3 {
    Correct,
    Wrong,
    Other,
}

impl FromStr for Grade3 {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" => Ok(Grade3::Correct),
            "wrong" => Ok(Grade3::Wrong),
            "other" => Ok(Grade3::Other),
            other => Err(DatasetError::InvalidGrade(other.to_string())),
        }
    }
}

impl fmt::Display for Grade3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Grade3::Correct => "correct",
            Grade3::Wrong => "wrong",
            Grade3::Other => "other",
        };
        f.write_str(s)
    }
}

/// A parsed curriculum lesson identifier such as `G9.N5.2.1.1`.
///
/// The leading segment carries the grade level, the second segment a
/// single domain letter (N = Numbers and operations, A = Algebra, ...)
/// followed by the first path component, and the remaining segments the
/// rest of the construct/subconstruct/skill/difficulty path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LessonId {
    pub grade_level: u8,
    pub domain_code: char,
    pub path: Vec<u32>,
    pub raw: String,
}

impl LessonId {
    /// Parse an identifier like `G9.N5.2.1.1`. Formatting the result
    /// reproduces the input exactly (leading zeros are rejected so the
    /// round-trip cannot lose digits).
    pub fn parse(text: &str) -> Result<LessonId, DatasetError> {
        let err = || DatasetError::InvalidLessonId(text.to_string());
        let mut segments = text.split('.');
        let head = segments.next().ok_or_else(err)?;

        let grade_str = head.strip_prefix('G').ok_or_else(err)?;
        let grade_level: u8 = parse_positive(grade_str).ok_or_else(err)?;
        if !(1..=9).contains(&grade_level) {
            return Err(err());
        }

        let second = segments.next().ok_or_else(err)?;
        let mut chars = second.chars();
        let domain_code = chars.next().ok_or_else(err)?;
        if !domain_code.is_ascii_uppercase() {
            return Err(err());
        }
        let first_component: u32 = parse_positive(chars.as_str()).ok_or_else(err)?;

        let mut path = vec![first_component];
        for seg in segments {
            path.push(parse_positive(seg).ok_or_else(err)?);
        }

        Ok(LessonId {
            grade_level,
            domain_code,
            path,
            raw: text.to_string(),
        })
    }

    /// Identifier of the skill this lesson belongs to: the lesson id
    /// without its final (difficulty) path component.
    pub fn skill_key(&self) -> String {
        if self.path.len() < 2 {
            return self.raw.clone();
        }
        let mut s = format!("G{}.{}{}", self.grade_level, self.domain_code, self.path[0]);
        for component in &self.path[1..self.path.len() - 1] {
            s.push('.');
            s.push_str(&component.to_string());
        }
        s
    }
}

impl fmt::Display for LessonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}.{}{}", self.grade_level, self.domain_code, self.path[0])?;
        for component in &self.path[1..] {
            write!(f, ".{component}")?;
        }
        Ok(())
    }
}

fn parse_positive<T: FromStr + PartialOrd + From<u8>>(s: &str) -> Option<T> {
    if s.is_empty() || s.starts_with('0') || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// One student answer attempt, as stored in the answer log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub lesson: LessonId,
    pub question_number: u32,
    pub question_text: String,
    pub expected_answer: String,
    pub student_response: String,
    pub model_grade: Grade3,
    pub human_grade: Grade3,
    /// Minute-precision attempt timestamp.
    pub time: NaiveDateTime,
    pub user_id: String,
}

/// Anonymized per-student demographics row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentProfile {
    pub user_id: String,
    pub first_use: String,
    pub country_code: String,
    pub self_reported_age: Option<u32>,
    pub message_count: u64,
    pub active_days: u64,
}

/// Whole-dataset counts in the shape of the dataset's summary card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total_answers: u64,
    pub correct_count: u64,
    pub wrong_count: u64,
    pub other_count: u64,
    pub unique_students: u64,
    pub lesson_count: u64,
    pub skill_count: u64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("invalid grade value `{0}` (expected correct, wrong, or other)")]
    InvalidGrade(String),
    #[error("invalid lesson id `{0}`")]
    InvalidLessonId(String),
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
    #[error("unsupported input format for `{0}` (expected csv, tsv, or jsonl)")]
    UnsupportedFormat(String),
    #[error("duplicate user_id `{0}` in demographics file")]
    DuplicateProfile(String),
}

/// A row that failed validation, reported with its 1-based line number.
#[derive(Debug, Clone, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Non-fatal observations made while loading (e.g. out-of-range grade levels).
#[derive(Debug, Clone, Serialize)]
pub struct LoadWarning {
    pub line: u64,
    pub message: String,
}

/// Result of loading an answer log: parsed records plus per-row errors,
/// in input order.
#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub records: Vec<AttemptRecord>,
    pub row_errors: Vec<RowError>,
    pub warnings: Vec<LoadWarning>,
}

/// How the numeric day/month fields of timestamps are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateOrder {
    #[default]
    MonthFirst,
    DayFirst,
}

/// Input file layout, normally inferred from the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Delimited(u8),
    JsonLines,
}

const COLUMNS: [&str; 9] = [
    "lesson",
    "question_number",
    "question_text",
    "expected_answer",
    "student_response",
    "model_grade",
    "human_grade",
    "time",
    "user_id",
];

fn infer_format(path: &Path) -> Result<InputFormat, DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(InputFormat::Delimited(b',')),
        Some("tsv") => Ok(InputFormat::Delimited(b'\t')),
        Some("jsonl") | Some("ndjson") => Ok(InputFormat::JsonLines),
        _ => Err(DatasetError::UnsupportedFormat(path.display().to_string())),
    }
}

/// Parse a minute-precision timestamp like `1/9/24 7:57`.
pub fn parse_time(text: &str, order: DateOrder) -> Result<NaiveDateTime, DatasetError> {
    let fmt = match order {
        DateOrder::MonthFirst => "%m/%d/%y %H:%M",
        DateOrder::DayFirst => "%d/%m/%y %H:%M",
    };
    NaiveDateTime::parse_from_str(text.trim(), fmt)
        .map_err(|_| DatasetError::InvalidTimestamp(text.to_string()))
}

/// Render a timestamp in the log's `1/9/24 7:57` form (no zero padding).
pub fn format_time(time: &NaiveDateTime) -> String {
    time.format("%-m/%-d/%y %-H:%M").to_string()
}

/// Load an answer log. Every row either becomes an [`AttemptRecord`] or
/// is reported as a row-level error with its line number; input order is
/// preserved. A missing column is fatal.
pub fn load_attempts(path: &Path, order: DateOrder) -> Result<LoadOutcome, DatasetError> {
    match infer_format(path)? {
        InputFormat::Delimited(delim) => load_delimited(path, delim, order),
        InputFormat::JsonLines => load_jsonl(path, order),
    }
}

fn load_delimited(path: &Path, delim: u8, order: DateOrder) -> Result<LoadOutcome, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        index.insert(name, i);
    }
    let mut cols = [0usize; 9];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = *index
            .get(name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }

    let mut outcome = LoadOutcome::default();
    for (row_idx, result) in reader.records().enumerate() {
        let line = row_idx as u64 + 2; // line 1 is the header
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                outcome.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |slot: usize| record.get(cols[slot]).unwrap_or("").to_string();
        let raw = RawRow {
            lesson: field(0),
            question_number: field(1),
            question_text: field(2),
            expected_answer: field(3),
            student_response: field(4),
            model_grade: field(5),
            human_grade: field(6),
            time: field(7),
            user_id: field(8),
        };
        push_row(&mut outcome, raw, line, order);
    }
    Ok(outcome)
}

fn load_jsonl(path: &Path, order: DateOrder) -> Result<LoadOutcome, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut outcome = LoadOutcome::default();
    for (idx, line_result) in reader.lines().enumerate() {
        let line = idx as u64 + 1;
        let text = line_result?;
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRow>(&text) {
            Ok(raw) => push_row(&mut outcome, raw, line, order),
            Err(e) => outcome.row_errors.push(RowError {
                line,
                message: format!("invalid json row: {e}"),
            }),
        }
    }
    Ok(outcome)
}

#[derive(Deserialize)]
struct RawRow {
    lesson: String,
    #[serde(deserialize_with = "string_or_number")]
    question_number: String,
    question_text: String,
    expected_answer: String,
    student_response: String,
    model_grade: String,
    human_grade: String,
    time: String,
    #[serde(deserialize_with = "string_or_number")]
    user_id: String,
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(de: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        S(String),
        N(u64),
    }
    Ok(match V::deserialize(de)? {
        V::S(s) => s,
        V::N(n) => n.to_string(),
    })
}

fn push_row(outcome: &mut LoadOutcome, raw: RawRow, line: u64, order: DateOrder) {
    let mut fail = |message: String| {
        outcome.row_errors.push(RowError { line, message });
    };

    let lesson = match LessonId::parse(raw.lesson.trim()) {
        Ok(l) => l,
        Err(e) => return fail(e.to_string()),
    };
    let question_number: u32 = match raw.question_number.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => {
            return fail(format!(
                "invalid question_number `{}` (must be a positive integer)",
                raw.question_number
            ))
        }
    };
    if raw.expected_answer.trim().is_empty() {
        return fail("empty expected_answer".to_string());
    }
    let model_grade = match raw.model_grade.parse::<Grade3>() {
        Ok(g) => g,
        Err(e) => return fail(format!("model_grade: {e}")),
    };
    let human_grade = match raw.human_grade.parse::<Grade3>() {
        Ok(g) => g,
        Err(e) => return fail(format!("human_grade: {e}")),
    };
    let time = match parse_time(&raw.time, order) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };

    if !(6..=9).contains(&lesson.grade_level) {
        outcome.warnings.push(LoadWarning {
            line,
            message: format!(
                "grade level {} outside the expected 6-9 range",
                lesson.grade_level
            ),
        });
    }

    outcome.records.push(AttemptRecord {
        lesson,
        question_number,
        question_text: raw.question_text,
        expected_answer: raw.expected_answer,
        student_response: raw.student_response,
        model_grade,
        human_grade,
        time,
        user_id: raw.user_id.trim().to_string(),
    });
}

/// Write records back out in the input schema (CSV with the canonical
/// column order and `1/9/24 7:57`-style timestamps).
pub fn write_attempts(path: &Path, records: &[AttemptRecord]) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(COLUMNS)?;
    for r in records {
        writer.write_record([
            r.lesson.raw.as_str(),
            &r.question_number.to_string(),
            &r.question_text,
            &r.expected_answer,
            &r.student_response,
            &r.model_grade.to_string(),
            &r.human_grade.to_string(),
            &format_time(&r.time),
            &r.user_id,
        ])?;
    }
    writer.flush().map_err(DatasetError::Io)?;
    Ok(())
}

/// Load a demographics table (CSV with a header containing `user_id`,
/// `first_use`, `country_code`, `self_reported_age`, `message_count`,
/// `active_days`). User ids must be unique.
pub fn load_profiles(path: &Path) -> Result<Vec<StudentProfile>, DatasetError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut profiles = Vec::new();
    let mut seen = HashSet::new();
    for result in reader.deserialize::<StudentProfile>() {
        let profile = result?;
        if !seen.insert(profile.user_id.clone()) {
            return Err(DatasetError::DuplicateProfile(profile.user_id));
        }
        profiles.push(profile);
    }
    Ok(profiles)
}

/// Count totals over a record collection. Grade counts are over the
/// human (ground-truth) labels.
pub fn summarize(records: &[AttemptRecord]) -> DatasetSummary {
    let mut correct = 0;
    let mut wrong = 0;
    let mut other = 0;
    let mut students = HashSet::new();
    let mut lessons = HashSet::new();
    let mut skills = HashSet::new();
    for r in records {
        match r.human_grade {
            Grade3::Correct => correct += 1,
            Grade3::Wrong => wrong += 1,
            Grade3::Other => other += 1,
        }
        students.insert(r.user_id.as_str());
        lessons.insert(r.lesson.raw.as_str());
        skills.insert(r.lesson.skill_key());
    }
    DatasetSummary {
        total_answers: records.len() as u64,
        correct_count: correct,
        wrong_count: wrong,
        other_count: other,
        unique_students: students.len() as u64,
        lesson_count: lessons.len() as u64,
        skill_count: skills.len() as u64,
    }
}

/// Pairs of (lesson id, question number) to drop in the final
/// hard-subset filter step. Empty by default; the ambiguous-question
/// judgment behind it is supplied externally.
#[derive(Debug, Clone, Default)]
pub struct ExclusionList {
    pairs: HashSet<(String, u32)>,
}

impl ExclusionList {
    pub fn new<I: IntoIterator<Item = (String, u32)>>(pairs: I) -> Self {
        ExclusionList {
            pairs: pairs.into_iter().collect(),
        }
    }

    /// Parse a text file of `lesson_id,question_number` lines. Blank
    /// lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let reader = BufReader::new(File::open(path)?);
        let mut pairs = HashSet::new();
        for line_result in reader.lines() {
            let line = line_result?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lesson, number) = line.split_once(',').ok_or_else(|| {
                DatasetError::UnsupportedFormat(format!("exclusion line `{line}`"))
            })?;
            let number: u32 = number.trim().parse().map_err(|_| {
                DatasetError::UnsupportedFormat(format!("exclusion line `{line}`"))
            })?;
            pairs.insert((lesson.trim().to_string(), number));
        }
        Ok(ExclusionList { pairs })
    }

    pub fn contains(&self, lesson_raw: &str, question_number: u32) -> bool {
        self.pairs.contains(&(lesson_raw.to_string(), question_number))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Row counts surviving each hard-subset filter step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub input: usize,
    pub after_drop_other: usize,
    pub after_dedup: usize,
    pub after_drop_identical: usize,
    pub after_drop_single_char_wrong: usize,
    pub after_drop_integer_wrong: usize,
    pub after_exclusions: usize,
}

fn parse_plain_integer(s: &str) -> Option<i128> {
    let t = s.trim();
    let body = t.strip_prefix(['+', '-']).unwrap_or(t);
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse().ok()
}

/// True when two single-character answers name the same letter once
/// canonical letter normalization (case fold, diacritic strip) is
/// applied. Single-character pairs that still differ after that are the
/// trivially-wrong rows the hard subset drops.
fn single_chars_differ(expected: &str, student: &str) -> bool {
    let e = expected.trim();
    let s = student.trim();
    if e.chars().count() != 1 || s.chars().count() != 1 {
        return false;
    }
    let canon = |t: &str| crate::normalizer::canonicalize_text(t).to_lowercase();
    canon(e) != canon(s)
}

/// Produce the hard-to-grade subset by applying, in order: drop
/// human-grade "other"; deduplicate on (question_text, expected_answer,
/// student_response) keeping the earliest occurrence; drop responses
/// character-identical to the expected answer; drop differing
/// single-character pairs; drop integer responses that differ from an
/// integer expected answer; drop rows on the exclusion list.
pub fn build_hard_subset(
    records: &[AttemptRecord],
    exclusions: &ExclusionList,
) -> (Vec<AttemptRecord>, FilterReport) {
    let input = records.len();

    // Step 1: human-grade "other" rows are non-attempts.
    let survivors: Vec<&AttemptRecord> = records
        .iter()
        .filter(|r| r.human_grade != Grade3::Other)
        .collect();
    let after_drop_other = survivors.len();

    // Step 2: one occurrence per (question, expected, response) triple,
    // keeping the earliest timestamp and breaking ties by input order.
    let mut best: HashMap<(&str, &str, &str), usize> = HashMap::new();
    for (pos, r) in survivors.iter().enumerate() {
        let key = (
            r.question_text.as_str(),
            r.expected_answer.as_str(),
            r.student_response.as_str(),
        );
        match best.get(&key) {
            Some(&held) if survivors[held].time <= r.time => {}
            _ => {
                best.insert(key, pos);
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    let survivors: Vec<&AttemptRecord> = keep.into_iter().map(|i| survivors[i]).collect();
    let after_dedup = survivors.len();

    // Step 3: trivially correct — response identical to the expected
    // answer after trimming (case-sensitive; case variants stay hard).
    let survivors: Vec<&AttemptRecord> = survivors
        .into_iter()
        .filter(|r| r.student_response.trim() != r.expected_answer.trim())
        .collect();
    let after_drop_identical = survivors.len();

    // Step 4: trivially wrong single-character pairs.
    let survivors: Vec<&AttemptRecord> = survivors
        .into_iter()
        .filter(|r| !single_chars_differ(&r.expected_answer, &r.student_response))
        .collect();
    let after_drop_single_char_wrong = survivors.len();

    // Step 5: trivially wrong integers.
    let survivors: Vec<&AttemptRecord> = survivors
        .into_iter()
        .filter(|r| {
            match (
                parse_plain_integer(&r.expected_answer),
                parse_plain_integer(&r.student_response),
            ) {
                (Some(e), Some(s)) => e == s,
                _ => true,
            }
        })
        .collect();
    let after_drop_integer_wrong = survivors.len();

    // Step 6: externally judged ambiguous questions.
    let survivors: Vec<&AttemptRecord> = survivors
        .into_iter()
        .filter(|r| !exclusions.contains(&r.lesson.raw, r.question_number))
        .collect();
    let after_exclusions = survivors.len();

    let report = FilterReport {
        input,
        after_drop_other,
        after_dedup,
        after_drop_identical,
        after_drop_single_char_wrong,
        after_drop_integer_wrong,
        after_exclusions,
    };
    (survivors.into_iter().cloned().collect(), report)
}

/// For each (user, lesson) pair, the record indices of the earliest
/// attempt per question number, with human-grade "other" attempts
/// excluded after first-attempt selection. Question order within each
/// entry is ascending.
pub fn first_attempt_indices(
    records: &[AttemptRecord],
) -> BTreeMap<(String, String), Vec<usize>> {
    let mut firsts: HashMap<(&str, &str, u32), usize> = HashMap::new();
    for (idx, r) in records.iter().enumerate() {
        let key = (r.user_id.as_str(), r.lesson.raw.as_str(), r.question_number);
        match firsts.get(&key) {
            Some(&held) if records[held].time <= r.time => {}
            _ => {
                firsts.insert(key, idx);
            }
        }
    }

    let mut grouped: BTreeMap<(String, String), Vec<(u32, usize)>> = BTreeMap::new();
    for ((user, lesson, question), idx) in firsts {
        if records[idx].human_grade == Grade3::Other {
            continue;
        }
        grouped
            .entry((user.to_string(), lesson.to_string()))
            .or_default()
            .push((question, idx));
    }

    grouped
        .into_iter()
        .map(|(key, mut entries)| {
            entries.sort_unstable();
            (key, entries.into_iter().map(|(_, idx)| idx).collect())
        })
        .collect()
}

/// The earliest attempt per question for one user in one lesson,
/// ordered by question number. A question whose first attempt is
/// human-graded "other" is absent from the output.
pub fn first_attempts(
    records: &[AttemptRecord],
    user_id: &str,
    lesson_raw: &str,
) -> Vec<AttemptRecord> {
    first_attempt_indices(records)
        .remove(&(user_id.to_string(), lesson_raw.to_string()))
        .map(|indices| indices.into_iter().map(|i| records[i].clone()).collect())
        .unwrap_or_default()
}
