//! Bayesian Knowledge Tracing over per-lesson first-attempt sequences,
//! mastery classification, cross-grading misclassification analysis,
//! lesson difficulty summaries, and the simple percentage-based mastery
//! rollups.
//!
//! The update is the standard two-state form. With prior p, slip S,
//! guess G, and learn rate T:
//!
//! ```text
//! correct:   posterior = p(1-S) / (p(1-S) + (1-p)G)
//! incorrect: posterior = pS     / (pS     + (1-p)(1-G))
//! next       p' = posterior + (1 - posterior)T
//! ```

use crate::dataset::{first_attempt_indices, AttemptRecord, Grade3, LessonId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BktError {
    #[error("invalid BKT parameter {name}={value}; must lie strictly inside (0,1)")]
    ParamOutOfRange { name: &'static str, value: f64 },
    #[error("p_slip + p_guess = {0} >= 1 makes observations uninformative")]
    NotIdentifiable(f64),
    #[error("labels length {0} does not match records length {1}")]
    LabelMismatch(usize, usize),
    #[error("mastery reports cover different (user, lesson) sets")]
    MismatchedReports,
    #[error("mastery reports were built with different parameters or thresholds")]
    MismatchedConfig,
}

/// The four BKT parameters: initial knowledge, learn rate, slip, guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    pub p_init: f64,
    pub p_learn: f64,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl BktParams {
    /// Validated constructor; enforces the identifiability guard
    /// p_slip + p_guess < 1.
    pub fn new(p_init: f64, p_learn: f64, p_slip: f64, p_guess: f64) -> Result<Self, BktError> {
        let params = Self::new_unguarded(p_init, p_learn, p_slip, p_guess)?;
        if params.p_slip + params.p_guess >= 1.0 {
            return Err(BktError::NotIdentifiable(params.p_slip + params.p_guess));
        }
        Ok(params)
    }

    /// Range-validated constructor with the identifiability guard off.
    pub fn new_unguarded(
        p_init: f64,
        p_learn: f64,
        p_slip: f64,
        p_guess: f64,
    ) -> Result<Self, BktError> {
        for (name, value) in [
            ("p_init", p_init),
            ("p_learn", p_learn),
            ("p_slip", p_slip),
            ("p_guess", p_guess),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(BktError::ParamOutOfRange { name, value });
            }
        }
        Ok(BktParams {
            p_init,
            p_learn,
            p_slip,
            p_guess,
        })
    }

    pub fn validate(&self) -> Result<(), BktError> {
        Self::new(self.p_init, self.p_learn, self.p_slip, self.p_guess).map(|_| ())
    }
}

/// The default parameter set used for every lesson.
pub fn default_params() -> BktParams {
    BktParams::new(0.4, 0.05, 0.299, 0.299).expect("default parameters are valid")
}

/// The default mastery threshold on the final knowledge probability.
pub const DEFAULT_MASTERY_THRESHOLD: f64 = 0.9;

/// One knowledge update. `p_know` is the current probability of knowing
/// the skill, strictly inside (0,1); the result is the posterior after
/// observing the answer, advanced by the learning opportunity.
pub fn bkt_step(p_know: f64, observed_correct: bool, params: &BktParams) -> f64 {
    debug_assert!(p_know > 0.0 && p_know < 1.0);
    let posterior = if observed_correct {
        let evidence = p_know * (1.0 - params.p_slip);
        evidence / (evidence + (1.0 - p_know) * params.p_guess)
    } else {
        let evidence = p_know * params.p_slip;
        evidence / (evidence + (1.0 - p_know) * (1.0 - params.p_guess))
    };
    posterior + (1.0 - posterior) * params.p_learn
}

/// Left-fold of [`bkt_step`] starting from `p_init`. Returns the
/// knowledge probability after each observation; `None` for an empty
/// observation sequence (no trace, lesson skipped).
pub fn bkt_trace(observations: &[bool], params: &BktParams) -> Option<Vec<f64>> {
    if observations.is_empty() {
        return None;
    }
    let mut probabilities = Vec::with_capacity(observations.len());
    let mut p = params.p_init;
    for &correct in observations {
        p = bkt_step(p, correct, params);
        probabilities.push(p);
    }
    Some(probabilities)
}

/// A per-(user, lesson) knowledge trace under one grading source.
#[derive(Debug, Clone, Serialize)]
pub struct BktTrace {
    pub user_id: String,
    pub lesson: String,
    pub source: String,
    pub observations: Vec<bool>,
    pub knowledge_probabilities: Vec<f64>,
    pub final_score: f64,
}

/// Mastery classification for one (user, lesson) pair.
#[derive(Debug, Clone, Serialize)]
pub struct MasteryEntry {
    pub user_id: String,
    pub lesson: String,
    pub source: String,
    pub n_observations: usize,
    pub final_score: f64,
    pub mastered: bool,
}

/// All mastery entries for one grading source, plus per-user counts of
/// mastered lessons.
#[derive(Debug, Clone, Serialize)]
pub struct MasteryReport {
    pub source: String,
    pub params: BktParams,
    pub threshold: f64,
    pub entries: Vec<MasteryEntry>,
    pub mastered_per_user: BTreeMap<String, usize>,
}

impl MasteryReport {
    fn key_set(&self) -> BTreeSet<(&str, &str)> {
        self.entries
            .iter()
            .map(|e| (e.user_id.as_str(), e.lesson.as_str()))
            .collect()
    }

    pub fn entry(&self, user_id: &str, lesson: &str) -> Option<&MasteryEntry> {
        self.entries
            .iter()
            .find(|e| e.user_id == user_id && e.lesson == lesson)
    }
}

/// Correctness labels aligned with a record slice, one per record.
/// Labels for human-grade "other" rows are never read (those rows are
/// excluded before tracing) and may hold anything.
pub fn human_labels(records: &[AttemptRecord]) -> Vec<bool> {
    records
        .iter()
        .map(|r| r.human_grade == Grade3::Correct)
        .collect()
}

/// Labels from the log's original model-grade column ("other" counts as
/// not-correct).
pub fn model_column_labels(records: &[AttemptRecord]) -> Vec<bool> {
    records
        .iter()
        .map(|r| r.model_grade == Grade3::Correct)
        .collect()
}

/// BKT mastery over every (user, lesson): first attempts per question
/// (human-"other" rows excluded), observations read from `labels`,
/// mastered iff the final knowledge probability reaches the threshold
/// (inclusive).
pub fn mastery_report(
    records: &[AttemptRecord],
    labels: &[bool],
    source: &str,
    params: &BktParams,
    threshold: f64,
) -> Result<MasteryReport, BktError> {
    if labels.len() != records.len() {
        return Err(BktError::LabelMismatch(labels.len(), records.len()));
    }
    params.validate()?;

    let mut entries = Vec::new();
    let mut mastered_per_user: BTreeMap<String, usize> = BTreeMap::new();
    for ((user_id, lesson), indices) in first_attempt_indices(records) {
        let observations: Vec<bool> = indices.iter().map(|&i| labels[i]).collect();
        let probabilities = match bkt_trace(&observations, params) {
            Some(p) => p,
            None => continue,
        };
        let final_score = *probabilities.last().expect("non-empty trace");
        let mastered = final_score >= threshold;
        mastered_per_user.entry(user_id.clone()).or_insert(0);
        if mastered {
            *mastered_per_user.get_mut(&user_id).expect("user present") += 1;
        }
        entries.push(MasteryEntry {
            user_id,
            lesson,
            source: source.to_string(),
            n_observations: observations.len(),
            final_score,
            mastered,
        });
    }
    Ok(MasteryReport {
        source: source.to_string(),
        params: *params,
        threshold,
        entries,
        mastered_per_user,
    })
}

/// Full traces (not just final scores) for one grading source, keyed
/// like the mastery report.
pub fn trace_report(
    records: &[AttemptRecord],
    labels: &[bool],
    source: &str,
    params: &BktParams,
) -> Result<Vec<BktTrace>, BktError> {
    if labels.len() != records.len() {
        return Err(BktError::LabelMismatch(labels.len(), records.len()));
    }
    params.validate()?;
    let mut traces = Vec::new();
    for ((user_id, lesson), indices) in first_attempt_indices(records) {
        let observations: Vec<bool> = indices.iter().map(|&i| labels[i]).collect();
        if let Some(knowledge_probabilities) = bkt_trace(&observations, params) {
            let final_score = *knowledge_probabilities.last().expect("non-empty trace");
            traces.push(BktTrace {
                user_id,
                lesson,
                source: source.to_string(),
                observations,
                knowledge_probabilities,
                final_score,
            });
        }
    }
    Ok(traces)
}

/// Misclassification counts for one source against gold.
#[derive(Debug, Clone, Serialize)]
pub struct SourceMisclassification {
    pub source: String,
    pub misclassified_students: usize,
    pub fraction: f64,
    pub student_ids: Vec<String>,
}

/// How two grading sources disagree with gold on per-student mastery.
/// A student is misclassified under a source iff that source's mastered
/// flag differs from gold's on at least one of their traced lessons.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub students_considered: usize,
    pub min_observations: usize,
    pub a: SourceMisclassification,
    pub b: SourceMisclassification,
}

pub fn misclassification_comparison(
    report_a: &MasteryReport,
    report_b: &MasteryReport,
    report_gold: &MasteryReport,
    min_observations: usize,
) -> Result<ComparisonReport, BktError> {
    if report_a.key_set() != report_gold.key_set() || report_b.key_set() != report_gold.key_set() {
        return Err(BktError::MismatchedReports);
    }
    if report_a.params != report_gold.params
        || report_b.params != report_gold.params
        || report_a.threshold != report_gold.threshold
        || report_b.threshold != report_gold.threshold
    {
        return Err(BktError::MismatchedConfig);
    }

    let flag_map = |report: &MasteryReport| -> BTreeMap<(String, String), bool> {
        report
            .entries
            .iter()
            .filter(|e| e.n_observations >= min_observations)
            .map(|e| ((e.user_id.clone(), e.lesson.clone()), e.mastered))
            .collect()
    };
    let gold_flags = flag_map(report_gold);

    let mut students: BTreeSet<String> = BTreeSet::new();
    for (user, _lesson) in gold_flags.keys() {
        students.insert(user.clone());
    }

    let misclassified = |report: &MasteryReport| -> Vec<String> {
        let flags = flag_map(report);
        students
            .iter()
            .filter(|user| {
                gold_flags.iter().any(|((u, lesson), gold_mastered)| {
                    u == *user
                        && flags.get(&(u.clone(), lesson.clone())) != Some(gold_mastered)
                })
            })
            .cloned()
            .collect()
    };

    let build = |report: &MasteryReport| -> SourceMisclassification {
        let ids = misclassified(report);
        SourceMisclassification {
            source: report.source.clone(),
            misclassified_students: ids.len(),
            fraction: if students.is_empty() {
                0.0
            } else {
                ids.len() as f64 / students.len() as f64
            },
            student_ids: ids,
        }
    };

    Ok(ComparisonReport {
        students_considered: students.len(),
        min_observations,
        a: build(report_a),
        b: build(report_b),
    })
}

/// How an even-sized group's median is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianMode {
    #[default]
    MeanOfMiddle,
    Lower,
}

fn median(scores: &mut [f64], mode: MedianMode) -> f64 {
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = scores.len();
    if n % 2 == 1 {
        scores[n / 2]
    } else {
        match mode {
            MedianMode::MeanOfMiddle => (scores[n / 2 - 1] + scores[n / 2]) / 2.0,
            MedianMode::Lower => scores[n / 2 - 1],
        }
    }
}

/// Median final score per lesson per grading source.
#[derive(Debug, Clone, Serialize)]
pub struct LessonDifficulty {
    pub lesson: String,
    pub source: String,
    pub median_final_score: f64,
    pub n_students: usize,
}

pub fn lesson_difficulty(reports: &[&MasteryReport], mode: MedianMode) -> Vec<LessonDifficulty> {
    let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for report in reports {
        for entry in &report.entries {
            grouped
                .entry((entry.lesson.clone(), entry.source.clone()))
                .or_default()
                .push(entry.final_score);
        }
    }
    grouped
        .into_iter()
        .map(|((lesson, source), mut scores)| {
            let n_students = scores.len();
            LessonDifficulty {
                lesson,
                source,
                median_final_score: median(&mut scores, mode),
                n_students,
            }
        })
        .collect()
}

/// Threshold-based rollup over raw answer rates (no BKT): a lesson is
/// mastered by a student at >= 80% correct among their graded answers,
/// a skill at >= 75% of its attempted lessons mastered.
#[derive(Debug, Clone, Serialize)]
pub struct RollupReport {
    pub source: String,
    pub lesson_pairs_total: usize,
    pub lesson_pairs_mastered: usize,
    pub lesson_mastery_rate: f64,
    pub students_total: usize,
    pub students_with_skill_mastery: usize,
    pub per_skill: Vec<SkillMastery>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkillMastery {
    pub skill: String,
    pub students_attempted: usize,
    pub students_mastered: usize,
}

pub const LESSON_MASTERY_RATE: f64 = 0.8;
pub const SKILL_MASTERY_RATE: f64 = 0.75;

/// Rollup mastery from per-answer labels. `labels[i] = None` discards
/// the row (the "other" messages); all attempts count, not only firsts.
pub fn simple_mastery_rollup(
    records: &[AttemptRecord],
    labels: &[Option<bool>],
    source: &str,
) -> Result<RollupReport, BktError> {
    if labels.len() != records.len() {
        return Err(BktError::LabelMismatch(labels.len(), records.len()));
    }

    let mut students: BTreeSet<&str> = BTreeSet::new();
    let mut per_pair: BTreeMap<(&str, &LessonId), (u64, u64)> = BTreeMap::new();
    for (record, label) in records.iter().zip(labels) {
        students.insert(record.user_id.as_str());
        let correct = match label {
            Some(c) => *c,
            None => continue,
        };
        let counts = per_pair
            .entry((record.user_id.as_str(), &record.lesson))
            .or_insert((0, 0));
        if correct {
            counts.0 += 1;
        }
        counts.1 += 1;
    }

    let mut lesson_pairs_mastered = 0usize;
    // (user, skill) -> (mastered lessons, attempted lessons)
    let mut per_skill_pair: BTreeMap<(&str, String), (u64, u64)> = BTreeMap::new();
    for ((user, lesson), (correct, graded)) in &per_pair {
        let mastered = *correct as f64 / *graded as f64 >= LESSON_MASTERY_RATE;
        if mastered {
            lesson_pairs_mastered += 1;
        }
        let counts = per_skill_pair.entry((user, lesson.skill_key())).or_insert((0, 0));
        if mastered {
            counts.0 += 1;
        }
        counts.1 += 1;
    }

    let mut skill_stats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut students_with_mastery: BTreeSet<&str> = BTreeSet::new();
    for ((user, skill), (mastered, attempted)) in &per_skill_pair {
        let stats = skill_stats.entry(skill.clone()).or_insert((0, 0));
        stats.0 += 1;
        if *mastered as f64 / *attempted as f64 >= SKILL_MASTERY_RATE {
            stats.1 += 1;
            students_with_mastery.insert(user);
        }
    }

    let lesson_pairs_total = per_pair.len();
    Ok(RollupReport {
        source: source.to_string(),
        lesson_pairs_total,
        lesson_pairs_mastered,
        lesson_mastery_rate: if lesson_pairs_total == 0 {
            0.0
        } else {
            lesson_pairs_mastered as f64 / lesson_pairs_total as f64
        },
        students_total: students.len(),
        students_with_skill_mastery: students_with_mastery.len(),
        per_skill: skill_stats
            .into_iter()
            .map(|(skill, (students_attempted, students_mastered))| SkillMastery {
                skill,
                students_attempted,
                students_mastered,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LessonId;
    use chrono::{NaiveDate, NaiveDateTime};
    use proptest::prelude::*;

    fn t(minute: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 9)
            .unwrap()
            .and_hms_opt(7, minute % 60, 0)
            .unwrap()
    }

    fn record(user: &str, lesson: &str, question: u32, human: Grade3, minute: u32) -> AttemptRecord {
        AttemptRecord {
            lesson: LessonId::parse(lesson).unwrap(),
            question_number: question,
            question_text: format!("q{question}"),
            expected_answer: "1".to_string(),
            student_response: "1".to_string(),
            model_grade: human,
            human_grade: human,
            time: t(minute),
            user_id: user.to_string(),
        }
    }

    // Exact-arithmetic oracle over i128 fractions; the default
    // parameters are exact thousandths so everything stays integral.
    mod oracle {
        #[derive(Clone, Copy)]
        pub struct Frac {
            pub num: i128,
            pub den: i128,
        }

        impl Frac {
            pub fn new(num: i128, den: i128) -> Self {
                let g = gcd(num.abs(), den.abs());
                Frac {
                    num: num / g,
                    den: den / g,
                }
            }

            pub fn to_f64(self) -> f64 {
                self.num as f64 / self.den as f64
            }
        }

        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.max(1)
            } else {
                gcd(b, a % b)
            }
        }

        /// One exact BKT step with parameters given in thousandths.
        pub fn step(p: Frac, correct: bool, s_milli: i128, g_milli: i128, t_milli: i128) -> Frac {
            let (s, g, t) = (s_milli, g_milli, t_milli);
            // Scale everything by 1000 so slip/guess are integers.
            let posterior = if correct {
                let num = p.num * (1000 - s);
                let den = p.num * (1000 - s) + (p.den - p.num) * g;
                Frac::new(num, den)
            } else {
                let num = p.num * s;
                let den = p.num * s + (p.den - p.num) * (1000 - g);
                Frac::new(num, den)
            };
            // p' = post + (1-post) * t/1000
            Frac::new(
                posterior.num * 1000 + (posterior.den - posterior.num) * t,
                posterior.den * 1000,
            )
        }
    }

    #[test]
    fn golden_single_steps_match_exact_oracle() {
        let params = default_params();
        let prior = oracle::Frac::new(2, 5);

        let correct = oracle::step(prior, true, 299, 299, 50);
        let expected_correct = correct.to_f64();
        let got_correct = bkt_step(0.4, true, &params);
        assert!((got_correct - expected_correct).abs() < 1e-9);
        assert!((got_correct - 0.629_338_842_9).abs() < 1e-9);

        let incorrect = oracle::step(prior, false, 299, 299, 50);
        let expected_incorrect = incorrect.to_f64();
        let got_incorrect = bkt_step(0.4, false, &params);
        assert!((got_incorrect - expected_incorrect).abs() < 1e-9);
        // Exactly 14063/54020.
        assert!((got_incorrect - 0.260_329_507_6).abs() < 1e-9);
    }

    #[test]
    fn golden_posterior_components() {
        // Posterior before the learning update.
        let params = default_params();
        let evidence = 0.4 * (1.0 - params.p_slip);
        let posterior_correct = evidence / (evidence + 0.6 * params.p_guess);
        assert!((posterior_correct - 0.609_830_361_0).abs() < 1e-9);
        let evidence = 0.4 * params.p_slip;
        let posterior_incorrect = evidence / (evidence + 0.6 * (1.0 - params.p_guess));
        assert!((posterior_incorrect - 0.221_399_481_7).abs() < 1e-9);
    }

    #[test]
    fn trace_folds_and_tracks_oracle() {
        let params = default_params();
        let observations = [true, false, true, true, false, true];
        let trace = bkt_trace(&observations, &params).unwrap();
        assert_eq!(trace.len(), observations.len());

        let mut p = oracle::Frac::new(2, 5);
        for (i, &correct) in observations.iter().enumerate() {
            p = oracle::step(p, correct, 299, 299, 50);
            assert!((trace[i] - p.to_f64()).abs() < 1e-9, "step {i}");
        }
    }

    #[test]
    fn ten_corrects_strictly_increase() {
        let params = default_params();
        let trace = bkt_trace(&[true; 10], &params).unwrap();
        for window in trace.windows(2) {
            assert!(window[1] > window[0]);
        }
        assert!(trace.iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn ten_incorrects_fall_below_prior() {
        let params = default_params();
        let trace = bkt_trace(&[false; 10], &params).unwrap();
        assert!(trace.last().unwrap() < &params.p_init);
        assert!(trace.iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn empty_observations_yield_no_trace() {
        assert!(bkt_trace(&[], &default_params()).is_none());
    }

    #[test]
    fn trace_is_order_sensitive_for_mixed_observations() {
        let params = default_params();
        let forward = bkt_trace(&[true, true, false], &params).unwrap();
        let backward = bkt_trace(&[false, true, true], &params).unwrap();
        assert_ne!(forward.last(), backward.last());
    }

    #[test]
    fn default_params_are_the_published_constants() {
        let p = default_params();
        assert_eq!(
            (p.p_init, p.p_learn, p.p_slip, p.p_guess),
            (0.4, 0.05, 0.299, 0.299)
        );
    }

    #[test]
    fn params_validation() {
        assert!(BktParams::new(0.0, 0.05, 0.3, 0.3).is_err());
        assert!(BktParams::new(0.4, 1.0, 0.3, 0.3).is_err());
        assert!(matches!(
            BktParams::new(0.4, 0.05, 0.6, 0.5),
            Err(BktError::NotIdentifiable(_))
        ));
        // The guard can be switched off; range checks remain.
        assert!(BktParams::new_unguarded(0.4, 0.05, 0.6, 0.5).is_ok());
        assert!(BktParams::new_unguarded(0.4, 0.05, 1.2, 0.5).is_err());
    }

    #[test]
    fn params_round_trip_through_config_text() {
        let params = default_params();
        let text = toml::to_string(&params).unwrap();
        let back: BktParams = toml::from_str(&text).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn mastery_report_thresholds() {
        let records = vec![
            record("u1", "G6.N1.2.1.1", 1, Grade3::Correct, 0),
            record("u1", "G6.N1.2.1.1", 2, Grade3::Correct, 1),
            record("u2", "G6.N1.2.1.1", 1, Grade3::Other, 2),
        ];
        let labels = human_labels(&records);
        let report =
            mastery_report(&records, &labels, "human", &default_params(), 0.9).unwrap();
        // u2's only attempt is "other": no trace at all.
        assert_eq!(report.entries.len(), 1);
        let entry = &report.entries[0];
        assert_eq!(entry.user_id, "u1");
        assert_eq!(entry.n_observations, 2);
        assert!(!entry.mastered); // two corrects stay below 0.9

        // A single correct observation sits below the 0.9 threshold.
        let single = vec![record("u3", "G6.N1.2.1.1", 1, Grade3::Correct, 0)];
        let labels = human_labels(&single);
        let report = mastery_report(&single, &labels, "human", &default_params(), 0.9).unwrap();
        assert!((report.entries[0].final_score - 0.629_338_842_9).abs() < 1e-9);
        assert!(!report.entries[0].mastered);

        // Threshold 0 masters every traced lesson.
        let report = mastery_report(&single, &labels, "human", &default_params(), 0.0).unwrap();
        assert!(report.entries[0].mastered);
    }

    fn three_student_records() -> Vec<AttemptRecord> {
        let mut records = Vec::new();
        for (user, pattern) in [
            ("s1", [true; 10].as_slice()),
            ("s2", [false; 10].as_slice()),
            ("s3", [true; 10].as_slice()),
        ] {
            for (i, &correct) in pattern.iter().enumerate() {
                let grade = if correct { Grade3::Correct } else { Grade3::Wrong };
                records.push(record(user, "G6.N1.2.1.1", i as u32 + 1, grade, i as u32));
            }
        }
        records
    }

    #[test]
    fn misclassification_fixture_is_one_third() {
        let records = three_student_records();
        let params = default_params();
        let gold_labels_vec = human_labels(&records);
        let gold = mastery_report(&records, &gold_labels_vec, "human", &params, 0.9).unwrap();

        // Source A flips s3's grades to all-wrong: exactly one student's
        // mastery flag changes.
        let flipped: Vec<bool> = records
            .iter()
            .zip(&gold_labels_vec)
            .map(|(r, &label)| if r.user_id == "s3" { false } else { label })
            .collect();
        let a = mastery_report(&records, &flipped, "flipped", &params, 0.9).unwrap();
        let b = mastery_report(&records, &gold_labels_vec, "same", &params, 0.9).unwrap();

        let comparison = misclassification_comparison(&a, &b, &gold, 1).unwrap();
        assert_eq!(comparison.students_considered, 3);
        assert_eq!(comparison.a.misclassified_students, 1);
        assert!((comparison.a.fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(comparison.a.student_ids, vec!["s3".to_string()]);
        assert_eq!(comparison.b.misclassified_students, 0);
        assert_eq!(comparison.b.fraction, 0.0);

        // Self-comparison is always zero.
        let self_cmp = misclassification_comparison(&gold, &gold, &gold, 1).unwrap();
        assert_eq!(self_cmp.a.misclassified_students, 0);
        assert_eq!(self_cmp.b.misclassified_students, 0);
    }

    #[test]
    fn misclassification_rejects_mismatched_sets() {
        let records = three_student_records();
        let params = default_params();
        let labels = human_labels(&records);
        let gold = mastery_report(&records, &labels, "human", &params, 0.9).unwrap();
        let fewer = mastery_report(&records[..10], &labels[..10], "a", &params, 0.9).unwrap();
        assert!(matches!(
            misclassification_comparison(&fewer, &gold, &gold, 1),
            Err(BktError::MismatchedReports)
        ));
        let other_threshold = mastery_report(&records, &labels, "b", &params, 0.8).unwrap();
        assert!(matches!(
            misclassification_comparison(&other_threshold, &gold, &gold, 1),
            Err(BktError::MismatchedConfig)
        ));
    }

    #[test]
    fn lesson_difficulty_medians() {
        let make_report = |scores: &[(&str, f64)]| MasteryReport {
            source: "human".to_string(),
            params: default_params(),
            threshold: 0.9,
            entries: scores
                .iter()
                .map(|(user, score)| MasteryEntry {
                    user_id: user.to_string(),
                    lesson: "G7.N3.2.2.2".to_string(),
                    source: "human".to_string(),
                    n_observations: 10,
                    final_score: *score,
                    mastered: *score >= 0.9,
                })
                .collect(),
            mastered_per_user: BTreeMap::new(),
        };

        let report = make_report(&[("u1", 0.2), ("u2", 0.9)]);
        let difficulty = lesson_difficulty(&[&report], MedianMode::MeanOfMiddle);
        assert_eq!(difficulty.len(), 1);
        assert!((difficulty[0].median_final_score - 0.55).abs() < 1e-15);
        let lower = lesson_difficulty(&[&report], MedianMode::Lower);
        assert!((lower[0].median_final_score - 0.2).abs() < 1e-15);

        let single = make_report(&[("u1", 0.7)]);
        let difficulty = lesson_difficulty(&[&single], MedianMode::MeanOfMiddle);
        assert_eq!(difficulty[0].median_final_score, 0.7);
        assert_eq!(difficulty[0].n_students, 1);
    }

    #[test]
    fn rollup_boundaries() {
        // 8/10 correct is mastered (inclusive boundary).
        let mut records = Vec::new();
        for i in 0..10u32 {
            let grade = if i < 8 { Grade3::Correct } else { Grade3::Wrong };
            records.push(record("u1", "G6.N1.2.1.1", i + 1, grade, i));
        }
        // 7 correct, 2 wrong, 1 other: 7/9 < 0.8.
        for i in 0..10u32 {
            let grade = match i {
                0..=6 => Grade3::Correct,
                7 | 8 => Grade3::Wrong,
                _ => Grade3::Other,
            };
            records.push(record("u2", "G6.N1.2.1.1", i + 1, grade, i));
        }
        let labels: Vec<Option<bool>> = records
            .iter()
            .map(|r| match r.human_grade {
                Grade3::Correct => Some(true),
                Grade3::Wrong => Some(false),
                Grade3::Other => None,
            })
            .collect();
        let rollup = simple_mastery_rollup(&records, &labels, "human").unwrap();
        assert_eq!(rollup.lesson_pairs_total, 2);
        assert_eq!(rollup.lesson_pairs_mastered, 1);
        assert!((rollup.lesson_mastery_rate - 0.5).abs() < 1e-15);
        // u1 mastered the lesson, hence the skill (1/1 lessons >= 75%).
        assert_eq!(rollup.students_with_skill_mastery, 1);
        assert_eq!(rollup.students_total, 2);
        assert_eq!(rollup.per_skill.len(), 1);
        assert_eq!(rollup.per_skill[0].students_attempted, 2);
        assert_eq!(rollup.per_skill[0].students_mastered, 1);
    }

    proptest! {
        #[test]
        fn step_stays_in_open_unit_interval(
            p in 0.0001f64..0.9999,
            correct in any::<bool>(),
            init in 0.001f64..0.999,
            learn in 0.001f64..0.999,
            slip in 0.001f64..0.999,
            guess in 0.001f64..0.999,
        ) {
            let params = BktParams::new_unguarded(init, learn, slip, guess).unwrap();
            let next = bkt_step(p, correct, &params);
            prop_assert!(next > 0.0 && next < 1.0);
        }

        #[test]
        fn correct_posterior_dominates_incorrect(
            p in 0.0001f64..0.9999,
            init in 0.001f64..0.999,
            learn in 0.001f64..0.999,
            slip in 0.001f64..0.499,
            guess in 0.001f64..0.499,
        ) {
            // With s+g < 1 a correct observation is evidence for knowing.
            let params = BktParams::new(init, learn, slip, guess).unwrap();
            let after_correct = bkt_step(p, true, &params);
            let after_incorrect = bkt_step(p, false, &params);
            prop_assert!(after_correct >= after_incorrect);
        }
    }
}
