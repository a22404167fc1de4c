//! Classification metrics, chance-adjusted agreement (Cohen's kappa,
//! linear weighted kappa, Scott/Fleiss), and the repeated-run
//! reliability protocol.
//!
//! Kappa statistics are computed from integer counts with a single
//! final division, which keeps the two-class linear-weighted route and
//! the Cohen route bit-identical (they reduce to the same integer
//! quotient). Degenerate cases (zero denominators, constant raters)
//! never silently become clean numbers: they carry a flag.

use crate::cascade::{batch_grade, GradedAttempt, GradingEngine, GradingStrategyId};
use crate::dataset::{AttemptRecord, Grade3};
use crate::normalizer::VerdictLabel;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no scored pairs")]
    Empty,
    #[error("reliability protocol requires at least 2 runs (got {0})")]
    InsufficientRuns(usize),
    #[error("runs matrix must be rectangular")]
    RaggedMatrix,
    #[error("gold labels contain \"other\"; the two-class task needs binary gold")]
    NonBinaryGold,
    #[error("strategies were graded on different attempt sets")]
    MismatchedAttempts,
    #[error("grading failed: {0}")]
    Grading(String),
}

/// Two-class confusion counts for a designated positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix2 {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix2 {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Exact confusion counts of predictions against gold labels.
pub fn confusion(
    predictions: &[VerdictLabel],
    gold: &[VerdictLabel],
    positive: VerdictLabel,
) -> Result<ConfusionMatrix2, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), gold.len()));
    }
    let mut m = ConfusionMatrix2 {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => m.true_pos += 1,
            (true, false) => m.false_pos += 1,
            (false, true) => m.false_neg += 1,
            (false, false) => m.true_neg += 1,
        }
    }
    Ok(m)
}

/// Accuracy, precision, recall, and F1 for one positive class. A zero
/// denominator yields 0 with the degeneracy flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

pub fn class_metrics(m: &ConfusionMatrix2) -> Result<ClassMetrics, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (m.true_pos + m.true_neg) as f64 / total as f64;
    let precision = ratio(m.true_pos, m.true_pos + m.false_pos);
    let recall = ratio(m.true_pos, m.true_pos + m.false_neg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// A chance-adjusted agreement value plus a degeneracy flag for the
/// constant-rater corner where the statistic is defined by convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaScore {
    pub value: f64,
    pub degenerate: bool,
}

fn binary_counts(a: &[VerdictLabel], b: &[VerdictLabel]) -> Result<(i128, i128, i128, i128), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let a_correct = a.iter().filter(|l| l.is_correct()).count() as i128;
    let b_correct = b.iter().filter(|l| l.is_correct()).count() as i128;
    Ok((n, agree, a_correct, b_correct))
}

/// Cohen's kappa for two binary label vectors, computed as
/// (p_o - p_e) / (1 - p_e) with marginal-product chance agreement.
/// Symmetric in its arguments.
pub fn cohen_kappa(a: &[VerdictLabel], b: &[VerdictLabel]) -> Result<KappaScore, MetricsError> {
    let (n, agree, a_correct, b_correct) = binary_counts(a, b)?;
    // p_o = agree/n, p_e = (r_c*c_c + r_w*c_w)/n^2; scaling both by n^2
    // leaves integer numerator and denominator.
    let chance = a_correct * b_correct + (n - a_correct) * (n - b_correct);
    let numerator = agree * n - chance;
    let denominator = n * n - chance;
    if denominator == 0 {
        // Both raters constant and identical.
        return Ok(KappaScore {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(KappaScore {
        value: numerator as f64 / denominator as f64,
        degenerate: false,
    })
}

/// Linear weighted kappa: 1 - (observed weighted disagreement) /
/// (expected weighted disagreement), with weights |i-j|/(k-1). For the
/// two-class task this equals Cohen's kappa exactly; both routes are
/// kept so the identity stays checkable.
pub fn linear_weighted_kappa(
    a: &[VerdictLabel],
    b: &[VerdictLabel],
) -> Result<KappaScore, MetricsError> {
    let (n, agree, a_correct, b_correct) = binary_counts(a, b)?;
    // With two classes the weight matrix is 0 on the diagonal and 1 off
    // it, so weighted disagreement is plain disagreement.
    let disagree = n - agree;
    let expected_disagree = a_correct * (n - b_correct) + (n - a_correct) * b_correct;
    if expected_disagree == 0 {
        return Ok(KappaScore {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(KappaScore {
        value: (expected_disagree - disagree * n) as f64 / expected_disagree as f64,
        degenerate: false,
    })
}

/// Scott's pi: the two-rater form of the Fleiss chance model, where the
/// expected agreement pools both raters' marginals.
pub fn scott_pi(a: &[VerdictLabel], b: &[VerdictLabel]) -> Result<KappaScore, MetricsError> {
    let (n, agree, a_correct, b_correct) = binary_counts(a, b)?;
    let correct_total = a_correct + b_correct; // of 2n assignments
    let wrong_total = 2 * n - correct_total;
    // p_e = (c/2n)^2 + (w/2n)^2; scale by 4n^2.
    let chance4 = correct_total * correct_total + wrong_total * wrong_total;
    let numerator = 4 * n * agree - chance4;
    let denominator = 4 * n * n - chance4;
    if denominator == 0 {
        return Ok(KappaScore {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(KappaScore {
        value: numerator as f64 / denominator as f64,
        degenerate: false,
    })
}

/// Binary labels for one item set across repeated runs, with the gold
/// label per item.
#[derive(Debug, Clone)]
pub struct RunsMatrix {
    labels: Vec<Vec<VerdictLabel>>,
    gold: Vec<VerdictLabel>,
}

impl RunsMatrix {
    /// `labels[item][run]`; requires at least one item, at least two
    /// runs, and a rectangular grid matching the gold length.
    pub fn new(labels: Vec<Vec<VerdictLabel>>, gold: Vec<VerdictLabel>) -> Result<Self, MetricsError> {
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        let runs = labels[0].len();
        if runs < 2 {
            return Err(MetricsError::InsufficientRuns(runs));
        }
        if labels.iter().any(|row| row.len() != runs) {
            return Err(MetricsError::RaggedMatrix);
        }
        if gold.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(gold.len(), labels.len()));
        }
        Ok(RunsMatrix { labels, gold })
    }

    pub fn items(&self) -> usize {
        self.labels.len()
    }

    pub fn runs(&self) -> usize {
        self.labels[0].len()
    }

    pub fn gold(&self) -> &[VerdictLabel] {
        &self.gold
    }

    /// Labels assigned by one run across all items.
    pub fn run_labels(&self, run: usize) -> Vec<VerdictLabel> {
        self.labels.iter().map(|row| row[run]).collect()
    }
}

/// Fleiss's kappa over items x runs with two categories. All labels
/// identical everywhere is reported as 1 with the degeneracy flag.
pub fn fleiss_kappa(matrix: &RunsMatrix) -> Result<KappaScore, MetricsError> {
    let items = matrix.items() as f64;
    let raters = matrix.runs() as f64;

    let mut correct_total = 0.0;
    let mut mean_item_agreement = 0.0;
    for row in &matrix.labels {
        let correct = row.iter().filter(|l| l.is_correct()).count() as f64;
        let wrong = raters - correct;
        correct_total += correct;
        mean_item_agreement += (correct * correct + wrong * wrong - raters) / (raters * (raters - 1.0));
    }
    mean_item_agreement /= items;

    let p_correct = correct_total / (items * raters);
    let p_wrong = 1.0 - p_correct;
    let expected = p_correct * p_correct + p_wrong * p_wrong;

    if (1.0 - expected).abs() < f64::EPSILON {
        return Ok(KappaScore {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(KappaScore {
        value: (mean_item_agreement - expected) / (1.0 - expected),
        degenerate: false,
    })
}

/// Per-class metrics plus agreement for one prediction vector.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementResult {
    pub wrong_class: ClassMetrics,
    pub correct_class: ClassMetrics,
    pub kappa: KappaScore,
    pub n: usize,
}

pub fn agreement(
    predictions: &[VerdictLabel],
    gold: &[VerdictLabel],
) -> Result<AgreementResult, MetricsError> {
    let wrong = class_metrics(&confusion(predictions, gold, VerdictLabel::WrongAnswer)?)?;
    let correct = class_metrics(&confusion(predictions, gold, VerdictLabel::CorrectAnswer)?)?;
    let kappa = linear_weighted_kappa(predictions, gold)?;
    Ok(AgreementResult {
        wrong_class: wrong,
        correct_class: correct,
        kappa,
        n: predictions.len(),
    })
}

/// One strategy's two-row block of the evaluation table.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyEvaluation {
    pub strategy: GradingStrategyId,
    pub n_scored: usize,
    /// Rows excluded because their grading call failed in transport.
    pub n_excluded: usize,
    pub wrong_class: ClassMetrics,
    pub correct_class: ClassMetrics,
    pub lwk: KappaScore,
    pub cohen: KappaScore,
}

/// The full evaluation table: one two-row block per strategy (positive
/// class Wrong, then Correct) with accuracy, precision, recall, F1, and
/// the chance-adjusted agreement.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub strategies: Vec<StrategyEvaluation>,
}

impl EvaluationReport {
    /// Aligned text rendering, rounded to two decimals.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24}{:<12}{:>9}{:>11}{:>8}{:>7}{:>7}",
            "Strategy", "Prediction", "Accuracy", "Precision", "Recall", "F1", "LWK"
        );
        for s in &self.strategies {
            let _ = writeln!(
                out,
                "{:<24}{:<12}{:>9.2}{:>11.2}{:>8.2}{:>7.2}{:>7.2}",
                s.strategy.as_str(),
                "wrong",
                s.wrong_class.accuracy,
                s.wrong_class.precision,
                s.wrong_class.recall,
                s.wrong_class.f1,
                s.lwk.value,
            );
            let _ = writeln!(
                out,
                "{:<24}{:<12}{:>9.2}{:>11.2}{:>8.2}{:>7.2}{:>7}",
                "",
                "correct",
                s.correct_class.accuracy,
                s.correct_class.precision,
                s.correct_class.recall,
                s.correct_class.f1,
                "",
            );
        }
        out
    }

    pub fn has_degenerate(&self) -> bool {
        self.strategies.iter().any(|s| {
            s.wrong_class.degenerate
                || s.correct_class.degenerate
                || s.lwk.degenerate
                || s.cohen.degenerate
        })
    }
}

/// Gold labels from human grades; errors if any row is "other".
pub fn gold_labels(attempts: &[AttemptRecord]) -> Result<Vec<VerdictLabel>, MetricsError> {
    attempts
        .iter()
        .map(|a| match a.human_grade {
            Grade3::Correct => Ok(VerdictLabel::CorrectAnswer),
            Grade3::Wrong => Ok(VerdictLabel::WrongAnswer),
            Grade3::Other => Err(MetricsError::NonBinaryGold),
        })
        .collect()
}

fn attempt_key(a: &AttemptRecord) -> (String, String, u32, String) {
    (
        a.user_id.clone(),
        a.lesson.raw.clone(),
        a.question_number,
        a.student_response.clone(),
    )
}

/// Score every strategy's graded output against gold. All strategies
/// must cover the same attempt sequence; rows whose grading call failed
/// are excluded from that strategy's metrics (with the count reported).
pub fn evaluation_report(
    graded_by_strategy: &BTreeMap<GradingStrategyId, Vec<GradedAttempt>>,
    gold: &[VerdictLabel],
) -> Result<EvaluationReport, MetricsError> {
    let mut reference: Option<Vec<(String, String, u32, String)>> = None;
    let mut strategies = Vec::new();

    for (&strategy, graded) in graded_by_strategy {
        if graded.len() != gold.len() {
            return Err(MetricsError::LengthMismatch(graded.len(), gold.len()));
        }
        let keys: Vec<_> = graded.iter().map(|g| attempt_key(&g.attempt)).collect();
        match &reference {
            Some(expected) if *expected != keys => return Err(MetricsError::MismatchedAttempts),
            Some(_) => {}
            None => reference = Some(keys),
        }

        let mut predictions = Vec::with_capacity(graded.len());
        let mut gold_kept = Vec::with_capacity(graded.len());
        let mut excluded = 0usize;
        for (g, &label) in graded.iter().zip(gold) {
            if g.error_flag() {
                excluded += 1;
                continue;
            }
            predictions.push(g.verdict.label);
            gold_kept.push(label);
        }
        if predictions.is_empty() {
            return Err(MetricsError::Empty);
        }

        strategies.push(StrategyEvaluation {
            strategy,
            n_scored: predictions.len(),
            n_excluded: excluded,
            wrong_class: class_metrics(&confusion(
                &predictions,
                &gold_kept,
                VerdictLabel::WrongAnswer,
            )?)?,
            correct_class: class_metrics(&confusion(
                &predictions,
                &gold_kept,
                VerdictLabel::CorrectAnswer,
            )?)?,
            lwk: linear_weighted_kappa(&predictions, &gold_kept)?,
            cohen: cohen_kappa(&predictions, &gold_kept)?,
        });
    }
    Ok(EvaluationReport { strategies })
}

/// Agreement-with-gold for one run: the two-rater Fleiss form (Scott's
/// pi, as the source protocol names it) with Cohen's kappa alongside,
/// since the two differ in their chance model.
#[derive(Debug, Clone, Serialize)]
pub struct RunAgreement {
    pub run: usize,
    pub fleiss_two_rater: KappaScore,
    pub cohen: KappaScore,
}

/// Output of the repeated-run reliability protocol.
#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityReport {
    pub strategy: GradingStrategyId,
    pub items: usize,
    pub per_run: Vec<RunAgreement>,
    pub inter_run_fleiss: KappaScore,
}

impl ReliabilityReport {
    /// Table layout: one agreement column per run, then the inter-run
    /// Fleiss kappa.
    pub fn render_text(&self) -> String {
        let mut header = format!("{:<24}", "Strategy");
        let mut row = format!("{:<24}", self.strategy.as_str());
        for agreement in &self.per_run {
            let _ = write!(header, "{:>8}", format!("Run {}", agreement.run + 1));
            let _ = write!(row, "{:>8.2}", agreement.fleiss_two_rater.value);
        }
        let _ = write!(header, "{:>15}", "Fleiss's Kappa");
        let _ = write!(row, "{:>15.2}", self.inter_run_fleiss.value);
        format!("{header}\n{row}\n")
    }
}

/// Rerun one LLM strategy several times over a fixed subset, scoring
/// each run against gold and all runs against each other. The engine
/// factory supplies the backend for each run index, so replay mode can
/// bind every run to its own recorded session.
pub fn reliability_protocol(
    strategy: GradingStrategyId,
    attempts: &[AttemptRecord],
    runs: usize,
    engine_for_run: &dyn Fn(usize) -> Result<GradingEngine, String>,
    parallelism: usize,
) -> Result<ReliabilityReport, MetricsError> {
    if runs < 2 {
        return Err(MetricsError::InsufficientRuns(runs));
    }
    if attempts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let gold = gold_labels(attempts)?;

    let mut per_run_labels: Vec<Vec<VerdictLabel>> = Vec::with_capacity(runs);
    for run in 0..runs {
        let engine = engine_for_run(run).map_err(MetricsError::Grading)?;
        let outcome = batch_grade(strategy, attempts, parallelism, &engine, None)
            .map_err(|e| MetricsError::Grading(e.to_string()))?;
        if outcome.error_count > 0 {
            return Err(MetricsError::Grading(format!(
                "run {run} had {} failed gradings",
                outcome.error_count
            )));
        }
        per_run_labels.push(outcome.graded.iter().map(|g| g.verdict.label).collect());
    }

    let per_run = per_run_labels
        .iter()
        .enumerate()
        .map(|(run, labels)| {
            Ok(RunAgreement {
                run,
                fleiss_two_rater: scott_pi(labels, &gold)?,
                cohen: cohen_kappa(labels, &gold)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let items = attempts.len();
    let matrix_rows: Vec<Vec<VerdictLabel>> = (0..items)
        .map(|item| per_run_labels.iter().map(|labels| labels[item]).collect())
        .collect();
    let matrix = RunsMatrix::new(matrix_rows, gold)?;
    let inter_run_fleiss = fleiss_kappa(&matrix)?;

    Ok(ReliabilityReport {
        strategy,
        items,
        per_run,
        inter_run_fleiss,
    })
}
